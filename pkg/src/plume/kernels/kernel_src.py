"""Reference implementations of the hot numerical kernels.

Every function here is written in njit-compatible Python (plain loops,
math.*, basic numpy allocation) so the numba backend can compile this
module's functions directly while the numpy backend may either reuse them
or substitute vectorized equivalents.  Keep the loop order fixed: the
accumulation order is part of the determinism contract.

Network parameter layout (shared by all flow-map kernels): for each layer
l the flat vector `theta` stores the weight matrix A_l with shape
(sizes[l+1], sizes[l]) row-major, immediately followed by the bias b_l.
Hidden layers apply tanh; the output layer is linear and the caller-side
activation min(0, y) plus the forward-Euler update live inside the step.
"""

import math

import numpy as np

SQRT_2PI = math.sqrt(2.0 * math.pi)


def rbf_eval(grid, xs, aa, cc, period, n_images):
    """Evaluate a periodized Gaussian RBF sum on a grid of longitudes."""
    n = grid.shape[0]
    nl = xs.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for l in range(nl):
            a2 = aa[l] * aa[l]
            for m in range(-n_images, n_images + 1):
                d = grid[i] + m * period - xs[l]
                acc += cc[l] * math.exp(-a2 * d * d)
        out[i] = acc
    return out


def rbf_basis_columns(grid, xs, aa, period, n_images):
    """Unit-coefficient basis values, one column per basis function."""
    n = grid.shape[0]
    nl = xs.shape[0]
    out = np.zeros((n, nl))
    for l in range(nl):
        a2 = aa[l] * aa[l]
        for i in range(n):
            acc = 0.0
            for m in range(-n_images, n_images + 1):
                d = grid[i] + m * period - xs[l]
                acc += math.exp(-a2 * d * d)
            out[i, l] = acc
    return out


def rbf_misfit_grads(grid, field, xs, aa, cc, period, n_images):
    """Squared misfit of the RBF sum against `field` plus d/dx, d/da.

    Returns (sse, gx, ga) where gx[l] = d(sse)/d(xs[l]) and likewise for
    the shape parameters.
    """
    n = grid.shape[0]
    nl = xs.shape[0]
    vals = np.zeros((n, nl))
    dxs = np.zeros((n, nl))
    das = np.zeros((n, nl))
    for l in range(nl):
        a = aa[l]
        a2 = a * a
        c = cc[l]
        for i in range(n):
            v = 0.0
            vx = 0.0
            va = 0.0
            for m in range(-n_images, n_images + 1):
                d = grid[i] + m * period - xs[l]
                e = c * math.exp(-a2 * d * d)
                v += e
                vx += 2.0 * a2 * d * e
                va += -2.0 * a * d * d * e
            vals[i, l] = v
            dxs[i, l] = vx
            das[i, l] = va
    sse = 0.0
    gx = np.zeros(nl)
    ga = np.zeros(nl)
    for i in range(n):
        r = -field[i]
        for l in range(nl):
            r += vals[i, l]
        sse += r * r
        for l in range(nl):
            gx[l] += 2.0 * r * dxs[i, l]
            ga[l] += 2.0 * r * das[i, l]
    return sse, gx, ga


def kde_eval(samples, weights, grid, bandwidth):
    """Gaussian-kernel weighted KDE on `grid`; weights must sum to 1."""
    ng = grid.shape[0]
    ns = samples.shape[0]
    out = np.zeros(ng)
    norm = 1.0 / (bandwidth * SQRT_2PI)
    for j in range(ns):
        s = samples[j]
        w = weights[j] * norm
        for i in range(ng):
            u = (grid[i] - s) / bandwidth
            out[i] += w * math.exp(-0.5 * u * u)
    return out


def fm_step_many(zmat, wmat, theta, sizes, in_mu, in_sd, out_scale, dt,
                 a_floor, act_mask):
    """Advance many independent states one step; returns (z1, modes).

    modes: 0 free, 1 clamped at floor, 2 frozen (state already below floor).
    """
    nd = zmat.shape[0]
    nw = wmat.shape[1]
    nin = 3 + nw
    nlayers = sizes.shape[0] - 1
    maxw = int(np.max(sizes))
    z1 = np.empty((nd, 3))
    modes = np.zeros((nd, 3), dtype=np.int8)
    cur = np.empty(maxw)
    nxt = np.empty(maxw)
    u = np.empty(nin)
    y = np.empty(3)
    for idx in range(nd):
        for j in range(3):
            u[j] = (zmat[idx, j] - in_mu[j]) / in_sd[j]
        for j in range(nw):
            u[3 + j] = (wmat[idx, j] - in_mu[3 + j]) / in_sd[3 + j]
        for j in range(nin):
            cur[j] = u[j]
        off = 0
        for l in range(nlayers):
            nout = sizes[l + 1]
            ninl = sizes[l]
            boff = off + nout * ninl
            for o in range(nout):
                acc = theta[boff + o]
                wrow = off + o * ninl
                for ii in range(ninl):
                    acc += theta[wrow + ii] * cur[ii]
                nxt[o] = acc
            if l < nlayers - 1:
                for o in range(nout):
                    cur[o] = math.tanh(nxt[o])
            else:
                for o in range(3):
                    y[o] = nxt[o]
            off = boff + nout
        for j in range(3):
            g = y[j] if (act_mask[j] == 0 or y[j] < 0.0) else 0.0
            cand = zmat[idx, j] + dt * out_scale[j] * g
            if j == 0:
                z1[idx, j] = cand
            else:
                floor = a_floor if j == 1 else 0.0
                if zmat[idx, j] < floor:
                    lo = zmat[idx, j]
                    frozen = True
                else:
                    lo = floor
                    frozen = False
                if cand < lo:
                    z1[idx, j] = lo
                    modes[idx, j] = 2 if frozen else 1
                else:
                    z1[idx, j] = cand
    return z1, modes


def fm_batch_rollout(z0, winds, theta, sizes, in_mu, in_sd, out_scale, dt,
                     a_floor, act_mask):
    """Roll one initial state through many wind series, caching for VJP.

    Returns (zs, ucache, hcache, ycache, modes) with zs of shape
    (nsamp, nsteps + 1, 3).
    """
    nsamp = winds.shape[0]
    nsteps = winds.shape[1]
    nw = winds.shape[2]
    nin = 3 + nw
    nlayers = sizes.shape[0] - 1
    maxw = int(np.max(sizes))
    ht = 0
    for l in range(1, nlayers):
        ht += sizes[l]
    hdim = ht if ht > 0 else 1
    zs = np.empty((nsamp, nsteps + 1, 3))
    ucache = np.empty((nsamp, nsteps, nin))
    hcache = np.empty((nsamp, nsteps, hdim))
    ycache = np.empty((nsamp, nsteps, 3))
    modes = np.zeros((nsamp, nsteps, 3), dtype=np.int8)
    cur = np.empty(maxw)
    nxt = np.empty(maxw)
    y = np.empty(3)
    for i in range(nsamp):
        for j in range(3):
            zs[i, 0, j] = z0[j]
        for step in range(nsteps):
            for j in range(3):
                ucache[i, step, j] = (zs[i, step, j] - in_mu[j]) / in_sd[j]
            for j in range(nw):
                ucache[i, step, 3 + j] = (winds[i, step, j] - in_mu[3 + j]) / in_sd[3 + j]
            for j in range(nin):
                cur[j] = ucache[i, step, j]
            off = 0
            hpos = 0
            for l in range(nlayers):
                nout = sizes[l + 1]
                ninl = sizes[l]
                boff = off + nout * ninl
                for o in range(nout):
                    acc = theta[boff + o]
                    wrow = off + o * ninl
                    for ii in range(ninl):
                        acc += theta[wrow + ii] * cur[ii]
                    nxt[o] = acc
                if l < nlayers - 1:
                    for o in range(nout):
                        v = math.tanh(nxt[o])
                        cur[o] = v
                        hcache[i, step, hpos + o] = v
                    hpos += nout
                else:
                    for o in range(3):
                        y[o] = nxt[o]
                off = boff + nout
            for o in range(3):
                ycache[i, step, o] = y[o]
            for j in range(3):
                g = y[j] if (act_mask[j] == 0 or y[j] < 0.0) else 0.0
                cand = zs[i, step, j] + dt * out_scale[j] * g
                if j == 0:
                    zs[i, step + 1, j] = cand
                else:
                    floor = a_floor if j == 1 else 0.0
                    if zs[i, step, j] < floor:
                        lo = zs[i, step, j]
                        frozen = True
                    else:
                        lo = floor
                        frozen = False
                    if cand < lo:
                        zs[i, step + 1, j] = lo
                        modes[i, step, j] = 2 if frozen else 1
                    else:
                        zs[i, step + 1, j] = cand
    return zs, ucache, hcache, ycache, modes


def fm_batch_rollout_vjp(zbar_all, ucache, hcache, ycache, modes,
                         theta, sizes, in_sd, out_scale, dt, act_mask):
    """Pull trajectory adjoints back to the shared initial state.

    zbar_all[i, k] is the adjoint injected at state k of sample i; the
    return value is the accumulated gradient with respect to z0.
    """
    nsamp = ucache.shape[0]
    nsteps = ucache.shape[1]
    nin = ucache.shape[2]
    nlayers = sizes.shape[0] - 1
    maxw = int(np.max(sizes))
    z0bar = np.zeros(3)
    zbar = np.empty(3)
    gbar = np.empty(3)
    keep = np.empty(3)
    bar_a = np.empty(maxw)
    bar_b = np.empty(maxw)
    offs = np.zeros(nlayers, dtype=np.int64)
    off = 0
    for l in range(nlayers):
        offs[l] = off
        off += sizes[l + 1] * sizes[l] + sizes[l + 1]
    for i in range(nsamp):
        for j in range(3):
            zbar[j] = zbar_all[i, nsteps, j]
        for step in range(nsteps - 1, -1, -1):
            for j in range(3):
                gbar[j] = 0.0
            # clamp/update adjoint: z_{k+1} = z_k + dt*g (mode 0),
            # = floor (mode 1), = z_k (mode 2)
            for j in range(3):
                mode = modes[i, step, j]
                if mode == 0:
                    keep[j] = zbar[j]
                    gbar[j] = dt * out_scale[j] * zbar[j]
                elif mode == 2:
                    keep[j] = zbar[j]
                else:
                    keep[j] = 0.0
            # through the activation
            for j in range(3):
                if act_mask[j] != 0 and ycache[i, step, j] >= 0.0:
                    gbar[j] = 0.0
            # backprop the dense layers
            for j in range(3):
                bar_a[j] = gbar[j]
            hpos = 0
            for l in range(1, nlayers):
                hpos += sizes[l]
            for l in range(nlayers - 1, -1, -1):
                nout = sizes[l + 1]
                ninl = sizes[l]
                woff = offs[l]
                if l == 0:
                    for ii in range(ninl):
                        acc = 0.0
                        for o in range(nout):
                            acc += theta[woff + o * ninl + ii] * bar_a[o]
                        bar_b[ii] = acc
                else:
                    hpos -= ninl
                    for ii in range(ninl):
                        acc = 0.0
                        for o in range(nout):
                            acc += theta[woff + o * ninl + ii] * bar_a[o]
                        h = hcache[i, step, hpos + ii]
                        bar_b[ii] = acc * (1.0 - h * h)
                for ii in range(ninl):
                    bar_a[ii] = bar_b[ii]
            for j in range(3):
                zbar[j] = keep[j] + bar_a[j] / in_sd[j]
            for j in range(3):
                zbar[j] += zbar_all[i, step, j]
        for j in range(3):
            z0bar[j] += zbar[j]
    return z0bar


def fm_lookahead_loss_grad(R, S, W, ms0, theta, sizes, in_mu, in_sd,
                           out_scale, dt, a_floor, P, kappa, sd_r, sd_s,
                           act_mask, want_grad):
    """Look-ahead training loss and its parameter gradient.

    R, S: raw (x, a, c) coordinate arrays of shape (ntraj, ndays, 3) for
    the SO2 and sulfate series; W: wind coordinates (ntraj, ndays, nw);
    ms0: per-trajectory initial sulfate transformed mass used as the
    conservation anchor.  Returns (loss, grad, clamp_count, min_abs_pre)
    where min_abs_pre is the smallest |pre-activation| met in any
    evaluated step (kink-distance diagnostic).
    """
    ntraj = R.shape[0]
    ndays = R.shape[1]
    nw = W.shape[2]
    nin = 3 + nw
    nlayers = sizes.shape[0] - 1
    maxw = int(np.max(sizes))
    ht = 0
    for l in range(1, nlayers):
        ht += sizes[l]
    hdim = ht if ht > 0 else 1
    grad = np.zeros(theta.shape[0])
    loss = 0.0
    clamp_count = 0
    min_abs_pre = 1.0e300
    offs = np.zeros(nlayers, dtype=np.int64)
    off = 0
    for l in range(nlayers):
        offs[l] = off
        off += sizes[l + 1] * sizes[l] + sizes[l + 1]
    zhat = np.empty((P + 1, 3))
    ucache = np.empty((P, nin))
    hcache = np.empty((P, hdim))
    ycache = np.empty((P, 3))
    modes = np.zeros((P, 3), dtype=np.int8)
    cur = np.empty(maxw)
    nxt = np.empty(maxw)
    bar_a = np.empty(maxw)
    bar_b = np.empty(maxw)
    zbar = np.empty(3)
    gbar = np.empty(3)
    keep = np.empty(3)
    for t in range(ntraj):
        m0 = R[t, 0, 2] / R[t, 0, 1]
        for k in range(1, ndays):
            q = ndays - 1 - k
            if q > P:
                q = P
            if q < 1:
                continue
            zhat[0, 0] = R[t, k, 0]
            zhat[0, 1] = R[t, k, 1]
            zhat[0, 2] = R[t, k, 2] / R[t, k, 1]
            for p in range(q):
                for j in range(3):
                    ucache[p, j] = (zhat[p, j] - in_mu[j]) / in_sd[j]
                for j in range(nw):
                    ucache[p, 3 + j] = (W[t, k + p, j] - in_mu[3 + j]) / in_sd[3 + j]
                for j in range(nin):
                    cur[j] = ucache[p, j]
                off = 0
                hpos = 0
                for l in range(nlayers):
                    nout = sizes[l + 1]
                    ninl = sizes[l]
                    boff = off + nout * ninl
                    for o in range(nout):
                        acc = theta[boff + o]
                        wrow = off + o * ninl
                        for ii in range(ninl):
                            acc += theta[wrow + ii] * cur[ii]
                        nxt[o] = acc
                    if l < nlayers - 1:
                        for o in range(nout):
                            v = math.tanh(nxt[o])
                            cur[o] = v
                            hcache[p, hpos + o] = v
                        hpos += nout
                    else:
                        for o in range(3):
                            ycache[p, o] = nxt[o]
                    off = boff + nout
                for j in range(3):
                    ay = abs(ycache[p, j])
                    if ay < min_abs_pre:
                        min_abs_pre = ay
                    g = ycache[p, j] if (act_mask[j] == 0 or ycache[p, j] < 0.0) else 0.0
                    cand = zhat[p, j] + dt * out_scale[j] * g
                    modes[p, j] = 0
                    if j == 0:
                        zhat[p + 1, j] = cand
                    else:
                        floor = a_floor if j == 1 else 0.0
                        if zhat[p, j] < floor:
                            lo = zhat[p, j]
                            frozen = True
                        else:
                            lo = floor
                            frozen = False
                        if cand < lo:
                            zhat[p + 1, j] = lo
                            modes[p, j] = 2 if frozen else 1
                            clamp_count += 1
                        else:
                            zhat[p + 1, j] = cand
            for p in range(1, q + 1):
                x = zhat[p, 0]
                a = zhat[p, 1]
                m = zhat[p, 2]
                rr0 = (x - R[t, k + p, 0]) / sd_r[0]
                rr1 = (a - R[t, k + p, 1]) / sd_r[1]
                rr2 = (m * a - R[t, k + p, 2]) / sd_r[2]
                msul = ms0[t] + kappa * (m0 - m)
                rs0 = (x - S[t, k + p, 0]) / sd_s[0]
                rs1 = (a - S[t, k + p, 1]) / sd_s[1]
                rs2 = (msul * a - S[t, k + p, 2]) / sd_s[2]
                loss += rr0 * rr0 + rr1 * rr1 + rr2 * rr2
                loss += rs0 * rs0 + rs1 * rs1 + rs2 * rs2
            if want_grad:
                for j in range(3):
                    zbar[j] = 0.0
                for p in range(q, 0, -1):
                    x = zhat[p, 0]
                    a = zhat[p, 1]
                    m = zhat[p, 2]
                    rr0 = (x - R[t, k + p, 0]) / sd_r[0]
                    rr1 = (a - R[t, k + p, 1]) / sd_r[1]
                    rr2 = (m * a - R[t, k + p, 2]) / sd_r[2]
                    msul = ms0[t] + kappa * (m0 - m)
                    rs0 = (x - S[t, k + p, 0]) / sd_s[0]
                    rs1 = (a - S[t, k + p, 1]) / sd_s[1]
                    rs2 = (msul * a - S[t, k + p, 2]) / sd_s[2]
                    zbar[0] += 2.0 * rr0 / sd_r[0] + 2.0 * rs0 / sd_s[0]
                    zbar[1] += (2.0 * rr1 / sd_r[1] + 2.0 * rr2 / sd_r[2] * m
                                + 2.0 * rs1 / sd_s[1] + 2.0 * rs2 / sd_s[2] * msul)
                    zbar[2] += (2.0 * rr2 / sd_r[2] * a
                                - 2.0 * rs2 / sd_s[2] * a * kappa)
                    step = p - 1
                    for j in range(3):
                        gbar[j] = 0.0
                    for j in range(3):
                        mode = modes[step, j]
                        if mode == 0:
                            keep[j] = zbar[j]
                            gbar[j] = dt * out_scale[j] * zbar[j]
                        elif mode == 2:
                            keep[j] = zbar[j]
                        else:
                            keep[j] = 0.0
                    for j in range(3):
                        if act_mask[j] != 0 and ycache[step, j] >= 0.0:
                            gbar[j] = 0.0
                    for j in range(3):
                        bar_a[j] = gbar[j]
                    hpos = 0
                    for l in range(1, nlayers):
                        hpos += sizes[l]
                    for l in range(nlayers - 1, -1, -1):
                        nout = sizes[l + 1]
                        ninl = sizes[l]
                        woff = offs[l]
                        boff = woff + nout * ninl
                        if l == 0:
                            for o in range(nout):
                                gb = bar_a[o]
                                grad[boff + o] += gb
                                wrow = woff + o * ninl
                                for ii in range(ninl):
                                    grad[wrow + ii] += gb * ucache[step, ii]
                            for ii in range(ninl):
                                acc = 0.0
                                for o in range(nout):
                                    acc += theta[woff + o * ninl + ii] * bar_a[o]
                                bar_b[ii] = acc
                        else:
                            hpos -= ninl
                            for o in range(nout):
                                gb = bar_a[o]
                                grad[boff + o] += gb
                                wrow = woff + o * ninl
                                for ii in range(ninl):
                                    grad[wrow + ii] += gb * hcache[step, hpos + ii]
                            for ii in range(ninl):
                                acc = 0.0
                                for o in range(nout):
                                    acc += theta[woff + o * ninl + ii] * bar_a[o]
                                h = hcache[step, hpos + ii]
                                bar_b[ii] = acc * (1.0 - h * h)
                        for ii in range(ninl):
                            bar_a[ii] = bar_b[ii]
                    for j in range(3):
                        zbar[j] = keep[j] + bar_a[j] / in_sd[j]
    return loss, grad, clamp_count, min_abs_pre
