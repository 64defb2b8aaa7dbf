"""Pure-numpy kernel backend.

Array-heavy kernels are vectorized here; the sequential look-ahead loss
kernel reuses the reference implementation directly (interpreted, slower,
same accumulation semantics).
"""

import numpy as np

from plume.kernels.kernel_src import (  # noqa: F401  (re-exported)
    SQRT_2PI,
    fm_lookahead_loss_grad,
)


def _image_offsets(period, n_images):
    return np.arange(-n_images, n_images + 1) * period


def rbf_eval(grid, xs, aa, cc, period, n_images):
    mm = _image_offsets(period, n_images)
    d = grid[:, None, None] + mm[None, None, :] - xs[None, :, None]
    e = np.exp(-(aa[None, :, None] ** 2) * d * d)
    return (cc[None, :, None] * e).sum(axis=2).sum(axis=1)


def rbf_basis_columns(grid, xs, aa, period, n_images):
    mm = _image_offsets(period, n_images)
    d = grid[:, None, None] + mm[None, None, :] - xs[None, :, None]
    return np.exp(-(aa[None, :, None] ** 2) * d * d).sum(axis=2)


def rbf_misfit_grads(grid, field, xs, aa, cc, period, n_images):
    mm = _image_offsets(period, n_images)
    d = grid[:, None, None] + mm[None, None, :] - xs[None, :, None]
    e = cc[None, :, None] * np.exp(-(aa[None, :, None] ** 2) * d * d)
    vals = e.sum(axis=2)
    dxs = (2.0 * aa[None, :, None] ** 2 * d * e).sum(axis=2)
    das = (-2.0 * aa[None, :, None] * d * d * e).sum(axis=2)
    r = vals.sum(axis=1) - field
    sse = float(r @ r)
    gx = 2.0 * (r[:, None] * dxs).sum(axis=0)
    ga = 2.0 * (r[:, None] * das).sum(axis=0)
    return sse, gx, ga


def kde_eval(samples, weights, grid, bandwidth, chunk=512):
    out = np.zeros(grid.shape[0])
    norm = 1.0 / (bandwidth * SQRT_2PI)
    for lo in range(0, samples.shape[0], chunk):
        s = samples[lo:lo + chunk]
        w = weights[lo:lo + chunk]
        u = (grid[:, None] - s[None, :]) / bandwidth
        out += (w[None, :] * np.exp(-0.5 * u * u)).sum(axis=1)
    return out * norm


def _layer_views(theta, sizes):
    views = []
    off = 0
    for l in range(len(sizes) - 1):
        nout, nin = int(sizes[l + 1]), int(sizes[l])
        a = theta[off:off + nout * nin].reshape(nout, nin)
        b = theta[off + nout * nin:off + nout * nin + nout]
        views.append((a, b))
        off += nout * nin + nout
    return views


def _network_forward(u, layers):
    """u: (n, nin) batch; returns (hiddens list, y)."""
    hiddens = []
    h = u
    for a, b in layers[:-1]:
        h = np.tanh(h @ a.T + b)
        hiddens.append(h)
    a, b = layers[-1]
    return hiddens, h @ a.T + b


def _apply_update(z, y, dt, out_scale, a_floor, act_mask):
    g = np.where((act_mask[None, :] == 0) | (y < 0.0), y, 0.0)
    cand = z + dt * out_scale[None, :] * g
    z1 = cand.copy()
    modes = np.zeros(z.shape, dtype=np.int8)
    for j, floor in ((1, a_floor), (2, 0.0)):
        frozen = z[:, j] < floor
        lo = np.where(frozen, z[:, j], floor)
        hit = cand[:, j] < lo
        z1[hit, j] = lo[hit]
        modes[hit & ~frozen, j] = 1
        modes[hit & frozen, j] = 2
    return z1, modes


def fm_step_many(zmat, wmat, theta, sizes, in_mu, in_sd, out_scale, dt,
                 a_floor, act_mask):
    layers = _layer_views(theta, sizes)
    u = np.concatenate([zmat, wmat], axis=1)
    u = (u - in_mu[None, :]) / in_sd[None, :]
    _, y = _network_forward(u, layers)
    return _apply_update(zmat, y, dt, out_scale, a_floor, act_mask)


def fm_batch_rollout(z0, winds, theta, sizes, in_mu, in_sd, out_scale, dt,
                     a_floor, act_mask):
    nsamp, nsteps, _ = winds.shape
    nin = 3 + winds.shape[2]
    layers = _layer_views(theta, sizes)
    ht = int(sum(int(s) for s in sizes[1:-1]))
    hdim = ht if ht > 0 else 1
    zs = np.empty((nsamp, nsteps + 1, 3))
    ucache = np.empty((nsamp, nsteps, nin))
    hcache = np.empty((nsamp, nsteps, hdim))
    ycache = np.empty((nsamp, nsteps, 3))
    modes = np.zeros((nsamp, nsteps, 3), dtype=np.int8)
    zs[:, 0, :] = z0[None, :]
    for step in range(nsteps):
        u = np.concatenate([zs[:, step, :], winds[:, step, :]], axis=1)
        u = (u - in_mu[None, :]) / in_sd[None, :]
        ucache[:, step, :] = u
        hiddens, y = _network_forward(u, layers)
        if hiddens:
            hcache[:, step, :] = np.concatenate(hiddens, axis=1)
        ycache[:, step, :] = y
        zs[:, step + 1, :], modes[:, step, :] = _apply_update(
            zs[:, step, :], y, dt, out_scale, a_floor, act_mask)
    return zs, ucache, hcache, ycache, modes


def fm_batch_rollout_vjp(zbar_all, ucache, hcache, ycache, modes,
                         theta, sizes, in_sd, out_scale, dt, act_mask):
    nsamp, nsteps, _ = ucache.shape
    layers = _layer_views(theta, sizes)
    hidden_sizes = [int(s) for s in sizes[1:-1]]
    zbar = zbar_all[:, nsteps, :].copy()
    for step in range(nsteps - 1, -1, -1):
        free = modes[:, step, :] == 0
        frozen = modes[:, step, :] == 2
        keep = np.where(free | frozen, zbar, 0.0)
        gbar = np.where(free, dt * out_scale[None, :] * zbar, 0.0)
        gbar = np.where((act_mask[None, :] == 0) | (ycache[:, step, :] < 0.0),
                        gbar, 0.0)
        # split the cached hidden activations back into per-layer blocks
        blocks = []
        pos = 0
        for w in hidden_sizes:
            blocks.append(hcache[:, step, pos:pos + w])
            pos += w
        bar = gbar
        for l in range(len(layers) - 1, -1, -1):
            a, _ = layers[l]
            bar = bar @ a
            if l > 0:
                h = blocks[l - 1]
                bar = bar * (1.0 - h * h)
        zbar = keep + bar[:, :3] / in_sd[None, :3]
        zbar = zbar + zbar_all[:, step, :]
    return zbar.sum(axis=0)
