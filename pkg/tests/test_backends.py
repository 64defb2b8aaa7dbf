"""numba and numpy kernel backends must agree."""

import numpy as np

from plume.kernels import get_backend

NB = get_backend("numba")
NP = get_backend("numpy")


def _rand_coords(rng, n=3):
    xs = rng.uniform(0, 360, n)
    aa = rng.uniform(0.05, 0.5, n)
    cc = rng.uniform(0.1, 5.0, n)
    return xs, aa, cc


def test_rbf_eval_agree():
    rng = np.random.default_rng(0)
    grid = np.arange(0.0, 360.0, 1.5)
    xs, aa, cc = _rand_coords(rng)
    a = NB.rbf_eval(grid, xs, aa, cc, 360.0, 4)
    b = NP.rbf_eval(grid, xs, aa, cc, 360.0, 4)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-300)


def test_rbf_basis_columns_agree():
    rng = np.random.default_rng(1)
    grid = np.arange(0.0, 360.0, 2.0)
    xs, aa, _ = _rand_coords(rng)
    a = NB.rbf_basis_columns(grid, xs, aa, 360.0, 3)
    b = NP.rbf_basis_columns(grid, xs, aa, 360.0, 3)
    assert np.allclose(a, b, rtol=1e-13)


def test_rbf_misfit_grads_agree():
    rng = np.random.default_rng(2)
    grid = np.arange(0.0, 360.0, 2.0)
    xs, aa, cc = _rand_coords(rng)
    field = rng.uniform(0, 1, grid.shape[0])
    sse_a, gx_a, ga_a = NB.rbf_misfit_grads(grid, field, xs, aa, cc, 360.0, 3)
    sse_b, gx_b, ga_b = NP.rbf_misfit_grads(grid, field, xs, aa, cc, 360.0, 3)
    assert np.isclose(sse_a, sse_b, rtol=1e-12)
    assert np.allclose(gx_a, gx_b, rtol=1e-10)
    assert np.allclose(ga_a, ga_b, rtol=1e-10)


def test_kde_agree():
    rng = np.random.default_rng(3)
    samples = rng.normal(-14, 2, 700)
    weights = rng.uniform(0, 1, 700)
    weights /= weights.sum()
    grid = np.linspace(-25, -5, 400)
    a = NB.kde_eval(samples, weights, grid, 0.8)
    b = NP.kde_eval(samples, weights, grid, 0.8)
    assert np.allclose(a, b, rtol=1e-12)


def _net_inputs(rng, nw=4, hidden=(), nd=16):
    sizes = np.array([3 + nw] + list(hidden) + [3], dtype=np.int64)
    n_par = int(sum(sizes[i + 1] * sizes[i] + sizes[i + 1]
                    for i in range(len(sizes) - 1)))
    theta = rng.standard_normal(n_par) * 0.2
    z = np.column_stack([rng.uniform(0, 300, nd), rng.uniform(0.05, 0.3, nd),
                         rng.uniform(0.5, 5, nd)])
    w = rng.standard_normal((nd, nw))
    in_mu = rng.standard_normal(3 + nw) * 0.1
    in_sd = rng.uniform(0.5, 2.0, 3 + nw)
    scale = rng.uniform(0.5, 2.0, 3)
    mask = np.ones(3, dtype=np.int8)
    return sizes, theta, z, w, in_mu, in_sd, scale, mask


def test_step_many_agree():
    rng = np.random.default_rng(4)
    for hidden in ((), (7,), (9, 5)):
        sizes, theta, z, w, mu, sd, scale, mask = _net_inputs(rng, hidden=hidden)
        za, ma = NB.fm_step_many(z, w, theta, sizes, mu, sd, scale, 1.0, 1e-3, mask)
        zb, mb = NP.fm_step_many(z, w, theta, sizes, mu, sd, scale, 1.0, 1e-3, mask)
        assert np.allclose(za, zb, rtol=1e-12, atol=1e-14)
        assert (ma == mb).all()


def test_rollout_and_vjp_agree():
    rng = np.random.default_rng(5)
    for hidden in ((), (6,)):
        sizes, theta, z, w, mu, sd, scale, mask = _net_inputs(rng, hidden=hidden)
        z0 = z[0]
        winds = rng.standard_normal((5, 7, 4))
        outs_a = NB.fm_batch_rollout(z0, winds, theta, sizes, mu, sd, scale,
                                     1.0, 1e-3, mask)
        outs_b = NP.fm_batch_rollout(z0, winds, theta, sizes, mu, sd, scale,
                                     1.0, 1e-3, mask)
        assert np.allclose(outs_a[0], outs_b[0], rtol=1e-12, atol=1e-14)
        zbar = rng.standard_normal(outs_a[0].shape)
        ga = NB.fm_batch_rollout_vjp(zbar, outs_a[1], outs_a[2], outs_a[3],
                                     outs_a[4], theta, sizes, sd, scale, 1.0,
                                     mask)
        gb = NP.fm_batch_rollout_vjp(zbar, outs_b[1], outs_b[2], outs_b[3],
                                     outs_b[4], theta, sizes, sd, scale, 1.0,
                                     mask)
        assert np.allclose(ga, gb, rtol=1e-10, atol=1e-12)


def test_lookahead_loss_agree():
    rng = np.random.default_rng(6)
    sizes, theta, _, _, mu, sd, scale, mask = _net_inputs(rng)
    ntraj, ndays, nw = 3, 6, 4
    R = np.stack([np.column_stack([
        np.sort(rng.uniform(50, 300, ndays))[::-1],
        np.sort(rng.uniform(0.08, 0.2, ndays))[::-1],
        np.sort(rng.uniform(0.5, 4, ndays))[::-1]]) for _ in range(ntraj)])
    S = R.copy()
    S[..., 2] *= 0.3
    W = rng.standard_normal((ntraj, ndays, nw))
    ms0 = 0.05 * R[:, 0, 2] / R[:, 0, 1]
    args = (np.ascontiguousarray(R), np.ascontiguousarray(S),
            np.ascontiguousarray(W), np.ascontiguousarray(ms0),
            theta, sizes, mu, sd, scale, 1.0, 1e-3, 3, 1.5,
            np.ones(3), np.ones(3), mask, True)
    la, ga, ca, pa = NB.fm_lookahead_loss_grad(*args)
    lb, gb, cb, pb = NP.fm_lookahead_loss_grad(*args)
    assert np.isclose(la, lb, rtol=1e-12)
    assert np.allclose(ga, gb, rtol=1e-10, atol=1e-12)
    assert ca == cb
    assert np.isclose(pa, pb)


def test_env_selects_backend(tmp_path):
    import subprocess
    import sys

    code = "import plume.kernels as k; print(k.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code],
                         env={"PATH": "/usr/bin:/bin", "PLUME_BACKEND": "numpy"},
                         capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
