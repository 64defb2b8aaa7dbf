"""Periodized Gaussian radial basis functions for 1D longitudinal fields.

A field on the periodic longitude circle is encoded as a small number of
basis functions, each the infinite periodization of
c * exp(-a^2 (x - x0)^2), reduced in practice to 2M+1 image terms.  The
triple (center, shape, coefficient) per basis function is the reduced
plume state used by the rest of the pipeline.
"""

from dataclasses import dataclass, field, replace
from math import ceil, pi, sqrt

import numpy as np

from plume import kernels
from plume.errors import DataError

DEFAULT_PERIOD = 360.0


@dataclass
class PeriodicDomain:
    """Periodic longitude domain; truncation=None picks M from the shapes."""

    period: float = DEFAULT_PERIOD
    truncation: int | None = None

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("period must be positive")
        if self.truncation is not None and self.truncation < 1:
            raise ValueError("truncation order must be >= 1")


@dataclass
class RbfCoords:
    """Center/shape/coefficient triples for one timestep.

    Centers are kept unwrapped (free real numbers) so time series remain
    smooth across the 0/360 seam; wrap only when reporting positions.
    """

    centers: np.ndarray
    shapes: np.ndarray
    coeffs: np.ndarray
    day: int | None = None
    unidentifiable: bool = False

    def __post_init__(self):
        self.centers = np.atleast_1d(np.asarray(self.centers, dtype=float))
        self.shapes = np.atleast_1d(np.asarray(self.shapes, dtype=float))
        self.coeffs = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if not (self.centers.shape == self.shapes.shape == self.coeffs.shape):
            raise ValueError("centers, shapes, coeffs must have equal length")

    @property
    def n_rbf(self) -> int:
        return self.centers.shape[0]

    def wrapped_centers(self, period: float = DEFAULT_PERIOD) -> np.ndarray:
        return np.mod(self.centers, period)

    def as_vector(self) -> np.ndarray:
        """Interleave as (x, a, c) per basis function."""
        return np.column_stack([self.centers, self.shapes, self.coeffs]).ravel()

    @classmethod
    def from_vector(cls, vec, **kw) -> "RbfCoords":
        vec = np.asarray(vec, dtype=float).reshape(-1, 3)
        return cls(vec[:, 0], vec[:, 1], vec[:, 2], **kw)


def images_for_shape(a_min_shape: float, period: float) -> int:
    """Image count making the dropped periodization tail < e^-64."""
    return max(1, ceil(8.0 / (a_min_shape * period)) + 1)


def _truncation(coords: RbfCoords, domain: PeriodicDomain) -> int:
    if domain.truncation is not None:
        return domain.truncation
    return images_for_shape(float(np.min(coords.shapes)), domain.period)


def _check_shapes(coords: RbfCoords):
    if np.any(coords.shapes <= 0.0):
        raise ValueError("shape hyperparameters must be positive")


def eval_basis(coords: RbfCoords, domain: PeriodicDomain, grid) -> np.ndarray:
    """Evaluate the periodized RBF sum at the given longitudes."""
    _check_shapes(coords)
    grid = np.ascontiguousarray(np.mod(np.asarray(grid, dtype=float), domain.period))
    m = _truncation(coords, domain)
    xs = np.ascontiguousarray(np.mod(coords.centers, domain.period))
    return kernels.rbf_eval(grid, xs, np.ascontiguousarray(coords.shapes),
                            np.ascontiguousarray(coords.coeffs),
                            domain.period, m)


def basis_mass(coords: RbfCoords) -> np.ndarray:
    """Integral of each periodized basis function over one period.

    The closed form sqrt(pi) c/a integrates the full image sum: over one
    period the periodization contributes exactly the whole-line integral.
    """
    _check_shapes(coords)
    return sqrt(pi) * coords.coeffs / coords.shapes


def total_mass(coords: RbfCoords) -> float:
    return float(np.sum(basis_mass(coords)))


@dataclass
class FitOptions:
    a_min: float = 1e-3
    a_max: float = 10.0
    tol: float = 1e-8
    max_outer: int = 500
    grad_steps: int = 5
    max_backtracks: int = 30
    init_shapes: tuple = (0.02, 0.05, 0.1, 0.2, 0.4)


@dataclass
class FitResult:
    coords: RbfCoords
    residual: float          # relative l2 misfit on the grid
    sse: float
    iterations: int = 0


def _solve_coeffs(phi, f):
    """Non-negative least squares coefficients for fixed centers/shapes."""
    if phi.shape[1] == 1:
        denom = float(phi[:, 0] @ phi[:, 0])
        if denom <= 0.0:
            return np.zeros(1)
        return np.array([max(0.0, float(phi[:, 0] @ f) / denom)])
    from scipy.optimize import nnls

    c, _ = nnls(phi, f)
    return c


def _misfit(grid, f, xs, aa, cc, period, m):
    vals = kernels.rbf_eval(grid, np.mod(xs, period), aa, cc, period, m)
    r = vals - f
    return float(r @ r)


def _initial_coords(f, grid, n_rbf, period, options) -> RbfCoords:
    """Coarse-to-fine greedy sweep: peak placement + shape scan + c-solve."""
    residual = f.copy()
    xs, aa, cc = [], [], []
    for _ in range(n_rbf):
        i = int(np.argmax(residual))
        x0 = float(grid[i])
        best = None
        for a0 in options.init_shapes:
            m = images_for_shape(a0, period)
            phi = kernels.rbf_basis_columns(
                grid, np.array([x0]), np.array([a0]), period, m)
            c0 = _solve_coeffs(phi, residual)
            r = phi[:, 0] * c0[0] - residual
            sse = float(r @ r)
            if best is None or sse < best[0]:
                best = (sse, a0, float(c0[0]))
        xs.append(x0)
        aa.append(best[1])
        cc.append(best[2])
        m = images_for_shape(best[1], period)
        phi = kernels.rbf_basis_columns(
            grid, np.array([x0]), np.array([best[1]]), period, m)
        residual = np.maximum(residual - phi[:, 0] * best[2], 0.0)
    return RbfCoords(np.array(xs), np.array(aa), np.array(cc))


def fit(f, grid, n_rbf: int = 1, init: RbfCoords | None = None,
        domain: PeriodicDomain | None = None,
        options: FitOptions | None = None) -> FitResult:
    """Fit RBF hyperparameters to a sampled non-negative field.

    Block coordinate descent: a few preconditioned gradient steps with
    backtracking on the centers and shapes, then a closed-form
    non-negative least-squares update of the coefficients, repeated until
    the relative residual change drops below tol.
    """
    domain = domain or PeriodicDomain()
    options = options or FitOptions()
    f = np.ascontiguousarray(np.asarray(f, dtype=float))
    grid = np.ascontiguousarray(np.asarray(grid, dtype=float))
    if f.ndim != 1 or f.shape != grid.shape:
        raise DataError("field and grid must be matching 1D arrays")
    if not np.all(np.isfinite(f)):
        raise DataError("field contains non-finite values")
    fmax = float(np.max(f)) if f.size else 0.0
    if np.any(f < -1e-12 * max(fmax, 1.0)):
        raise DataError("field must be non-negative")
    fnorm = float(np.linalg.norm(f))

    if init is None:
        init = _initial_coords(f / fmax if fmax > 0 else f, grid,
                               n_rbf, domain.period, options)
        if fmax > 0:
            init = replace(init, coeffs=init.coeffs * fmax)
    if init.n_rbf != n_rbf:
        raise DataError(f"init has {init.n_rbf} basis functions, expected {n_rbf}")
    _check_shapes(init)

    if fmax <= 0.0:
        coords = RbfCoords(init.centers.copy(),
                           np.clip(init.shapes, options.a_min, options.a_max),
                           np.zeros(n_rbf), unidentifiable=True)
        return FitResult(coords, 0.0, 0.0)

    scale = fmax
    fn = f / scale
    xs = init.centers.astype(float).copy()
    aa = np.clip(init.shapes.astype(float), options.a_min, options.a_max)
    cc = init.coeffs.astype(float) / scale
    period = domain.period

    def solve_c(xs, aa):
        m = images_for_shape(float(np.min(aa)), period)
        phi = kernels.rbf_basis_columns(grid, np.mod(xs, period), aa, period, m)
        return _solve_coeffs(phi, fn), m

    cc, m = solve_c(xs, aa)
    sse = _misfit(grid, fn, xs, aa, cc, period, m)
    step = 1.0
    # per-parameter preconditioning: centers move in degrees, shapes
    # relative to their own magnitude
    x_scale2 = (period / 36.0) ** 2
    outer = 0
    for outer in range(1, options.max_outer + 1):
        for _ in range(options.grad_steps):
            _, gx, ga = kernels.rbf_misfit_grads(
                grid, fn, np.mod(xs, period), aa, cc, period, m)
            px = gx * x_scale2
            pa = ga * np.maximum(aa, 1e-2) ** 2
            slope = float(gx @ px + ga @ pa)
            if slope <= 0.0:
                break
            accepted = False
            for _ in range(options.max_backtracks):
                xs_new = xs - step * px
                aa_new = np.clip(aa - step * pa, options.a_min, options.a_max)
                sse_new = _misfit(grid, fn, xs_new, aa_new, cc, period, m)
                if sse_new <= sse - 1e-4 * step * slope:
                    xs, aa, sse = xs_new, aa_new, sse_new
                    step *= 1.3
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
        cc, m = solve_c(xs, aa)
        sse_next = _misfit(grid, fn, xs, aa, cc, period, m)
        prev, sse = sse, sse_next
        if sqrt(max(prev, 0.0)) - sqrt(max(sse, 0.0)) <= options.tol * sqrt(max(prev, 1e-300)):
            break

    coords = RbfCoords(xs, aa, cc * scale)
    rel = sqrt(max(sse, 0.0)) * scale / fnorm if fnorm > 0 else 0.0
    return FitResult(coords, rel, sse * scale * scale, outer)


def fit_timeseries(fields, grid, n_rbf: int = 1,
                   domain: PeriodicDomain | None = None,
                   options: FitOptions | None = None) -> list[FitResult]:
    """Fit each day of a trajectory, warm-starting from the previous day.

    Day 0 runs the coarse-to-fine sweep; later days inherit the previous
    coordinates, which keeps the center series smooth (and unwrapped)
    when the plume advects through the 0/360 seam.
    """
    fields = np.asarray(fields, dtype=float)
    if fields.ndim != 2:
        raise DataError("expected a (days, lon) trajectory array")
    results = []
    prev = None
    for day, f in enumerate(fields):
        init = None
        if prev is not None and not prev.unidentifiable:
            init = RbfCoords(prev.centers.copy(), prev.shapes.copy(),
                             prev.coeffs.copy())
        res = fit(f, grid, n_rbf=n_rbf, init=init, domain=domain,
                  options=options)
        res.coords.day = day
        results.append(res)
        prev = res.coords
    return results
