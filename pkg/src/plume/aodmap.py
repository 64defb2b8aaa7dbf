"""Stationary linear map from sulfate RBF coordinates to AOD coordinates.

Fit by ordinary least squares over pooled (trajectory, day) pairs; no
intercept, so the map is a plain 3N x 3N matrix applied on the right of
the coordinate row vectors.
"""

from dataclasses import dataclass

import numpy as np

from plume.errors import DataError, NumericalError


@dataclass
class AodMapParams:
    matrix: np.ndarray          # (3N, 3N); q = matrix @ s
    r2: np.ndarray              # per output component
    residual_rms: np.ndarray


def fit_aod_map(sulfate_coords, aod_coords) -> AodMapParams:
    """Least-squares fit of q = L s over sample rows.

    Raises on rank deficiency, naming the deficient input directions.
    """
    s = np.asarray(sulfate_coords, dtype=float)
    q = np.asarray(aod_coords, dtype=float)
    if s.ndim != 2 or s.shape != q.shape:
        raise DataError("sulfate and AOD coordinate arrays must match (n, 3N)")
    n, dim = s.shape
    if n < dim:
        raise NumericalError(
            f"need at least {dim} samples to fit a {dim}x{dim} map, got {n}")
    u, sv, vt = np.linalg.svd(s, full_matrices=False)
    tol = sv[0] * max(s.shape) * np.finfo(float).eps if sv.size else 0.0
    rank = int(np.sum(sv > tol))
    if rank < dim:
        deficient = [vt[i].round(6).tolist() for i in range(rank, dim)]
        raise NumericalError(
            f"rank-deficient design (rank {rank} < {dim}); "
            f"unconstrained input directions: {deficient}")
    lt, *_ = np.linalg.lstsq(s, q, rcond=None)
    pred = s @ lt
    resid = q - pred
    ss_res = (resid ** 2).sum(axis=0)
    ss_tot = ((q - q.mean(axis=0)) ** 2).sum(axis=0)
    r2 = 1.0 - ss_res / np.where(ss_tot > 0, ss_tot, 1.0)
    return AodMapParams(matrix=lt.T.copy(), r2=r2,
                        residual_rms=np.sqrt(ss_res / n))


def apply_aod_map(params: AodMapParams, s, a_floor: float = 1e-3,
                  clamp: bool = True):
    """Apply the map; shape components are floored at a_floor when asked.

    Returns (q, n_clamped).  With clamp=False the map is exactly linear.
    """
    s = np.asarray(s, dtype=float)
    q = s @ params.matrix.T
    n_clamped = 0
    if clamp:
        shape_cols = np.arange(1, q.shape[-1], 3)
        block = q[..., shape_cols]
        bad = block < a_floor
        n_clamped = int(np.count_nonzero(bad))
        if n_clamped:
            block = np.where(bad, a_floor, block)
            q[..., shape_cols] = block
    return q, n_clamped


def aod_map_to_dict(params: AodMapParams) -> dict:
    return {
        "matrix": params.matrix.tolist(),
        "r2": params.r2.tolist(),
        "residual_rms": params.residual_rms.tolist(),
    }


def aod_map_from_dict(d: dict) -> AodMapParams:
    return AodMapParams(matrix=np.asarray(d["matrix"], dtype=float),
                        r2=np.asarray(d["r2"], dtype=float),
                        residual_rms=np.asarray(d["residual_rms"], dtype=float))
