"""Backend dispatch for the hot kernels.

Import kernels from this package; the active implementation is selected
by plume.backend (PLUME_BACKEND environment variable).  Tests and the
benchmark import the implementation modules directly via get_backend().
"""

import importlib

from plume.backend import BACKEND

_NAMES = [
    "rbf_eval",
    "rbf_basis_columns",
    "rbf_misfit_grads",
    "kde_eval",
    "fm_step_many",
    "fm_batch_rollout",
    "fm_batch_rollout_vjp",
    "fm_lookahead_loss_grad",
]


def get_backend(name):
    """Return the kernel module for an explicit backend name."""
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    return importlib.import_module(f"plume.kernels.{name}_impl")


_impl = get_backend(BACKEND)

rbf_eval = _impl.rbf_eval
rbf_basis_columns = _impl.rbf_basis_columns
rbf_misfit_grads = _impl.rbf_misfit_grads
kde_eval = _impl.kde_eval
fm_step_many = _impl.fm_step_many
fm_batch_rollout = _impl.fm_batch_rollout
fm_batch_rollout_vjp = _impl.fm_batch_rollout_vjp
fm_lookahead_loss_grad = _impl.fm_lookahead_loss_grad

__all__ = _NAMES + ["get_backend", "BACKEND"]
