"""numba-compiled kernels: @njit applied to the shared reference source."""

from numba import njit

from plume.kernels import kernel_src as _src

_jit = njit(cache=True, fastmath=False)

rbf_eval = _jit(_src.rbf_eval)
rbf_basis_columns = _jit(_src.rbf_basis_columns)
rbf_misfit_grads = _jit(_src.rbf_misfit_grads)
kde_eval = _jit(_src.kde_eval)
fm_step_many = _jit(_src.fm_step_many)
fm_batch_rollout = _jit(_src.fm_batch_rollout)
fm_batch_rollout_vjp = _jit(_src.fm_batch_rollout_vjp)
fm_lookahead_loss_grad = _jit(_src.fm_lookahead_loss_grad)
