"""Adam-style optimizer with decoupled weight decay and a linear LR ramp-down.

Decay touches only matrices (ndim >= 2); biases, layer-norm gains, and other
vectors are exempt, matching common transformer fine-tuning practice.
"""

import numpy as np

from . import kernels


def linear_decay_lr(base_lr, step, total_steps):
    """Learning rate at a 0-based step: straight line from base_lr toward 0.

    No warmup; the final step trains at base_lr / total_steps, never at 0.
    """
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    return base_lr * (1.0 - step / total_steps)


class AdamW:
    """Tracks first/second moments per parameter and applies fused updates.

    Gradients and updated parameters are checked finite every step; a
    non-finite value aborts with the offending tensor named.
    """

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.01):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in params.named()}
        self._v = {name: np.zeros_like(p.data) for name, p in params.named()}

    def step(self, lr=None):
        """Apply one update from the accumulated gradients.

        lr overrides the stored rate for this step only (schedules live in
        the caller).  Parameters whose gradient was never touched this step
        still update from their zero gradient, keeping the moment clocks of
        every tensor in lockstep.
        """
        self.t += 1
        step_lr = self.lr if lr is None else lr
        for name, p in self.params.named():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise FloatingPointError(
                    f"non-finite gradient in {name} at optimizer step {self.t}")
            wd = self.weight_decay if p.data.ndim >= 2 else 0.0
            flat_p = p.data.reshape(-1)
            kernels.adam_step(flat_p, np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                              self._m[name].reshape(-1), self._v[name].reshape(-1),
                              self.t, step_lr, self.beta1, self.beta2, self.eps, wd)
            if not np.isfinite(p.data).all():
                raise FloatingPointError(
                    f"non-finite parameter {name} after optimizer step {self.t}")

    def zero_grad(self):
        self.params.zero_grad()
