"""Adam with bias correction over a named parameter set.

State (first/second moments, step counter) is keyed by parameter name so it
can round-trip through checkpoints. The fused update runs through the
accelerated kernel; both backends apply the same operation order.
"""

import numpy as np

from .. import accel
from ..errors import NumericsError


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        """``params``: dict name -> Tensor (insertion order is update order)."""
        self.params = params
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self):
        """Apply one update from the gradients currently on the parameters.

        Parameters whose grad is None are treated as zero-gradient: their
        values stay put while the moment estimates decay.
        """
        self.step_count += 1
        # bias corrections computed once here: libm pow and numba's integer
        # power differ by an ulp, so the kernels must not call ** themselves
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is not None and not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite gradient for parameter '{name}'")
            if g is None:
                g = np.zeros_like(p.data)
            accel.adam_update(
                p.data, g, self.m[name], self.v[name],
                self.lr, self.beta1, self.beta2, self.eps, c1, c2,
            )

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self):
        """Flat name -> array view of the optimizer state, for checkpoints."""
        out = {}
        for name in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays, step_count):
        # copy: moments are updated in place, the source dict must not alias
        for name in self.params:
            self.m[name] = np.array(arrays[f"adam.m.{name}"], dtype=np.float64)
            self.v[name] = np.array(arrays[f"adam.v.{name}"], dtype=np.float64)
        self.step_count = int(step_count)
