"""Adam over complex parameters, run independently on real and imaginary parts.

The first moment is kept as one complex array (linear in the gradient);
the second moments are separate real arrays for the squared real and
imaginary gradient components, so each real degree of freedom sees
exactly the textbook update with bias correction.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericalError
from .engine import ComplexTensor


class Adam:
    def __init__(self, params: dict[str, ComplexTensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not 0 <= lr:
            raise ValueError("lr must be non-negative")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v_re: dict[str, np.ndarray] = {}
        self.v_im: dict[str, np.ndarray] = {}
        for name, p in self.params.items():
            rdtype = p.values.real.dtype
            self.m[name] = np.zeros_like(p.values)
            self.v_re[name] = np.zeros(p.values.shape, dtype=rdtype)
            self.v_im[name] = np.zeros(p.values.shape, dtype=rdtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for parameter {name}")
            m = self.m[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            vr = self.v_re[name]
            vr *= self.beta2
            vr += (1.0 - self.beta2) * np.square(g.real)
            vi = self.v_im[name]
            vi *= self.beta2
            vi += (1.0 - self.beta2) * np.square(g.imag)
            mhat = m / bc1
            step_r = mhat.real / (np.sqrt(vr / bc2) + self.eps)
            step_i = mhat.imag / (np.sqrt(vi / bc2) + self.eps)
            p.values -= (self.lr * (step_r + 1j * step_i)).astype(p.values.dtype)

    def state_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v_re.{name}"] = self.v_re[name]
            out[f"adam.v_im.{name}"] = self.v_im[name]
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray], t: int) -> None:
        self.t = int(t)
        for name in self.params:
            self.m[name] = np.array(tensors[f"adam.m.{name}"])
            self.v_re[name] = np.array(tensors[f"adam.v_re.{name}"])
            self.v_im[name] = np.array(tensors[f"adam.v_im.{name}"])
