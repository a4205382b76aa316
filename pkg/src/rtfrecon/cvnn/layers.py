"""Complex-valued network layers.

Weight initialisation follows the variance-preserving recipe for complex
weights: magnitudes Rayleigh(1/sqrt(fan_in)) so E|W|^2 = 2/fan_in, phases
uniform. Batch norm whitens the (Re, Im) pair per channel with the
closed-form inverse square root of the 2x2 covariance and applies a
learnable 2x2 matrix (stored as two complex column parameters) plus a
complex shift. All layer math is composed from engine primitives, so the
backward passes need no layer-specific code.
"""

from __future__ import annotations

import numpy as np

from . import engine
from .engine import ComplexTensor, parameter

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
_INV_SQRT2 = 1.0 / np.sqrt(2.0)


def complex_he_init(rng: np.random.Generator, shape, fan_in: int, dtype):
    mag = rng.rayleigh(scale=1.0 / np.sqrt(fan_in), size=shape)
    phase = rng.uniform(-np.pi, np.pi, size=shape)
    return (mag * np.exp(1j * phase)).astype(dtype)


def inv_sqrt_2x2(vrr, vri, vii):
    """Inverse principal square root of the SPD matrix [[vrr, vri], [vri, vii]].

    Closed form via trace/determinant; returns (urr, uri, uii). Used both
    by the batch-norm layer (rebuilt from engine ops) and directly in
    tests against an eigendecomposition oracle.
    """
    tau = vrr + vii
    s = np.sqrt(vrr * vii - vri * vri)
    t = np.sqrt(tau + 2.0 * s)
    rst = 1.0 / (s * t)
    return (vii + s) * rst, -vri * rst, (vrr + s) * rst


class Layer:
    """Minimal base: named parameters and buffers."""

    def parameters(self) -> dict[str, ComplexTensor]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}


class ComplexConv2d(Layer):
    def __init__(self, cin: int, cout: int, kernel=(3, 3), stride=(2, 2),
                 bias: bool = True, dtype=np.complex64,
                 rng: np.random.Generator | None = None, name: str = "conv"):
        if rng is None:
            rng = np.random.default_rng(0)
        kh, kw = kernel
        fan_in = kh * kw * cin
        self.stride = tuple(stride)
        self.name = name
        self.weight = parameter(
            complex_he_init(rng, (kh, kw, cin, cout), fan_in, dtype),
            name=f"{name}.weight",
        )
        self.bias = None
        if bias:
            self.bias = parameter(np.zeros(cout, dtype=dtype), name=f"{name}.bias")

    def __call__(self, x: ComplexTensor) -> ComplexTensor:
        return engine.conv2d(x, self.weight, self.bias, stride=self.stride)

    def parameters(self):
        out = {self.weight.name: self.weight}
        if self.bias is not None:
            out[self.bias.name] = self.bias
        return out


class CPReLU(Layer):
    """Split PReLU with one learnable complex slope per channel."""

    def __init__(self, channels: int, init: float = 0.25, dtype=np.complex64,
                 name: str = "cprelu"):
        self.name = name
        self.alpha = parameter(
            np.full(channels, init + 1j * init, dtype=dtype), name=f"{name}.alpha"
        )

    def __call__(self, x: ComplexTensor) -> ComplexTensor:
        return engine.cprelu(x, self.alpha)

    def parameters(self):
        return {self.alpha.name: self.alpha}


class ComplexBatchNorm(Layer):
    """Whitening batch norm for complex channels.

    Training mode centres and whitens with batch statistics over
    (batch, height, width) and updates running statistics with momentum
    0.9; eval mode uses the running statistics verbatim. The learnable
    map is y = Gamma @ [Re xhat; Im xhat] + beta with Gamma stored
    column-wise as gamma_r = Grr + j*Gir and gamma_i = Gri + j*Gii,
    initialised to I/sqrt(2); beta starts at zero. eps*I is added to the
    covariance diagonal before inversion in both modes.
    """

    def __init__(self, channels: int, eps: float = BN_EPS,
                 momentum: float = BN_MOMENTUM, dtype=np.complex64,
                 name: str = "bn"):
        self.name = name
        self.eps = eps
        self.momentum = momentum
        rdtype = np.zeros(1, dtype=dtype).real.dtype
        self.gamma_r = parameter(
            np.full(channels, _INV_SQRT2, dtype=dtype), name=f"{name}.gamma_r"
        )
        self.gamma_i = parameter(
            np.full(channels, 1j * _INV_SQRT2, dtype=dtype), name=f"{name}.gamma_i"
        )
        self.beta = parameter(np.zeros(channels, dtype=dtype), name=f"{name}.beta")
        self.run_mean = np.zeros(channels, dtype=dtype)
        self.run_vrr = np.full(channels, _INV_SQRT2, dtype=rdtype)
        self.run_vri = np.zeros(channels, dtype=rdtype)
        self.run_vii = np.full(channels, _INV_SQRT2, dtype=rdtype)

    def __call__(self, x: ComplexTensor, training: bool = False) -> ComplexTensor:
        axes = tuple(range(x.values.ndim - 1))
        if training:
            xr = engine.real(x)
            xi = engine.imag(x)
            mr = engine.reduce_mean(xr, axis=axes, keepdims=True)
            mi = engine.reduce_mean(xi, axis=axes, keepdims=True)
            xcr = engine.sub(xr, mr)
            xci = engine.sub(xi, mi)
            vrr = engine.reduce_mean(engine.mul(xcr, xcr), axis=axes, keepdims=True)
            vii = engine.reduce_mean(engine.mul(xci, xci), axis=axes, keepdims=True)
            vri = engine.reduce_mean(engine.mul(xcr, xci), axis=axes, keepdims=True)
            self._update_running(mr, mi, vrr, vri, vii)
            vrr = engine.add(vrr, self.eps)
            vii = engine.add(vii, self.eps)
        else:
            mean = self.run_mean.reshape((1,) * len(axes) + (-1,))
            xr = engine.real(engine.sub(x, mean))
            xi = engine.imag(engine.sub(x, mean))
            xcr, xci = xr, xi
            shape = (1,) * len(axes) + (-1,)
            vrr = ComplexTensor((self.run_vrr + self.eps).reshape(shape))
            vii = ComplexTensor((self.run_vii + self.eps).reshape(shape))
            vri = ComplexTensor(self.run_vri.reshape(shape))
        # closed-form inverse sqrt of [[vrr, vri], [vri, vii]]
        tau = engine.add(vrr, vii)
        det = engine.sub(engine.mul(vrr, vii), engine.mul(vri, vri))
        s = engine.sqrt(det)
        t = engine.sqrt(engine.add(tau, engine.mul(s, 2.0)))
        denom = engine.mul(s, t)
        urr = engine.div(engine.add(vii, s), denom)
        uii = engine.div(engine.add(vrr, s), denom)
        uri = engine.div(engine.neg(vri), denom)
        yr = engine.add(engine.mul(urr, xcr), engine.mul(uri, xci))
        yi = engine.add(engine.mul(uri, xcr), engine.mul(uii, xci))
        out = engine.add(
            engine.add(engine.mul(yr, self.gamma_r), engine.mul(yi, self.gamma_i)),
            self.beta,
        )
        return out

    def _update_running(self, mr, mi, vrr, vri, vii):
        m = self.momentum
        mean = (mr.values.real + 1j * mi.values.real).reshape(-1).astype(self.run_mean.dtype)
        self.run_mean = m * self.run_mean + (1 - m) * mean
        self.run_vrr = (m * self.run_vrr
                        + (1 - m) * vrr.values.real.reshape(-1).astype(self.run_vrr.dtype))
        self.run_vri = (m * self.run_vri
                        + (1 - m) * vri.values.real.reshape(-1).astype(self.run_vri.dtype))
        self.run_vii = (m * self.run_vii
                        + (1 - m) * vii.values.real.reshape(-1).astype(self.run_vii.dtype))

    def parameters(self):
        return {p.name: p for p in (self.gamma_r, self.gamma_i, self.beta)}

    def buffers(self):
        return {
            f"{self.name}.run_mean": self.run_mean,
            f"{self.name}.run_vrr": self.run_vrr,
            f"{self.name}.run_vri": self.run_vri,
            f"{self.name}.run_vii": self.run_vii,
        }

    def load_buffers(self, values: dict[str, np.ndarray]) -> None:
        self.run_mean = np.array(values[f"{self.name}.run_mean"])
        self.run_vrr = np.array(values[f"{self.name}.run_vrr"])
        self.run_vri = np.array(values[f"{self.name}.run_vri"])
        self.run_vii = np.array(values[f"{self.name}.run_vii"])
