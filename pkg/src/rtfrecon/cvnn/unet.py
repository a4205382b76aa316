"""Complex U-Net for grid inpainting.

The input is a (grid_w, grid_h, 2K) complex stack (masked field plus
replicated mask); the output is the K-channel reconstructed field.

Encoder: strided 3x3 complex convolutions halving the spatial size at
every step, default widths (128, 256, 512, 1024). Decoder: nearest 2x
upsampling, concatenation with the matching encoder input (a skip from
the same resolution), then a 3x3 stride-1 convolution; widths mirror the
encoder minus its deepest stage, followed by a 2K-wide stage and a final
1x1 projection to 2K channels. Every convolution except the first, the
last mirrored stage, and the projection is followed by a split PReLU and
complex batch norm. The first K output channels are the prediction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .engine import ComplexTensor
from .layers import ComplexBatchNorm, ComplexConv2d, CPReLU

DEFAULT_ENCODER = (128, 256, 512, 1024)


@dataclass(frozen=True)
class LayerSpec:
    """One convolution stage, for introspection and parameter audits."""

    name: str
    cin: int
    cout: int
    kernel: tuple[int, int]
    stride: tuple[int, int]
    activated: bool
    upsampled: bool = False
    skip_from: str | None = None


@dataclass(frozen=True)
class UNetSpec:
    """Architecture hyperparameters; layer table derived, not stored."""

    k_freqs: int
    encoder_filters: tuple[int, ...] = DEFAULT_ENCODER

    def __post_init__(self):
        object.__setattr__(self, "encoder_filters",
                           tuple(int(f) for f in self.encoder_filters))
        if self.k_freqs < 1:
            raise ValueError("k_freqs must be >= 1")
        if len(self.encoder_filters) < 2:
            raise ValueError("need at least two encoder stages")
        if any(f < 1 for f in self.encoder_filters):
            raise ValueError("encoder filter counts must be positive")

    @property
    def in_channels(self) -> int:
        return 2 * self.k_freqs

    @property
    def decoder_filters(self) -> tuple[int, ...]:
        mirrored = tuple(reversed(self.encoder_filters[:-1]))
        return mirrored + (2 * self.k_freqs,)

    def layer_table(self) -> list[LayerSpec]:
        table = []
        cin = self.in_channels
        for i, cout in enumerate(self.encoder_filters):
            table.append(LayerSpec(
                name=f"enc{i}", cin=cin, cout=cout, kernel=(3, 3), stride=(2, 2),
                activated=(i > 0),
            ))
            cin = cout
        n_dec = len(self.decoder_filters)
        for j, cout in enumerate(self.decoder_filters):
            skip = f"enc{len(self.encoder_filters) - 1 - j}"
            skip_width = table[len(self.encoder_filters) - 1 - j].cin
            table.append(LayerSpec(
                name=f"dec{j}", cin=cin + skip_width, cout=cout,
                kernel=(3, 3), stride=(1, 1),
                activated=(j < n_dec - 1), upsampled=True, skip_from=skip,
            ))
            cin = cout
        table.append(LayerSpec(
            name="head", cin=cin, cout=2 * self.k_freqs, kernel=(1, 1),
            stride=(1, 1), activated=False,
        ))
        return table

    def min_grid(self) -> int:
        return 2 ** len(self.encoder_filters)


class UNet:
    def __init__(self, spec: UNetSpec, dtype=np.complex64, seed: int = 0):
        self.spec = spec
        self.dtype = dtype
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0CE4]))
        self.convs: dict[str, ComplexConv2d] = {}
        self.acts: dict[str, CPReLU] = {}
        self.bns: dict[str, ComplexBatchNorm] = {}
        for ls in spec.layer_table():
            self.convs[ls.name] = ComplexConv2d(
                ls.cin, ls.cout, kernel=ls.kernel, stride=ls.stride,
                dtype=dtype, rng=rng, name=ls.name,
            )
            if ls.activated:
                self.acts[ls.name] = CPReLU(ls.cout, dtype=dtype,
                                            name=f"{ls.name}.act")
                self.bns[ls.name] = ComplexBatchNorm(ls.cout, dtype=dtype,
                                                     name=f"{ls.name}.bn")

    def forward(self, x, training: bool = False) -> ComplexTensor:
        """x: (N, grid_w, grid_h, 2K) array or tensor -> (N, ..., K) tensor."""
        if not isinstance(x, ComplexTensor):
            x = ComplexTensor(np.asarray(x), dtype=self.dtype)
        n, h, w, cin = x.values.shape
        if cin != self.spec.in_channels:
            raise ValueError(f"expected {self.spec.in_channels} channels, got {cin}")
        mg = self.spec.min_grid()
        if h % mg or w % mg:
            raise ValueError(
                f"grid {h}x{w} not divisible by the encoder reduction {mg}"
            )
        n_enc = len(self.spec.encoder_filters)
        skips: list[ComplexTensor] = []
        for i in range(n_enc):
            name = f"enc{i}"
            skips.append(x)
            x = self.convs[name](x)
            if name in self.acts:
                x = self.bns[name](self.acts[name](x), training=training)
        for j in range(len(self.spec.decoder_filters)):
            name = f"dec{j}"
            x = engine.upsample2x(x)
            x = engine.concat([x, skips[n_enc - 1 - j]], axis=3)
            x = self.convs[name](x)
            if name in self.acts:
                x = self.bns[name](self.acts[name](x), training=training)
        x = self.convs["head"](x)
        return engine.channel_slice(x, 0, self.spec.k_freqs)

    __call__ = forward

    def parameters(self) -> dict[str, ComplexTensor]:
        out: dict[str, ComplexTensor] = {}
        for ls in self.spec.layer_table():
            out.update(self.convs[ls.name].parameters())
            if ls.name in self.acts:
                out.update(self.acts[ls.name].parameters())
                out.update(self.bns[ls.name].parameters())
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for ls in self.spec.layer_table():
            if ls.name in self.bns:
                out.update(self.bns[ls.name].buffers())
        return out

    def load_buffers(self, values: dict[str, np.ndarray]) -> None:
        for bn in self.bns.values():
            bn.load_buffers(values)

    def param_count(self) -> int:
        """Total learnable parameter count in real scalars (2 per complex)."""
        return sum(2 * p.values.size for p in self.parameters().values())
