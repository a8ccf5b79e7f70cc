"""Causal feed-forward WaveNet generator."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.parametrizations import weight_norm

from .errors import ConfigError, NonFiniteInputError


@dataclass(frozen=True)
class GeneratorConfig:
    stacks: int = 2
    layers_per_stack: int = 9
    kernel_size: int = 3
    dilation_growth: int = 2
    residual_channels: int = 16
    input_channels: int = 1
    output_channels: int = 1

    def validate(self):
        for name in ("stacks", "layers_per_stack", "kernel_size", "dilation_growth",
                     "residual_channels", "input_channels", "output_channels"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"generator.{name} must be positive, got {getattr(self, name)}")
        return self

    @property
    def dilations(self) -> list[int]:
        return [self.dilation_growth ** j for _ in range(self.stacks) for j in range(self.layers_per_stack)]

    def to_dict(self):
        return asdict(self)


def receptive_field(cfg: GeneratorConfig) -> int:
    """Number of input samples that influence one output sample."""
    return 1 + (cfg.kernel_size - 1) * sum(cfg.dilations)


class CausalConv1d(nn.Module):
    """Weight-normalized convolution, left-padded so output[t] sees input[<= t]."""

    def __init__(self, in_channels, out_channels, kernel_size=1, dilation=1):
        super().__init__()
        self.pad = (kernel_size - 1) * dilation
        self.conv = weight_norm(nn.Conv1d(in_channels, out_channels, kernel_size, dilation=dilation))

    def forward(self, x):
        if self.pad:
            x = F.pad(x, (self.pad, 0))
        return self.conv(x)


class GatedResidualLayer(nn.Module):
    """Gated dilated conv with a residual and a skip 1x1 projection.

    The last layer of the network has no residual projection since only its
    skip output is used.
    """

    def __init__(self, channels, kernel_size, dilation, residual=True):
        super().__init__()
        self.dilation = dilation
        self.filter = CausalConv1d(channels, channels, kernel_size, dilation)
        self.gate = CausalConv1d(channels, channels, kernel_size, dilation)
        self.residual = CausalConv1d(channels, channels) if residual else None
        self.skip = CausalConv1d(channels, channels)

    def forward(self, x):
        z = torch.tanh(self.filter(x)) * torch.sigmoid(self.gate(x))
        h = x + self.residual(z) if self.residual is not None else None
        return h, self.skip(z)


class Generator(nn.Module):
    """Stacked dilated WaveNet mapping a clean waveform to a rendered one.

    Input and output are ``(batch, 1, time)`` (a ``(batch, time)`` tensor is
    also accepted and returned in the same shape). Output length equals input
    length.
    """

    def __init__(self, config: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        self.config = config.validate()
        c = config.residual_channels
        self.input = CausalConv1d(config.input_channels, c)
        n = len(config.dilations)
        self.layers = nn.ModuleList(
            GatedResidualLayer(c, config.kernel_size, d, residual=i < n - 1)
            for i, d in enumerate(config.dilations)
        )
        self.head = CausalConv1d(c, config.output_channels)

    @property
    def receptive_field(self) -> int:
        return receptive_field(self.config)

    def forward(self, x):
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(1)
        if not torch.isfinite(x).all():
            raise NonFiniteInputError("generator input contains NaN or Inf")
        h = self.input(x)
        skips = 0
        for layer in self.layers:
            h, s = layer(h)
            skips = skips + s
        y = self.head(skips)
        return y.squeeze(1) if squeeze else y


def build_generator(cfg: GeneratorConfig = GeneratorConfig(), seed: int = 0) -> Generator:
    """Construct a generator with deterministic initialization under ``seed``."""
    cfg.validate()
    state = torch.random.get_rng_state()
    try:
        torch.manual_seed(seed)
        gen = Generator(cfg)
    finally:
        torch.random.set_rng_state(state)
    return gen


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def expected_param_count(cfg: GeneratorConfig) -> int:
    """Closed-form parameter count: each conv contributes C_in*C_out*k + 2*C_out
    (weight, magnitude, bias)."""

    def conv(cin, cout, k):
        return cin * cout * k + 2 * cout

    c = cfg.residual_channels
    per_layer = 2 * conv(c, c, cfg.kernel_size) + 2 * conv(c, c, 1)
    return (
        conv(cfg.input_channels, c, 1)
        + cfg.stacks * cfg.layers_per_stack * per_layer
        - conv(c, c, 1)  # last layer has no residual projection
        + conv(c, cfg.output_channels, 1)
    )


# Chunk windows start on multiples of this and run this far past the kept
# outputs, so every kept sample goes through the same vectorized code path
# (same lane position, never a scalar tail) as in a one-shot pass.
_RENDER_ALIGN = 256


@torch.no_grad()
def render(gen: Generator, x: np.ndarray, chunk_size: int = 65536) -> np.ndarray:
    """Run a long mono signal through ``gen`` in causal chunks.

    Output is bitwise identical to ``gen`` applied to the whole signal at once:
    each chunk carries at least ``receptive_field - 1`` samples of real left
    context and a short discarded look-ahead.
    """
    x = np.ascontiguousarray(x, dtype=np.float32)
    if chunk_size <= 0:
        raise ValueError("chunk_size must be positive")
    n = x.size
    ctx = gen.receptive_field - 1
    out = np.empty_like(x)
    for start in range(0, n, chunk_size):
        stop = min(start + chunk_size, n)
        lo = max(0, (start - ctx) // _RENDER_ALIGN * _RENDER_ALIGN)
        hi = min(n, stop + _RENDER_ALIGN)
        y = gen(torch.from_numpy(x[lo:hi]).view(1, 1, -1))[0, 0]
        out[start:stop] = y[start - lo:stop - lo].numpy()
    return out
