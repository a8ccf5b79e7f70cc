"""Multi-scale (MSD) and multi-period (MPD) waveform discriminators."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.parametrizations import spectral_norm, weight_norm

from .errors import ShapeError

LEAKY_SLOPE = 0.1
PERIODS = (2, 3, 5, 7, 11)


@dataclass(frozen=True)
class ConvSpec:
    """One convolution row: channels, kernel, stride, groups, padding.

    For MPD rows ``kernel``/``stride``/``padding`` are along the time (height)
    axis of the folded map; the period (width) axis always uses 1 / 1 / 0.
    """

    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    groups: int
    padding: int


MSD_LAYERS = (
    ConvSpec(1, 128, 15, 1, 1, 0),
    ConvSpec(128, 128, 41, 2, 4, 20),
    ConvSpec(128, 256, 41, 2, 16, 20),
    ConvSpec(256, 512, 41, 4, 16, 20),
    ConvSpec(512, 1024, 41, 4, 16, 20),
    ConvSpec(1024, 1024, 41, 1, 16, 20),
    ConvSpec(1024, 1024, 5, 1, 2, 0),
)
# Logit projection appended after the table.
MSD_HEAD = ConvSpec(1024, 1, 3, 1, 1, 1)

# The last row is the logit projection. Its stride is 1 rather than the
# tabulated 3: a stride-3 1x1 projection would drop two thirds of positions.
MPD_LAYERS = (
    ConvSpec(1, 32, 5, 3, 1, 2),
    ConvSpec(32, 128, 5, 3, 1, 2),
    ConvSpec(128, 512, 5, 3, 1, 2),
    ConvSpec(512, 1024, 5, 3, 1, 2),
    ConvSpec(1024, 1024, 5, 1, 1, 2),
    ConvSpec(1024, 1, 1, 1, 1, 2),
)


def scale_layers(layers: Sequence[ConvSpec], divisor: int) -> tuple[ConvSpec, ...]:
    """Shrink hidden widths by ``divisor`` for reduced-cost runs.

    Single-channel inputs and outputs are kept; groups shrink with the widths
    (never below 1) so every group still divides its channel counts.
    """
    if divisor == 1:
        return tuple(layers)
    out = []
    for s in layers:
        cin = s.in_channels if s.in_channels == 1 else max(1, s.in_channels // divisor)
        cout = s.out_channels if s.out_channels == 1 else max(1, s.out_channels // divisor)
        groups = max(1, s.groups // divisor)
        while cin % groups or cout % groups:
            groups -= 1
        out.append(replace(s, in_channels=cin, out_channels=cout, groups=groups))
    return tuple(out)


def _conv_out(length, spec: ConvSpec):
    return (length + 2 * spec.padding - spec.kernel) // spec.stride + 1


def avg_pool_x4(x: torch.Tensor) -> torch.Tensor:
    """Non-overlapping mean pooling with window 4 along the last axis."""
    if x.shape[-1] < 4:
        raise ShapeError(f"average pooling needs at least 4 samples, got {x.shape[-1]}")
    squeeze = x.dim() == 1
    y = F.avg_pool1d(x.reshape(-1, 1, x.shape[-1]), 4, 4)
    y = y.reshape(*x.shape[:-1], y.shape[-1])
    return y if not squeeze else y.reshape(-1)


def reshape_for_period(x: torch.Tensor, period: int) -> torch.Tensor:
    """Fold ``(batch, 1, T)`` into ``(batch, 1, ceil(T/p), p)``.

    A length that is not a multiple of ``period`` is reflection-padded on the
    right first.
    """
    if period < 1:
        raise ValueError("period must be >= 1")
    if x.shape[-1] == 0:
        raise ShapeError("cannot fold an empty signal")
    b, c, t = x.shape
    rem = t % period
    if rem:
        pad = period - rem
        if pad >= t:
            raise ShapeError(f"signal of length {t} too short to reflect-pad for period {period}")
        x = F.pad(x, (0, pad), mode="reflect")
        t += pad
    return x.view(b, c, t // period, period)


class ScaleDiscriminator(nn.Module):
    """1-D convolution stack; leaky ReLU after every layer except the head."""

    def __init__(self, layers=MSD_LAYERS, head=MSD_HEAD, norm="weight"):
        super().__init__()
        wrap = spectral_norm if norm == "spectral" else weight_norm
        self.norm = norm
        self.specs = tuple(layers) + ((head,) if head is not None else ())
        self.convs = nn.ModuleList(
            wrap(nn.Conv1d(s.in_channels, s.out_channels, s.kernel, s.stride, s.padding, groups=s.groups))
            for s in self.specs
        )

    def output_length(self, length: int) -> int:
        for s in self.specs:
            length = _conv_out(length, s)
        return length

    def forward(self, x):
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = F.leaky_relu(x, LEAKY_SLOPE)
        return x


class PeriodDiscriminator(nn.Module):
    """2-D convolution stack over the ``(T/p, p)`` fold of the waveform."""

    def __init__(self, period: int, layers=MPD_LAYERS):
        super().__init__()
        self.period = period
        self.specs = tuple(layers)
        self.convs = nn.ModuleList(
            weight_norm(
                nn.Conv2d(
                    s.in_channels, s.out_channels, (s.kernel, 1), (s.stride, 1),
                    padding=(s.padding, 0), groups=s.groups,
                )
            )
            for s in self.specs
        )

    def output_height(self, length: int) -> int:
        h = -(-length // self.period)
        for s in self.specs:
            h = _conv_out(h, s)
        return h

    def forward(self, x):
        x = reshape_for_period(x, self.period)
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = F.leaky_relu(x, LEAKY_SLOPE)
        return x


class DiscriminatorEnsemble(nn.Module):
    """Two scale discriminators (raw, x4-pooled) plus one period discriminator per period.

    ``forward`` returns one logit map per sub-discriminator, MSD first.
    """

    def __init__(
        self,
        msd_layers=MSD_LAYERS,
        msd_head=MSD_HEAD,
        mpd_layers=MPD_LAYERS,
        periods=PERIODS,
        use_mpd: bool = True,
    ):
        super().__init__()
        self.msd = nn.ModuleList([
            ScaleDiscriminator(msd_layers, msd_head, norm="spectral"),
            ScaleDiscriminator(msd_layers, msd_head, norm="weight"),
        ])
        self.mpd = nn.ModuleList(PeriodDiscriminator(p, mpd_layers) for p in periods) if use_mpd else nn.ModuleList()

    @property
    def sub_names(self) -> list[str]:
        return ["msd_raw", "msd_pool4"] + [f"mpd_p{d.period}" for d in self.mpd]

    def output_shapes(self, length: int) -> list[tuple[int, ...]]:
        """Per-map shapes (without batch/channel axes) for input length ``length``."""
        shapes = [(self.msd[0].output_length(length),), (self.msd[1].output_length(length // 4),)]
        shapes += [(d.output_height(length), d.period) for d in self.mpd]
        return shapes

    def check_length(self, length: int):
        for name, shape in zip(self.sub_names, self.output_shapes(length)):
            if shape[0] < 1:
                raise ShapeError(f"{name}: input length {length} is too short for this sub-discriminator")
        if length // 4 < 1 or any(length < d.period for d in self.mpd):
            raise ShapeError(f"input length {length} is too short")

    def forward(self, x) -> list[torch.Tensor]:
        if x.dim() == 2:
            x = x.unsqueeze(1)
        self.check_length(x.shape[-1])
        maps = [self.msd[0](x), self.msd[1](avg_pool_x4(x))]
        maps += [d(x) for d in self.mpd]
        return maps


def build_ensemble(
    seed: int = 0,
    width_divisor: int = 1,
    use_mpd: bool = True,
    msd_layers=MSD_LAYERS,
    msd_head=MSD_HEAD,
    mpd_layers=MPD_LAYERS,
    periods=PERIODS,
) -> DiscriminatorEnsemble:
    """Construct the ensemble with deterministic initialization under ``seed``.

    ``width_divisor > 1`` shrinks every hidden width (see :func:`scale_layers`);
    ``use_mpd=False`` gives the MSD-only variant.
    """
    msd_layers = scale_layers(msd_layers, width_divisor)
    mpd_layers = scale_layers(mpd_layers, width_divisor)
    if msd_head is not None:
        msd_head = scale_layers([msd_head], width_divisor)[0]
    state = torch.random.get_rng_state()
    try:
        torch.manual_seed(seed)
        ens = DiscriminatorEnsemble(msd_layers, msd_head, mpd_layers, periods, use_mpd)
    finally:
        torch.random.set_rng_state(state)
    return ens


def min_input_length(ens: DiscriminatorEnsemble) -> int:
    """Smallest waveform length every sub-discriminator accepts."""
    n = 1
    while True:
        try:
            ens.check_length(n)
            return n
        except ShapeError:
            n += 1
