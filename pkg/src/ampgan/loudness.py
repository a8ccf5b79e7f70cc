"""ITU-R BS.1770-4 integrated loudness and two-stage peak/LUFS normalization."""

from __future__ import annotations

import logging
import math
from dataclasses import replace

import numpy as np
from scipy import signal

from .audio import AudioBuffer
from .errors import NormalizationError

logger = logging.getLogger(__name__)

#: Returned when every gating block falls below the gates (e.g. silence).
UNMEASURABLE = float("-inf")

BLOCK_SECONDS = 0.4
BLOCK_OVERLAP = 0.75
ABSOLUTE_GATE_LUFS = -70.0
RELATIVE_GATE_LU = -10.0

# Analog prototype parameters of the two K-weighting stages. Re-deriving the
# biquads from these gives the tabulated 48 kHz coefficients and generalizes
# to any sample rate.
_SHELF_GAIN_DB = 3.999843853973347
_SHELF_Q = 0.7071752369554196
_SHELF_FC = 1681.974450955533
_HIGHPASS_Q = 0.5003270373238773
_HIGHPASS_FC = 38.13547087602444


def is_measurable(lufs: float) -> bool:
    return math.isfinite(lufs)


def k_weighting_coefficients(sample_rate: int):
    """Return ``[(b, a), (b, a)]`` for the shelf and high-pass stages."""
    K = math.tan(math.pi * _SHELF_FC / sample_rate)
    Vh = 10.0 ** (_SHELF_GAIN_DB / 20.0)
    Vb = Vh ** 0.4996667741545416
    a0 = 1.0 + K / _SHELF_Q + K * K
    shelf_b = np.array([Vh + Vb * K / _SHELF_Q + K * K, 2.0 * (K * K - Vh), Vh - Vb * K / _SHELF_Q + K * K]) / a0
    shelf_a = np.array([a0, 2.0 * (K * K - 1.0), 1.0 - K / _SHELF_Q + K * K]) / a0

    K = math.tan(math.pi * _HIGHPASS_FC / sample_rate)
    a0 = 1.0 + K / _HIGHPASS_Q + K * K
    hp_b = np.array([1.0, -2.0, 1.0])
    hp_a = np.array([a0, 2.0 * (K * K - 1.0), 1.0 - K / _HIGHPASS_Q + K * K]) / a0
    return [(shelf_b, shelf_a), (hp_b, hp_a)]


def k_weight(samples: np.ndarray, sample_rate: int) -> np.ndarray:
    y = np.asarray(samples, dtype=np.float64)
    for b, a in k_weighting_coefficients(sample_rate):
        y = signal.lfilter(b, a, y)
    return y


def block_loudness(samples: np.ndarray, sample_rate: int) -> np.ndarray:
    """Mean-square power of each 400 ms gating block (75 % overlap)."""
    y = k_weight(samples, sample_rate)
    block = int(round(BLOCK_SECONDS * sample_rate))
    step = int(round(BLOCK_SECONDS * (1.0 - BLOCK_OVERLAP) * sample_rate))
    if y.size < block:
        return np.empty(0)
    n_blocks = (y.size - block) // step + 1
    csum = np.concatenate([[0.0], np.cumsum(y * y)])
    starts = np.arange(n_blocks) * step
    return (csum[starts + block] - csum[starts]) / block


def _power_to_lufs(z):
    with np.errstate(divide="ignore"):
        return -0.691 + 10.0 * np.log10(z)


def measure_integrated_loudness(buf: AudioBuffer) -> float:
    """Gated integrated loudness of a mono buffer in LUFS.

    Returns :data:`UNMEASURABLE` when no block survives gating or the buffer is
    shorter than one 400 ms block.
    """
    z = block_loudness(buf.samples, buf.sample_rate)
    if z.size == 0:
        return UNMEASURABLE
    lk = _power_to_lufs(z)
    z = z[lk > ABSOLUTE_GATE_LUFS]
    if z.size == 0:
        return UNMEASURABLE
    relative_gate = _power_to_lufs(z.mean()) + RELATIVE_GATE_LU
    z = z[_power_to_lufs(z) > relative_gate]
    if z.size == 0:
        return UNMEASURABLE
    return float(_power_to_lufs(z.mean()))


def normalize_loudness(buf: AudioBuffer, peak_db: float = -1.0, target_lufs: float = -12.0) -> AudioBuffer:
    """Scale to ``peak_db`` sample peak, then to ``target_lufs`` integrated loudness.

    If the loudness gain would push the sample peak above full scale, the gain
    is clamped to unit peak and the returned buffer has ``loudness_clamped`` set.
    """
    x = np.asarray(buf.samples, dtype=np.float64)
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if peak == 0.0:
        raise NormalizationError(f"{buf.source_id or '<buffer>'}: silent input cannot be normalized")
    x = x * (10.0 ** (peak_db / 20.0) / peak)

    loudness = measure_integrated_loudness(replace(buf, samples=x))
    if not is_measurable(loudness):
        raise NormalizationError(f"{buf.source_id or '<buffer>'}: integrated loudness is unmeasurable")
    gain = 10.0 ** ((target_lufs - loudness) / 20.0)
    clamped = False
    new_peak = float(np.max(np.abs(x))) * gain
    if new_peak > 1.0:
        gain /= new_peak
        clamped = True
        logger.warning(
            "%s: loudness gain clamped to unit peak, reaching %.2f LUFS instead of %.2f",
            buf.source_id or "<buffer>",
            loudness + 20.0 * math.log10(gain),
            target_lufs,
        )
    return replace(buf, samples=x * gain, loudness_clamped=clamped)
