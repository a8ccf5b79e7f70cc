"""Training losses and waveform/spectral evaluation metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import torch

from .errors import ShapeError

PREEMPHASIS = 0.95
LOG_FLOOR = 1e-5


def _check_topology(real_maps, fake_maps):
    if len(real_maps) != len(fake_maps):
        raise ShapeError(f"logit map count mismatch: {len(real_maps)} real vs {len(fake_maps)} fake")


def hinge_d_loss(real_maps: Sequence[torch.Tensor], fake_maps: Sequence[torch.Tensor]) -> torch.Tensor:
    """Discriminator hinge loss, summed over sub-discriminators."""
    _check_topology(real_maps, fake_maps)
    loss = 0.0
    for r, f in zip(real_maps, fake_maps):
        loss = loss + torch.relu(1.0 - r).mean() + torch.relu(1.0 + f).mean()
    return loss


def hinge_g_loss(fake_maps: Sequence[torch.Tensor]) -> torch.Tensor:
    """Generator hinge loss: negated mean logit, summed over sub-discriminators."""
    loss = 0.0
    for f in fake_maps:
        loss = loss - f.mean()
    return loss


def feature_matching_loss(real_feats, fake_feats) -> torch.Tensor:
    """L1 between intermediate discriminator features; paired training only."""
    loss = 0.0
    for r, f in zip(real_feats, fake_feats):
        loss = loss + torch.mean(torch.abs(r.detach() - f))
    return loss


def preemphasis(x: torch.Tensor, coeff: float = PREEMPHASIS) -> torch.Tensor:
    """First-order high-pass ``y[n] = x[n] - coeff * x[n-1]`` along the last axis."""
    if coeff == 0:
        return x
    y = x.clone()
    y[..., 1:] = x[..., 1:] - coeff * x[..., :-1]
    return y


def esr(y: torch.Tensor, y_hat: torch.Tensor, preemph: float | None = PREEMPHASIS) -> torch.Tensor:
    """Error-to-signal ratio over all elements, after optional pre-emphasis."""
    if y.shape != y_hat.shape:
        raise ShapeError(f"esr: shape mismatch {tuple(y.shape)} vs {tuple(y_hat.shape)}")
    if preemph:
        y, y_hat = preemphasis(y, preemph), preemphasis(y_hat, preemph)
    energy = torch.sum(y * y)
    if energy == 0:
        raise ZeroDivisionError("esr undefined: target has zero energy")
    return torch.sum((y - y_hat) ** 2) / energy


# --------------------------------------------------------------------------
# Mel spectrum


@dataclass(frozen=True)
class MelConfig:
    fft_size: int = 1024
    hop: int = 256
    n_mels: int = 128
    sample_rate: int = 44100
    fmin: float = 0.0
    fmax: float = 22050.0

    def validate(self):
        if self.hop > self.fft_size or self.hop <= 0:
            raise ValueError("mel hop must be in (0, fft_size]")
        if self.fmax > self.sample_rate / 2 or self.fmin < 0 or self.fmin >= self.fmax:
            raise ValueError("mel band must satisfy 0 <= fmin < fmax <= sample_rate/2")
        return self

    def to_dict(self):
        return asdict(self)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def _mel_filterbank_cached(cfg: MelConfig) -> np.ndarray:
    cfg.validate()
    n_bins = cfg.fft_size // 2 + 1
    bin_hz = cfg.sample_rate / cfg.fft_size
    freqs = np.arange(n_bins) * bin_hz
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    lower, center, upper = edges[:-2], edges[1:-1], edges[2:]
    # Filters narrower than one FFT bin are widened to one bin per side so
    # each row covers at least one bin.
    left = np.maximum(center - lower, bin_hz)[:, None]
    right = np.maximum(upper - center, bin_hz)[:, None]
    d = freqs[None, :] - center[:, None]
    fb = np.where(d < 0, 1.0 + d / left, 1.0 - d / right)
    fb = np.clip(fb, 0.0, None)
    return fb


def mel_filterbank(cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Triangular HTK-scale filterbank of shape ``(n_mels, fft_size//2 + 1)``."""
    return _mel_filterbank_cached(cfg).copy()


def mel_spectrogram(x: torch.Tensor, cfg: MelConfig = MelConfig()) -> torch.Tensor:
    """Mel-filtered STFT magnitude, shape ``(..., n_mels, frames)``.

    Frames are centered with reflection padding and a periodic Hann window.
    """
    if x.shape[-1] < cfg.fft_size:
        raise ShapeError(f"signal of {x.shape[-1]} samples is shorter than one {cfg.fft_size}-sample frame")
    lead = x.shape[:-1]
    flat = x.reshape(-1, x.shape[-1])
    window = torch.hann_window(cfg.fft_size, periodic=True, dtype=x.dtype, device=x.device)
    spec = torch.stft(
        flat, cfg.fft_size, cfg.hop, window=window, center=True, pad_mode="reflect", return_complex=True
    ).abs()
    fb = torch.as_tensor(mel_filterbank(cfg), dtype=x.dtype, device=x.device)
    mel = torch.matmul(fb, spec)
    return mel.reshape(*lead, *mel.shape[-2:])


def mel_l1(y: torch.Tensor, y_hat: torch.Tensor, cfg: MelConfig = MelConfig()) -> torch.Tensor:
    """Mean absolute difference of log-compressed mel magnitudes."""
    if y.shape != y_hat.shape:
        raise ShapeError(f"mel_l1: shape mismatch {tuple(y.shape)} vs {tuple(y_hat.shape)}")
    a = torch.log(LOG_FLOOR + mel_spectrogram(y, cfg))
    b = torch.log(LOG_FLOOR + mel_spectrogram(y_hat, cfg))
    return torch.mean(torch.abs(a - b))
