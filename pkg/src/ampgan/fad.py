"""Fréchet distance between embedding distributions, with a pluggable embedder."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np
import torch

from .audio import AudioBuffer
from .errors import EmbeddingError, NumericalError, ShapeError
from .losses import MelConfig, mel_spectrogram

logger = logging.getLogger(__name__)

EIGEN_TOLERANCE = 1e-8


@dataclass
class EmbeddingSet:
    vectors: np.ndarray
    model_id: str = ""

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if not np.all(np.isfinite(self.vectors)):
            raise NumericalError(f"{self.model_id}: embeddings contain non-finite entries")
        n, d = self.vectors.shape
        if n < 2:
            raise NumericalError(f"{self.model_id}: a covariance needs at least 2 embeddings, got {n}")
        if n < d + 1:
            logger.warning("%s: %d embeddings of dimension %d give a rank-deficient covariance", self.model_id, n, d)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def moments(self):
        """Mean and unbiased covariance."""
        mu = self.vectors.mean(axis=0)
        sigma = np.atleast_2d(np.cov(self.vectors, rowvar=False, ddof=1))
        return mu, sigma


def _sym_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(ref: EmbeddingSet, gen: EmbeddingSet) -> float:
    """Fréchet distance between Gaussian fits of two embedding sets.

    The trace of ``(S_r S_g)^(1/2)`` is taken from the eigenvalues of the
    symmetric matrix ``S_r^(1/2) S_g S_r^(1/2)``, which keeps it real.
    """
    if ref.dim != gen.dim:
        raise ShapeError(f"embedding dimension mismatch: {ref.dim} vs {gen.dim}")
    mu_r, s_r = ref.moments()
    mu_g, s_g = gen.moments()
    root_r = _sym_sqrt(s_r)
    m = root_r @ s_g @ root_r
    w = np.linalg.eigvalsh((m + m.T) / 2)
    tol = EIGEN_TOLERANCE * max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < -tol:
        raise NumericalError(f"covariance product has eigenvalue {w.min():.3e} below -{tol:.1e}")
    tr_sqrt = np.sqrt(np.clip(w, 0.0, None)).sum()
    diff = mu_r - mu_g
    fd = float(diff @ diff + np.trace(s_r) + np.trace(s_g) - 2.0 * tr_sqrt)
    if not np.isfinite(fd):
        raise NumericalError(
            f"non-finite Fréchet distance (trace_r={np.trace(s_r):.3e}, trace_g={np.trace(s_g):.3e}, "
            f"tr_sqrt={tr_sqrt:.3e})"
        )
    return max(fd, 0.0) if fd > -tol else fd


class Embedder(Protocol):
    model_id: str
    window: int
    hop: int

    def __call__(self, window: np.ndarray) -> np.ndarray: ...


class LogMelEmbedder:
    """Toy embedder: mean log-mel energy per band over a window (d = 32)."""

    model_id = "logmel-mean-32"

    def __init__(self, window: int = 16384, hop: int | None = None, n_mels: int = 32, sample_rate: int = 44100):
        self.window = window
        self.hop = hop or window
        self.cfg = MelConfig(fft_size=1024, hop=256, n_mels=n_mels, sample_rate=sample_rate, fmax=sample_rate / 2)

    def __call__(self, window: np.ndarray) -> np.ndarray:
        x = torch.as_tensor(np.asarray(window, dtype=np.float64))
        mel = mel_spectrogram(x, self.cfg)
        return torch.log(1e-5 + mel).mean(dim=-1).numpy()


def embed_for_fad(buffers: Sequence[AudioBuffer], embedder: Callable | None = None) -> EmbeddingSet:
    """Embed every full window of every buffer and stack the vectors."""
    embedder = embedder or LogMelEmbedder()
    rows = []
    for buf in buffers:
        x = buf.samples
        for start in range(0, x.size - embedder.window + 1, embedder.hop):
            try:
                vec = np.asarray(embedder(x[start:start + embedder.window]), dtype=np.float64).ravel()
            except Exception as exc:
                raise EmbeddingError(f"{buf.source_id or '<buffer>'} at sample {start}: {exc}") from exc
            rows.append(vec)
    if not rows:
        raise EmbeddingError(f"no buffer is at least {embedder.window} samples long")
    return EmbeddingSet(np.stack(rows), getattr(embedder, "model_id", type(embedder).__name__))
