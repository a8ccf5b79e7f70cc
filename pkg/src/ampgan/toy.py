"""Synthetic clean/rendered corpus for desk-scale training runs.

The clean side is a stream of band-limited sawtooth note bursts with
occasional two-note overlaps; the rendered side is ``tanh(5 x)`` applied
sample by sample, a memoryless stand-in for a high-gain amplifier.
"""

from __future__ import annotations

import numpy as np

from .audio import SAMPLE_RATE, AudioBuffer, SourceEntry

DRIVE = 5.0


def render_target(x: np.ndarray, drive: float = DRIVE) -> np.ndarray:
    return np.tanh(drive * np.asarray(x, dtype=np.float64))


def sawtooth_burst(freq, n, sample_rate=SAMPLE_RATE, max_harmonic_hz=8000.0, decay=3.0):
    """Additive band-limited sawtooth with an attack/exponential-decay envelope."""
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    k_max = max(1, int(min(max_harmonic_hz, sample_rate / 2 - 1) // freq))
    for k in range(1, k_max + 1):
        x += ((-1) ** (k + 1)) * np.sin(2 * np.pi * k * freq * t) / k
    x *= 2 / np.pi
    attack = min(n, int(0.005 * sample_rate))
    env = np.exp(-decay * t)
    env[:attack] *= np.linspace(0.0, 1.0, attack, endpoint=False)
    return x * env


def clean_signal(rng: np.random.Generator, seconds: float, sample_rate=SAMPLE_RATE,
                 fmin=82.0, fmax=660.0, peak=0.5) -> np.ndarray:
    n = int(round(seconds * sample_rate))
    x = np.zeros(n)
    pos = 0
    while pos < n:
        dur = int(rng.uniform(0.15, 0.6) * sample_rate)
        voices = 1 + int(rng.random() < 0.3)
        for _ in range(voices):
            f0 = float(np.exp(rng.uniform(np.log(fmin), np.log(fmax))))
            amp = rng.uniform(0.3, 1.0)
            m = min(dur, n - pos)
            x[pos:pos + m] += amp * sawtooth_burst(f0, m, sample_rate, decay=rng.uniform(1.0, 6.0))
        pos += dur
    return x * (peak / np.max(np.abs(x)))


def make_toy_corpus(
    n_files: int = 20,
    seconds: float = 5.0,
    seed: int = 0,
    tone_label: str = "tanh5",
    paired: bool = True,
    with_rendered: bool = True,
    **kwargs,
) -> list[SourceEntry]:
    """Clean files and their ``tanh(5 x)`` renderings as manifest-style entries.

    ``kwargs`` pass through to :func:`clean_signal` (pitch range, peak).
    """
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n_files):
        x = clean_signal(rng, seconds, **kwargs)
        pair_id = f"{tone_label}-{seed}-{i:03d}" if paired else ""
        entries.append(SourceEntry(AudioBuffer(x, SAMPLE_RATE, f"clean_{seed}_{i:03d}"), "clean", tone_label, pair_id))
        if with_rendered:
            entries.append(
                SourceEntry(AudioBuffer(render_target(x), SAMPLE_RATE, f"rendered_{seed}_{i:03d}"),
                            "rendered", tone_label, pair_id)
            )
    return entries


def write_toy_corpus(out_dir, **kwargs):
    """Write :func:`make_toy_corpus` to WAV files plus a ``manifest.csv``."""
    from pathlib import Path

    from .audio import ManifestRow, save_audio, write_manifest

    out_dir = Path(out_dir)
    rows = []
    for e in make_toy_corpus(**kwargs):
        path = save_audio(e.buffer, out_dir / e.role / f"{e.buffer.source_id}.wav")
        rows.append(ManifestRow(path.relative_to(out_dir), e.role, e.tone_label, e.pair_id))
    return write_manifest(rows, out_dir / "manifest.csv")
