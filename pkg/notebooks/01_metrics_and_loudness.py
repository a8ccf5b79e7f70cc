"""
Metrics and loudness, by hand
=============================

A tour of the measurement side: BS.1770 loudness and two-stage
normalization, ESR with and without pre-emphasis, log-mel L1 and the
Frechet distance on toy embeddings. Runs in a few seconds.
"""

# %%
import numpy as np
import torch

from ampgan.audio import AudioBuffer
from ampgan.fad import LogMelEmbedder, embed_for_fad, frechet_distance
from ampgan.loudness import measure_integrated_loudness, normalize_loudness
from ampgan.losses import esr, mel_l1
from ampgan.toy import clean_signal, render_target

FS = 44100
rng = np.random.default_rng(0)

# %% [markdown]
# A full-scale 997 Hz sine. K-weighting adds about +0.69 dB at 1 kHz and the
# -0.691 offset cancels it, so the reading is 10*log10(0.5) = -3.01 LUFS.

# %%
t = np.arange(10 * FS) / FS
sine = AudioBuffer(np.sin(2 * np.pi * 997 * t))
print("997 Hz sine:", round(measure_integrated_loudness(sine), 3), "LUFS")

# %% [markdown]
# Normalization: peak to -1 dBFS, then a single gain to -12 LUFS. Quiet,
# peaky material may not reach the target without clipping; then the gain
# stops at unit peak and the buffer is flagged.

# %%
for name, x in [("noise", 0.01 * rng.standard_normal(3 * FS)), ("toy guitar", clean_signal(rng, 3.0))]:
    out = normalize_loudness(AudioBuffer(x))
    print(f"{name:>10}: {measure_integrated_loudness(out):7.2f} LUFS, peak {np.max(np.abs(out.samples)):.3f}, "
          f"clamped={out.loudness_clamped}")

# %% [markdown]
# ESR of a few corruptions of the tanh(5x) target. Pre-emphasis weights the
# high end, so a low-passed prediction scores worse with it on.

# %%
x = clean_signal(rng, 2.0)
y = torch.from_numpy(render_target(x))
kernel = np.ones(8) / 8
candidates = {
    "exact": y,
    "scaled 0.9": 0.9 * y,
    "soft clip tanh(4x)": torch.from_numpy(np.tanh(4 * x)),
    "low-passed": torch.from_numpy(np.convolve(render_target(x), kernel, mode="same")),
}
print(f"{'prediction':>20} {'ESR':>8} {'ESR no-pre':>11} {'mel-L1':>8}")
for name, y_hat in candidates.items():
    print(f"{name:>20} {esr(y, y_hat).item():8.4f} {esr(y, y_hat, None).item():11.4f} {mel_l1(y, y_hat).item():8.4f}")

# %% [markdown]
# Frechet distance between toy log-mel embeddings: clean vs rendered is far
# apart, two halves of the rendered set are close.

# %%
clean = [AudioBuffer(clean_signal(rng, 3.0)) for _ in range(8)]
rendered = [AudioBuffer(render_target(b.samples)) for b in clean]
emb = LogMelEmbedder(window=8192)
r = embed_for_fad(rendered, emb)
print("FAD(rendered, rendered):", round(frechet_distance(r, r), 6))
print("FAD(rendered, clean):   ", round(frechet_distance(r, embed_for_fad(clean, emb)), 3))
print("FAD(rendered[:4], rendered[4:]):",
      round(frechet_distance(embed_for_fad(rendered[:4], emb), embed_for_fad(rendered[4:], emb)), 3))
