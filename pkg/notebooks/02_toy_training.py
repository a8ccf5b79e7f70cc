"""
Training on the toy tanh(5x) amp
================================

Supervised (ESR) and adversarial (hinge GAN, unpaired) training of the same
WaveNet on synthetic guitar-like bursts, then rendering a held-out file.

    python notebooks/02_toy_training.py [steps]

The default of 300 steps per mode takes a few minutes on one core. The
acceptance suite runs 2000.
"""

# %%
import sys
import time

import numpy as np
import torch

from ampgan.audio import assign_splits, split_dataset
from ampgan.generator import receptive_field, render
from ampgan.losses import esr
from ampgan.toy import make_toy_corpus
from ampgan.trainer import TrainConfig, init_state, train, training_data_from, validate

torch.set_num_threads(1)
STEPS = int(sys.argv[1]) if len(sys.argv) > 1 else 300

# %% [markdown]
# 20 five-second files split 80/10/10 by file. Segments are short here to keep
# the walk-through fast; the generator only sees 2045 samples of context
# anyway.

# %%
entries = make_toy_corpus(n_files=20, seconds=5.0, seed=0)
ds = split_dataset(entries, seed=0, segment_length=4096)
data = training_data_from(ds, "tanh5")
print("paired train/val segments:", len(data.paired_train.pairs), len(data.paired_val.pairs))

# %% [markdown]
# Supervised baseline: aligned clean/rendered batches, ESR objective.

# %%
cfg = TrainConfig(mode="supervised", batch_size=8, segment_length=4096, max_steps=STEPS,
                  val_interval=max(STEPS // 4, 1))
state = init_state(cfg)
print("receptive field:", receptive_field(state.gen_config), "samples; lr", cfg.gen_lr)
start = time.perf_counter()
state, _ = train(state, data)
print(f"supervised: {time.perf_counter() - start:.0f} s")
for v in state.validations:
    print("  step {step:5d}  val ESR {esr:.4f}  mel-L1 {mel_l1:.3f}".format(**v))
supervised = state

# %% [markdown]
# Adversarial: clean and rendered batches are drawn independently, so the
# generator never sees its target. The discriminator widths are divided by 8
# to fit a CPU budget; the layer structure is unchanged.

# %%
adv_ds = split_dataset(entries, seed=0, segment_length=2048)
adv_data = training_data_from(adv_ds, "tanh5")
cfg = TrainConfig(batch_size=8, segment_length=2048, max_steps=STEPS, val_interval=max(STEPS // 4, 1),
                  disc_width_divisor=8)
state = init_state(cfg)
with torch.no_grad():
    print("adversarial init:", validate(state, adv_data.paired_val))
start = time.perf_counter()
state, history = train(state, adv_data)
print(f"adversarial: {time.perf_counter() - start:.0f} s")
for v in state.validations:
    print("  step {step:5d}  val ESR {esr:.4f}  mel-L1 {mel_l1:.3f}".format(**v))
print("last step losses: D {loss_d:.3f}  G {loss_g:.3f}".format(**history[-1]))

# %% [markdown]
# Render a whole test file with both generators. Chunked rendering is
# bitwise identical to a single pass.

# %%
splits = assign_splits(entries, seed=0)
test = next(e for e, s in zip(entries, splits) if s == "test" and e.role == "clean")
target = torch.from_numpy(np.tanh(5 * test.buffer.samples))
for name, st in [("supervised", supervised), ("adversarial", state)]:
    out = render(st.generator, test.buffer.samples.astype(np.float32), chunk_size=16384)
    print(f"{name:>12}: full-file ESR {esr(target, torch.from_numpy(out.astype(np.float64))).item():.4f}")
