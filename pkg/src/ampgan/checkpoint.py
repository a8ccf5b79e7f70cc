"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"AMPG"  u32 version
    u32 n_tensors
    n_tensors x { u32 name_len, name (utf-8), u32 ndim, ndim x u64 dim,
                  u64 n_values, n_values x f32 }
    u64 meta_len, meta (utf-8 JSON)
    u32 crc32 of everything above

Metadata holds the step counter, optimizer step counts, RNG state, config
digest, the full resolved configs and the best-validation record.
"""

from __future__ import annotations

import io
import json
import os
import struct
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointCorruptError, CheckpointError, CheckpointIncompatibleError
from .generator import Generator, GeneratorConfig, build_generator
from .losses import MelConfig
from .trainer import TrainState, init_state, optimizer_steps, train_config_from_dict

MAGIC = b"AMPG"
VERSION = 1


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    meta: dict
    version: int = VERSION


def write_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    buf.write(struct.pack("<I", len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            raise CheckpointError(f"{name}: only float32 tensors are stored, got {arr.dtype}")
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(struct.pack("<Q", arr.size))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    meta = json.dumps(ckpt.meta, sort_keys=True).encode()
    buf.write(struct.pack("<Q", len(meta)))
    buf.write(meta)
    body = buf.getvalue()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointCorruptError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if len(data) < 16:
        raise CheckpointCorruptError(f"{path}: truncated checkpoint")
    r = _Reader(data, path)
    if r.take(4) != MAGIC:
        raise CheckpointCorruptError(f"{path}: not an AMPG checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointIncompatibleError(f"{path}: format version {version}, expected {VERSION}")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise CheckpointCorruptError(f"{path}: checksum mismatch (truncated or corrupted)")
    r.data = data[:-4]
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        (n,) = r.unpack("<Q")
        if int(np.prod(shape, dtype=np.int64)) != n:
            raise CheckpointCorruptError(f"{path}: {name} shape {shape} does not hold {n} values")
        tensors[name] = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)
    (meta_len,) = r.unpack("<Q")
    meta_raw = r.take(meta_len)
    if r.pos != len(r.data):
        raise CheckpointCorruptError(f"{path}: unexpected bytes after metadata")
    return Checkpoint(tensors, json.loads(meta_raw), version)


def save_checkpoint(state: TrainState, path) -> Path:
    tensors = {k: v.detach().cpu().numpy() for k, v in state.tensors().items()}
    meta = {
        "step": state.step,
        "digest": state.digest,
        "gen_opt_steps": optimizer_steps(state.gen_opt),
        "disc_opt_steps": optimizer_steps(state.disc_opt) if state.disc_opt is not None else 0,
        "rng_state": state.rng.bit_generator.state,
        "generator_config": asdict(state.gen_config),
        "train_config": asdict(state.config),
        "mel_config": asdict(state.mel_config),
        "best": state.best,
        "validations": state.validations,
    }
    return write_checkpoint(Checkpoint(tensors, meta), path)


def _load_module(module, prefix, tensors, path):
    sd = {}
    for k, ref in module.state_dict().items():
        key = f"{prefix}/{k}"
        if key not in tensors:
            raise CheckpointIncompatibleError(f"{path}: missing tensor {key}")
        if tuple(tensors[key].shape) != tuple(ref.shape):
            raise CheckpointIncompatibleError(f"{path}: {key} has shape {tensors[key].shape}, expected {tuple(ref.shape)}")
        sd[k] = torch.from_numpy(tensors[key].copy())
    module.load_state_dict(sd)


def _load_moments(prefix, module, opt, tensors, steps):
    if steps == 0:
        return
    for name, p in module.named_parameters():
        if f"{prefix}/{name}/exp_avg" not in tensors:
            continue  # never received a gradient, so the optimizer holds no state
        opt.state[p] = {
            "step": torch.tensor(float(steps)),
            "exp_avg": torch.from_numpy(tensors[f"{prefix}/{name}/exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(tensors[f"{prefix}/{name}/exp_avg_sq"].copy()),
        }


def load_checkpoint(path, expect_digest: str | None = None, train_config=None) -> TrainState:
    """Rebuild a full :class:`TrainState` from ``path``.

    ``expect_digest`` guards resumption: a mismatch raises
    :class:`CheckpointIncompatibleError` naming both digests. ``train_config``
    overrides the stored one (only resumable fields may differ).
    """
    ckpt = read_checkpoint(path)
    meta = ckpt.meta
    if expect_digest is not None and meta["digest"] != expect_digest:
        raise CheckpointIncompatibleError(
            f"{path}: config digest {meta['digest']} does not match the current config {expect_digest}"
        )
    gen_cfg = GeneratorConfig(**meta["generator_config"])
    mel_cfg = MelConfig(**meta["mel_config"])
    cfg = train_config if train_config is not None else train_config_from_dict(meta["train_config"])
    state = init_state(cfg, gen_cfg, mel_cfg)
    if state.digest != meta["digest"]:
        raise CheckpointIncompatibleError(
            f"{path}: config digest {meta['digest']} does not match the current config {state.digest}"
        )
    _load_module(state.generator, "generator", ckpt.tensors, path)
    _load_moments("gen_opt", state.generator, state.gen_opt, ckpt.tensors, meta["gen_opt_steps"])
    if state.discriminator is not None:
        _load_module(state.discriminator, "discriminator", ckpt.tensors, path)
        _load_moments("disc_opt", state.discriminator, state.disc_opt, ckpt.tensors, meta["disc_opt_steps"])
    state.step = meta["step"]
    state.rng = np.random.default_rng()
    state.rng.bit_generator.state = meta["rng_state"]
    state.best = meta["best"]
    state.validations = meta["validations"]
    return state


def load_generator(path) -> Generator:
    """Only the generator of a checkpoint, in eval mode (for rendering)."""
    ckpt = read_checkpoint(path)
    gen = build_generator(GeneratorConfig(**ckpt.meta["generator_config"]))
    _load_module(gen, "generator", ckpt.tensors, path)
    return gen.eval()
