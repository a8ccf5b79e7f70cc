"""Audio ingestion, segmentation, dataset splitting and batch construction."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .errors import (
    BatchingError,
    EmptyInputError,
    IngestionError,
    PairingError,
    SplitError,
)

SAMPLE_RATE = 44100
SEGMENT_LENGTH = 2 * SAMPLE_RATE
ROLES = ("clean", "rendered")
SPLITS = ("train", "val", "test")

# Resampler: Kaiser-windowed sinc, 100 dB design attenuation.
_RESAMPLE_HALF_TAPS = 32
_RESAMPLE_KAISER_BETA = 10.056
_RESAMPLE_CUTOFF = 0.94


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    source_id: str = ""
    loudness_clamped: bool = False

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise IngestionError(f"{self.source_id}: expected mono samples, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise IngestionError(f"{self.source_id}: non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def _pcm_to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        # scipy left-justifies 24-bit PCM into int32, so one scale covers both
        return data.astype(np.float64) / 2147483648.0
    if np.issubdtype(data.dtype, np.floating):
        return data.astype(np.float64)
    raise IngestionError(f"unsupported sample type {data.dtype}")


def resample(samples: np.ndarray, src_rate: int, dst_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Polyphase windowed-sinc resampling."""
    if src_rate == dst_rate:
        return np.asarray(samples, dtype=np.float64)
    ratio = Fraction(dst_rate, src_rate)
    up, down = ratio.numerator, ratio.denominator
    max_rate = max(up, down)
    taps = signal.firwin(
        2 * _RESAMPLE_HALF_TAPS * max_rate + 1,
        _RESAMPLE_CUTOFF / max_rate,
        window=("kaiser", _RESAMPLE_KAISER_BETA),
    )
    return signal.resample_poly(np.asarray(samples, dtype=np.float64), up, down, window=taps)


def load_audio(path, source_id: str | None = None) -> AudioBuffer:
    """Read a WAV file as a canonical mono 44.1 kHz buffer.

    Multichannel input is downmixed by channel mean; other rates are resampled.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    x = _pcm_to_float(np.asarray(data))
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise EmptyInputError(f"{path}: zero-length audio")
    x = resample(x, rate, SAMPLE_RATE)
    return AudioBuffer(x, SAMPLE_RATE, source_id if source_id is not None else path.stem)


def save_audio(buf: AudioBuffer, path) -> Path:
    """Write ``buf`` as 32-bit float mono WAV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, buf.sample_rate, buf.samples.astype(np.float32))
    return path


def cache_path(root, tone_label: str, role: str, source_id: str) -> Path:
    """Location of a normalized file inside the cache directory."""
    return Path(root) / tone_label / role / f"{source_id}.wav"


def segment_audio(buf: AudioBuffer, length: int = SEGMENT_LENGTH) -> list[np.ndarray]:
    """Cut ``buf`` into consecutive non-overlapping windows, dropping the remainder."""
    if length <= 0:
        raise ValueError("segment length must be positive")
    n = buf.samples.size // length
    return [buf.samples[i * length:(i + 1) * length] for i in range(n)]


# --------------------------------------------------------------------------
# Manifests and datasets


@dataclass
class SourceEntry:
    """One source file with its role and tone.

    Entries sharing a non-empty ``pair_id`` (one clean, one rendered) are
    sample-aligned recordings of the same performance.
    """

    buffer: AudioBuffer
    role: str
    tone_label: str
    pair_id: str = ""


@dataclass
class ManifestRow:
    path: Path
    role: str
    tone_label: str
    pair_id: str = ""


MANIFEST_FIELDS = ("path", "role", "tone_label", "pair_id")


def read_manifest(path) -> list[ManifestRow]:
    """Parse a CSV manifest with header ``path,role,tone_label[,pair_id]``.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"path", "role", "tone_label"} - set(reader.fieldnames or [])
        if missing:
            raise IngestionError(f"{path}: manifest missing columns {sorted(missing)}")
        for line in reader:
            role = line["role"].strip()
            if role not in ROLES:
                raise IngestionError(f"{path}: unknown role {role!r}")
            p = Path(line["path"].strip())
            if not p.is_absolute():
                p = path.parent / p
            rows.append(ManifestRow(p, role, line["tone_label"].strip(), (line.get("pair_id") or "").strip()))
    return rows


def write_manifest(rows: Iterable[ManifestRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for r in rows:
            writer.writerow([str(r.path), r.role, r.tone_label, r.pair_id])
    return path


def load_manifest(path) -> list[SourceEntry]:
    return [
        SourceEntry(load_audio(r.path), r.role, r.tone_label, r.pair_id)
        for r in read_manifest(path)
    ]


@dataclass(frozen=True)
class Segment:
    source_id: str
    offset: int
    samples: np.ndarray = field(repr=False, compare=False)
    role: str
    tone_label: str
    split: str


@dataclass
class SegmentDataset:
    """Pool of fixed-length segments.

    ``pairs`` maps clean segment indices to their aligned rendered segment
    index; it is ``None`` for a purely unpaired pool.
    """

    segments: list[Segment]
    segment_length: int
    pairs: list[tuple[int, int]] | None = None

    def __len__(self):
        return len(self.segments)

    def select(self, role=None, split=None, tone_label=None) -> list[Segment]:
        return [
            s for s in self.segments
            if (role is None or s.role == role)
            and (split is None or s.split == split)
            and (tone_label is None or s.tone_label == tone_label)
        ]

    def paired(self, split=None, tone_label=None) -> "SegmentDataset":
        """Sub-dataset holding only aligned pairs matching the filters."""
        if not self.pairs:
            raise PairingError("dataset has no clean/rendered pairing")
        segs, pairs = [], []
        for ci, ri in self.pairs:
            c, r = self.segments[ci], self.segments[ri]
            if (split is None or c.split == split) and (tone_label is None or c.tone_label == tone_label):
                segs += [c, r]
                pairs.append((len(segs) - 2, len(segs) - 1))
        return SegmentDataset(segs, self.segment_length, pairs)


def _unit_key(entry: SourceEntry, index: int):
    return ("pair", entry.tone_label, entry.pair_id) if entry.pair_id else ("file", index)


def _group_units(entries: Sequence[SourceEntry]):
    units: dict[object, list[SourceEntry]] = {}
    for i, e in enumerate(entries):
        units.setdefault(_unit_key(e, i), []).append(e)
    return units


def _assign_units(units, ratios, seed):
    if len(ratios) != 3 or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9) or min(ratios) < 0:
        raise SplitError(f"ratios must be three non-negative values summing to 1, got {ratios}")
    by_tone: dict[str, list[object]] = {}
    for key, members in units.items():
        by_tone.setdefault(members[0].tone_label, []).append(key)

    rng = np.random.default_rng(seed)
    assignment = {}
    for tone in sorted(by_tone):
        keys = by_tone[tone]
        n = len(keys)
        if n < 3:
            raise SplitError(f"tone {tone!r}: {n} source unit(s), need at least 3 to populate all splits")
        n_train = math.floor(n * ratios[0])
        n_val = math.floor(n * ratios[1])
        order = rng.permutation(n)
        for rank, k in enumerate(order):
            split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
            assignment[keys[k]] = split
    return assignment


def assign_splits(entries: Sequence[SourceEntry], ratios=(0.8, 0.1, 0.1), seed: int = 0) -> list[str]:
    """Split name for each entry, exactly as :func:`split_dataset` assigns it."""
    assignment = _assign_units(_group_units(entries), ratios, seed)
    return [assignment[_unit_key(e, i)] for i, e in enumerate(entries)]


def split_dataset(
    entries: Sequence[SourceEntry],
    ratios=(0.8, 0.1, 0.1),
    seed: int = 0,
    segment_length: int = SEGMENT_LENGTH,
) -> SegmentDataset:
    """Assign whole source files to train/val/test, then segment them.

    Files are grouped by tone; a clean/rendered pair counts as one unit so both
    halves land in the same split. Per tone, ``floor(n*r_train)`` units go to
    train, ``floor(n*r_val)`` to val and the rest to test.
    """
    units = _group_units(entries)
    assignment = _assign_units(units, ratios, seed)

    segments: list[Segment] = []
    pairs: list[tuple[int, int]] = []
    for key, members in units.items():
        split = assignment[key]
        if key[0] == "pair":
            clean = [m for m in members if m.role == "clean"]
            rendered = [m for m in members if m.role == "rendered"]
            if len(clean) != 1 or len(rendered) != 1:
                raise PairingError(f"pair {key[2]!r} needs exactly one clean and one rendered file")
            c, r = clean[0], rendered[0]
            n = min(len(c.buffer), len(r.buffer))
            for k in range(n // segment_length):
                sl = slice(k * segment_length, (k + 1) * segment_length)
                off = k * segment_length
                segments.append(Segment(c.buffer.source_id, off, c.buffer.samples[sl], "clean", c.tone_label, split))
                segments.append(Segment(r.buffer.source_id, off, r.buffer.samples[sl], "rendered", r.tone_label, split))
                pairs.append((len(segments) - 2, len(segments) - 1))
        else:
            for m in members:
                for k, chunk in enumerate(segment_audio(m.buffer, segment_length)):
                    segments.append(
                        Segment(m.buffer.source_id, k * segment_length, chunk, m.role, m.tone_label, split)
                    )
    return SegmentDataset(segments, segment_length, pairs or None)


# --------------------------------------------------------------------------
# Batching


def _stack(segments: Sequence[Segment], idx) -> np.ndarray:
    return np.stack([segments[i].samples for i in idx]).astype(np.float32)


def make_unpaired_batch(
    clean_pools: Sequence[Sequence[Segment]] | Sequence[Segment],
    rendered_pool: Sequence[Segment],
    batch_size: int,
    rng: np.random.Generator,
    replace: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw independent clean and rendered batches of shape ``(batch, length)``.

    Several clean pools are merged and sampled uniformly per segment, so each
    pool contributes in proportion to its size.
    """
    if clean_pools and isinstance(clean_pools[0], Segment):
        clean_pools = [clean_pools]
    merged = [s for pool in clean_pools for s in pool]
    if not merged or not rendered_pool:
        raise BatchingError("clean and rendered pools must be non-empty")
    if not replace and (batch_size > len(merged) or batch_size > len(rendered_pool)):
        raise BatchingError(
            f"batch_size {batch_size} exceeds pool size (clean {len(merged)}, rendered {len(rendered_pool)})"
        )
    ci = rng.choice(len(merged), size=batch_size, replace=replace)
    ri = rng.choice(len(rendered_pool), size=batch_size, replace=replace)
    return _stack(merged, ci), _stack(rendered_pool, ri)


def make_paired_batch(
    paired: SegmentDataset,
    batch_size: int,
    rng: np.random.Generator,
    replace: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw aligned (clean, rendered) batches from a paired dataset."""
    if not paired.pairs:
        raise PairingError("dataset has no clean/rendered pairing")
    if not replace and batch_size > len(paired.pairs):
        raise BatchingError(f"batch_size {batch_size} exceeds {len(paired.pairs)} pairs")
    idx = rng.choice(len(paired.pairs), size=batch_size, replace=replace)
    ci = [paired.pairs[i][0] for i in idx]
    ri = [paired.pairs[i][1] for i in idx]
    return _stack(paired.segments, ci), _stack(paired.segments, ri)
