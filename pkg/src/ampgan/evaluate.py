"""Paired objective evaluation: per-file ESR and mel-L1, optional FAD."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .audio import AudioBuffer, SourceEntry
from .errors import PairingError
from .fad import embed_for_fad, frechet_distance
from .losses import PREEMPHASIS, MelConfig, esr, mel_l1


@dataclass
class PairedFile:
    pair_id: str
    clean: AudioBuffer
    rendered: AudioBuffer


@dataclass
class EvalReport:
    files: list[dict]
    aggregate: dict
    embedder: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {"files": self.files, "aggregate": self.aggregate, "embedder": self.embedder, **self.extra}


def collect_pairs(entries: Sequence[SourceEntry]) -> list[PairedFile]:
    """Group entries into aligned clean/rendered files by ``pair_id``."""
    groups: dict[tuple[str, str], dict[str, SourceEntry]] = {}
    for e in entries:
        if not e.pair_id:
            continue
        slot = groups.setdefault((e.tone_label, e.pair_id), {})
        if e.role in slot:
            raise PairingError(f"pair {e.pair_id!r} has more than one {e.role} file")
        slot[e.role] = e
    pairs = []
    for (_, pid), slot in sorted(groups.items()):
        if set(slot) != {"clean", "rendered"}:
            raise PairingError(f"pair {pid!r} needs one clean and one rendered file, has {sorted(slot)}")
        pairs.append(PairedFile(pid, slot["clean"].buffer, slot["rendered"].buffer))
    if not pairs:
        raise PairingError("no aligned clean/rendered pairs to evaluate")
    return pairs


def evaluate_pairs(
    model: Callable[[np.ndarray], np.ndarray],
    pairs: Sequence[PairedFile],
    mel_cfg: MelConfig = MelConfig(),
    preemphasis: bool = True,
    embedder=None,
) -> EvalReport:
    """Run ``model`` on each clean file and score it against the rendered one.

    ``model`` maps a 1-D clean signal to a prediction of the same length. The
    aggregate is the plain mean over files. FAD is included only when an
    ``embedder`` is given.
    """
    coeff = PREEMPHASIS if preemphasis else None
    files, predictions, targets = [], [], []
    for p in pairs:
        n = min(len(p.clean), len(p.rendered))
        pred = np.asarray(model(p.clean.samples[:n]), dtype=np.float64)
        target = p.rendered.samples[:n]
        y, y_hat = torch.from_numpy(target), torch.from_numpy(pred)
        files.append({
            "pair_id": p.pair_id,
            "L1_mel": float(mel_l1(y, y_hat, mel_cfg)),
            "ESR": float(esr(y, y_hat, coeff)),
        })
        predictions.append(AudioBuffer(pred, p.clean.sample_rate, f"{p.pair_id}:generated"))
        targets.append(AudioBuffer(target, p.rendered.sample_rate, f"{p.pair_id}:rendered"))
    aggregate = {
        "L1_mel": float(np.mean([f["L1_mel"] for f in files])),
        "ESR": float(np.mean([f["ESR"] for f in files])),
    }
    name = None
    if embedder is not None:
        name = embedder.model_id
        aggregate["FAD"] = frechet_distance(embed_for_fad(targets, embedder), embed_for_fad(predictions, embedder))
    return EvalReport(files, aggregate, name, {"n_files": len(files)})
