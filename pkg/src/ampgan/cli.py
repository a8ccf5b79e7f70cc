"""``ampgan`` command line: normalize, split, train, render, eval.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from .audio import (
    AudioBuffer,
    ManifestRow,
    SourceEntry,
    assign_splits,
    cache_path,
    load_audio,
    read_manifest,
    save_audio,
    split_dataset,
    write_manifest,
)
from .config import RunConfig, load_config
from .errors import AmpganError, ConfigError, DivergenceError, EmptyInputError
from .loudness import normalize_loudness

logger = logging.getLogger("ampgan")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
COMMANDS = ("normalize", "split", "train", "render", "eval")


class _Ctx:
    def __init__(self, cfg: RunConfig, root: Path):
        self.cfg, self.root = cfg, root

    def path(self, p, what: str) -> Path:
        if not p:
            raise ConfigError(f"{what} is required")
        p = Path(p)
        return p if p.is_absolute() else self.root / p

    def entries(self, manifest) -> list[SourceEntry]:
        rows = read_manifest(manifest)
        if not rows:
            raise EmptyInputError(f"{manifest}: manifest lists no files")
        return [SourceEntry(load_audio(r.path), r.role, r.tone_label, r.pair_id) for r in rows]


def _tone(cfg: RunConfig, entries) -> str:
    tones = sorted({e.tone_label for e in entries})
    if cfg.data.tone_label:
        if cfg.data.tone_label not in tones:
            raise ConfigError(f"data.tone_label {cfg.data.tone_label!r} not in manifest tones {tones}")
        return cfg.data.tone_label
    own = [t for t in tones if t not in cfg.data.extra_clean_tones]
    if len(own) != 1:
        raise ConfigError(f"manifest has tones {tones}; set data.tone_label")
    return own[0]


# --------------------------------------------------------------------------


def cmd_normalize(ctx: _Ctx) -> int:
    cfg = ctx.cfg
    manifest = ctx.path(cfg.data.manifest, "data.manifest")
    out_dir = ctx.path(cfg.data.cache_dir, "data.cache_dir")
    rows = read_manifest(manifest)
    if not rows:
        raise EmptyInputError(f"{manifest}: manifest lists no files")
    done, failed, clamped = [], 0, 0
    for row in rows:
        try:
            buf = load_audio(row.path)
            out = cache_path(out_dir, row.tone_label, row.role, buf.source_id)
            if out.resolve() == Path(row.path).resolve():
                raise AmpganError(f"{row.path}: output would overwrite the input; pick another data.cache_dir")
            norm = normalize_loudness(buf, cfg.data.peak_db, cfg.data.target_lufs)
            save_audio(norm, out)
        except AmpganError as exc:
            logger.error("skipping %s: %s", row.path, exc)
            failed += 1
            continue
        clamped += norm.loudness_clamped
        done.append(ManifestRow(out.relative_to(out_dir), row.role, row.tone_label, row.pair_id))
    write_manifest(done, out_dir / "manifest.csv")
    print(f"normalized {len(done)} file(s), {clamped} peak-clamped, {failed} failed -> {out_dir / 'manifest.csv'}")
    return EXIT_DATA if failed else EXIT_OK


def cmd_split(ctx: _Ctx) -> int:
    cfg = ctx.cfg
    manifest = ctx.path(cfg.data.manifest, "data.manifest")
    rows = read_manifest(manifest)
    entries = ctx.entries(manifest)
    splits = assign_splits(entries, cfg.data.split_ratios, cfg.data.split_seed)
    ds = split_dataset(entries, cfg.data.split_ratios, cfg.data.split_seed, cfg.train.segment_length)
    run_dir = ctx.path(cfg.output.run_dir, "output.run_dir")
    run_dir.mkdir(parents=True, exist_ok=True)
    assignment = [
        {"path": str(r.path), "role": r.role, "tone_label": r.tone_label, "pair_id": r.pair_id, "split": s}
        for r, s in zip(rows, splits)
    ]
    counts = Counter((s.tone_label, s.split, s.role) for s in ds.segments)
    summary = {f"{t}/{sp}/{ro}": n for (t, sp, ro), n in sorted(counts.items())}
    (run_dir / "split.json").write_text(json.dumps({"files": assignment, "segments": summary}, indent=2))
    for key, n in summary.items():
        print(f"{key}: {n} segments")
    return EXIT_OK


def cmd_train(ctx: _Ctx) -> int:
    from .checkpoint import load_checkpoint
    from .trainer import init_state, train, training_data_from

    cfg = ctx.cfg
    manifest = ctx.path(cfg.data.manifest, "data.manifest")
    run_dir = ctx.path(cfg.output.run_dir, "output.run_dir")
    resume = ctx.path(cfg.output.resume, "output.resume") if cfg.output.resume else None
    cfg.dump(run_dir / "config.yaml")
    entries = ctx.entries(manifest)
    tone = _tone(cfg, entries)
    ds = split_dataset(entries, cfg.data.split_ratios, cfg.data.split_seed, cfg.train.segment_length)
    extra = [ds.select(role="clean", split="train", tone_label=t) for t in cfg.data.extra_clean_tones]
    data = training_data_from(ds, tone, extra_clean=extra)
    state = init_state(cfg.train, cfg.generator, cfg.mel)
    if resume is not None:
        state = load_checkpoint(resume, expect_digest=state.digest, train_config=cfg.train)
    try:
        state, _ = train(state, data, out_dir=run_dir, step_log=run_dir / "steps.jsonl")
    except DivergenceError as exc:
        print(f"training diverged: {exc}; state saved to {exc.checkpoint_path}", file=sys.stderr)
        return EXIT_DIVERGED
    last = state.validations[-1] if state.validations else {}
    print(f"trained {state.step} steps; last validation {last}; best {state.best} -> {run_dir}")
    return EXIT_OK


def cmd_render(ctx: _Ctx) -> int:
    from .checkpoint import load_generator
    from .generator import render

    cfg = ctx.cfg.render
    gen = load_generator(ctx.path(cfg.checkpoint, "render.checkpoint"))
    buf = load_audio(ctx.path(cfg.input, "render.input"))
    y = render(gen, buf.samples, cfg.chunk_size)
    out = save_audio(AudioBuffer(y.astype(np.float64), buf.sample_rate, buf.source_id), ctx.path(cfg.output, "render.output"))
    print(f"rendered {len(y)} samples -> {out}")
    return EXIT_OK


def cmd_eval(ctx: _Ctx) -> int:
    from .checkpoint import load_generator
    from .evaluate import collect_pairs, evaluate_pairs
    from .fad import LogMelEmbedder
    from .generator import render

    cfg = ctx.cfg
    ev = cfg.eval
    gen = load_generator(ctx.path(ev.checkpoint, "eval.checkpoint"))
    manifest = ctx.path(ev.manifest or cfg.data.manifest, "eval.manifest")
    entries = ctx.entries(manifest)
    if ev.split != "all":
        splits = assign_splits(entries, cfg.data.split_ratios, cfg.data.split_seed)
        entries = [e for e, s in zip(entries, splits) if s == ev.split]
    if cfg.data.tone_label:
        entries = [e for e in entries if e.tone_label == cfg.data.tone_label]
    pairs = collect_pairs(entries)
    embedder = LogMelEmbedder(window=ev.embedder_window) if ev.embedder == "logmel" else None
    report = evaluate_pairs(
        lambda x: render(gen, x, cfg.render.chunk_size), pairs, cfg.mel, ev.esr_preemphasis, embedder
    )
    out = ctx.path(ev.report, "eval.report") if ev.report else ctx.path(cfg.output.run_dir, "output.run_dir") / "eval.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2))
    with open(out.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pair_id", "L1_mel", "ESR"])
        for f in report.files:
            w.writerow([f["pair_id"], f["L1_mel"], f["ESR"]])
    cols = ["L1_mel", "ESR"] + (["FAD"] if "FAD" in report.aggregate else [])
    print("\t".join(cols))
    print("\t".join(f"{report.aggregate[c]:.6g}" for c in cols))
    return EXIT_OK


HANDLERS = {
    "normalize": cmd_normalize,
    "split": cmd_split,
    "train": cmd_train,
    "render": cmd_render,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--root", help="base directory for relative paths (default: current directory)")
    common.add_argument("overrides", nargs="*", metavar="section.key=value",
                        help="config overrides; these win over the config file")
    parser = argparse.ArgumentParser(prog="ampgan", description="Guitar amplifier modeling toolkit.")
    parser.add_argument("--root", dest="global_root", help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "normalize": "peak- and loudness-normalize every manifest file into the cache",
        "split": "assign files to train/val/test and report segment counts",
        "train": "train a generator (adversarial or supervised)",
        "render": "run a WAV file through a trained generator",
        "eval": "ESR, mel-L1 and optional FAD on paired files",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    root = Path(args.root or args.global_root or ".")
    try:
        config_path = None
        if args.config:
            config_path = Path(args.config)
            if not config_path.is_absolute():
                config_path = root / config_path
        cfg = load_config(config_path, args.overrides)
        return HANDLERS[args.command](_Ctx(cfg, root))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (AmpganError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
