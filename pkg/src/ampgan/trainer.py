"""Adversarial (unpaired) and supervised (paired) training loops."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .audio import Segment, SegmentDataset, make_paired_batch, make_unpaired_batch
from .discriminators import DiscriminatorEnsemble, build_ensemble
from .errors import ConfigError, DivergenceError, PairingError
from .generator import Generator, GeneratorConfig, build_generator
from .losses import MelConfig, esr, hinge_d_loss, hinge_g_loss, mel_l1

logger = logging.getLogger(__name__)

MODES = ("adversarial", "supervised")
DISCRIMINATOR_SETS = ("msd_only", "msd_mpd")
CLEAN_POOL_SPECS = ("single", "both")

ADVERSARIAL_GEN_LR = 5e-5
# The ESR objective tolerates, and on the toy task needs, a ten times larger step.
SUPERVISED_GEN_LR = 5e-4

# Fields that may change between a run and its resumption.
_RESUMABLE_FIELDS = {"max_steps", "val_interval", "checkpoint_interval"}


@dataclass
class TrainConfig:
    mode: str = "adversarial"
    discriminator_set: str = "msd_mpd"
    gen_lr: float | None = None  # None: 5e-5 adversarial, 5e-4 supervised
    disc_lr: float = 1e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay: float = 1.0
    batch_size: int = 8
    segment_length: int = 88200
    max_steps: int = 200_000
    val_interval: int = 1000
    checkpoint_interval: int = 10_000
    seed: int = 0
    clean_pool_spec: str = "single"
    esr_preemphasis: float = 0.95
    disc_width_divisor: int = 1
    mel_loss_weight: float = 0.0

    def __post_init__(self):
        if self.gen_lr is None:
            self.gen_lr = SUPERVISED_GEN_LR if self.mode == "supervised" else ADVERSARIAL_GEN_LR

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"train.mode must be one of {MODES}, got {self.mode!r}")
        if self.discriminator_set not in DISCRIMINATOR_SETS:
            raise ConfigError(f"train.discriminator_set must be one of {DISCRIMINATOR_SETS}")
        if self.clean_pool_spec not in CLEAN_POOL_SPECS:
            raise ConfigError(f"train.clean_pool_spec must be one of {CLEAN_POOL_SPECS}")
        if self.gen_lr < 0 or self.disc_lr < 0 or self.weight_decay < 0:
            raise ConfigError("learning rates and weight decay must be non-negative")
        if self.batch_size <= 0 or self.segment_length <= 0 or self.max_steps < 0 or self.val_interval <= 0:
            raise ConfigError("batch_size, segment_length and val_interval must be positive, max_steps >= 0")
        if self.mode == "adversarial" and self.mel_loss_weight:
            raise ConfigError("mel_loss_weight needs paired data; it is only allowed in supervised mode")
        return self


def config_digest(gen_cfg: GeneratorConfig, cfg: TrainConfig, mel_cfg: MelConfig) -> str:
    """Hash of every setting that must match for a resumed run to be valid."""
    train = {k: v for k, v in asdict(cfg).items() if k not in _RESUMABLE_FIELDS}
    blob = json.dumps({"generator": asdict(gen_cfg), "train": train, "mel": asdict(mel_cfg)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class TrainingData:
    """Pools for one training run.

    ``clean_pools`` feed the generator in adversarial mode (several pools are
    merged when ``clean_pool_spec`` is ``both``); ``paired_train`` feeds
    supervised mode; ``paired_val`` is always the target tone's aligned set.
    """

    paired_val: SegmentDataset
    clean_pools: list[list[Segment]] = field(default_factory=list)
    rendered_pool: list[Segment] = field(default_factory=list)
    paired_train: SegmentDataset | None = None


@dataclass
class TrainState:
    config: TrainConfig
    gen_config: GeneratorConfig
    mel_config: MelConfig
    generator: Generator
    gen_opt: torch.optim.Optimizer
    discriminator: DiscriminatorEnsemble | None = None
    disc_opt: torch.optim.Optimizer | None = None
    step: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    best: dict | None = None
    validations: list[dict] = field(default_factory=list)

    @property
    def digest(self) -> str:
        return config_digest(self.gen_config, self.config, self.mel_config)

    def tensors(self) -> dict[str, torch.Tensor]:
        """Every tensor needed to resume, keyed by stable names."""
        out = {f"generator/{k}": v for k, v in self.generator.state_dict().items()}
        out.update(_moment_tensors("gen_opt", self.generator, self.gen_opt))
        if self.discriminator is not None:
            out.update({f"discriminator/{k}": v for k, v in self.discriminator.state_dict().items()})
            out.update(_moment_tensors("disc_opt", self.discriminator, self.disc_opt))
        return out

    def fingerprint(self) -> str:
        """SHA-256 over all tensors, step counter and RNG state."""
        h = hashlib.sha256()
        for name, t in sorted(self.tensors().items()):
            h.update(name.encode())
            h.update(t.detach().contiguous().numpy().tobytes())
        h.update(str(self.step).encode())
        h.update(json.dumps(self.rng.bit_generator.state, sort_keys=True).encode())
        return h.hexdigest()


def _moment_tensors(prefix, module, opt):
    out = {}
    for name, p in module.named_parameters():
        st = opt.state.get(p)
        if st:
            out[f"{prefix}/{name}/exp_avg"] = st["exp_avg"]
            out[f"{prefix}/{name}/exp_avg_sq"] = st["exp_avg_sq"]
    return out


def optimizer_steps(opt: torch.optim.Optimizer) -> int:
    for st in opt.state.values():
        if "step" in st:
            return int(st["step"])
    return 0


def _adamw(params, lr, cfg: TrainConfig):
    return torch.optim.AdamW(
        params, lr=lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps, weight_decay=cfg.weight_decay, foreach=False
    )


def init_state(
    cfg: TrainConfig,
    gen_cfg: GeneratorConfig = GeneratorConfig(),
    mel_cfg: MelConfig = MelConfig(),
) -> TrainState:
    """Fresh training state, deterministic under ``cfg.seed``."""
    cfg.validate()
    generator = build_generator(gen_cfg, seed=cfg.seed)
    state = TrainState(
        config=cfg,
        gen_config=gen_cfg,
        mel_config=mel_cfg,
        generator=generator,
        gen_opt=_adamw(generator.parameters(), cfg.gen_lr, cfg),
        rng=np.random.default_rng(cfg.seed),
    )
    if cfg.mode == "adversarial":
        disc = build_ensemble(
            seed=cfg.seed + 1,
            width_divisor=cfg.disc_width_divisor,
            use_mpd=cfg.discriminator_set == "msd_mpd",
        )
        state.discriminator = disc
        state.disc_opt = _adamw(disc.parameters(), cfg.disc_lr, cfg)
    return state


def _set_lr(state: TrainState):
    decay = state.config.lr_decay ** state.step
    for g in state.gen_opt.param_groups:
        g["lr"] = state.config.gen_lr * decay
    if state.disc_opt is not None:
        for g in state.disc_opt.param_groups:
            g["lr"] = state.config.disc_lr * decay


def _check_finite(name, loss, state):
    if not torch.isfinite(loss):
        raise DivergenceError(f"step {state.step}: {name} is {loss.item()}")


def _as_tensor(batch, like: torch.nn.Module):
    dtype = next(like.parameters()).dtype
    t = torch.as_tensor(batch, dtype=dtype)
    return t.unsqueeze(1) if t.dim() == 2 else t


def adversarial_step(state: TrainState, clean_batch, rendered_batch) -> tuple[TrainState, dict]:
    """One discriminator update followed by one generator update."""
    G, D = state.generator, state.discriminator
    if D is None:
        raise ConfigError("adversarial_step needs a discriminator (mode=adversarial)")
    clean, real = _as_tensor(clean_batch, G), _as_tensor(rendered_batch, G)
    _set_lr(state)
    G.train()
    D.train()

    # discriminator: generated audio is detached from G
    with torch.no_grad():
        fake = G(clean)
    real_maps = D(real)
    fake_maps = D(fake)
    loss_d = hinge_d_loss(real_maps, fake_maps)
    _check_finite("discriminator loss", loss_d, state)
    state.disc_opt.zero_grad(set_to_none=True)
    loss_d.backward()
    state.disc_opt.step()

    # generator: D parameters frozen so no gradient reaches them
    for p in D.parameters():
        p.requires_grad_(False)
    try:
        gen_maps = D(G(clean))
        loss_g = hinge_g_loss(gen_maps)
        _check_finite("generator loss", loss_g, state)
        state.gen_opt.zero_grad(set_to_none=True)
        loss_g.backward()
        state.gen_opt.step()
    finally:
        for p in D.parameters():
            p.requires_grad_(True)

    state.step += 1
    log = {"step": state.step, "loss_d": loss_d.item(), "loss_g": loss_g.item()}
    for name, r, f in zip(D.sub_names, real_maps, gen_maps):
        log[f"real_{name}"] = r.mean().item()
        log[f"fake_{name}"] = f.mean().item()
    return state, log


def supervised_step(state: TrainState, clean_batch, rendered_batch) -> tuple[TrainState, dict]:
    """One generator update on the pre-emphasized ESR of an aligned batch."""
    G = state.generator
    clean, target = _as_tensor(clean_batch, G), _as_tensor(rendered_batch, G)
    _set_lr(state)
    G.train()
    pred = G(clean)
    loss_esr = esr(target, pred, state.config.esr_preemphasis)
    loss = loss_esr
    if state.config.mel_loss_weight:
        loss = loss + state.config.mel_loss_weight * mel_l1(target, pred, state.mel_config)
    _check_finite("ESR loss", loss, state)
    state.gen_opt.zero_grad(set_to_none=True)
    loss.backward()
    state.gen_opt.step()
    state.step += 1
    return state, {"step": state.step, "loss": loss.item(), "esr": loss_esr.item()}


@torch.no_grad()
def validate(state: TrainState, paired: SegmentDataset, batch_size: int = 16) -> dict:
    """Mean ESR and mel-L1 over all aligned pairs of ``paired``."""
    if not paired.pairs:
        raise PairingError("validation set has no aligned pairs")
    G = state.generator
    G.eval()
    esrs, mels = [], []
    for i in range(0, len(paired.pairs), batch_size):
        chunk = paired.pairs[i:i + batch_size]
        clean = torch.from_numpy(np.stack([paired.segments[c].samples for c, _ in chunk]).astype(np.float32))
        target = torch.from_numpy(np.stack([paired.segments[r].samples for _, r in chunk]).astype(np.float32))
        pred = G(clean)
        for t, p in zip(target, pred):
            esrs.append(esr(t, p, state.config.esr_preemphasis).item())
            mels.append(mel_l1(t, p, state.mel_config).item())
    return {"esr": float(np.mean(esrs)), "mel_l1": float(np.mean(mels))}


def _draw_batch(state: TrainState, data: TrainingData):
    cfg = state.config
    if cfg.mode == "supervised":
        if data.paired_train is None or not data.paired_train.pairs:
            raise PairingError("supervised mode needs a paired training set")
        return make_paired_batch(data.paired_train, cfg.batch_size, state.rng)
    pools = data.clean_pools if cfg.clean_pool_spec == "both" else data.clean_pools[:1]
    return make_unpaired_batch(pools, data.rendered_pool, cfg.batch_size, state.rng)


def train(
    state: TrainState,
    data: TrainingData,
    out_dir: str | Path | None = None,
    step_log: str | Path | None = None,
) -> tuple[TrainState, list[dict]]:
    """Run ``state`` forward to ``config.max_steps``.

    Validates every ``val_interval`` steps, keeps the best state by validation
    mel-L1 and, with ``out_dir``, writes ``last.ampg``, ``best.ampg`` and
    periodic ``step_XXXXXXXX.ampg`` checkpoints. Resuming a loaded state
    continues exactly where it stopped.
    """
    from .checkpoint import save_checkpoint

    cfg = state.config.validate()
    if cfg.mode == "adversarial" and (not data.clean_pools or not data.rendered_pool):
        raise PairingError("adversarial mode needs clean and rendered pools")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    log_fh = open(step_log, "a") if step_log is not None else None
    step_fn = adversarial_step if cfg.mode == "adversarial" else supervised_step
    history: list[dict] = []
    try:
        while state.step < cfg.max_steps:
            clean, rendered = _draw_batch(state, data)
            try:
                state, log = step_fn(state, clean, rendered)
            except DivergenceError as exc:
                if out_dir is not None:
                    exc.checkpoint_path = save_checkpoint(state, out_dir / "diverged.ampg")
                raise
            history.append(log)
            if log_fh is not None:
                log_fh.write(json.dumps(log) + "\n")
            if state.step % cfg.val_interval == 0 or state.step == cfg.max_steps:
                metrics = validate(state, data.paired_val)
                metrics["step"] = state.step
                state.validations.append(metrics)
                logger.info("step %d: val ESR %.4f mel-L1 %.4f", state.step, metrics["esr"], metrics["mel_l1"])
                if state.best is None or metrics["mel_l1"] < state.best["value"]:
                    state.best = {"metric": "mel_l1", "value": metrics["mel_l1"], "step": state.step}
                    if out_dir is not None:
                        save_checkpoint(state, out_dir / "best.ampg")
            if out_dir is not None and state.step % cfg.checkpoint_interval == 0:
                save_checkpoint(state, out_dir / f"step_{state.step:08d}.ampg")
    finally:
        if log_fh is not None:
            log_fh.close()
    if out_dir is not None:
        save_checkpoint(state, out_dir / "last.ampg")
    return state, history


def training_data_from(
    dataset: SegmentDataset,
    tone_label: str,
    extra_clean: Sequence[Sequence[Segment]] = (),
) -> TrainingData:
    """Assemble pools for ``tone_label`` from a split dataset.

    ``extra_clean`` pools (already restricted to their train splits) are
    appended after the target tone's own clean pool for the ``both`` setting.
    """
    own_clean = dataset.select(role="clean", split="train", tone_label=tone_label)
    rendered = dataset.select(role="rendered", split="train", tone_label=tone_label)
    paired_train = dataset.paired(split="train", tone_label=tone_label) if dataset.pairs else None
    return TrainingData(
        paired_val=dataset.paired(split="val", tone_label=tone_label),
        clean_pools=[own_clean, *[list(p) for p in extra_clean]],
        rendered_pool=rendered,
        paired_train=paired_train,
    )


def train_config_from_dict(d: dict) -> TrainConfig:
    names = {f.name for f in fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in d.items() if k in names})


def is_finite_history(history: list[dict]) -> bool:
    return all(math.isfinite(v) for rec in history for k, v in rec.items() if k != "step")
