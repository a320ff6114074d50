"""Pretraining, fine-tuning, evaluation and mask-rate sweeps."""

from __future__ import annotations

import contextlib
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from .autodiff import Tensor, backward, load_checkpoint, no_grad, save_checkpoint
from .autodiff.primitives import sigmoid, softmax
from .fda import augment_signal
from .model import CoReECG, EmptyVisibleSetError, ModelConfig, is_teacher
from .objectives import (
    LossReport,
    binary_cross_entropy,
    cross_entropy,
    infonce_loss,
    metrics,
    reconstruction_loss,
    total_loss,
)
from .signal.dataset import WindowCache, derived_rng, stable_hash
from .signal.preprocess import zscore
from .signal.records import LEAD_NAMES
from .stdm import MaskPlan, sample_mask, uniform_random_mask

log = logging.getLogger(__name__)

ABLATIONS = ("core", "contrastive_only", "reconstructive_only")


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    phase: str = "pretrain"
    epochs: int = 80
    batch_size: int = 256
    lr: float = 1.5e-4
    weight_decay: float = 0.01
    warmup_epochs: int = 5
    ema_momentum: float = 0.996
    tau: float = 0.2
    alpha: float = 1.0
    beta: float = 1.0
    p_time: float = 0.5
    p_lead: float = 0.2
    k: int = 4
    seed: int = 0
    ablation: str = "core"
    fda_enabled: bool = True
    fda_epsilon: float = 1e-6
    stdm_enabled: bool = True
    uniform_mask_ratio: float = 0.75
    deterministic: bool = True
    data_ratio: float = 1.0
    lead_subset: list[str] | None = None
    crop_len: int = 2250
    keep_epoch_checkpoints: bool = True

    def __post_init__(self):
        if self.phase not in ("pretrain", "finetune"):
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError(f"need 0 <= warmup_epochs < epochs, got {self.warmup_epochs}, {self.epochs}")
        if not 0.0 < self.data_ratio <= 1.0:
            raise ValueError("data_ratio must lie in (0, 1]")

    @classmethod
    def finetune_defaults(cls, **kw) -> "TrainConfig":
        base = dict(phase="finetune", lr=8e-5, warmup_epochs=0)
        base.update(kw)
        return cls(**base)

    @property
    def loss_weights(self) -> tuple[float, float]:
        if self.ablation == "contrastive_only":
            return 0.0, self.beta
        if self.ablation == "reconstructive_only":
            return self.alpha, 0.0
        return self.alpha, self.beta

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# ------------------------------------------------------------------ optimizer


def lr_at(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup to ``base_lr`` then cosine decay to 0 at ``total_steps``."""
    if not 0 <= warmup_steps < total_steps:
        raise ValueError(f"need 0 <= warmup_steps < total_steps, got {warmup_steps}, {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    frac = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None], state: OptimizerState,
               lr: float, weight_decay: float = 0.01, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8, frozen: Callable[[str], bool] = is_teacher) -> None:
    """Decoupled-weight-decay Adam. Parameters without a gradient are skipped."""
    for name in sorted(grads):
        g = grads[name]
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}; step aborted")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name in sorted(grads):
        g = grads[name]
        if g is None or frozen(name):
            continue
        p = params[name]
        dt = p.data.dtype
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data = (p.data * (1.0 - lr * weight_decay)).astype(dt)
        p.data = (p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(dt)


# -------------------------------------------------------------------- batches


@dataclass
class Batch:
    ids: list[str]
    x: np.ndarray  # [B, C, T] z-scored crops
    patches: np.ndarray  # [B, C, N, P]
    labels: np.ndarray


def make_batch(cache: WindowCache, idx, epoch: int, seed: int, train: bool, crop_len: int = 2250,
               patch_len: int = 75, dtype=np.float32) -> Batch:
    """Random (train) or centred (eval) crops, z-scored and patchified.

    Crop offsets derive from ``(seed, epoch, record_id)`` only, so a batch
    does not depend on iteration order.
    """
    xs = []
    for i in idx:
        w = cache.windows[i]
        W = w.shape[-1]
        if W < crop_len:
            raise ValueError(f"window {cache.record_ids[i]} shorter than crop {crop_len}")
        if train:
            off = int(derived_rng(seed, epoch, cache.record_ids[i], "crop").integers(0, W - crop_len + 1))
        else:
            off = (W - crop_len) // 2
        xs.append(zscore(w[:, off : off + crop_len]))
    x = np.stack(xs).astype(dtype)
    B, C, T = x.shape
    return Batch([cache.record_ids[i] for i in idx], x, x.reshape(B, C, T // patch_len, patch_len),
                 cache.labels[np.asarray(idx)])


def make_plans(cfg: TrainConfig, ids, epoch: int, C: int, N: int) -> list[MaskPlan]:
    plans = []
    for rid in ids:
        for attempt in range(100):
            s = stable_hash(cfg.seed, epoch, rid, "mask", attempt)
            if cfg.stdm_enabled:
                plan = sample_mask(C, N, cfg.p_time, cfg.p_lead, min(cfg.k, C), seed=s)
            else:
                plan = uniform_random_mask(C, N, cfg.uniform_mask_ratio, seed=s)
            # the encoder needs one visible token; resample in the rare all-hidden case
            if plan.V.any():
                break
        else:
            raise EmptyVisibleSetError(f"could not draw a plan with a visible patch for {rid}")
        plans.append(plan)
    return plans


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return derived_rng(seed, epoch, "order").permutation(n)


@contextlib.contextmanager
def _determinism(cfg: TrainConfig):
    if cfg.deterministic:
        with threadpool_limits(limits=1):
            yield
    else:
        yield


# ---------------------------------------------------------------- pretraining


@dataclass
class StepOutput:
    report: LossReport
    grads: dict[str, np.ndarray | None]


def joint_loss(model: CoReECG, batch: Batch, plans: list[MaskPlan], cfg: TrainConfig, epoch: int,
               fda_open: np.ndarray | None = None) -> tuple[Tensor, Tensor, Tensor, int]:
    """Both branches on one batch: ``(l_rec, l_con, total, masked_count)``.

    ``fda_open`` pins the FDA noise gate (used by gradient checks, where a
    finite-difference step must not flip a gate).
    """
    z = model.encode_visible(batch.patches, plans)
    x_hat = model.decode_time(z)
    M = np.stack([p.M for p in plans])
    l_rec = reconstruction_loss(batch.patches, x_hat, M)

    if cfg.fda_enabled:
        seeds = [stable_hash(cfg.seed, epoch, rid, "fda") for rid in batch.ids]
        x_aug, _ = augment_signal(batch.x, model.fda(cfg.fda_epsilon), seed=seeds, open_=fda_open)
    else:
        x_aug = Tensor(batch.x)
    h_t = model.teacher_forward(x_aug)
    h_s = model.project(model.decode_latent_global(z))
    l_con = infonce_loss(h_s, h_t, cfg.tau)

    alpha, beta = cfg.loss_weights
    return l_rec, l_con, total_loss(l_rec, l_con, alpha, beta), int(M.sum())


def pretrain_step(model: CoReECG, batch: Batch, plans: list[MaskPlan], cfg: TrainConfig, epoch: int) -> StepOutput:
    """Forward both branches, backprop the weighted total and return raw gradients (no update)."""
    model.zero_grad()
    l_rec, l_con, total, count = joint_loss(model, batch, plans, cfg, epoch)
    if not np.isfinite(total.data):
        raise NonFiniteError(f"non-finite loss at epoch {epoch}: l_rec={l_rec.item()} l_con={l_con.item()}")
    backward(total)
    grads = {k: t.grad for k, t in model.trainable().items()}
    rep = LossReport(l_rec.item(), l_con.item(), total.item(), count, len(plans))
    return StepOutput(rep, grads)


@dataclass
class PretrainResult:
    model: CoReECG
    epochs: list[dict]
    steps: list[dict]
    checkpoints: list[Path]
    optimizer: OptimizerState


def _write_jsonl(path: Path | None, row: dict) -> None:
    if path is not None:
        with open(path, "a") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _checkpoint(model: CoReECG, opt: OptimizerState, path: Path, step: int, epoch: int, config: dict) -> None:
    tensors = model.state_dict()
    for name in opt.m:
        tensors[f"optim.m.{name}"] = opt.m[name]
        tensors[f"optim.v.{name}"] = opt.v[name]
    save_checkpoint(path, tensors, step=step, config=config, extra={"epoch": epoch, "optim_step": opt.step})


def pretrain(cfg: TrainConfig, model_cfg: ModelConfig, cache: WindowCache, out_dir=None,
             model: CoReECG | None = None, split: str = "train", on_step=None) -> PretrainResult:
    """Self-supervised pretraining on the ``split`` windows of ``cache``."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        for f in ("train_log.jsonl",):
            (out / f).unlink(missing_ok=True)
    if cfg.lead_subset:
        cache = cache.select_leads(cfg.lead_subset)
    lead_ids = [LEAD_NAMES.index(n) for n in cache.leads] if len(cache.leads) <= 12 and set(cache.leads) <= set(LEAD_NAMES) else None
    model = model or CoReECG(model_cfg, seed=cfg.seed, lead_ids=lead_ids)
    idx = cache.indices(split)
    if idx.size == 0:
        raise ValueError(f"no {split} windows in cache")
    steps_per_epoch = math.ceil(idx.size / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    warmup = steps_per_epoch * cfg.warmup_epochs
    opt = OptimizerState()
    epochs, steps, ckpts = [], [], []
    config_blob = {"train": cfg.to_dict(), "model": model_cfg.to_dict()}
    step = 0
    with _determinism(cfg):
        for epoch in range(1, cfg.epochs + 1):
            order = idx[_epoch_order(idx.size, cfg.seed, epoch)]
            sums = np.zeros(3)
            for b0 in range(0, order.size, cfg.batch_size):
                bidx = order[b0 : b0 + cfg.batch_size]
                batch = make_batch(cache, bidx, epoch, cfg.seed, True, cfg.crop_len, model_cfg.patch_len)
                C, N = batch.patches.shape[1:3]
                plans = make_plans(cfg, batch.ids, epoch, C, N)
                try:
                    so = pretrain_step(model, batch, plans, cfg, epoch)
                except NonFiniteError as exc:
                    raise NonFiniteError(f"epoch {epoch} batch {b0 // cfg.batch_size}: {exc}") from None
                lr = lr_at(step, total_steps, warmup, cfg.lr)
                try:
                    adamw_step(model.params, so.grads, opt, lr, cfg.weight_decay)
                except NonFiniteError as exc:
                    raise NonFiniteError(f"epoch {epoch} batch {b0 // cfg.batch_size}: {exc}") from None
                model.ema_update(cfg.ema_momentum)
                step += 1
                row = {"step": step, "epoch": epoch, "lr": lr, "l_rec": so.report.l_rec,
                       "l_con": so.report.l_con, "total": so.report.total}
                steps.append(row)
                _write_jsonl(out / "train_log.jsonl" if out else None, row)
                if on_step is not None:
                    on_step(model, so, row)
                sums += len(bidx) * np.array([so.report.l_rec, so.report.l_con, so.report.total])
            mean = sums / idx.size
            erow = {"epoch": epoch, "l_rec": float(mean[0]), "l_con": float(mean[1]), "total": float(mean[2])}
            epochs.append(erow)
            log.info("pretrain epoch %d: l_rec=%.4f l_con=%.4f total=%.4f", epoch, *mean)
            if out is not None:
                path = out / (f"pretrain_epoch{epoch:03d}.ckpt" if cfg.keep_epoch_checkpoints else "pretrain_last.ckpt")
                _checkpoint(model, opt, path, step, epoch, config_blob)
                ckpts.append(path)
    return PretrainResult(model, epochs, steps, ckpts, opt)


# ----------------------------------------------------------------- finetuning


def predict_proba(model: CoReECG, patches: np.ndarray, multilabel: bool, batch_size: int = 64) -> np.ndarray:
    out = []
    with no_grad():
        for b0 in range(0, len(patches), batch_size):
            logits = model.classify(patches[b0 : b0 + batch_size])
            probs = sigmoid(logits) if multilabel else softmax(logits, axis=-1)
            out.append(probs.data)
    return np.concatenate(out).astype(np.float64)


def evaluate(model: CoReECG, cache: WindowCache, split: str = "test") -> dict:
    idx = cache.indices(split)
    if idx.size == 0:
        raise ValueError(f"no {split} windows in cache")
    probs = predict_proba(model, cache.patches[idx].astype(model.dtype), cache.multilabel)
    return metrics(probs, cache.labels[idx], multilabel=cache.multilabel)


@dataclass
class FinetuneResult:
    model: CoReECG
    history: list[dict]
    best_epoch: int
    val: dict
    test: dict
    checkpoint: Path | None = None


def load_pretrained_encoder(model: CoReECG, checkpoint) -> None:
    if isinstance(checkpoint, (str, Path)):
        state, _ = load_checkpoint(checkpoint)
    elif isinstance(checkpoint, CoReECG):
        state = checkpoint.state_dict()
    else:
        state = dict(checkpoint)
    enc = {k: v for k, v in state.items() if k.startswith("encoder.")}
    if not enc:
        raise ValueError("checkpoint holds no encoder parameters")
    model.load_state_dict(enc, strict=True)


def finetune(cfg: TrainConfig, model_cfg: ModelConfig, cache: WindowCache, checkpoint=None,
             n_classes: int | None = None, out_dir=None) -> FinetuneResult:
    """Full fine-tuning of the encoder plus a fresh linear head; keeps the best-validation weights."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.jsonl").unlink(missing_ok=True)
    if cfg.lead_subset:
        cache = cache.select_leads(cfg.lead_subset)
    n_classes = n_classes or len(cache.class_names)
    lead_ids = [LEAD_NAMES.index(n) for n in cache.leads]
    model = CoReECG(model_cfg, seed=cfg.seed, lead_ids=lead_ids)
    if checkpoint is not None:
        load_pretrained_encoder(model, checkpoint)
    # only the encoder and head take part in fine-tuning
    for name, t in model.params.items():
        t.requires_grad = name.startswith("encoder.")
    model.add_classifier(n_classes, seed=stable_hash(cfg.seed, "head"))

    idx = cache.indices("train")
    if cfg.data_ratio < 1.0:
        keep = max(1, int(round(cfg.data_ratio * idx.size)))
        idx = np.sort(derived_rng(cfg.seed, "data_ratio").choice(idx, size=keep, replace=False))
    steps_per_epoch = math.ceil(idx.size / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    warmup = steps_per_epoch * cfg.warmup_epochs
    opt = OptimizerState()
    history = []
    best = (-np.inf, -np.inf)
    best_state, best_epoch, best_val = model.state_dict(), 0, {}
    has_val = cache.indices("val").size > 0
    step = 0
    with _determinism(cfg):
        for epoch in range(1, cfg.epochs + 1):
            order = idx[_epoch_order(idx.size, cfg.seed, epoch)]
            losses = []
            for b0 in range(0, order.size, cfg.batch_size):
                bidx = order[b0 : b0 + cfg.batch_size]
                batch = make_batch(cache, bidx, epoch, cfg.seed, True, cfg.crop_len, model_cfg.patch_len)
                model.zero_grad()
                logits = model.classify(batch.patches)
                if cache.multilabel:
                    loss = binary_cross_entropy(logits, batch.labels)
                else:
                    loss = cross_entropy(logits, batch.labels)
                if not np.isfinite(loss.data):
                    raise NonFiniteError(f"non-finite fine-tune loss at epoch {epoch}")
                backward(loss)
                grads = {k: t.grad for k, t in model.trainable().items()}
                adamw_step(model.params, grads, opt, lr_at(step, total_steps, warmup, cfg.lr), cfg.weight_decay)
                step += 1
                losses.append(loss.item())
            row = {"epoch": epoch, "loss": float(np.mean(losses))}
            if has_val:
                val = evaluate(model, cache, "val")
                row.update({f"val_{k}": v for k, v in val.items()})
                _write_jsonl(out / "metrics.jsonl" if out else None, {"epoch": epoch, "split": "val", **val})
                score = (val["acc"], np.nan_to_num(val["macro_auroc"], nan=-1.0))
                if score > best:
                    best, best_state, best_epoch, best_val = score, model.state_dict(), epoch, val
            else:
                best_state, best_epoch = model.state_dict(), epoch
            history.append(row)
            log.info("finetune epoch %d: %s", epoch, row)
    model.load_state_dict(best_state)
    test = evaluate(model, cache, "test") if cache.indices("test").size else {}
    _write_jsonl(out / "metrics.jsonl" if out else None, {"epoch": best_epoch, "split": "test", **test})
    ckpt = None
    if out is not None:
        ckpt = out / "finetune_best.ckpt"
        save_checkpoint(ckpt, model.state_dict(), step=step,
                        config={"train": cfg.to_dict(), "model": model_cfg.to_dict(), "n_classes": n_classes,
                                "leads": list(cache.leads)},
                        extra={"best_epoch": best_epoch})
    return FinetuneResult(model, history, best_epoch, best_val, test, ckpt)


def load_classifier(path) -> tuple[CoReECG, dict]:
    """Rebuild a fine-tuned model from ``finetune_best.ckpt``."""
    state, header = load_checkpoint(path)
    cfg = header["config"]
    model_cfg = ModelConfig.from_dict(cfg["model"])
    model = CoReECG(model_cfg, params={k: v for k, v in state.items() if not k.startswith("head.")},
                    lead_ids=[LEAD_NAMES.index(n) for n in cfg.get("leads", LEAD_NAMES)])
    model.add_classifier(int(cfg["n_classes"]))
    model.load_state_dict({k: v for k, v in state.items() if k.startswith("head.")})
    return model, header


# ---------------------------------------------------------------------- sweep


SWEEP_FIELDS = ("p_time", "p_lead", "l_rec", "l_con", "acc", "macro_f1", "macro_auroc")


def sweep_masks(pre_cfg: TrainConfig, ft_cfg: TrainConfig, model_cfg: ModelConfig, cache: WindowCache,
                p_time: list[float], p_lead: list[float], out_csv=None) -> list[dict]:
    """Pretrain + fine-tune for every ``(p_time, p_lead)`` cell; one row per cell."""
    if not p_time or not p_lead:
        raise ValueError("sweep grid must be non-empty")
    rows = []
    for pt in p_time:
        for pl in p_lead:
            pre = pretrain(replace(pre_cfg, p_time=pt, p_lead=pl), model_cfg, cache)
            ft = finetune(ft_cfg, model_cfg, cache, checkpoint=pre.model)
            last = pre.epochs[-1]
            rows.append({"p_time": pt, "p_lead": pl, "l_rec": last["l_rec"], "l_con": last["l_con"],
                         **{k: ft.test.get(k, float("nan")) for k in ("acc", "macro_f1", "macro_auroc")}})
            log.info("sweep cell p_time=%s p_lead=%s -> %s", pt, pl, rows[-1])
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
            w.writeheader()
            w.writerows(rows)
    return rows
