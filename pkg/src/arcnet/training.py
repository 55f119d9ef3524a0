"""Optimisation loop, checkpoints and pullback inference.

Randomness is keyed, not streamed: frame draws for epoch ``e`` come from
``rng(seed, e)`` and the augmentation of slot ``i`` in batch ``b`` from
``rng(seed, e, b, i)``. A run resumed from the last checkpoint therefore
replays exactly the batches an uninterrupted run would have seen.
"""

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from arcnet import loss as losses
from arcnet import sampler
from arcnet.data import StackSource, augment, sample_rng
from arcnet.model import ArcNetConfig, build, canonical_variant

CHECKPOINT_FORMAT = 1


class NonFiniteLoss(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 1e-5
    plateau_factor: float = 0.5
    patience: int = 5
    epochs: int = 100
    batches_per_epoch: int = 250
    batch_size: int = 12
    tv_weight: float = losses.TV_WEIGHT
    seed: int = 0
    variant: str = "full"
    model: dict = field(default_factory=dict)
    eval_batch_size: int = 16

    def __post_init__(self):
        self.variant = canonical_variant(self.variant)
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        for name in ("lr0", "plateau_factor", "tv_weight"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("epochs", "batches_per_epoch", "batch_size", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return asdict(self)

    def model_config(self):
        return ArcNetConfig(variant=self.variant, **self.model)


class PlateauSchedule:
    """Multiply the rate by ``factor`` once ``patience`` epochs pass without a new best.

    Any strict decrease counts as an improvement. The counter restarts after a
    reduction, so a long plateau halves the rate every ``patience`` epochs.
    """

    def __init__(self, lr0, factor=0.5, patience=5):
        self.lr = lr0
        self.factor = factor
        self.patience = patience
        self.best = math.inf
        self.bad_epochs = 0
        self.reductions = 0

    def step(self, value):
        if value < self.best:
            self.best = value
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.reductions += 1
                self.bad_epochs = 0
        return self.lr

    def state_dict(self):
        return dict(vars(self))

    def load_state_dict(self, state):
        vars(self).update(state)


def _batch(sources, index, picks, cfg, epoch, batch_no, train):
    carts, polars, ys = [], [], []
    for slot, n in enumerate(picks):
        s, t = index[n]
        cart, polar = sources[s].stack(t)
        y = sources[s].labels(t)
        if train:
            cart, polar, y = augment(cart, polar, y, sample_rng(cfg.seed, epoch, batch_no, slot))
        carts.append(cart)
        polars.append(polar)
        ys.append(y)
    return (torch.from_numpy(np.stack(carts)), torch.from_numpy(np.stack(polars)),
            torch.from_numpy(np.stack(ys)).long())


def _frame_index(sources):
    return [(s, t) for s, src in enumerate(sources) for t in range(len(src))]


def validation_loss(model, sources, cfg):
    """Composite loss averaged over every frame once, without augmentation."""
    index = _frame_index(sources)
    if not index:
        return math.nan
    was_training = model.training
    model.eval()
    total = 0.0
    with torch.no_grad():
        for lo in range(0, len(index), cfg.eval_batch_size):
            picks = range(lo, min(lo + cfg.eval_batch_size, len(index)))
            cart, polar, y = _batch(sources, index, picks, cfg, 0, 0, train=False)
            total += losses.combined(model(cart, polar), y, cfg.tv_weight).total.item() * len(picks)
    model.train(was_training)
    return total / len(index)


def save_checkpoint(path, model, cfg, meta, optimizer=None, schedule=None):
    payload = {
        "format_version": CHECKPOINT_FORMAT,
        "model_config": model.config.to_dict(),
        "train_config": cfg.to_dict() if cfg is not None else None,
        "state_dict": model.state_dict(),
        "meta": meta,
    }
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    if schedule is not None:
        payload["schedule"] = schedule.state_dict()
    tmp = Path(str(path) + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path):
    """Return ``(model, payload)``; the model is in eval mode."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {payload.get('format_version')}")
    config = ArcNetConfig(**payload["model_config"])
    model = build(config=config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload


def _dump_batch(out_dir, epoch, batch_no, cart, polar, y, value):
    if out_dir is None:
        return None
    path = Path(out_dir) / f"nonfinite_e{epoch}_b{batch_no}.npz"
    np.savez_compressed(path, cart=cart.numpy(), polar=polar.numpy(), labels=y.numpy(), loss=value)
    return path


def train(train_sets, val_sets, cfg, out_dir=None, resume=False, log=None):
    """Run the optimisation protocol; returns ``(best_model, history)``.

    With ``out_dir`` set, ``best.pt``, ``last.pt`` and ``history.json`` are
    written after every epoch. ``resume=True`` continues from ``last.pt``.
    """
    log = log or (lambda msg: None)
    mcfg = cfg.model_config()
    sources = [StackSource(ds, mcfg.rho, mcfg.theta, mcfg.height) for ds in train_sets]
    val_sources = [StackSource(ds, mcfg.rho, mcfg.theta, mcfg.height) for ds in val_sets]
    index = _frame_index(sources)
    if not index:
        raise ValueError("training set is empty")
    weighting = sampler.weights_for_labels([sources[s].labels(t) for s, t in index])

    model = build(config=mcfg, seed=cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr0)
    schedule = PlateauSchedule(cfg.lr0, cfg.plateau_factor, cfg.patience)
    history = {"epochs": [], "steps": []}
    best_state, best_val, start = None, math.inf, 0
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    if resume:
        if out is None or not (out / "last.pt").exists():
            raise FileNotFoundError("resume requested but no last.pt found")
        _, payload = load_checkpoint(out / "last.pt")
        model.load_state_dict(payload["state_dict"])
        optimizer.load_state_dict(payload["optimizer"])
        schedule.load_state_dict(payload["schedule"])
        history = payload["meta"]["history"]
        start = payload["meta"]["epoch"] + 1
        best_val = payload["meta"]["best_val_loss"]
        best_model, _ = load_checkpoint(out / "best.pt")
        best_state = {k: v.clone() for k, v in best_model.state_dict().items()}
        log(f"resuming at epoch {start}")

    model.train()
    for epoch in range(start, cfg.epochs):
        for group in optimizer.param_groups:
            group["lr"] = schedule.lr
        rng = sample_rng(cfg.seed, epoch)
        steps = []
        t0 = time.perf_counter()
        for b in range(cfg.batches_per_epoch):
            picks = sampler.draw(weighting, rng, cfg.batch_size)
            cart, polar, y = _batch(sources, index, picks, cfg, epoch, b, train=True)
            parts = losses.combined(model(cart, polar), y, cfg.tv_weight)
            value = parts.total.item()
            if not math.isfinite(value):
                dump = _dump_batch(out, epoch, b, cart, polar, y, value)
                raise NonFiniteLoss(f"loss became {value} at epoch {epoch}, batch {b}; batch saved to {dump}")
            optimizer.zero_grad(set_to_none=True)
            parts.total.backward()
            optimizer.step()
            steps.append(value)
        val = validation_loss(model, val_sources, cfg) if val_sources else float(np.mean(steps))
        lr_used = schedule.lr
        schedule.step(val)
        improved = val < best_val
        if improved:
            best_val = val
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        entry = {
            "epoch": epoch, "train_loss": float(np.mean(steps)), "val_loss": val,
            "lr": lr_used, "best_val_loss": best_val, "seconds": time.perf_counter() - t0,
        }
        history["epochs"].append(entry)
        history["steps"].append(steps)
        log(f"epoch {epoch:3d}  train {entry['train_loss']:.4f}  val {val:.4f}  lr {lr_used:.2e}"
            f"{'  *' if improved else ''}")
        if out is not None:
            meta = {"epoch": epoch, "val_loss": val, "best_val_loss": best_val, "history": history}
            if improved:
                save_checkpoint(out / "best.pt", model, cfg, meta)
            save_checkpoint(out / "last.pt", model, cfg, meta, optimizer, schedule)
            write_history(out / "history.json", history)

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return model, history


def write_history(path, history):
    with open(path, "w") as fh:
        json.dump(history, fh, indent=1)
        fh.write("\n")


@dataclass
class InferenceResult:
    logits: np.ndarray  # (N, theta, 3)
    seconds: float
    n_frames: int

    @property
    def ms_per_frame(self):
        return 1000.0 * self.seconds / self.n_frames if self.n_frames else 0.0

    @property
    def labels(self):
        return self.logits.argmax(axis=-1)


def infer(model, pullback, batch_size=16):
    """Logits for every frame of ``pullback`` in order, with wall-clock timing.

    The timed span covers stack construction (including the polar transform)
    and the forward passes.
    """
    cfg = model.config
    if len(pullback) == 0:
        return InferenceResult(np.zeros((0, cfg.theta, cfg.n_classes), np.float32), 0.0, 0)
    model.eval()
    t0 = time.perf_counter()
    source = StackSource(pullback, cfg.rho, cfg.theta, cfg.height)
    out = []
    with torch.no_grad():
        for lo in range(0, len(source), batch_size):
            frames = range(lo, min(lo + batch_size, len(source)))
            stacks = [source.stack(t) for t in frames]
            cart = torch.from_numpy(np.stack([c for c, _ in stacks]))
            polar = torch.from_numpy(np.stack([p for _, p in stacks]))
            out.append(model(cart, polar).numpy())
    seconds = time.perf_counter() - t0
    return InferenceResult(np.concatenate(out), seconds, len(source))
