"""Self-supervised pretraining: joint Huber loss, schedules, AdamW, training loop.

Validation is always fully autoregressive (no teacher forcing) and the
reported gaze correlation is pooled Pearson over every (window, frame, dim)
value pair in raw gaze space, so the model and the predict-previous baseline
are compared on identical footing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, as_tensor
from .errors import ConfigError, NumericError, ShapeError
from .gaze_data import GazeWindow, NormStats
from .layers import clip_grad_norm
from .model import GlassConfig, GlassModel, predict_previous


@dataclass
class LossConfig:
    velocity_weight: float = 0.2  # weight on the velocity term
    huber_delta: float = 1.0

    def __post_init__(self):
        if self.velocity_weight < 0:
            raise ConfigError("velocity_weight must be >= 0")
        if self.huber_delta <= 0:
            raise ConfigError("huber_delta must be > 0")


@dataclass
class OptimConfig:
    base_lr: float = 3e-4
    warmup_steps: int = 3000
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    total_steps: int = 10000
    batch_size: int = 32
    clip_norm: float = 1.0
    eval_every: int = 100

    def __post_init__(self):
        if self.warmup_steps > self.total_steps:
            raise ConfigError(f"warmup_steps {self.warmup_steps} exceeds total_steps {self.total_steps}")
        if self.total_steps <= 0 or self.batch_size <= 0:
            raise ConfigError("total_steps and batch_size must be positive")


@dataclass
class SamplingSchedule:
    end_fraction: float = 0.6  # training fraction at which teacher forcing reaches zero

    def __post_init__(self):
        if not (0.0 < self.end_fraction <= 1.0):
            raise ConfigError(f"end_fraction must lie in (0, 1], got {self.end_fraction}")


def huber(residual, delta: float = 1.0):
    """0.5 r^2 inside |r| <= delta, delta(|r| - delta/2) outside; C1 at the boundary."""
    if isinstance(residual, Tensor):
        r = residual
        small = np.abs(r.data) <= delta
        quad = r * r * 0.5
        lin = (ad.absolute(r) - 0.5 * delta) * delta
        return ad.where(small, quad, lin)
    r = np.asarray(residual, dtype=np.float64)
    out = np.where(np.abs(r) <= delta, 0.5 * r * r, delta * (np.abs(r) - 0.5 * delta))
    return float(out) if out.ndim == 0 else out


def huber_branch_signature(pred: np.ndarray, target: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Active-branch pattern of the joint loss; used to exclude kink coordinates in FD checks."""
    coord = np.abs(pred - target) <= cfg.huber_delta
    dv = np.diff(pred, axis=-2) - np.diff(target, axis=-2)
    vel = np.abs(dv) <= cfg.huber_delta
    return np.concatenate([coord.ravel(), vel.ravel()])


def joint_loss(pred, target, cfg: LossConfig) -> Tensor:
    """Mean Huber over coordinates plus weighted mean Huber over frame-to-frame velocities."""
    pred = as_tensor(pred)
    target_arr = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if pred.shape != target_arr.shape:
        raise ShapeError(f"joint_loss shape mismatch: pred {pred.shape} vs target {target_arr.shape}")
    target = Tensor(target_arr)
    coord = huber(pred - target, cfg.huber_delta).mean()
    t_axis = pred.ndim - 2
    dv = pred[(slice(None),) * t_axis + (slice(1, None),)] - pred[(slice(None),) * t_axis + (slice(None, -1),)]
    du = target_arr[(slice(None),) * t_axis + (slice(1, None),)] - target_arr[(slice(None),) * t_axis + (slice(None, -1),)]
    vel = huber(dv - Tensor(du), cfg.huber_delta).mean()
    return coord + vel * cfg.velocity_weight


def tf_probability(progress: float, sched: SamplingSchedule) -> float:
    """Teacher-forcing probability: 1 at progress 0, linearly down to 0 at end_fraction."""
    if not (0.0 <= progress <= 1.0):
        raise ConfigError(f"progress must lie in [0, 1], got {progress}")
    return max(0.0, 1.0 - progress / sched.end_fraction)


def lr_at(step: int, cfg: OptimConfig) -> float:
    """Linear warmup from 0 to base_lr, then cosine decay to 0 at total_steps."""
    if step < 0 or step > cfg.total_steps:
        raise ConfigError(f"step {step} outside [0, {cfg.total_steps}]")
    if step < cfg.warmup_steps:
        return cfg.base_lr * step / cfg.warmup_steps
    span = max(1, cfg.total_steps - cfg.warmup_steps)
    return cfg.base_lr * 0.5 * (1.0 + np.cos(np.pi * (step - cfg.warmup_steps) / span))


class AdamW:
    """Bias-corrected Adam with decoupled weight decay applied separately from the gradient term."""

    def __init__(self, params: list[tuple[str, Parameter]], cfg: OptimConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m = {name: np.zeros_like(p.data, dtype=np.float64) for name, p in params}
        self.v = {name: np.zeros_like(p.data, dtype=np.float64) for name, p in params}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.cfg.betas
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter {name!r}")
            g = g.astype(np.float64, copy=False)
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.cfg.eps)
            new = p.data.astype(np.float64) - lr * update
            if self.cfg.weight_decay:
                new = new - lr * self.cfg.weight_decay * p.data.astype(np.float64)
            p.data = new.astype(p.data.dtype)


def adamw_step(optimizer: AdamW, lr: float) -> None:
    optimizer.step(lr)


def gaze_correlation(preds, targets) -> float | None:
    """Pooled Pearson correlation over all flattened (window, frame, dim) pairs; None if degenerate."""
    p = np.concatenate([np.asarray(x, dtype=np.float64).ravel() for x in preds])
    t = np.concatenate([np.asarray(x, dtype=np.float64).ravel() for x in targets])
    if p.shape != t.shape or p.size == 0:
        raise ShapeError(f"correlation needs equal nonempty shapes, got {p.shape} vs {t.shape}")
    ps, ts = p.std(), t.std()
    if ps == 0.0 or ts == 0.0:
        return None
    return float(((p - p.mean()) * (t - t.mean())).mean() / (ps * ts))


# -- dataset assembly -------------------------------------------------------------


@dataclass
class PretrainData:
    train_windows: list[GazeWindow]
    val_windows: list[GazeWindow]
    train_subjects: set[str]
    val_subjects: set[str]

    def __post_init__(self):
        overlap = self.train_subjects & self.val_subjects
        if overlap:
            raise ConfigError(f"validation subjects appear in the training split: {sorted(overlap)}")
        if not self.train_windows or not self.val_windows:
            raise ConfigError("pretraining needs at least one training and one validation window")


@dataclass
class TrainLogRow:
    step: int
    lr: float
    tf_prob: float
    train_loss: float
    val_corr: float | None = None


@dataclass
class PretrainResult:
    model: GlassModel
    log: list[TrainLogRow] = field(default_factory=list)
    best_val_corr: float | None = None
    baseline_val_corr: float | None = None


def autoregressive_correlation(model: GlassModel, windows: list[GazeWindow], stats: NormStats,
                              batch: int = 64) -> float | None:
    preds, targets = [], []
    for i in range(0, len(windows), batch):
        chunk = windows[i:i + batch]
        x = np.stack([stats.apply(w.input) for w in chunk])
        with ad.no_grad():
            out = model.decode(model.encode(x)).data
        preds.append(stats.invert(out.astype(np.float64)))
        targets.append(np.stack([w.target for w in chunk]))
    return gaze_correlation(preds, targets)


def predict_previous_correlation(windows: list[GazeWindow], output_frames: int) -> float | None:
    preds = [predict_previous(w.input, output_frames) for w in windows]
    targets = [w.target for w in windows]
    return gaze_correlation(preds, targets)


def run_pretraining(data: PretrainData, glass_cfg: GlassConfig, loss_cfg: LossConfig,
                    optim_cfg: OptimConfig, sched: SamplingSchedule, seed: int) -> PretrainResult:
    """Train on minibatches with scheduled sampling; return the best-validation model.

    Deterministic per seed: data order, parameter init, and teacher-forcing
    draws come from three independent seeded streams.
    """
    for w in data.train_windows + data.val_windows:
        if w.target is None:
            raise ConfigError("pretraining windows need forecast targets")
    init_rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    data_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    tf_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))

    stats = compute_norm_stats_from_windows(data.train_windows)
    model = GlassModel(glass_cfg, rng=init_rng)
    model.norm_stats = stats
    named = model.named_parameters()
    optimizer = AdamW(named, optim_cfg)

    x_train = np.stack([stats.apply(w.input).astype(np.float32) for w in data.train_windows])
    y_train = np.stack([stats.apply(w.target).astype(np.float32) for w in data.train_windows])

    n = len(data.train_windows)
    order = data_rng.permutation(n)
    cursor = 0
    log: list[TrainLogRow] = []
    best_corr = -np.inf
    best_state: dict[str, np.ndarray] | None = None

    for step in range(optim_cfg.total_steps):
        if cursor + optim_cfg.batch_size > n:
            order = data_rng.permutation(n)
            cursor = 0
        idx = order[cursor:cursor + min(optim_cfg.batch_size, n)]
        cursor += optim_cfg.batch_size

        progress = step / optim_cfg.total_steps
        tf_p = tf_probability(progress, sched)
        lr = lr_at(step, optim_cfg)

        model.zero_grad()
        enc = model.encode(x_train[idx])
        pred = model.decode(enc, target=y_train[idx], tf_prob=tf_p, rng=tf_rng)
        loss = joint_loss(pred, y_train[idx], loss_cfg)
        loss.backward()
        clip_grad_norm([p for _, p in named], optim_cfg.clip_norm)
        optimizer.step(lr)

        row = TrainLogRow(step=step, lr=float(lr), tf_prob=float(tf_p), train_loss=float(loss.data))
        if (step + 1) % optim_cfg.eval_every == 0 or step + 1 == optim_cfg.total_steps:
            corr = autoregressive_correlation(model, data.val_windows, stats)
            row.val_corr = corr
            if corr is not None and corr > best_corr:
                best_corr = corr
                best_state = {name: p.data.copy() for name, p in named}
        log.append(row)

    if best_state is not None:
        for name, p in named:
            p.data = best_state[name]
    baseline = predict_previous_correlation(data.val_windows, glass_cfg.output_frames)
    return PretrainResult(model=model, log=log,
                          best_val_corr=None if best_state is None else float(best_corr),
                          baseline_val_corr=baseline)


def compute_norm_stats_from_windows(windows: list[GazeWindow], eps: float = 1e-8) -> NormStats:
    """Per-dimension z-score statistics over the input+target frames of training windows."""
    if not windows:
        raise ConfigError("normalization needs at least one window")
    parts = [w.input for w in windows] + [w.target for w in windows if w.target is not None]
    data = np.concatenate(parts, axis=0)
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    clamped = std < eps
    std = np.where(clamped, eps, std)
    return NormStats(mean=mean, std=std, clamped=clamped)


def write_train_log(path, log: list[TrainLogRow]) -> None:
    with open(path, "w") as fh:
        fh.write("step,lr,tf_prob,train_loss,val_corr\n")
        for row in log:
            corr = "" if row.val_corr is None else repr(row.val_corr)
            fh.write(f"{row.step},{row.lr!r},{row.tf_prob!r},{row.train_loss!r},{corr}\n")
