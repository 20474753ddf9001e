"""Reference predictors: statistical gaze features and a 1-D temporal CNN.

The statistical variants summarize each input dimension by mean, std, mean
absolute velocity and acceleration, plus all pairwise cross-dimension
correlations, then fit a small MLP. The CNN trains end-to-end on the raw
6-channel window with ReLU, batch norm, and dropout per layer, global mean
pooling, and an MLP head.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, as_tensor
from .errors import ConfigError, ShapeError
from .gaze_data import BEHAVIOR_CLASSES, GazeWindow, LabeledWindow, upsample_tail
from .layers import Linear, Module, clip_grad_norm
from .emotion import (FinetuneMetrics, FinetuneResult, _cross_entropy, build_head, conv1d_same,
                      head_forward, macro_f1, split_dataset, vad_metrics)
from .pretrain import AdamW, OptimConfig, lr_at

BASELINE_KINDS = ("stats_eyes", "stats_face", "cnn")


def stat_feature_length(dims: int) -> int:
    return 4 * dims + dims * (dims - 1) // 2


def stat_features(window, include_face: bool = False) -> np.ndarray:
    """[means | stds | mean|velocity| | mean|acceleration| | pairwise correlations]."""
    if isinstance(window, (LabeledWindow, GazeWindow)):
        x = window.input
        if include_face:
            face = getattr(window, "face_aux", None)
            if face is None:
                raise ConfigError("window carries no facial features for the eyes+face variant")
            x = np.concatenate([x, face], axis=1)
    else:
        x = np.asarray(window, dtype=np.float64)
    if x.shape[0] < 3:
        raise ShapeError(f"statistical features need at least 3 frames, got {x.shape[0]}")
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    vel = np.abs(np.diff(x, axis=0)).mean(axis=0)
    acc = np.abs(np.diff(x, n=2, axis=0)).mean(axis=0)
    centered = x - mean
    denom = std.copy()
    corrs = []
    k = x.shape[1]
    for i in range(k):
        for j in range(i + 1, k):
            if denom[i] == 0.0 or denom[j] == 0.0:
                corrs.append(0.0)  # zero-variance pairs are defined as uncorrelated
            else:
                corrs.append(float((centered[:, i] * centered[:, j]).mean() / (denom[i] * denom[j])))
    return np.concatenate([mean, std, vel, acc, np.asarray(corrs)])


class BatchNorm1d(Module):
    """Per-channel normalization over (batch, time); eval uses running statistics."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(channels, dtype=np.float32))
        self.beta = Parameter(np.zeros(channels, dtype=np.float32))
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if training:
            mu = x.mean(axis=(0, 1), keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=(0, 1), keepdims=True)
            self.running_mean = ((1 - self.momentum) * self.running_mean
                                 + self.momentum * mu.data.reshape(-1)).astype(np.float32)
            self.running_var = ((1 - self.momentum) * self.running_var
                                + self.momentum * var.data.reshape(-1)).astype(np.float32)
            normed = centered / ad.sqrt(var + self.eps)
        else:
            normed = (x - Tensor(self.running_mean)) / Tensor(
                np.sqrt(self.running_var + self.eps))
        return normed * self.gamma + self.beta


class TemporalCNN(Module):
    """Conv -> ReLU -> BatchNorm -> Dropout stack, global mean pool, MLP head."""

    def __init__(self, task: str, rng: np.random.Generator, in_channels: int = 6,
                 channels: int = 32, layers: int = 3, kernel: int = 5,
                 hidden: int = 64, dropout_rate: float = 0.1):
        if task not in ("vad", "behavior"):
            raise ConfigError(f"unknown task {task!r}")
        self.task = task
        self.kernel = kernel
        self.dropout_rate = dropout_rate
        self.convs = []
        self.norms = []
        width = in_channels
        for _ in range(layers):
            self.convs.append([Linear(width, channels, rng) for _ in range(kernel)])
            self.norms.append(BatchNorm1d(channels))
            width = channels
        self.fc1 = Linear(channels, hidden, rng)
        self.fc2 = Linear(hidden, 3, rng)

    @property
    def receptive_field(self) -> int:
        return 1 + len(self.convs) * (self.kernel - 1)

    def named_parameters(self, prefix: str = ""):
        named = []
        for i, taps in enumerate(self.convs):
            for j, lin in enumerate(taps):
                named.extend(lin.named_parameters(prefix=f"{prefix}convs.{i}.{j}."))
            named.extend(self.norms[i].named_parameters(prefix=f"{prefix}norms.{i}."))
        named.extend(self.fc1.named_parameters(prefix=prefix + "fc1."))
        named.extend(self.fc2.named_parameters(prefix=prefix + "fc2."))
        return named

    def __call__(self, x, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        x = as_tensor(x)
        if x.shape[-2] < self.receptive_field:
            raise ShapeError(f"window of {x.shape[-2]} frames is below the receptive field "
                             f"({self.receptive_field})")
        h = x
        for taps, norm in zip(self.convs, self.norms):
            h = norm(ad.relu(conv1d_same(h, taps)), training)
            if training and self.dropout_rate > 0:
                keep = (rng.random(h.shape) >= self.dropout_rate).astype(h.dtype)
                h = h * (keep / np.asarray(1.0 - self.dropout_rate, dtype=h.dtype))
        pooled = h.mean(axis=-2)
        out = self.fc2(ad.relu(self.fc1(pooled)))
        return ad.sigmoid(out) if self.task == "vad" else out


def temporal_cnn_forward(window, model: TemporalCNN) -> np.ndarray:
    """Deterministic evaluation-mode prediction (dropout off, running batch stats)."""
    x = np.asarray(window, dtype=np.float32)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    with ad.no_grad():
        out = model(x, training=False).data
    return out[0] if squeeze else out


def fit_baseline(dataset: list[LabeledWindow], kind: str, task: str, split_seed: int,
                 optim_cfg: OptimConfig | None = None) -> FinetuneResult:
    """Train one baseline on an 80-20 split and evaluate with the shared metrics."""
    if kind not in BASELINE_KINDS:
        raise ConfigError(f"unknown baseline kind {kind!r}; expected one of {BASELINE_KINDS}")
    if not dataset:
        raise ConfigError("baseline fitting needs a nonempty dataset")
    optim_cfg = optim_cfg or OptimConfig(base_lr=1e-2, warmup_steps=20, total_steps=300,
                                         batch_size=32, weight_decay=1e-4)
    train, test = split_dataset(dataset, split_seed)
    if task == "vad":
        train = upsample_tail(train, seed=split_seed).samples
        y_train = np.stack([w.label.as_array() for w in train]).astype(np.float32)
    elif task == "behavior":
        classes = {w.label.cls for w in train}
        if len(classes) < 2:
            raise ConfigError(f"behavior training split has a single class {classes}")
        y_train = np.array([BEHAVIOR_CLASSES.index(w.label.cls) for w in train])
    else:
        raise ConfigError(f"unknown task {task!r}")
    y_test_labels = [w.label for w in test]

    init_rng = np.random.default_rng(np.random.SeedSequence([split_seed, 20]))
    drop_rng = np.random.default_rng(np.random.SeedSequence([split_seed, 21]))
    data_rng = np.random.default_rng(np.random.SeedSequence([split_seed, 22]))

    if kind in ("stats_eyes", "stats_face"):
        include_face = kind == "stats_face"
        f_train = np.stack([stat_features(w, include_face) for w in train])
        f_test = np.stack([stat_features(w, include_face) for w in test])
        mu, sd = f_train.mean(axis=0), f_train.std(axis=0)
        sd = np.where(sd < 1e-8, 1.0, sd)
        f_train = ((f_train - mu) / sd).astype(np.float32)[:, None, :]  # single chunk
        f_test = ((f_test - mu) / sd).astype(np.float32)[:, None, :]
        model = build_head("mlp", f_train.shape[-1], task, init_rng)

        def forward(idx, training):
            return model(Tensor(f_train[idx]))

        def predict():
            return head_forward(f_test, model)
    else:
        frames = np.concatenate([w.input for w in train], axis=0)
        mu, sd = frames.mean(axis=0), frames.std(axis=0)
        sd = np.where(sd < 1e-8, 1.0, sd)
        x_train = ((np.stack([w.input for w in train]) - mu) / sd).astype(np.float32)
        x_test = ((np.stack([w.input for w in test]) - mu) / sd).astype(np.float32)
        model = TemporalCNN(task, init_rng)

        def forward(idx, training):
            return model(x_train[idx], training=training, rng=drop_rng)

        def predict():
            return temporal_cnn_forward(x_test, model)

    named = model.named_parameters()
    params = [p for _, p in named]
    optimizer = AdamW(named, optim_cfg)
    n = len(train)
    order = data_rng.permutation(n)
    cursor = 0
    for step in range(optim_cfg.total_steps):
        if cursor + optim_cfg.batch_size > n:
            order = data_rng.permutation(n)
            cursor = 0
        idx = order[cursor:cursor + min(optim_cfg.batch_size, n)]
        cursor += optim_cfg.batch_size
        for p in params:
            p.grad = None
        out = forward(idx, training=True)
        if task == "vad":
            loss = ad.absolute(out - Tensor(y_train[idx])).mean()
        else:
            loss = _cross_entropy(out, y_train[idx])
        loss.backward()
        clip_grad_norm(params, optim_cfg.clip_norm)
        optimizer.step(lr_at(step, optim_cfg))

    preds = predict()
    t_frames = dataset[0].input.shape[0]
    metrics = FinetuneMetrics(seed=split_seed, task=task, head=kind, chunk_seconds=0.0,
                              input_seconds=float(t_frames / 30.0))
    if task == "vad":
        metrics.mae, metrics.pearson_r = vad_metrics(preds, y_test_labels)
    else:
        pred_classes = [BEHAVIOR_CLASSES[i] for i in preds.argmax(axis=1)]
        metrics.macro_f1 = macro_f1(pred_classes, y_test_labels)
    return FinetuneResult(head=model, metrics=metrics, test_predictions=preds,
                          test_labels=y_test_labels)
