"""Emotion fine-tuning on frozen (or jointly tuned) encoder features.

Encoder states are widened with first/second temporal derivative estimates,
mean-pooled into non-overlapping chunks, and fed to one of four head
families: time-averaged MLP, temporal CNN, GRU, or Transformer. VAD heads
squash to [0,1] with a logistic map and train on MAE; behavior heads emit
three logits and train on cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, as_tensor
from .errors import ConfigError, ShapeError
from .gaze_data import (BEHAVIOR_CLASSES, BehaviorLabel, LabeledWindow, NormStats, VADLabel,
                        upsample_tail)
from .layers import Linear, Module, TransformerBlock, clip_grad_norm
from .model import GlassModel
from .pretrain import AdamW, OptimConfig, lr_at

HEAD_KINDS = ("mlp", "tcn", "gru", "transformer")


@dataclass
class ChunkConfig:
    chunk_seconds: float
    patch_rate: float  # patches per second = fps / P

    def __post_init__(self):
        if self.chunk_seconds <= 0 or self.patch_rate <= 0:
            raise ConfigError("chunk_seconds and patch_rate must be positive")
        if self.chunk_seconds * self.patch_rate < 1.0:
            raise ConfigError(
                f"chunk of {self.chunk_seconds}s holds less than one patch at rate {self.patch_rate}/s")

    @property
    def rows_per_chunk(self) -> int:
        return int(round(self.chunk_seconds * self.patch_rate))


def _features_t(enc: Tensor) -> Tensor:
    """[emb | d1 | d2] along the last axis; d1 central (one-sided at edges),
    d2 second central with replicated edge rows."""
    n = enc.shape[-2]
    if n < 3:
        raise ShapeError(f"derivative features need at least 3 rows, got {n}")
    lead = (slice(None),) * (enc.ndim - 2)
    first = enc[lead + (slice(1, 2),)] - enc[lead + (slice(0, 1),)]
    interior1 = (enc[lead + (slice(2, None),)] - enc[lead + (slice(None, -2),)]) * 0.5
    last = enc[lead + (slice(-1, None),)] - enc[lead + (slice(-2, -1),)]
    d1 = ad.concat([first, interior1, last], axis=-2)
    interior2 = (enc[lead + (slice(2, None),)] - enc[lead + (slice(1, -1),)] * 2.0
                 + enc[lead + (slice(None, -2),)])
    d2 = ad.concat([interior2[lead + (slice(0, 1),)], interior2,
                    interior2[lead + (slice(-1, None),)]], axis=-2)
    return ad.concat([enc, d1, d2], axis=-1)


def encoder_features(enc) -> np.ndarray:
    """Numpy convenience wrapper around the differentiable feature builder."""
    return _features_t(as_tensor(np.asarray(enc))).data


def _chunk_t(features: Tensor, cfg: ChunkConfig) -> Tensor:
    rows = features.shape[-2]
    if rows == 0:
        raise ShapeError("cannot chunk an empty feature sequence")
    size = cfg.rows_per_chunk
    lead = (slice(None),) * (features.ndim - 2)
    chunks = []
    for start in range(0, rows, size):
        end = min(start + size, rows)  # trailing remainder keeps its own smaller chunk
        chunks.append(features[lead + (slice(start, end),)].mean(axis=-2, keepdims=True))
    return ad.concat(chunks, axis=-2)


def chunk(features, cfg: ChunkConfig) -> np.ndarray:
    return _chunk_t(as_tensor(np.asarray(features)), cfg).data


# -- heads ------------------------------------------------------------------------


class EmotionHead(Module):
    kind = ""

    def __init__(self, task: str):
        if task not in ("vad", "behavior"):
            raise ConfigError(f"unknown task {task!r}")
        self.task = task

    def _finish(self, out: Tensor) -> Tensor:
        return ad.sigmoid(out) if self.task == "vad" else out

    def __call__(self, chunks) -> Tensor:
        raise NotImplementedError


class MLPHead(EmotionHead):
    """Time-averaged MLP: mean over chunks, then a two-layer perceptron."""

    kind = "mlp"

    def __init__(self, in_dim: int, task: str, rng: np.random.Generator, hidden: int = 64):
        super().__init__(task)
        self.fc1 = Linear(in_dim, hidden, rng)
        self.fc2 = Linear(hidden, 3, rng)

    def __call__(self, chunks) -> Tensor:
        pooled = ad.ordered_mean(as_tensor(chunks), axis=-2)
        return self._finish(self.fc2(ad.gelu(self.fc1(pooled))))


def conv1d_same(x: Tensor, kernels: list[Linear]) -> Tensor:
    """1-D temporal convolution with zero same-padding; kernels[k] maps the
    slice offset by k - K//2."""
    k = len(kernels)
    half = k // 2
    b, t, c = x.shape
    zeros = Tensor(np.zeros((b, half, c), dtype=x.dtype))
    padded = ad.concat([zeros, x, zeros], axis=1)
    out = kernels[0](padded[:, 0:t, :])
    for j in range(1, k):
        out = out + kernels[j](padded[:, j:j + t, :])
    return out


class TCNHead(EmotionHead):
    """Temporal convolutions over the chunk sequence, global mean pool, linear out."""

    kind = "tcn"

    def __init__(self, in_dim: int, task: str, rng: np.random.Generator,
                 hidden: int = 64, layers: int = 3, kernel: int = 3):
        super().__init__(task)
        self.convs = []
        width = in_dim
        for _ in range(layers):
            self.convs.append([Linear(width, hidden, rng) for _ in range(kernel)])
            width = hidden
        self.out = Linear(hidden, 3, rng)

    def named_parameters(self, prefix: str = ""):
        named = []
        for i, taps in enumerate(self.convs):
            for j, lin in enumerate(taps):
                named.extend(lin.named_parameters(prefix=f"{prefix}convs.{i}.{j}."))
        named.extend(self.out.named_parameters(prefix=prefix + "out."))
        return named

    def __call__(self, chunks) -> Tensor:
        h = as_tensor(chunks)
        for taps in self.convs:
            h = ad.relu(conv1d_same(h, taps))
        return self._finish(self.out(h.mean(axis=-2)))


class GRUHead(EmotionHead):
    """Single-layer GRU over chunks; final hidden state through a linear map."""

    kind = "gru"

    def __init__(self, in_dim: int, task: str, rng: np.random.Generator, hidden: int = 64):
        super().__init__(task)
        self.hidden = hidden
        self.wz = Linear(in_dim, hidden, rng)
        self.uz = Linear(hidden, hidden, rng)
        self.wr = Linear(in_dim, hidden, rng)
        self.ur = Linear(hidden, hidden, rng)
        self.wh = Linear(in_dim, hidden, rng)
        self.uh = Linear(hidden, hidden, rng)
        self.out = Linear(hidden, 3, rng)

    def __call__(self, chunks) -> Tensor:
        x = as_tensor(chunks)
        b, steps, _ = x.shape
        h = Tensor(np.zeros((b, self.hidden), dtype=x.dtype))
        for t in range(steps):
            xt = x[:, t, :]
            z = ad.sigmoid(self.wz(xt) + self.uz(h))
            r = ad.sigmoid(self.wr(xt) + self.ur(h))
            cand = ad.tanh(self.wh(xt) + self.uh(r * h))
            h = (1.0 - z) * h + z * cand
        return self._finish(self.out(h))


class TransformerHead(EmotionHead):
    """Project chunks to a working width, apply self-attention blocks, mean-pool."""

    kind = "transformer"

    def __init__(self, in_dim: int, task: str, rng: np.random.Generator,
                 hidden: int = 64, blocks: int = 2, heads: int = 4):
        super().__init__(task)
        self.proj = Linear(in_dim, hidden, rng)
        self.blocks = [TransformerBlock(hidden, heads, rng) for _ in range(blocks)]
        self.out = Linear(hidden, 3, rng)

    def __call__(self, chunks) -> Tensor:
        h = self.proj(as_tensor(chunks))
        positions = np.arange(h.shape[-2])
        for block in self.blocks:
            h = block(h, positions)
        return self._finish(self.out(h.mean(axis=-2)))


def build_head(kind: str, in_dim: int, task: str, rng: np.random.Generator,
               hidden: int = 64) -> EmotionHead:
    heads = {"mlp": MLPHead, "tcn": TCNHead, "gru": GRUHead, "transformer": TransformerHead}
    if kind not in heads:
        raise ConfigError(f"unknown emotion head kind {kind!r}; expected one of {HEAD_KINDS}")
    return heads[kind](in_dim, task, rng, hidden=hidden)


def head_forward(chunks, head: EmotionHead) -> np.ndarray:
    """Evaluation-mode prediction for a batch of chunk sequences."""
    with ad.no_grad():
        return head(np.asarray(chunks, dtype=np.float32)).data


# -- metrics -----------------------------------------------------------------------


def _vad_matrix(values) -> np.ndarray:
    rows = [v.as_array() if isinstance(v, VADLabel) else np.asarray(v, dtype=np.float64)
            for v in values]
    return np.stack(rows)


def vad_metrics(preds, labels) -> tuple[float, float | None]:
    """(MAE, pooled Pearson r); r is None when either side has zero variance."""
    p, y = _vad_matrix(preds), _vad_matrix(labels)
    if p.shape != y.shape or len(p) == 0:
        raise ShapeError(f"vad_metrics needs equal nonempty shapes, got {p.shape} vs {y.shape}")
    mae = float(np.abs(p - y).mean())
    pf, yf = p.ravel(), y.ravel()
    if pf.std() == 0.0 or yf.std() == 0.0:
        return mae, None
    r = float(((pf - pf.mean()) * (yf - yf.mean())).mean() / (pf.std() * yf.std()))
    return mae, r


def _class_name(value) -> str:
    return value.cls if isinstance(value, BehaviorLabel) else str(value)


def macro_f1(preds, labels) -> float:
    """Unweighted mean F1 over the three behavior classes; absent classes score 0."""
    if len(preds) != len(labels) or not labels:
        raise ShapeError("macro_f1 needs equal nonempty prediction/label lists")
    p = [_class_name(v) for v in preds]
    y = [_class_name(v) for v in labels]
    scores = []
    for cls in BEHAVIOR_CLASSES:
        tp = sum(1 for a, b in zip(p, y) if a == cls and b == cls)
        fp = sum(1 for a, b in zip(p, y) if a == cls and b != cls)
        fn = sum(1 for a, b in zip(p, y) if a != cls and b == cls)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return float(np.mean(scores))


# -- fine-tuning --------------------------------------------------------------------


def split_dataset(dataset: list, split_seed: int, test_fraction: float = 0.2) -> tuple[list, list]:
    """Deterministic shuffled train/test split (the bootstrap unit is the seed)."""
    rng = np.random.default_rng(np.random.SeedSequence([split_seed, 10]))
    order = rng.permutation(len(dataset))
    n_test = max(1, int(round(test_fraction * len(dataset))))
    test = [dataset[i] for i in order[:n_test]]
    train = [dataset[i] for i in order[n_test:]]
    if not train:
        raise ConfigError("dataset too small for an 80-20 split")
    return train, test


@dataclass
class FinetuneMetrics:
    seed: int
    task: str
    head: str
    chunk_seconds: float
    input_seconds: float
    mae: float | None = None
    pearson_r: float | None = None
    macro_f1: float | None = None


@dataclass
class FinetuneResult:
    head: EmotionHead
    metrics: FinetuneMetrics
    test_predictions: np.ndarray
    test_labels: list


def _cross_entropy(logits: Tensor, class_idx: np.ndarray) -> Tensor:
    shift = logits - Tensor(logits.data.max(axis=-1, keepdims=True))
    log_probs = shift - ad.log(ad.exp(shift).sum(axis=-1, keepdims=True))
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(len(class_idx)), class_idx] = 1.0
    return -(log_probs * Tensor(onehot)).sum() / float(len(class_idx))


def _encode_chunks(model: GlassModel, windows: list[LabeledWindow], stats: NormStats,
                   chunk_cfg: ChunkConfig, batch: int = 64) -> np.ndarray:
    out = []
    for i in range(0, len(windows), batch):
        x = np.stack([stats.apply(w.input) for w in windows[i:i + batch]]).astype(np.float32)
        with ad.no_grad():
            enc = model.encode(x)
            out.append(_chunk_t(_features_t(enc), chunk_cfg).data)
    return np.concatenate(out, axis=0)


def run_finetune(model: GlassModel, dataset: list[LabeledWindow], head_kind: str,
                 chunk_cfg: ChunkConfig, task: str, split_seed: int, optim_cfg: OptimConfig,
                 joint: bool = False) -> FinetuneResult:
    """80-20 split per split_seed, tail-upsample VAD training labels, train the head.

    The encoder stays frozen unless joint=True; with joint tuning, gradients
    flow through the feature/chunk pipeline into the encoder blocks.
    """
    if not dataset:
        raise ConfigError("fine-tuning needs a nonempty dataset")
    if task not in ("vad", "behavior"):
        raise ConfigError(f"unknown task {task!r}")
    t_frames = dataset[0].input.shape[0]
    if t_frames != model.cfg.input_frames:
        raise ConfigError(f"window length {t_frames} does not match encoder input {model.cfg.input_frames}")

    train, test = split_dataset(dataset, split_seed)

    if task == "vad":
        train = upsample_tail(train, seed=split_seed).samples  # test set never upsampled
        y_train = np.stack([w.label.as_array() for w in train]).astype(np.float32)
        y_test_labels = [w.label for w in test]
    else:
        classes = {w.label.cls for w in train}
        if len(classes) < 2:
            raise ConfigError(f"behavior training split has a single class {classes}")
        y_train = np.array([BEHAVIOR_CLASSES.index(w.label.cls) for w in train])
        y_test_labels = [w.label for w in test]

    stats = model.norm_stats
    if stats is None:
        data = np.concatenate([w.input for w in train], axis=0)
        std = data.std(axis=0)
        stats = NormStats(data.mean(axis=0), np.where(std < 1e-8, 1e-8, std), std < 1e-8)

    in_dim = 3 * model.cfg.embed_dim
    head = build_head(head_kind, in_dim, task, np.random.default_rng(np.random.SeedSequence([split_seed, 11])))
    named = head.named_parameters()
    if joint:
        named = named + model.named_parameters()
    optimizer = AdamW(named, optim_cfg)
    params = [p for _, p in named]

    chunks_train = None
    if not joint:
        chunks_train = _encode_chunks(model, train, stats, chunk_cfg)
    x_train_raw = np.stack([stats.apply(w.input) for w in train]).astype(np.float32) if joint else None

    data_rng = np.random.default_rng(np.random.SeedSequence([split_seed, 12]))
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
        if joint:
            feats = _chunk_t(_features_t(model.encode(x_train_raw[idx])), chunk_cfg)
        else:
            feats = Tensor(chunks_train[idx])
        out = head(feats)
        if task == "vad":
            loss = ad.absolute(out - Tensor(y_train[idx])).mean()
        else:
            loss = _cross_entropy(out, y_train[idx])
        loss.backward()
        clip_grad_norm(params, optim_cfg.clip_norm)
        optimizer.step(lr_at(step, optim_cfg))

    chunks_test = _encode_chunks(model, test, stats, chunk_cfg)
    preds = head_forward(chunks_test, head)
    fps = chunk_cfg.patch_rate * model.cfg.patch
    metrics = FinetuneMetrics(seed=split_seed, task=task, head=head_kind,
                              chunk_seconds=chunk_cfg.chunk_seconds,
                              input_seconds=float(t_frames / fps))
    if task == "vad":
        metrics.mae, metrics.pearson_r = vad_metrics(preds, y_test_labels)
    else:
        pred_classes = [BEHAVIOR_CLASSES[i] for i in preds.argmax(axis=1)]
        metrics.macro_f1 = macro_f1(pred_classes, y_test_labels)
    return FinetuneResult(head=head, metrics=metrics, test_predictions=preds,
                          test_labels=y_test_labels)


def summarize(results: list[FinetuneMetrics]) -> dict[str, tuple[float, float]]:
    """Mean and std (over seeds) for each populated metric."""
    out: dict[str, tuple[float, float]] = {}
    for metric in ("mae", "pearson_r", "macro_f1"):
        values = [getattr(r, metric) for r in results if getattr(r, metric) is not None]
        if values:
            arr = np.asarray(values, dtype=np.float64)
            out[metric] = (float(arr.mean()), float(arr.std()))
    return out


def write_finetune_csv(path, rows: list[FinetuneMetrics]) -> None:
    def fmt(v):
        return "" if v is None else repr(float(v))

    with open(path, "w") as fh:
        fh.write("seed,task,head,chunk_seconds,input_seconds,mae,pearson_r,macro_f1\n")
        for r in rows:
            fh.write(f"{r.seed},{r.task},{r.head},{r.chunk_seconds!r},{r.input_seconds!r},"
                     f"{fmt(r.mae)},{fmt(r.pearson_r)},{fmt(r.macro_f1)}\n")
