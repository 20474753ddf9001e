"""The gaze forecaster: patch embedding, encoder, autoregressive decoder.

An input window of T_i frames x D gaze dims is cut into non-overlapping
patches of P frames, each flattened and linearly embedded to d. The encoder
is a stack of self-attention blocks over the T_i/P patch tokens; the decoder
autoregressively emits T_o/P output patches through causal self-attention
plus cross-attention over the encoder states, starting from a learned start
token. Rotary positions continue the input patch timeline into the decoder,
so cross-attention offsets equal true temporal patch distances.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, as_tensor
from .errors import ConfigError, FormatError, NumericError, ShapeError
from .gaze_data import NormStats
from .layers import LayerNorm, Linear, Module, TransformerBlock

CHECKPOINT_MAGIC = b"GLSS"
CHECKPOINT_VERSION = 1

SIZE_PRESETS = {
    "small": dict(embed_dim=32, encoder_blocks=2, decoder_blocks=2, heads=4),
    "base": dict(embed_dim=64, encoder_blocks=4, decoder_blocks=4, heads=4),
    "large": dict(embed_dim=128, encoder_blocks=6, decoder_blocks=6, heads=8),
}


@dataclass
class GlassConfig:
    input_dim: int = 6
    input_frames: int = 150
    output_frames: int = 150
    patch: int = 15
    embed_dim: int = 32
    encoder_blocks: int = 2
    decoder_blocks: int = 2
    heads: int = 4
    size_name: str = "small"

    def __post_init__(self):
        if min(self.input_dim, self.input_frames, self.output_frames, self.patch,
               self.embed_dim, self.encoder_blocks, self.decoder_blocks, self.heads) <= 0:
            raise ConfigError("all model dimensions must be positive")
        if self.input_frames % self.patch != 0:
            raise ConfigError(f"patch {self.patch} must divide input_frames {self.input_frames}")
        if self.output_frames % self.patch != 0:
            raise ConfigError(f"patch {self.patch} must divide output_frames {self.output_frames}")
        if self.embed_dim % self.heads != 0:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if (self.embed_dim // self.heads) % 2 != 0:
            raise ConfigError("per-head dim must be even for rotary pairs")

    @classmethod
    def sized(cls, size_name: str, input_frames: int = 150, output_frames: int = 150,
              patch: int = 15, input_dim: int = 6) -> "GlassConfig":
        if size_name not in SIZE_PRESETS:
            raise ConfigError(f"unknown model size {size_name!r}; expected one of {sorted(SIZE_PRESETS)}")
        return cls(input_dim=input_dim, input_frames=input_frames, output_frames=output_frames,
                   patch=patch, size_name=size_name, **SIZE_PRESETS[size_name])

    @property
    def enc_patches(self) -> int:
        return self.input_frames // self.patch

    @property
    def dec_patches(self) -> int:
        return self.output_frames // self.patch


def config_hash(cfg: GlassConfig) -> str:
    canon = json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def patchify(window, patch: int):
    """(.., T, D) -> (.., T/P, P*D); frames jP..(j+1)P-1 land in patch j."""
    x = window
    t, d = x.shape[-2], x.shape[-1]
    if t % patch != 0:
        raise ShapeError(f"patch {patch} does not divide sequence length {t}")
    lead = x.shape[:-2]
    if isinstance(x, Tensor):
        return x.reshape(*lead, t // patch, patch * d)
    return np.asarray(x).reshape(*lead, t // patch, patch * d)


def unpatchify(patches, patch: int, dim: int):
    """Inverse of patchify: (.., T/P, P*D) -> (.., T, D)."""
    x = patches
    n, pd = x.shape[-2], x.shape[-1]
    if pd != patch * dim:
        raise ShapeError(f"patch width {pd} != patch*dim {patch * dim}")
    lead = x.shape[:-2]
    if isinstance(x, Tensor):
        return x.reshape(*lead, n * patch, dim)
    return np.asarray(x).reshape(*lead, n * patch, dim)


def predict_previous(window: np.ndarray, output_frames: int) -> np.ndarray:
    """Baseline forecaster: repeat the last observed frame for the whole horizon."""
    window = np.asarray(window)
    if window.shape[-2] < 1:
        raise ShapeError("predict_previous needs at least one input frame")
    last = window[..., -1:, :]
    reps = [1] * window.ndim
    reps[-2] = output_frames
    return np.tile(last, reps)


class GlassModel(Module):
    def __init__(self, cfg: GlassConfig, rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        self.dtype = dtype
        d, p, dim = cfg.embed_dim, cfg.patch, cfg.input_dim
        self.embed = Linear(p * dim, d, rng, dtype)
        self.enc_blocks = [TransformerBlock(d, cfg.heads, rng, causal=False, dtype=dtype)
                           for _ in range(cfg.encoder_blocks)]
        self.enc_norm = LayerNorm(d, dtype)
        self.start_token = Parameter(rng.normal(0.0, 0.02, size=(d,)).astype(dtype))
        self.dec_blocks = [TransformerBlock(d, cfg.heads, rng, causal=True, cross=True, dtype=dtype)
                           for _ in range(cfg.decoder_blocks)]
        self.dec_norm = LayerNorm(d, dtype)
        self.out = Linear(d, p * dim, rng, dtype)
        self.norm_stats: NormStats | None = None

    # -- encoder -----------------------------------------------------------
    def encode(self, window) -> Tensor:
        """(B, T_i, D) or (T_i, D) -> encoder states (B, T_i/P, d)."""
        x = window.data if isinstance(window, Tensor) else np.asarray(window, dtype=self.dtype)
        if isinstance(window, Tensor):
            if x.ndim == 2:
                window = window.reshape(1, *x.shape)
            tensor_in = window
        else:
            if x.ndim == 2:
                x = x[None]
            if not np.all(np.isfinite(x)):
                raise NumericError("encoder input contains non-finite values")
            tensor_in = Tensor(x.astype(self.dtype, copy=False))
        if tensor_in.shape[-2:] != (self.cfg.input_frames, self.cfg.input_dim):
            raise ShapeError(
                f"encoder expects (*, {self.cfg.input_frames}, {self.cfg.input_dim}), got {tensor_in.shape}")
        tokens = self.embed(patchify(tensor_in, self.cfg.patch))
        positions = np.arange(self.cfg.enc_patches)
        for block in self.enc_blocks:
            tokens = block(tokens, positions)
        return self.enc_norm(tokens)

    # -- decoder -----------------------------------------------------------
    def decode(self, enc: Tensor, target: np.ndarray | None = None, tf_prob: float = 0.0,
               rng: np.random.Generator | None = None) -> Tensor:
        """Autoregressively emit (B, T_o, D); with tf_prob > 0, each previous
        patch is independently replaced by its ground-truth value with that
        probability at every step (fresh seeded draws per step)."""
        cfg = self.cfg
        if tf_prob > 0.0:
            if target is None:
                raise ConfigError("teacher forcing (tf_prob > 0) requires a target")
            if rng is None:
                raise ConfigError("teacher forcing requires a seeded random generator")
        batch = enc.shape[0]
        steps = cfg.dec_patches
        enc_positions = np.arange(cfg.enc_patches)
        target_patches = None
        if target is not None and tf_prob > 0.0:
            t = np.asarray(target, dtype=self.dtype)
            if t.ndim == 2:
                t = t[None]
            if t.shape != (batch, cfg.output_frames, cfg.input_dim):
                raise ShapeError(f"target shape {t.shape} does not match decoder output "
                                 f"({batch}, {cfg.output_frames}, {cfg.input_dim})")
            target_patches = patchify(t, cfg.patch)

        start = self.start_token.reshape(1, 1, cfg.embed_dim) + Tensor(
            np.zeros((batch, 1, cfg.embed_dim), dtype=self.dtype))
        preds: list[Tensor] = []
        for step in range(steps):
            if step == 0:
                tokens = start
            else:
                prev = ad.concat(preds, axis=1)
                if target_patches is not None:
                    forced = rng.random((batch, step, 1)) < tf_prob
                    prev = ad.where(forced, Tensor(target_patches[:, :step]), prev)
                tokens = ad.concat([start, self.embed(prev)], axis=1)
            positions = cfg.enc_patches - 1 + np.arange(step + 1)
            h = tokens
            for block in self.dec_blocks:
                h = block(h, positions, context=enc, context_positions=enc_positions)
            h = self.dec_norm(h)
            preds.append(self.out(h[:, step:step + 1, :]))
        return unpatchify(ad.concat(preds, axis=1), cfg.patch, cfg.input_dim)

    def forecast(self, window: np.ndarray) -> np.ndarray:
        """Pure autoregressive prediction (no teacher forcing, no graph)."""
        squeeze = np.asarray(window).ndim == 2
        with ad.no_grad():
            out = self.decode(self.encode(window)).data
        return out[0] if squeeze else out


# -- checkpoint container ------------------------------------------------------


def save_checkpoint(model: GlassModel, path: str | Path) -> None:
    header = {
        "config": asdict(model.cfg),
        "config_hash": config_hash(model.cfg),
        "norm": None if model.norm_stats is None else model.norm_stats.to_dict(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    named = model.named_parameters()
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes))
    blob += header_bytes
    blob += struct.pack("<I", len(named))
    for name, p in named:
        data = np.ascontiguousarray(p.data, dtype="<f4")
        name_b = name.encode()
        blob += struct.pack("<I", len(name_b))
        blob += name_b
        blob += struct.pack("<I", data.ndim)
        blob += struct.pack(f"<{data.ndim}I", *data.shape)
        blob += data.tobytes()
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.buf):
            raise FormatError(f"truncated checkpoint: wanted {n} bytes at offset {self.offset}")
        out = self.buf[self.offset:self.offset + n]
        self.offset += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: str | Path) -> GlassModel:
    reader = _Reader(Path(path).read_bytes())
    magic = reader.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0")
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at offset 4")
    header_len = reader.u32()
    header_off = reader.offset
    try:
        header = json.loads(reader.take(header_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt header at offset {header_off}: {exc}") from None
    cfg = GlassConfig(**header["config"])
    model = GlassModel(cfg, rng=np.random.default_rng(0))
    if header.get("norm") is not None:
        model.norm_stats = NormStats.from_dict(header["norm"])

    expected = dict(model.named_parameters())
    n_tensors = reader.u32()
    seen: set[str] = set()
    for _ in range(n_tensors):
        name_off = reader.offset
        name = reader.take(reader.u32()).decode()
        rank = reader.u32()
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        raw = reader.take(4 * count)
        if name not in expected:
            raise FormatError(f"unknown parameter {name!r} at offset {name_off}")
        param = expected[name]
        if tuple(dims) != param.data.shape:
            raise FormatError(f"parameter {name!r} has dims {dims}, expected {param.data.shape}")
        param.data = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32).copy()
        seen.add(name)
    missing = set(expected) - seen
    if missing:
        raise FormatError(f"checkpoint missing parameters: {sorted(missing)}")
    return model
