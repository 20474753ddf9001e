"""Gaze sequences: CSV parsing, windowing, normalization, synthetic data.

The on-disk formats follow the eye-tracker export convention this pipeline
consumes: per-frame CSV rows with six gaze direction components (XYZ per
eye), a success flag, optional confidence, and optional facial action-unit
intensities. Annotations are line-delimited JSON records; a manifest CSV
ties gaze files, annotation files, subjects, and splits together.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, SchemaError

GAZE_DIM = 6
GAZE_ROLES = ("gaze_0_x", "gaze_0_y", "gaze_0_z", "gaze_1_x", "gaze_1_y", "gaze_1_z")
AU_NAMES = ("AU01_r", "AU02_r", "AU04_r", "AU45_r")
BEHAVIOR_CLASSES = ("laugh", "sigh", "cry")

DEFAULT_COLUMN_MAP = {
    "frame": "frame",
    "success": "success",
    "confidence": "confidence",
    **{name: name for name in GAZE_ROLES},
    **{name: "au" for name in AU_NAMES},
}


@dataclass
class GazeFrame:
    index: int
    t: float
    gaze: np.ndarray  # (6,) unitless direction components, left XYZ then right XYZ
    valid: bool = True
    face_aux: np.ndarray | None = None


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    clamped: np.ndarray  # per-dimension flag: std hit the zero-variance floor

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "clamped": [bool(c) for c in self.clamped]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64),
                   np.asarray(d["std"], dtype=np.float64),
                   np.asarray(d["clamped"], dtype=bool))


@dataclass
class GazeSequence:
    fps: float
    frames: list[GazeFrame]
    subject_id: str = ""
    norm_stats: NormStats | None = None

    def __len__(self) -> int:
        return len(self.frames)

    def gaze_matrix(self) -> np.ndarray:
        return np.stack([f.gaze for f in self.frames]) if self.frames else np.zeros((0, GAZE_DIM))

    def valid_mask(self) -> np.ndarray:
        return np.array([f.valid for f in self.frames], dtype=bool)

    def face_matrix(self) -> np.ndarray | None:
        if not self.frames or self.frames[0].face_aux is None:
            return None
        return np.stack([f.face_aux for f in self.frames])


@dataclass
class WindowSpec:
    input_frames: int = 150
    output_frames: int = 150
    stride: int = 151

    def __post_init__(self):
        if min(self.input_frames, self.output_frames, self.stride) <= 0:
            raise ConfigError("window spec values must be positive")


@dataclass
class GazeWindow:
    input: np.ndarray  # (T_i, D)
    target: np.ndarray | None  # (T_o, D)
    origin: tuple[str, int]  # (subject_id, start_frame)


@dataclass
class VADLabel:
    valence: float
    arousal: float
    dominance: float

    def __post_init__(self):
        for v in (self.valence, self.arousal, self.dominance):
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"VAD component {v} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.valence, self.arousal, self.dominance], dtype=np.float64)


@dataclass
class BehaviorLabel:
    cls: str

    def __post_init__(self):
        if self.cls not in BEHAVIOR_CLASSES:
            raise ConfigError(f"unknown behavior class {self.cls!r}; expected one of {BEHAVIOR_CLASSES}")


@dataclass
class LabeledWindow:
    input: np.ndarray  # (T, D)
    label: VADLabel | BehaviorLabel
    origin: tuple[str, int]
    face_aux: np.ndarray | None = None


# -- CSV parsing ----------------------------------------------------------------


def parse_openface_csv(stream, column_map: dict[str, str] | None = None, fps: float = 30.0,
                       confidence_threshold: float = 0.0, subject_id: str = "") -> GazeSequence:
    """Parse a per-frame gaze CSV into a GazeSequence.

    `column_map` maps CSV column names to roles ("frame", "success",
    "confidence", the six gaze roles, "au"); unmapped columns are ignored.
    Rows with success=0 or confidence below the threshold become valid=False
    frames (values retained, downstream windowing skips them).
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    column_map = DEFAULT_COLUMN_MAP if column_map is None else column_map
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty CSV: missing header row") from None

    role_cols: dict[str, int] = {}
    au_cols: list[int] = []
    for i, name in enumerate(header):
        role = column_map.get(name)
        if role == "au":
            au_cols.append(i)
        elif role is not None:
            role_cols[role] = i

    for role in GAZE_ROLES + ("frame", "success"):
        if role not in role_cols:
            wanted = [name for name, r in column_map.items() if r == role]
            raise SchemaError(f"missing required column {wanted[0] if wanted else role!r}")

    conf_col = role_cols.get("confidence")
    gaze_cols = [role_cols[r] for r in GAZE_ROLES]
    frames: list[GazeFrame] = []
    for row_no, row in enumerate(reader, start=1):
        if not row:
            continue

        def cell(col: int) -> float:
            try:
                return float(row[col])
            except (ValueError, IndexError):
                raise ParseError(
                    f"row {row_no}: non-numeric or missing value in column {header[col]!r}") from None

        cell(role_cols["frame"])  # numeric sanity only; index is the row position
        valid = cell(role_cols["success"]) != 0.0
        if conf_col is not None and cell(conf_col) < confidence_threshold:
            valid = False
        gaze = np.array([cell(c) for c in gaze_cols], dtype=np.float64)
        face = np.array([cell(c) for c in au_cols], dtype=np.float64) if au_cols else None
        idx = len(frames)
        frames.append(GazeFrame(index=idx, t=idx / fps, gaze=gaze, valid=valid, face_aux=face))
    return GazeSequence(fps=fps, frames=frames, subject_id=subject_id)


def write_openface_csv(seq: GazeSequence, stream) -> None:
    """Write a GazeSequence in the CSV layout parse_openface_csv reads back."""
    close = False
    if isinstance(stream, (str, Path)):
        stream = open(stream, "w", newline="")
        close = True
    try:
        face = seq.face_matrix()
        if face is not None and face.shape[1] != len(AU_NAMES):
            raise ConfigError(f"can only serialize {len(AU_NAMES)} facial action-unit columns")
        writer = csv.writer(stream)
        header = ["frame", "success", *GAZE_ROLES]
        if face is not None:
            header += list(AU_NAMES)
        writer.writerow(header)
        for f in seq.frames:
            row = [f.index + 1, int(f.valid), *[repr(float(v)) for v in f.gaze]]
            if face is not None:
                row += [repr(float(v)) for v in f.face_aux]
            writer.writerow(row)
    finally:
        if close:
            stream.close()


# -- windowing -------------------------------------------------------------------


def extract_windows(seq: GazeSequence, spec: WindowSpec) -> list[GazeWindow]:
    """Slice at starts 0, stride, 2*stride, ...; windows spanning any invalid frame are skipped."""
    total = spec.input_frames + spec.output_frames
    n = len(seq)
    if n < total:
        return []
    gaze = seq.gaze_matrix()
    valid = seq.valid_mask()
    windows = []
    for start in range(0, n - total + 1, spec.stride):
        if not valid[start:start + total].all():
            continue
        windows.append(GazeWindow(
            input=gaze[start:start + spec.input_frames].copy(),
            target=gaze[start + spec.input_frames:start + total].copy(),
            origin=(seq.subject_id, start),
        ))
    return windows


def expected_window_count(n_frames: int, spec: WindowSpec) -> int:
    total = spec.input_frames + spec.output_frames
    if n_frames < total:
        return 0
    return (n_frames - total) // spec.stride + 1


# -- normalization ----------------------------------------------------------------


def compute_norm_stats(seqs: list[GazeSequence], eps: float = 1e-8) -> NormStats:
    rows = [seq.gaze_matrix()[seq.valid_mask()] for seq in seqs if len(seq)]
    rows = [r for r in rows if len(r)]
    if not rows:
        raise ConfigError("normalization needs at least one valid frame")
    data = np.concatenate(rows, axis=0)
    mean = data.mean(axis=0)
    std = data.std(axis=0)  # population std
    clamped = std < eps
    std = np.where(clamped, eps, std)
    return NormStats(mean=mean, std=std, clamped=clamped)


def normalize(seq: GazeSequence, stats: NormStats) -> GazeSequence:
    """Z-score valid frames per dimension; invalid frames are left untouched."""
    frames = [
        GazeFrame(f.index, f.t, stats.apply(f.gaze) if f.valid else f.gaze.copy(), f.valid,
                  None if f.face_aux is None else f.face_aux.copy())
        for f in seq.frames
    ]
    return GazeSequence(fps=seq.fps, frames=frames, subject_id=seq.subject_id, norm_stats=stats)


def denormalize(seq: GazeSequence, stats: NormStats) -> GazeSequence:
    frames = [
        GazeFrame(f.index, f.t, stats.invert(f.gaze) if f.valid else f.gaze.copy(), f.valid,
                  None if f.face_aux is None else f.face_aux.copy())
        for f in seq.frames
    ]
    return GazeSequence(fps=seq.fps, frames=frames, subject_id=seq.subject_id, norm_stats=None)


# -- synthetic data ---------------------------------------------------------------


@dataclass
class SynthConfig:
    """Regime-switching sinusoid-mixture generator with OU noise and blink gaps.

    Affect labels are an affine function of the active regime's parameters,
    so the gaze stream genuinely carries the label signal: valence/arousal
    follow amplitude/frequency, behavior events fire in high-amplitude
    regimes with the class set by the regime's frequency band.
    """

    duration_s: float = 120.0
    fps: float = 30.0
    n_regimes: int = 6
    components: int = 2
    amp_range: tuple[float, float] = (0.2, 1.2)
    freq_range: tuple[float, float] = (0.1, 0.6)
    offset_range: tuple[float, float] = (-0.5, 0.5)
    noise_scale: float = 1.0
    ou_theta: float = 2.0
    ou_sigma: float = 0.08
    blink_rate_hz: float = 0.04
    blink_frames: tuple[int, int] = (2, 6)
    sentence_range_s: tuple[float, float] = (5.0, 10.0)
    vad_noise: float = 0.02
    behavior_amp_threshold: float = 0.75
    subject_id: str = "synth"

    def __post_init__(self):
        if self.duration_s <= 0 or self.fps <= 0:
            raise ConfigError("duration and fps must be positive")
        if self.n_regimes < 1:
            raise ConfigError("need at least one regime")


def _unit(value: float, lo: float, hi: float) -> float:
    return (value - lo) / max(hi - lo, 1e-12)


def synth_gaze(params: SynthConfig, seed: int):
    """Generate (GazeSequence, [(start, end, VADLabel)], [(frame, BehaviorLabel)]) deterministically."""
    rng = np.random.default_rng(seed)
    n = int(round(params.duration_s * params.fps))
    dt = 1.0 / params.fps
    t = np.arange(n) * dt

    # segment boundaries: jittered equal split
    weights = rng.uniform(0.75, 1.25, size=params.n_regimes)
    edges = np.concatenate([[0], np.cumsum(weights) / weights.sum() * n]).round().astype(int)
    edges[-1] = n

    gaze = np.zeros((n, GAZE_DIM))
    envelope = np.zeros(n)
    regime_info = []
    for r in range(params.n_regimes):
        lo, hi = edges[r], edges[r + 1]
        if lo >= hi:
            regime_info.append(None)
            continue
        amps = rng.uniform(*params.amp_range, size=GAZE_DIM)
        base_freq = rng.uniform(*params.freq_range)
        detune = rng.uniform(0.9, 1.1, size=GAZE_DIM)
        offsets = rng.uniform(*params.offset_range, size=GAZE_DIM)
        phases = rng.uniform(0.0, 2 * np.pi, size=(params.components, GAZE_DIM))
        seg_t = t[lo:hi, None]
        seg = offsets[None, :] + np.zeros((hi - lo, GAZE_DIM))
        for k in range(params.components):
            seg = seg + (amps * 0.6**k)[None, :] * np.sin(
                2 * np.pi * base_freq * detune[None, :] * (k + 1) * seg_t + phases[k][None, :])
        gaze[lo:hi] = seg
        envelope[lo:hi] = amps.mean()
        regime_info.append({"amps": amps, "freq": base_freq, "offsets": offsets,
                            "span": (lo, hi)})

    # Ornstein-Uhlenbeck noise, one independent channel per dimension
    if params.noise_scale > 0 and n > 0:
        noise = np.zeros((n, GAZE_DIM))
        shocks = rng.standard_normal((n, GAZE_DIM)) * (params.ou_sigma * math.sqrt(dt))
        x = np.zeros(GAZE_DIM)
        for i in range(n):
            x = x + (-params.ou_theta * x) * dt + shocks[i]
            noise[i] = x
        gaze += params.noise_scale * noise

    # blink gaps: invalid frames, values zeroed like a failed tracker row
    valid = np.ones(n, dtype=bool)
    if params.blink_rate_hz > 0:
        n_blinks = rng.poisson(params.blink_rate_hz * params.duration_s)
        for _ in range(n_blinks):
            start = int(rng.integers(0, max(n - 1, 1)))
            length = int(rng.integers(params.blink_frames[0], params.blink_frames[1] + 1))
            valid[start:start + length] = False
    gaze[~valid] = 0.0

    # facial action units: eyebrow intensities track the amplitude envelope, blink AU spikes on gaps
    face = np.zeros((n, len(AU_NAMES)))
    face[:, 0:3] = envelope[:, None] + rng.normal(0.0, 0.05, size=(n, 3))
    face[:, 3] = np.where(valid, 0.0, 2.0) + rng.normal(0.0, 0.02, size=n)

    frames = [GazeFrame(i, t[i], gaze[i].copy(), bool(valid[i]), face[i].copy()) for i in range(n)]
    seq = GazeSequence(fps=params.fps, frames=frames, subject_id=params.subject_id)

    # labels per regime
    amp_lo, amp_hi = params.amp_range
    freq_lo, freq_hi = params.freq_range
    off_lo, off_hi = params.offset_range
    vad_annotations: list[tuple[int, int, VADLabel]] = []
    behavior_annotations: list[tuple[int, BehaviorLabel]] = []
    for info in regime_info:
        if info is None:
            continue
        lo, hi = info["span"]
        norm_amp = _unit(float(info["amps"].mean()), amp_lo, amp_hi)
        norm_freq = _unit(info["freq"], freq_lo, freq_hi)
        norm_off = _unit(float(info["offsets"].mean()), off_lo, off_hi)
        pos = lo
        while pos < hi:
            sent = int(round(rng.uniform(*params.sentence_range_s) * params.fps))
            end = min(pos + sent, hi)
            if end - pos >= int(params.fps):  # ignore slivers under a second
                eps = rng.normal(0.0, params.vad_noise, size=3)
                label = VADLabel(
                    valence=float(np.clip(0.15 + 0.6 * norm_amp + eps[0], 0.0, 1.0)),
                    arousal=float(np.clip(0.15 + 0.6 * norm_freq + eps[1], 0.0, 1.0)),
                    dominance=float(np.clip(0.5 + 0.3 * (norm_off - 0.5) + 0.2 * (norm_amp - 0.5) + eps[2],
                                            0.0, 1.0)),
                )
                vad_annotations.append((pos, end, label))
            pos = end
        if info["amps"].mean() > params.behavior_amp_threshold and hi - lo > 2:
            frame = int(rng.integers(lo + (hi - lo) // 2, hi))
            if norm_freq < 1 / 3:
                cls = "sigh"
            elif norm_freq < 2 / 3:
                cls = "cry"
            else:
                cls = "laugh"
            behavior_annotations.append((frame, BehaviorLabel(cls)))
    return seq, vad_annotations, behavior_annotations


# -- tail upsampling ---------------------------------------------------------------


@dataclass
class UpsampleResult:
    samples: list
    tail_before: int
    tail_after: int
    empty_tail_warning: bool = False


def _vad_array(item) -> np.ndarray:
    label = item.label if isinstance(item, LabeledWindow) else item[1]
    return label.as_array()


def upsample_tail(items: list, sd_threshold: float = 2.0, target_ratio: float = 1 / 3,
                  seed: int = 0) -> UpsampleResult:
    """Duplicate far-from-mean VAD samples until their share reaches target_ratio.

    "Tail" = samples whose Euclidean distance from the dataset VAD mean has a
    z-score (over the distance distribution) of at least sd_threshold.
    Originals are all retained; duplicates are drawn with replacement from the
    tail; the final order is shuffled, all deterministically per seed.
    """
    if len(items) < 2:
        raise ConfigError("tail upsampling needs at least two labeled samples")
    if not (0.0 < target_ratio < 1.0):
        raise ConfigError(f"target_ratio must lie in (0, 1), got {target_ratio}")
    values = np.stack([_vad_array(it) for it in items])
    dist = np.linalg.norm(values - values.mean(axis=0), axis=1)
    spread = dist.std()
    if spread == 0.0:
        return UpsampleResult(list(items), 0, 0, empty_tail_warning=True)
    z = (dist - dist.mean()) / spread
    tail_idx = np.flatnonzero(z >= sd_threshold)
    if tail_idx.size == 0:
        return UpsampleResult(list(items), 0, 0, empty_tail_warning=True)

    rng = np.random.default_rng(seed)
    out = list(items)
    tail_items = [items[i] for i in tail_idx]
    tail = len(tail_items)
    total = len(items)
    while tail / total < target_ratio:
        out.append(tail_items[int(rng.integers(len(tail_items)))])
        tail += 1
        total += 1
    order = rng.permutation(len(out))
    return UpsampleResult([out[i] for i in order], tail_before=len(tail_items), tail_after=tail)


# -- annotations and labeled windows -------------------------------------------------


@dataclass
class Annotation:
    kind: str  # "vad" | "behavior"
    start_frame: int
    end_frame: int
    vad: VADLabel | None = None
    behavior: BehaviorLabel | None = None


def write_annotations(path, vad_list, behavior_list) -> None:
    """Write line-delimited JSON records for VAD ranges and behavior instants."""
    with open(path, "w") as fh:
        for start, end, label in vad_list:
            rec = {"kind": "vad", "start_frame": int(start), "end_frame": int(end),
                   "values": [label.valence, label.arousal, label.dominance]}
            fh.write(json.dumps(rec) + "\n")
        for frame, label in behavior_list:
            rec = {"kind": "behavior", "start_frame": int(frame), "end_frame": int(frame),
                   "values": label.cls}
            fh.write(json.dumps(rec) + "\n")


def read_annotations(path) -> list[Annotation]:
    out: list[Annotation] = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"annotation line {line_no}: {exc}") from None
            kind = rec.get("kind")
            if kind == "vad":
                v = rec["values"]
                out.append(Annotation("vad", int(rec["start_frame"]), int(rec["end_frame"]),
                                      vad=VADLabel(float(v[0]), float(v[1]), float(v[2]))))
            elif kind == "behavior":
                out.append(Annotation("behavior", int(rec["start_frame"]), int(rec["end_frame"]),
                                      behavior=BehaviorLabel(rec["values"])))
            else:
                raise ParseError(f"annotation line {line_no}: unknown kind {kind!r}")
    return out


def label_windows(seq: GazeSequence, annotations: list[Annotation], input_seconds: float,
                  stride_seconds: float = 3.0) -> list[LabeledWindow]:
    """Build labeled windows of the input_seconds immediately preceding each position.

    VAD ranges are sampled with stride_seconds starting at the range start;
    behavior instants yield one window each. Positions too close to the
    sequence start, or whose window crosses an invalid frame, are skipped.
    """
    if input_seconds <= 0:
        raise ConfigError("input_seconds must be positive")
    t_frames = int(round(input_seconds * seq.fps))
    stride = max(1, int(round(stride_seconds * seq.fps)))
    gaze = seq.gaze_matrix()
    valid = seq.valid_mask()
    face = seq.face_matrix()
    n = len(seq)

    def window_at(pos: int, label) -> LabeledWindow | None:
        start = pos - t_frames
        if start < 0 or pos > n or not valid[start:pos].all():
            return None
        return LabeledWindow(
            input=gaze[start:pos].copy(), label=label, origin=(seq.subject_id, start),
            face_aux=None if face is None else face[start:pos].copy())

    out: list[LabeledWindow] = []
    for ann in annotations:
        if ann.kind == "vad":
            pos = ann.start_frame
            while pos < ann.end_frame:
                win = window_at(pos, ann.vad)
                if win is not None:
                    out.append(win)
                pos += stride
        elif ann.kind == "behavior":
            win = window_at(ann.start_frame, ann.behavior)
            if win is not None:
                out.append(win)
    return out


# -- manifest ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    csv_path: str
    annotation_path: str
    subject_id: str
    split: str


def write_manifest(path, entries: list[ManifestEntry]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["csv_path", "annotation_path", "subject_id", "split"])
        for e in entries:
            writer.writerow([e.csv_path, e.annotation_path, e.subject_id, e.split])


def read_manifest(path) -> list[ManifestEntry]:
    entries: list[ManifestEntry] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty manifest") from None
        expected = ["csv_path", "annotation_path", "subject_id", "split"]
        if [h.strip() for h in header] != expected:
            raise SchemaError(f"manifest header {header} != {expected}")
        for row in reader:
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"manifest row has {len(row)} fields, expected 4: {row}")
            entries.append(ManifestEntry(*[c.strip() for c in row]))
    return entries


def load_manifest_sequences(manifest_path, fps: float = 30.0):
    """Load every manifest entry; returns [(entry, GazeSequence, [Annotation])]."""
    base = Path(manifest_path).parent
    loaded = []
    for entry in read_manifest(manifest_path):
        with open(base / entry.csv_path) as fh:
            seq = parse_openface_csv(fh, fps=fps, subject_id=entry.subject_id)
        anns = read_annotations(base / entry.annotation_path) if entry.annotation_path else []
        loaded.append((entry, seq, anns))
    return loaded
