"""Shared corpus builders for the test suite."""

from __future__ import annotations

import numpy as np

from glass.gaze_data import (Annotation, LabeledWindow, SynthConfig, VADLabel, WindowSpec,
                             extract_windows, label_windows, synth_gaze)
from glass.pretrain import PretrainData


def make_pretrain_corpus(n_train: int, n_val: int, duration_s: float = 110.0,
                         input_frames: int = 150, output_frames: int = 150,
                         stride: int = 151, seed0: int = 100,
                         **synth_kwargs) -> PretrainData:
    spec = WindowSpec(input_frames, output_frames, stride)
    train_w, val_w, tsub, vsub = [], [], set(), set()
    for i in range(n_train + n_val):
        sc = SynthConfig(duration_s=duration_s, subject_id=f"s{i:03d}", **synth_kwargs)
        seq, _, _ = synth_gaze(sc, seed=seed0 + i)
        wins = extract_windows(seq, spec)
        if i < n_train:
            train_w += wins
            tsub.add(seq.subject_id)
        else:
            val_w += wins
            vsub.add(seq.subject_id)
    return PretrainData(train_w, val_w, tsub, vsub)


def make_labeled_vad(n_subjects: int = 6, duration_s: float = 100.0, input_seconds: float = 5.0,
                     seed0: int = 200, **synth_kwargs) -> list[LabeledWindow]:
    windows: list[LabeledWindow] = []
    for i in range(n_subjects):
        sc = SynthConfig(duration_s=duration_s, subject_id=f"v{i:03d}", **synth_kwargs)
        seq, vads, _ = synth_gaze(sc, seed=seed0 + i)
        anns = [Annotation("vad", s, e, vad=l) for s, e, l in vads]
        windows += label_windows(seq, anns, input_seconds=input_seconds)
    return windows


def make_labeled_behavior(n_subjects: int = 14, duration_s: float = 100.0,
                          input_seconds: float = 5.0, seed0: int = 400,
                          **synth_kwargs) -> list[LabeledWindow]:
    synth_kwargs.setdefault("behavior_amp_threshold", 0.55)
    windows: list[LabeledWindow] = []
    for i in range(n_subjects):
        sc = SynthConfig(duration_s=duration_s, subject_id=f"b{i:03d}", **synth_kwargs)
        seq, _, behs = synth_gaze(sc, seed=seed0 + i)
        anns = [Annotation("behavior", f, f, behavior=l) for f, l in behs]
        windows += label_windows(seq, anns, input_seconds=input_seconds)
    return windows


def synthetic_vad_points(rng: np.random.Generator, n: int) -> list[VADLabel]:
    vals = np.clip(rng.normal(0.4, 0.12, size=(n, 3)), 0.0, 1.0)
    return [VADLabel(*row) for row in vals]
