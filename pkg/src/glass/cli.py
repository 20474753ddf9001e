"""Command-line interface: synth, pretrain (with sweeps), finetune, baseline, eval, report.

Every artifact-producing command writes its resolved config beside its
outputs and is byte-reproducible given the same config and seed. Paths come
from flags only; no environment variables are consulted.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

from .baselines import BASELINE_KINDS, fit_baseline
from .emotion import ChunkConfig, run_finetune, summarize, write_finetune_csv
from .errors import ConfigError, GlassError
from .gaze_data import (LabeledWindow, ManifestEntry, SynthConfig, WindowSpec, extract_windows,
                        label_windows, load_manifest_sequences, synth_gaze, write_annotations,
                        write_manifest, write_openface_csv)
from .model import GlassConfig, config_hash, load_checkpoint, save_checkpoint
from .plots import line_plot, scatter_plot
from .pretrain import (LossConfig, OptimConfig, PretrainData, SamplingSchedule,
                       autoregressive_correlation, predict_previous_correlation,
                       run_pretraining, write_train_log)
from .reports import (CorrelationReport, MetricRow, correlate_report, read_metric_rows,
                      write_correlation_report, write_metric_rows)
from .runconfig import RunConfig

SWEEP_AXES = {
    "model_size": ("small", "base", "large"),
    "input_seconds": (2.0, 5.0, 10.0),
    "output_seconds": (2.0, 5.0, 10.0),
}


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _glass_config(cfg: RunConfig, size: str | None = None, input_seconds: float | None = None,
                  output_seconds: float | None = None) -> GlassConfig:
    fps = cfg["data"]["fps"]
    size = size or cfg["model"]["size"]
    in_s = cfg["model"]["input_seconds"] if input_seconds is None else input_seconds
    out_s = cfg["model"]["output_seconds"] if output_seconds is None else output_seconds
    return GlassConfig.sized(size, input_frames=int(round(in_s * fps)),
                             output_frames=int(round(out_s * fps)), patch=cfg["model"]["patch"])


def _optim_config(cfg: RunConfig) -> OptimConfig:
    p = cfg["pretrain"]
    return OptimConfig(base_lr=p["base_lr"], warmup_steps=p["warmup_steps"],
                       weight_decay=p["weight_decay"], total_steps=p["total_steps"],
                       batch_size=p["batch_size"], clip_norm=p["clip_norm"],
                       eval_every=p["eval_every"])


def _head_optim(section: dict) -> OptimConfig:
    return OptimConfig(base_lr=section["lr"], warmup_steps=section["warmup_steps"],
                       weight_decay=section["weight_decay"], total_steps=section["steps"],
                       batch_size=section["batch_size"])


def _load_pretrain_data(manifest: str, cfg: RunConfig, glass_cfg: GlassConfig) -> PretrainData:
    spec = WindowSpec(input_frames=glass_cfg.input_frames, output_frames=glass_cfg.output_frames,
                      stride=cfg["data"]["stride"])
    train_w, val_w = [], []
    train_s, val_s = set(), set()
    for entry, seq, _ in load_manifest_sequences(manifest, fps=cfg["data"]["fps"]):
        windows = extract_windows(seq, spec)
        if entry.split == "train":
            train_w += windows
            train_s.add(entry.subject_id)
        elif entry.split == "val":
            val_w += windows
            val_s.add(entry.subject_id)
        else:
            raise ConfigError(f"manifest split {entry.split!r} must be 'train' or 'val'")
    return PretrainData(train_w, val_w, train_s, val_s)


def _load_labeled(manifest: str, cfg: RunConfig, task: str, input_seconds: float) -> list[LabeledWindow]:
    windows: list[LabeledWindow] = []
    for _, seq, anns in load_manifest_sequences(manifest, fps=cfg["data"]["fps"]):
        wanted = [a for a in anns if a.kind == ("vad" if task == "vad" else "behavior")]
        windows += label_windows(seq, wanted, input_seconds=input_seconds)
    if not windows:
        raise ConfigError(f"manifest yielded no labeled windows for task {task!r}")
    return windows


# -- subcommands --------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = RunConfig.load(args.config)
    out = _out_dir(args)
    s = cfg["synth"]
    entries = []
    total = s["subjects"] + s["val_subjects"]
    for i in range(total):
        subject = f"s{i:03d}"
        split = "train" if i < s["subjects"] else "val"
        sc = SynthConfig(
            duration_s=s["duration_s"], fps=s["fps"], n_regimes=s["n_regimes"],
            components=s["components"], amp_range=(s["amp_lo"], s["amp_hi"]),
            freq_range=(s["freq_lo"], s["freq_hi"]), offset_range=(s["offset_lo"], s["offset_hi"]),
            noise_scale=s["noise_scale"], ou_theta=s["ou_theta"], ou_sigma=s["ou_sigma"],
            blink_rate_hz=s["blink_rate_hz"], vad_noise=s["vad_noise"],
            behavior_amp_threshold=s["behavior_amp_threshold"], subject_id=subject)
        seq, vads, behs = synth_gaze(sc, seed=s["seed"] + i)
        csv_name, ann_name = f"{subject}.csv", f"{subject}.jsonl"
        write_openface_csv(seq, out / csv_name)
        write_annotations(out / ann_name, vads, behs)
        entries.append(ManifestEntry(csv_name, ann_name, subject, split))
    write_manifest(out / "manifest.csv", entries)
    cfg.write_resolved(out / "config.resolved.ini")
    print(f"wrote {total} subjects ({s['subjects']} train / {s['val_subjects']} val) to {out}")
    return 0


def _pretrain_once(cfg: RunConfig, manifest: str, out: Path, glass_cfg: GlassConfig,
                   seed: int) -> tuple[list[MetricRow], float | None, float | None]:
    data = _load_pretrain_data(manifest, cfg, glass_cfg)
    loss_cfg = LossConfig(velocity_weight=cfg["loss"]["velocity_weight"],
                          huber_delta=cfg["loss"]["huber_delta"])
    sched = SamplingSchedule(end_fraction=cfg["schedule"]["end_fraction"])
    result = run_pretraining(data, glass_cfg, loss_cfg, _optim_config(cfg), sched, seed=seed)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, out / "checkpoint.glass")
    write_train_log(out / "train_log.csv", result.log)
    steps = [float(r.step) for r in result.log]
    series = {"train_loss": (steps, [r.train_loss for r in result.log])}
    evals = [(float(r.step), r.val_corr) for r in result.log if r.val_corr is not None]
    if evals:
        series["val_gaze_corr"] = ([e[0] for e in evals], [e[1] for e in evals])
    line_plot(out / "train_curve.svg", series, "pretraining", "step", "value")
    h = config_hash(glass_cfg)
    run_id = f"pretrain-{h}-s{seed}"
    rows = [MetricRow(run_id, "pretrain", h, "train_loss", result.log[-1].train_loss, seed)]
    if result.best_val_corr is not None:
        rows.append(MetricRow(run_id, "pretrain", h, "val_gaze_corr", result.best_val_corr, seed))
    return rows, result.best_val_corr, result.baseline_val_corr


def cmd_pretrain(args) -> int:
    cfg = RunConfig.load(args.config)
    out = _out_dir(args)
    seed = cfg["pretrain"]["seed"]
    if args.sweep is None:
        glass_cfg = _glass_config(cfg)
        rows, best, baseline = _pretrain_once(cfg, args.manifest, out, glass_cfg, seed)
        write_metric_rows(out / "metrics.csv", rows)
        cfg.write_resolved(out / "config.resolved.ini")
        print(f"pretrained {glass_cfg.size_name}: best val corr "
              f"{'n/a' if best is None else f'{best:.4f}'} "
              f"(predict-previous {'n/a' if baseline is None else f'{baseline:.4f}'})")
        return 0

    values = SWEEP_AXES[args.sweep]
    rows: list[MetricRow] = []
    baseline_row: MetricRow | None = None
    for value in values:
        kwargs = {"size": value} if args.sweep == "model_size" else \
            {"input_seconds": value} if args.sweep == "input_seconds" else \
            {"output_seconds": value}
        glass_cfg = _glass_config(cfg, **kwargs)
        run_dir = out / f"run_{args.sweep}_{value}"
        run_rows, best, baseline = _pretrain_once(cfg, args.manifest, run_dir, glass_cfg, seed)
        rows += run_rows
        if baseline_row is None and baseline is not None:
            baseline_row = MetricRow("predict-previous", "eval", "predict-previous",
                                     "val_gaze_corr", baseline, seed)
        print(f"sweep {args.sweep}={value}: best val corr {'n/a' if best is None else f'{best:.4f}'}")
    if baseline_row is not None:
        rows.append(baseline_row)
    write_metric_rows(out / "metrics.csv", rows)
    cfg.write_resolved(out / "config.resolved.ini")
    return 0


def cmd_finetune(args) -> int:
    cfg = RunConfig.load(args.config)
    out = _out_dir(args)
    f = cfg["finetune"]
    model = load_checkpoint(args.checkpoint)
    windows = _load_labeled(args.manifest, cfg, f["task"], f["input_seconds"])
    chunk_cfg = ChunkConfig(chunk_seconds=f["chunk_seconds"],
                            patch_rate=cfg["data"]["fps"] / model.cfg.patch)
    h = config_hash(model.cfg)
    optim = _head_optim(f)
    rows: list[MetricRow] = []
    wide = []
    for seed in range(f["seeds"]):
        result = run_finetune(model, windows, f["head"], chunk_cfg, f["task"], seed, optim,
                              joint=f["joint"])
        m = result.metrics
        wide.append(m)
        run_id = f"finetune-{h}-s{seed}"
        if m.mae is not None:
            rows.append(MetricRow(run_id, "finetune", h, "mae", m.mae, seed))
        if m.pearson_r is not None:
            rows.append(MetricRow(run_id, "finetune", h, "pearson_r", m.pearson_r, seed))
        if m.macro_f1 is not None:
            rows.append(MetricRow(run_id, "finetune", h, "macro_f1", m.macro_f1, seed))
    write_finetune_csv(out / "finetune_report.csv", wide)
    write_metric_rows(out / "metrics.csv", rows)
    cfg.write_resolved(out / "config.resolved.ini")
    for metric, (mean, std) in summarize(wide).items():
        print(f"{f['task']}/{f['head']} {metric}: {mean:.4f} +/- {std:.4f} over {f['seeds']} seeds")
    return 0


def cmd_baseline(args) -> int:
    cfg = RunConfig.load(args.config)
    out = _out_dir(args)
    b = cfg["baseline"]
    if b["kind"] not in BASELINE_KINDS:
        raise ConfigError(f"unknown baseline kind {b['kind']!r}")
    windows = _load_labeled(args.manifest, cfg, b["task"], b["input_seconds"])
    section_text = "".join(f"{k}={b[k]};" for k in sorted(b))
    h = hashlib.sha256(section_text.encode()).hexdigest()[:12]
    optim = _head_optim(b)
    rows: list[MetricRow] = []
    wide = []
    for seed in range(b["seeds"]):
        result = fit_baseline(windows, b["kind"], b["task"], seed, optim)
        m = result.metrics
        wide.append(m)
        run_id = f"baseline-{b['kind']}-s{seed}"
        if m.mae is not None:
            rows.append(MetricRow(run_id, "baseline", h, "mae", m.mae, seed))
        if m.pearson_r is not None:
            rows.append(MetricRow(run_id, "baseline", h, "pearson_r", m.pearson_r, seed))
        if m.macro_f1 is not None:
            rows.append(MetricRow(run_id, "baseline", h, "macro_f1", m.macro_f1, seed))
    write_finetune_csv(out / "baseline_report.csv", wide)
    write_metric_rows(out / "metrics.csv", rows)
    cfg.write_resolved(out / "config.resolved.ini")
    for metric, (mean, std) in summarize(wide).items():
        print(f"{b['kind']} {metric}: {mean:.4f} +/- {std:.4f} over {b['seeds']} seeds")
    return 0


def cmd_eval(args) -> int:
    cfg = RunConfig.load(args.config)
    out = _out_dir(args)
    model = load_checkpoint(args.checkpoint)
    data = _load_pretrain_data(args.manifest, cfg, model.cfg)
    if model.norm_stats is None:
        raise ConfigError("checkpoint carries no normalization stats")
    corr = autoregressive_correlation(model, data.val_windows, model.norm_stats)
    baseline = predict_previous_correlation(data.val_windows, model.cfg.output_frames)
    h = config_hash(model.cfg)
    rows = []
    if corr is not None:
        rows.append(MetricRow(f"eval-{h}", "eval", h, "val_gaze_corr", corr, 0))
    if baseline is not None:
        rows.append(MetricRow("predict-previous", "eval", "predict-previous", "val_gaze_corr",
                              baseline, 0))
    write_metric_rows(out / "metrics.csv", rows)
    cfg.write_resolved(out / "config.resolved.ini")
    print(f"val gaze corr {'n/a' if corr is None else f'{corr:.4f}'} "
          f"(predict-previous {'n/a' if baseline is None else f'{baseline:.4f}'})")
    return 0


def emit_scatter_plots(report: CorrelationReport, out: Path) -> list[Path]:
    paths = []
    for metric in sorted(report.points):
        pts = report.points[metric]
        xs = [p[1] for p in pts]
        ys = [p[2] for p in pts]
        label = "-mae" if metric == "mae" else metric
        path = out / f"scatter_val_corr_vs_{metric}.svg"
        scatter_plot(path, xs, ys, f"pretraining corr vs {label}", "val_gaze_corr", label)
        paths.append(path)
    return paths


def cmd_report(args) -> int:
    out = _out_dir(args)
    pretrain_rows: list[MetricRow] = []
    for path in args.pretrain:
        pretrain_rows += read_metric_rows(path)
    downstream_rows: list[MetricRow] = []
    for path in args.downstream:
        downstream_rows += read_metric_rows(path)
    report = correlate_report(pretrain_rows, downstream_rows)
    write_correlation_report(out / "correlation_report.csv", report)
    emit_scatter_plots(report, out)
    for metric in sorted(report.correlations):
        r = report.correlations[metric]
        label = "-mae" if metric == "mae" else metric
        print(f"corr(val_gaze_corr, {label}) = {'n/a' if r is None else f'{r:.4f}'}")
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glass",
                                     description="gaze-forecasting pretraining and emotion fine-tuning")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic gaze/affect corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="self-supervised pretraining (optionally a sweep)")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sweep", choices=sorted(SWEEP_AXES), default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune an emotion head on a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("baseline", help="fit a baseline predictor")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="evaluate a checkpoint's validation gaze correlation")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="correlate pretraining quality with downstream metrics")
    p.add_argument("--pretrain", nargs="+", required=True, help="metrics.csv files from pretraining")
    p.add_argument("--downstream", nargs="+", required=True,
                   help="metrics.csv files from finetune/baseline runs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage to stderr
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except GlassError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
