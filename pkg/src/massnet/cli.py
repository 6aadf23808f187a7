"""Command-line entry point: ``massnet <command> ...``.

Exit status is 0 on success, 2 for usage or configuration errors and 1 for
failures while running. Diagnostics are a single line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .data import Dataset, FormatId, JointSet, Sample, load_dataset, read_frame_csv, save_dataset
from .errors import ConfigError, MassNetError
from .evaluation import AblationAxis, ablation_to_csv, evaluate_report, render_table, run_ablation
from .network import load_checkpoint
from .synthetic import generate_dataset, synthesize_session
from .timeseries import report_json, segment_frames, default_thresholds, session_report, temporal_gradient
from .training import MassNetRegressor

log = logging.getLogger("massnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_cfg(path) -> ExperimentConfig:
    try:
        cfg = load_config(path)
        cfg.check_paths()
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    except ConfigError as exc:
        raise UsageError(f"invalid config {path}: {exc}") from None
    return cfg


def _prepare(cfg: ExperimentConfig):
    dataset = cfg.dataset.load()
    split = cfg.split.apply(dataset)
    train, val, test = split.resolve(dataset)
    log.info("split: %d train / %d val / %d test samples", len(train), len(val), len(test))
    return dataset, split, train, val, test


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    if args.name:
        cfg.name = args.name
    _, split, train, val, test = _prepare(cfg)
    run = cfg.run_dir
    run.mkdir(parents=True, exist_ok=True)
    _write_json(run / "config.json", cfg.to_dict())
    _write_json(run / "split.json", {"train": list(split.train), "val": list(split.val), "test": list(split.test)})
    reg = MassNetRegressor(cfg.model, cfg.train, cfg.preprocess, out_dir=run).fit(train, val or None)
    msg = f"trained {reg.state.epoch} epochs"
    if test:
        report = evaluate_report(reg, test)
        _write_json(run / "metrics.json", report.to_dict())
        msg += f"; test MAE {report.mae_mean:.3f} kg, MAPE {report.mape_mean:.3f} %"
    print(f"{msg}; artifacts in {run}")
    return 0


def _regressor_from(ckpt):
    model, extra = load_checkpoint(ckpt)
    if extra.get("dataset_max") is None:
        raise MassNetError(f"checkpoint {ckpt} carries no dataset normaliser")
    return MassNetRegressor.from_checkpoint(model, extra)


def cmd_eval(args) -> int:
    if (args.config is None) == (args.data is None):
        raise UsageError("eval needs exactly one of --config or --data")
    reg = _regressor_from(args.ckpt)
    if args.config:
        _, _, _, _, samples = _prepare(_load_cfg(args.config))
    else:
        samples = list(load_dataset(args.data, args.format))
    if not samples:
        raise MassNetError("nothing to evaluate: the test set is empty")
    report = evaluate_report(reg, samples)
    print(report.render())
    if args.out:
        Path(args.out).write_text(report.to_json(indent=2) + "\n")
    return 0


def _read_joints(path):
    if path is None:
        return None
    return JointSet(np.asarray(json.loads(Path(path).read_text()), dtype=np.float64))


def cmd_predict(args) -> int:
    reg = _regressor_from(args.ckpt)
    frame = read_frame_csv(args.frame)
    # the label is a placeholder; only the frame and joints feed the model
    sample = Sample(frame, "query", 1.0, "other", _read_joints(args.joints))
    print(f"weight_kg={float(reg.predict([sample])[0]):.6f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args.config)
    if args.name:
        cfg.name = args.name
    _, _, train, val, test = _prepare(cfg)
    if not test:
        raise MassNetError("ablation needs a non-empty test split")
    cells = run_ablation(args.axis, cfg.model, cfg.train, cfg.preprocess, train, val or None, test)
    run = cfg.run_dir
    run.mkdir(parents=True, exist_ok=True)
    axis = AblationAxis(args.axis).value
    (run / f"ablation_{axis}.csv").write_text(ablation_to_csv(cells))
    _write_json(run / f"ablation_{axis}_history.json", {c.name: c.history for c in cells})
    print(render_table([(c.name, c.report) for c in cells]))
    return 0


def cmd_synth(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be positive")
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise UsageError(f"output directory {out} is not empty")
    if args.session:
        sess = synthesize_session(n_frames=args.n, seed=args.seed,
                                  n_movements=min(14, max(1, args.n // 80)))
        ds = Dataset(sess.samples, FormatId.MASSNET_DYNAMIC)
        save_dataset(ds, out)
        _write_json(out / "movements.json", [list(m) for m in sess.movements])
    else:
        per = args.frames_per_subject
        ds = generate_dataset(n_subjects=math.ceil(args.n / per), frames_per_subject=per,
                              sensor=args.sensor, seed=args.seed)
        save_dataset(Dataset(ds.samples[:args.n], FormatId.SYNTHETIC), out)
    print(f"wrote {args.n} frames to {out}")
    return 0


def _session_samples(path: Path):
    if (path / "meta.json").exists():
        meta = json.loads((path / "meta.json").read_text())
        ds = load_dataset(path, meta.get("format_id", "massnet_dynamic"))
        return sorted(ds.samples, key=lambda s: (s.timestamp is None, s.timestamp))
    files = sorted(path.glob("*.csv"))
    if not files:
        raise MassNetError(f"no frames found in {path}")
    return [Sample(read_frame_csv(f), "session", 1.0, "other", None, k) for k, f in enumerate(files)]


def cmd_segment(args) -> int:
    path = Path(args.frames)
    if not path.is_dir():
        raise UsageError(f"frame directory not found: {path}")
    samples = _session_samples(path)
    g = temporal_gradient([s.frame for s in samples])
    hi, lo, min_len = default_thresholds(g, min_len=args.min_len)
    segs = segment_frames(g, args.tau_hi or hi, args.tau_lo or lo, min_len)
    preds = _regressor_from(args.ckpt).predict(samples)
    text = report_json(session_report(preds, segs))
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="massnet", description="Body-weight regression from bed pressure images.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("train", help="train a model from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--name", help="run name (overrides the config)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--config", help="evaluate on the test split of this experiment")
    s.add_argument("--data", help="evaluate on every sample of this dataset")
    s.add_argument("--format", default=FormatId.SYNTHETIC.value, choices=[f.value for f in FormatId])
    s.add_argument("--out", help="write the metrics JSON here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="predict the weight for one frame file")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--frame", required=True)
    s.add_argument("--joints", help="JSON list of (row, col) joint coordinates")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("ablate", help="run one ablation axis")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", required=True, choices=[a.value for a in AblationAxis])
    s.add_argument("--name")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("synth", help="write a synthetic dataset in the native format")
    s.add_argument("--n", type=int, required=True, help="number of frames")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--frames-per-subject", type=int, default=6)
    s.add_argument("--sensor", default="saturating", choices=["ideal", "saturating"])
    s.add_argument("--session", action="store_true", help="one continuous session with planted movements")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("segment", help="segment a frame sequence and aggregate a session weight")
    s.add_argument("--frames", required=True, help="native dataset dir or a directory of CSV frames")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--tau-hi", type=float)
    s.add_argument("--tau-lo", type=float)
    s.add_argument("--min-len", type=int, default=5)
    s.add_argument("--out", help="write the session report here")
    s.set_defaults(func=cmd_segment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required (train, eval, predict, ablate, synth, segment)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"massnet: usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: one line, no traceback
        log.debug("command failed", exc_info=True)
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"massnet: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
