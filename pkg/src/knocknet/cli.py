"""Command-line interface: ``knocknet {synth,train,eval,crossval,compare,spectrum,bench}``.

Every command that writes files stores its fully resolved configuration
(``config.json``) and a manifest with the seed, the configuration hash and
the hash of each output next to the outputs. All randomness comes from the
seeds on the command line.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .analysis import first_layer_spectrum, format_peak_table, hypothesis_check
from .dataset import SplitSpec, atomic_write, load_cycles, save_cycles, split_indices
from .evaluation import (
    binary_accuracy,
    compare_detectors,
    confusion_matrix,
    cv_csv,
    diagonal_csv,
    diagonal_metrics,
    format_confusion,
    format_cv_table,
    format_diagonal_table,
    format_latency,
    latency_benchmark,
    predicted_classes,
)
from .exceptions import KnockNetError
from .nn import KnockNetClassifier, load_model, save_model
from .nn.layers import CONV_MODES, SHARED_KERNEL
from .nn.network import VARIANTS, kernel_for_variant
from .nn.serialization import MAGIC
from .reference import DETECTORS, load_reference, save_reference
from .signals import DEFAULT_RPM, EngineGeometry
from .synthetic import SyntheticConfig, synthesize_dataset, synthesize_study, three_engine_configs

log = logging.getLogger("knocknet")

DETECTOR_NAMES = ("cnn",) + tuple(DETECTORS)
STUDY_CYCLES = 2880


@dataclass
class RunConfig:
    subcommand: str
    seed: int
    options: dict = field(default_factory=dict)
    synthetic: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=str) + "\n"

    def digest(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()


class RunOutput:
    """Collects output files of one run and writes config + manifest last."""

    def __init__(self, out_dir, config):
        self.dir = Path(out_dir)
        self.config = config
        self.files = {}
        self.untracked = []

    def path(self, name):
        return self.dir / name

    def text(self, name, content, tracked=True):
        atomic_write(self.path(name), lambda fh: fh.write(content))
        self.record(name, tracked)

    def record(self, name, tracked=True):
        if tracked:
            self.files[name] = hashlib.sha256(self.path(name).read_bytes()).hexdigest()
        else:
            self.untracked.append(name)

    def finish(self):
        self.text("config.json", self.config.to_json(), tracked=False)
        manifest = {
            "subcommand": self.config.subcommand,
            "seed": self.config.seed,
            "config_sha256": self.config.digest(),
            "outputs": dict(sorted(self.files.items())),
            "untracked_outputs": sorted(self.untracked),
        }
        atomic_write(self.path("manifest.json"), lambda fh: fh.write(json.dumps(manifest, indent=2) + "\n"))


# -- argument helpers ------------------------------------------------------------

def _band(text):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"band must be 'low,high' in Hz, got {text!r}") from None
    return lo, hi


def _data_parent():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("data")
    g.add_argument("--cycles", type=Path, help="cycles CSV (windows or full cycles)")
    g.add_argument("--labels", type=Path, help="expert-vote CSV matching --cycles")
    g.add_argument("--synthetic", action="store_true",
                   help="use the built-in three-engine synthetic study instead of files")
    g.add_argument("--data-seed", type=int, default=0, help="seed of the synthetic study")
    g.add_argument("--data-scale", type=float, default=1.0, help="cycle-count multiplier of the synthetic study")
    return p


def _model_parent():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("detectors and training")
    g.add_argument("--variant", choices=sorted(VARIANTS), default="d", help="CNN variant (kernel 30/23/18/11)")
    g.add_argument("--kernel", type=int, help="explicit CNN base kernel size (overrides --variant)")
    g.add_argument("--mode", choices=CONV_MODES, default=SHARED_KERNEL)
    g.add_argument("--lr", type=float, default=1e-3)
    g.add_argument("--batch-size", type=int, default=64)
    g.add_argument("--epochs", type=int, default=200, help="maximum epochs")
    g.add_argument("--l2", type=float, default=1e-4)
    g.add_argument("--patience", type=int, default=15)
    g.add_argument("--band", type=_band, default=(3000.0, 9000.0), help="MAPO band 'low,high' in Hz")
    g.add_argument("--components", type=int, default=8, help="PCA components")
    g.add_argument("--split", default=None, help="training percent per subset, e.g. 70/70/70 (default 70 each)")
    g.add_argument("--seed", type=int, default=0, help="split / initialisation / shuffling seed")
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="knocknet", description="Knock detection on in-cylinder pressure windows.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more progress output")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    data, model = _data_parent(), _model_parent()

    p = sub.add_parser("synth", help="generate a synthetic labelled dataset")
    p.add_argument("--bore-mm", type=float, help="single engine with this bore (default: three-engine study)")
    p.add_argument("--n", type=int, help="number of cycles (study: total, split proportionally)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=Path, help="SyntheticConfig key = value file (single engine)")
    p.add_argument("--tag", default="A", help="subset tag of a single engine")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", parents=[data, model], help="train a detector and save it")
    p.add_argument("--detector", default="cnn", help=f"one of {', '.join(DETECTOR_NAMES)}")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", parents=[data], help="evaluate a saved model on a dataset")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("crossval", parents=[data, model], help="repeated stratified splits for one detector")
    p.add_argument("--detector", default="cnn", help=f"one of {', '.join(DETECTOR_NAMES)}")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("compare", parents=[data, model], help="several detectors on shared splits")
    p.add_argument("--detectors", default=",".join(DETECTOR_NAMES), help="comma-separated detector names")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("spectrum", help="frequency content of a CNN's first-layer kernels")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--zero-pad", type=int, default=1024)
    p.add_argument("--rpm", type=float, default=DEFAULT_RPM)
    p.add_argument("--geometry-bore", type=float, action="append",
                   help="bore in mm to test against (repeatable)")
    p.add_argument("--tolerance", type=float, default=0.15)
    p.add_argument("--n-modes", type=int, help="only the lowest N modes of each geometry")

    p = sub.add_parser("bench", parents=[data], help="single-window classification latency")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--measured", type=int, default=1000)
    p.add_argument("--budget-us", type=float, default=1000.0)
    p.add_argument("--out", type=Path, help="also write the report here")
    return parser


# -- shared steps ------------------------------------------------------------------

def _study_configs(seed, scale):
    return three_engine_configs(seed, scale)


def load_data(args, config):
    if args.synthetic:
        cfgs = _study_configs(args.data_seed, args.data_scale)
        config.synthetic = [c.to_text() for c in cfgs]
        return synthesize_study(cfgs)
    if args.cycles is None:
        raise KnockNetError("give --cycles (and --labels) or --synthetic")
    return load_cycles(args.cycles, args.labels)


def parse_split(args, dataset):
    tags = dataset.tags
    text = args.split or "/".join("70" for _ in tags)
    return SplitSpec.parse(text, tags, args.seed)


def make_factory(name, args, parser=None):
    if name == "cnn":
        variant = args.kernel if args.kernel is not None else args.variant
        kernel_for_variant(variant)
        return KnockNetClassifier(variant=variant, mode=args.mode, learning_rate=args.lr,
                                  batch_size=args.batch_size, max_epochs=args.epochs,
                                  l2_penalty=args.l2, patience=args.patience, seed=args.seed)
    if name == "mapo":
        return DETECTORS[name](band_low=args.band[0], band_high=args.band[1], l2_penalty=args.l2)
    if name in DETECTORS:
        return DETECTORS[name](n_components=args.components, l2_penalty=args.l2)
    message = f"unknown detector {name!r}; valid names: {', '.join(DETECTOR_NAMES)}"
    if parser is not None:
        parser.error(message)
    raise KnockNetError(message)


def load_any_model(path):
    """A fitted estimator from a CNN model file or a reference-detector file."""
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
    if head == MAGIC:
        return KnockNetClassifier.from_network(load_model(path))
    return load_reference(path)


def _options(args):
    skip = {"command", "verbose", "out"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in skip}


def _progress(epoch, report):
    log.info("epoch %3d  loss %.4f  train %.4f  test %.4f", epoch, report.train_loss[-1],
             report.train_accuracy[-1], report.test_accuracy[-1])


# -- subcommands ------------------------------------------------------------------

def cmd_synth(args, parser):
    config = RunConfig("synth", args.seed, _options(args))
    if args.config is not None:
        cfg = SyntheticConfig.from_text(args.config.read_text(), str(args.config))
        overrides = {"seed": args.seed, "subset_tag": args.tag}
        if args.n is not None:
            overrides["n_cycles"] = args.n
        cfgs = [SyntheticConfig(**{**cfg.__dict__, **overrides})]
    elif args.bore_mm is not None:
        cfgs = [SyntheticConfig(EngineGeometry(args.bore_mm), n_cycles=args.n or 1000, seed=args.seed,
                                subset_tag=args.tag)]
    else:
        scale = 1.0 if args.n is None else args.n / STUDY_CYCLES
        cfgs = _study_configs(args.seed, scale)
    config.synthetic = [c.to_text() for c in cfgs]
    dataset = synthesize_study(cfgs) if len(cfgs) > 1 else synthesize_dataset(cfgs[0])
    out = RunOutput(args.out, config)
    save_cycles(dataset, out.path("cycles.csv"), out.path("labels.csv"))
    out.record("cycles.csv")
    out.record("labels.csv")
    for i, c in enumerate(cfgs):
        out.text(f"synthetic_{c.subset_tag or i}.txt", c.to_text())
    out.finish()
    print(f"wrote {len(dataset)} cycles ({', '.join(dataset.tags)}) to {args.out}, seed {args.seed}")
    return 0


def cmd_train(args, parser):
    config = RunConfig("train", args.seed, _options(args))
    factory = make_factory(args.detector, args, parser)
    dataset = load_data(args, config)
    spec = parse_split(args, dataset)
    train_idx, test_idx = split_indices(dataset, spec)
    train, test = dataset.subset(train_idx), dataset.subset(test_idx)
    out = RunOutput(args.out, config)
    if args.detector == "cnn":
        det = factory.fit(train.windows, train.scaled_labels, eval_set=(test.windows, test.scaled_labels),
                          callback=_progress)
        save_model(det.net_, out.path("model.knet"))
        out.record("model.knet")
        rep = det.report_
        out.text("train_report.json", json.dumps(rep.to_dict(), indent=2) + "\n")
        lines = [f"kernel {det.net_.kernel_size}  mode {det.net_.mode}  split {spec}  seed {args.seed}",
                 f"stopped after epoch {rep.stop_epoch} ({rep.stop_reason}); best epoch {rep.best_epoch}",
                 "epoch  train_loss  train_acc  test_acc"]
        lines += [f"{i + 1:5d}  {lo:10.4f}  {tr:9.4f}  {te:8.4f}" for i, (lo, tr, te) in
                  enumerate(zip(rep.train_loss, rep.train_accuracy, rep.test_accuracy))]
        model_name = "model.knet"
    else:
        det = factory.fit(train.windows, train.scaled_labels)
        save_reference(det, out.path("model.ref"))
        out.record("model.ref")
        if hasattr(det, "basis_"):
            out.record("model.ref.basis")
        lines = [f"detector {args.detector}  split {spec}  seed {args.seed}"]
        model_name = "model.ref"
    train_acc = binary_accuracy(det.predict(train.windows), train.binary_labels)
    test_acc = binary_accuracy(det.predict(test.windows), test.binary_labels)
    lines.append(f"train accuracy {train_acc:.4f}  test accuracy {test_acc:.4f}")
    out.text("train_report.txt", "\n".join(lines) + "\n")
    out.finish()
    print(lines[-1])
    print(f"model written to {out.path(model_name)}")
    return 0


def cmd_eval(args, parser):
    config = RunConfig("eval", args.data_seed, _options(args))
    det = load_any_model(args.model)
    dataset = load_data(args, config)
    acc = binary_accuracy(det.predict(dataset.windows), dataset.binary_labels)
    out = RunOutput(args.out, config)
    text = [f"binary accuracy {acc:.4f} on {len(dataset)} cycles"]
    csv_lines = ["metric,value", f"binary_accuracy,{acc!r}"]
    classes = predicted_classes(det, dataset.windows)
    if classes is not None:
        cm = confusion_matrix(classes, dataset.relative_labels)
        d = diagonal_metrics(cm)
        text.append(format_confusion(cm, "confusion matrix (rows true class, columns predicted)"))
        for name, v in zip(d.ROW_NAMES, d.as_tuple()):
            text.append(f"{name:30s} {v:.4f}")
        csv_lines += [f"main,{d.main!r}", f"main_plus_secondary,{d.main_plus_secondary!r}",
                      f"main_plus_secondary_modified,{d.main_plus_secondary_modified!r}"]
        out.text("confusion.csv", "\n".join(",".join(map(str, r)) for r in cm.counts) + "\n")
    report = "\n".join(text) + "\n"
    out.text("eval.txt", report)
    out.text("eval.csv", "\n".join(csv_lines) + "\n")
    out.finish()
    print(report, end="")
    return 0


def _run_comparison(args, parser, names, subcommand):
    config = RunConfig(subcommand, args.seed, _options(args))
    if args.repeats < 1:
        parser.error("--repeats must be at least 1")
    factories = {n: make_factory(n, args, parser) for n in names}
    dataset = load_data(args, config)
    spec = parse_split(args, dataset)

    def progress(name, r, det):
        log.info("repeat %d/%d  %s done", r + 1, args.repeats, name)

    reports = compare_detectors(dataset, spec, factories, args.repeats, callback=progress)
    out = RunOutput(args.out, config)
    table = format_cv_table(reports)
    parts = [f"split {spec}, {args.repeats} repeats, seeds {args.seed}..{args.seed + args.repeats - 1}",
             "binary accuracy", table]
    if any(r.confusion for r in reports.values()):
        parts += ["diagonal metrics (mean over splits)", format_diagonal_table(reports)]
        conf = []
        for r in reports.values():
            if r.confusion:
                total = r.confusion[0]
                for cm in r.confusion[1:]:
                    total = total + cm
                conf.append(format_confusion(total, f"{r.detector}: summed over {len(r.confusion)} splits"))
        out.text("confusion.txt", "\n".join(conf))
        out.text("diagonal.csv", diagonal_csv(reports))
    report = "\n".join(parts)
    out.text("report.txt", report)
    out.text("cv.csv", cv_csv(reports))
    out.text("cv.json", json.dumps({n: r.to_dict() for n, r in reports.items()}, indent=2, default=str) + "\n")
    out.finish()
    print(report, end="")
    return 0


def cmd_crossval(args, parser):
    return _run_comparison(args, parser, [args.detector], "crossval")


def cmd_compare(args, parser):
    names = [n.strip() for n in args.detectors.split(",") if n.strip()]
    if not names:
        parser.error(f"--detectors needs at least one of: {', '.join(DETECTOR_NAMES)}")
    for n in names:
        if n not in DETECTOR_NAMES:
            parser.error(f"unknown detector {n!r}; valid names: {', '.join(DETECTOR_NAMES)}")
    return _run_comparison(args, parser, names, "compare")


def cmd_spectrum(args, parser):
    config = RunConfig("spectrum", 0, _options(args))
    net = load_model(args.model)
    spectrum = first_layer_spectrum(net, args.zero_pad, args.rpm)
    out = RunOutput(args.out, config)
    out.text("spectrum.csv", spectrum.to_csv())
    lines = [format_peak_table(spectrum)]
    if args.geometry_bore:
        geoms = [EngineGeometry(b, rpm=args.rpm) for b in args.geometry_bore]
        res = hypothesis_check(net, geoms, args.tolerance, args.n_modes, args.zero_pad)
        lines.append(res.summary() + "\n")
    report = "".join(lines)
    out.text("peaks.txt", report)
    out.finish()
    print(report, end="")
    return 0


def cmd_bench(args, parser):
    config = RunConfig("bench", args.data_seed, _options(args))
    det = load_any_model(args.model)
    if args.cycles is not None or args.synthetic:
        windows = load_data(args, config).windows
    else:
        windows = np.random.default_rng(args.data_seed).normal(70.0, 5.0, (64, 600))
    target = det.net_ if hasattr(det, "net_") else det
    rep = latency_benchmark(target, windows, args.warmup, args.measured)
    text = format_latency(rep, args.budget_us * 1e-6, label=str(args.model))
    if args.out is not None:
        out = RunOutput(args.out, config)
        out.text("bench.txt", text, tracked=False)
        out.finish()
    print(text, end="")
    return 0 if rep.passes(args.budget_us * 1e-6) else 1


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "crossval": cmd_crossval,
    "compare": cmd_compare, "spectrum": cmd_spectrum, "bench": cmd_bench,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args, parser)
    except (KnockNetError, OSError) as exc:
        print(f"knocknet {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
