"""Command-line pipeline driver.

Every subcommand reads one experiment config, writes its artifacts into
--out, and drops a resolved copy of the config next to them. Outputs are
deterministic for a fixed config and seed, so reruns overwrite files
byte-identically.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import attack as atk
from . import evaluation as ev
from .config import ExperimentConfig
from .dataset import MALWARE, save_dataset, save_feature_space
from .errors import ConfigError, FormatError, ParameterError, SplitError, TrainingError
from .network import deserialize, serialize
from .training import train, train_distilled


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we want 1
        raise _UsageError(message)


def _write(path: str, data) -> None:
    tmp = path + ".tmp"
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode, **({} if isinstance(data, bytes) else {"encoding": "ascii", "newline": "\n"})) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _prepare_out(args, cfg: ExperimentConfig) -> str:
    out = args.out
    os.makedirs(out, exist_ok=True)
    _write(os.path.join(out, "config.resolved.ini"), cfg.resolved_text())
    return out


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.override_seed(args.seed)
    return cfg


def _load_model(path: str, space):
    try:
        with open(path, "rb") as fh:
            return deserialize(fh.read(), expected_space=space)
    except OSError as exc:
        raise ConfigError(f"cannot read model {path}: {exc}") from exc


def _need_test(test_d):
    if test_d is None:
        raise ConfigError("this command needs a test set; set [dataset] test_file")
    return test_d


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    if cfg.values["dataset"]["source"] != "synthetic":
        raise ConfigError("gen-data needs [dataset] source = synthetic")
    train_d, test_d, space = cfg.load_data()
    out = _prepare_out(args, cfg)
    save_feature_space(space, os.path.join(out, "space.txt"))
    save_dataset(train_d, os.path.join(out, "train.txt"))
    save_dataset(test_d, os.path.join(out, "test.txt"))
    print(
        f"wrote space.txt train.txt test.txt to {out}"
        f" ({len(train_d)} train / {len(test_d)} test samples)"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    train_d, _, space = cfg.load_data()
    arch = cfg.architecture(space.n_features)
    model, log = train(train_d, arch, cfg.head(), cfg.train_config())
    out = _prepare_out(args, cfg)
    _write(os.path.join(out, "model.txt"), serialize(model))
    _write(os.path.join(out, "train.log"), log.render())
    print(f"wrote model.txt train.log to {out}")
    return 0


def cmd_distill(args) -> int:
    cfg = _load_config(args)
    if cfg.head().variant != "softmax_pair":
        raise ConfigError("distillation needs [network] head = softmax_pair")
    train_d, _, space = cfg.load_data()
    dcfg = cfg.distill_config()
    arch = cfg.architecture(space.n_features)
    teacher, student, tlog, slog = train_distilled(train_d, arch, dcfg)
    out = _prepare_out(args, cfg)
    _write(os.path.join(out, "teacher.txt"), serialize(teacher))
    _write(os.path.join(out, "student.txt"), serialize(student))
    _write(os.path.join(out, "teacher.log"), tlog.render())
    _write(os.path.join(out, "student.log"), slog.render())
    print(f"wrote teacher.txt student.txt to {out} (temperature {dcfg.temperature:g})")
    return 0


def cmd_attack(args) -> int:
    cfg = _load_config(args)
    _, test_d, space = cfg.load_data()
    test_d = _need_test(test_d)
    model = _load_model(args.model, space)
    malware = test_d.by_label(MALWARE)
    report = atk.evaluate_attack(model, malware, space, cfg.attack_config())
    metrics = ev.evaluate(model, test_d)
    metrics.mr = report.rate
    out = _prepare_out(args, cfg)
    _write(os.path.join(out, "attack_report.txt"), report.render())
    _write(os.path.join(out, "metrics.txt"), metrics.render())
    flag = " (no detected malware)" if report.empty_denominator else ""
    print(
        f"misclassification rate {report.rate:.6f}"
        f" ({report.n_success}/{report.n_detected} detected samples){flag}"
    )
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    _, test_d, space = cfg.load_data()
    test_d = _need_test(test_d)
    model = _load_model(args.model, space)
    metrics = ev.evaluate(model, test_d)
    out = _prepare_out(args, cfg)
    _write(os.path.join(out, "metrics.txt"), metrics.render())
    print(metrics.render(), end="")
    return 0


def cmd_grid(args) -> int:
    cfg = _load_config(args)
    train_d, test_d, space = cfg.load_data()
    test_d = _need_test(test_d)
    n1s, n2s, seeds = cfg.grid_axes()
    spec = ev.GridSpec(n1s, n2s, cfg.train_config(), seeds)
    report = ev.grid_search(
        train_d, test_d, cfg.architecture(space.n_features), cfg.head(), spec, cfg.attack_config()
    )
    out = _prepare_out(args, cfg)
    for metric in ("mr", "fnr", "fpr"):
        _write(os.path.join(out, f"grid_{metric}.csv"), report.heatmap_csv(metric))
    _write(os.path.join(out, "grid_cells.csv"), report.cells_csv())
    failures = sum(1 for c in report.cells if c.error is not None)
    print(f"wrote grid CSVs to {out} ({len(report.cells)} runs, {failures} failed)")
    return 0


def cmd_certify(args) -> int:
    cfg = _load_config(args)
    _, test_d, space = cfg.load_data()
    test_d = _need_test(test_d)
    model = _load_model(args.model, space)
    scope = args.scope
    if scope is None:
        configured = cfg.constraint_config().hard_scope
        scope = configured if configured != "none" else "all_weights"
    rng = np.random.default_rng(cfg.certify_seed())
    report = ev.certify_monotone(
        model, space, test_d.samples, cfg.certify_trials(), rng, scope=scope
    )
    out = _prepare_out(args, cfg)
    _write(os.path.join(out, "certificate.txt"), report.render())
    print(report.render(), end="")
    return 0


def cmd_transfer(args) -> int:
    cfg = _load_config(args)
    _, test_d, space = cfg.load_data()
    test_d = _need_test(test_d)
    source = _load_model(args.source, space)
    target = _load_model(args.target, space)
    malware = test_d.by_label(MALWARE)
    report = atk.transfer_report(source, target, malware, space, cfg.attack_config())
    out = _prepare_out(args, cfg)
    _write(
        os.path.join(out, "transfer.txt"),
        f"transfer_rate {report.rate:.6f}\n"
        f"crafted {report.n_crafted}\ntransferred {report.n_transferred}\n",
    )
    flag = " (no successful source crafts)" if report.empty_denominator else ""
    print(f"transfer rate {report.rate:.6f} ({report.n_transferred}/{report.n_crafted}){flag}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="monomal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, handler, help_text, model_flags=()):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seeds")
        for flag in model_flags:
            p.add_argument(flag, required=True, help=f"{flag.lstrip('-')} model file")
        p.set_defaults(handler=handler)
        return p

    add("gen-data", cmd_gen_data, "generate synthetic dataset files")
    add("train", cmd_train, "train one model per the config")
    add("distill", cmd_distill, "run two-stage distillation")
    add("attack", cmd_attack, "attack a trained model over the test split", ("--model",))
    add("eval", cmd_eval, "classification metrics for a model", ("--model",))
    add("grid", cmd_grid, "n1/n2 penalty grid search with heatmap CSVs")
    p_cert = add("certify", cmd_certify, "monotonicity certificate for a model", ("--model",))
    p_cert.add_argument(
        "--scope",
        choices=("all_weights", "manifest_monotone"),
        default=None,
        help="certificate scope (defaults to the config's hard_scope)",
    )
    add("transfer", cmd_transfer, "transfer rate from source crafts to a target model",
        ("--source", "--target"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, FormatError, ParameterError, SplitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
