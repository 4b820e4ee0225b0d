"""Command-line entry point: ``attn-tgcn {generate,train,eval,gradcheck,predict}``.

Settings come from an optional INI file with ``[model]``, ``[train]`` and
``[synth]`` sections; command-line flags override the file.  Errors print a
single ``<kind>: <message>`` line on stderr and exit with 1 (usage),
2 (validation) or 3 (numeric).
"""

from __future__ import annotations

import argparse
import configparser
import io
import json
import logging
import sys
import time
import typing
from dataclasses import fields

from .data import (
    SynthConfig,
    generate_synthetic,
    label_counts,
    load_model,
    read_dataset,
    save_model,
    write_dataset,
)
from .exceptions import AttnTGCNError, NumericError, ValidationError
from .metrics import evaluate, hard_decision
from .model import ModelConfig, forward
from .training import TrainConfig, grad_check_model, train

logger = logging.getLogger("attn_tgcn")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3

SECTIONS = {"model": ModelConfig, "train": TrainConfig, "synth": SynthConfig}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- config handling ---------------------------------------------------------


def _coerce(section: str, key: str, raw: str, hint):
    text = raw.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if type(None) in args:
        if text.lower() in ("", "none"):
            return None
        hint = next(a for a in args if a is not type(None))
        origin, args = typing.get_origin(hint), typing.get_args(hint)
    try:
        if hint is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if origin is tuple:
            return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ValidationError(f"[{section}] {key}: cannot parse {raw!r} as {getattr(hint, '__name__', hint)}") from None
    raise ValidationError(f"[{section}] {key}: unsupported type {hint}")


def _hints(cls):
    return typing.get_type_hints(cls)


def read_config_file(path: str | None) -> dict[str, dict]:
    """Parse an INI file into typed per-section dicts; unknown keys are errors."""
    out = {name: {} for name in SECTIONS}
    if path is None:
        return out
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ValidationError(f"config file {path}: {exc}".replace("\n", " ")) from None
    for section in parser.sections():
        if section not in SECTIONS:
            raise ValidationError(f"config file {path}: unknown section [{section}]")
        hints = _hints(SECTIONS[section])
        for key, raw in parser.items(section):
            if key not in hints:
                raise ValidationError(f"config file {path}: unknown key {key!r} in [{section}]")
            out[section][key] = _coerce(section, key, raw, hints[key])
    return out


def merge(file_values: dict[str, dict], overrides: dict[str, dict]) -> dict[str, dict]:
    merged = {s: dict(file_values.get(s, {})) for s in SECTIONS}
    for section, values in overrides.items():
        merged[section].update({k: v for k, v in values.items() if v is not None})
    return merged


def format_config(values: dict[str, dict]) -> str:
    """Render every field of every section, defaults filled in, as INI."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, cls in SECTIONS.items():
        parser.add_section(section)
        given = values.get(section, {})
        for fl in fields(cls):
            value = given.get(fl.name, fl.default)
            if isinstance(value, tuple):
                text = ",".join(repr(float(x)) for x in value)
            elif value is None:
                text = "none"
            elif isinstance(value, bool):
                text = "true" if value else "false"
            else:
                text = repr(value)
            parser.set(section, fl.name, text)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


# --- flag definitions --------------------------------------------------------


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _nonneg_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {value}")
    return value


def _positive_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


# (flag, section, key, argparse kwargs)
MODEL_FLAGS = [
    ("--hidden", "model", "h", dict(type=_positive_int)),
    ("--graph-dim", "model", "g", dict(type=_positive_int)),
    ("--attn-dim", "model", "d_a", dict(type=_positive_int)),
    ("--gc-layers", "model", "gc_layers", dict(type=int, choices=(1, 2))),
    ("--root-weight", "model", "gc_root_weight", dict(action=argparse.BooleanOptionalAction)),
    ("--isolate-padded", "model", "isolate_padded", dict(action=argparse.BooleanOptionalAction)),
    ("--attention-tanh", "model", "attention_tanh", dict(action=argparse.BooleanOptionalAction)),
]
LOSS_FLAGS = [
    ("--death-weight", "train", "death_class_weight", dict(type=float)),
    ("--include-padded", "train", "include_padded_in_loss", dict(action=argparse.BooleanOptionalAction)),
]
TRAIN_FLAGS = [
    ("--epochs", "train", "epochs", dict(type=_nonneg_int)),
    ("--lr", "train", "learning_rate", dict(type=_positive_float)),
    ("--batch", "train", "batch", dict(type=_positive_int)),
    ("--seed", "train", "seed", dict(type=int)),
    ("--shuffle", "train", "shuffle", dict(action=argparse.BooleanOptionalAction)),
] + LOSS_FLAGS
SYNTH_FLAGS = [
    ("--videos", "synth", "videos", dict(type=_nonneg_int)),
    ("--frames", "synth", "t", dict(type=_positive_int)),
    ("--max-cells", "synth", "max_cells", dict(type=_positive_int)),
    ("--features", "synth", "f", dict(type=_positive_int)),
    ("--seed", "synth", "seed", dict(type=int)),
    ("--death-onset-prob", "synth", "death_onset_prob", dict(type=float)),
    ("--threshold", "synth", "threshold", dict(type=float)),
    ("--feature-sep", "synth", "feature_sep", dict(type=float)),
    ("--k-consecutive", "synth", "k_consecutive", dict(type=_positive_int)),
    ("--cluster-seed", "synth", "cluster_seed", dict(type=int)),
]


def _add_flags(parser, specs):
    for flag, section, key, kwargs in specs:
        parser.add_argument(flag, dest=f"{section}__{key}", default=None, **kwargs)


def _overrides(args) -> dict[str, dict]:
    out = {s: {} for s in SECTIONS}
    for name, value in vars(args).items():
        if "__" in name and value is not None:
            section, key = name.split("__", 1)
            out[section][key] = value
    return out


def _run_config(args) -> dict[str, dict]:
    return merge(read_config_file(args.config), _overrides(args))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="attn-tgcn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def common(p):
        p.add_argument("--config", help="INI file with [model], [train], [synth] sections")
        p.add_argument("--print-config", action="store_true", help="print the merged settings and exit")

    p = sub.add_parser("generate", help="write a synthetic dataset")
    common(p)
    p.add_argument("--out", help="dataset file to write")
    p.add_argument("--workers", type=_positive_int, default=1)
    _add_flags(p, SYNTH_FLAGS)

    p = sub.add_parser("train", help="train a model on a dataset file")
    common(p)
    p.add_argument("--data", help="training dataset")
    p.add_argument("--out", help="model archive to write")
    p.add_argument("--validation", help="dataset evaluated after every epoch")
    p.add_argument("--log", help="per-epoch log file (default: stderr)")
    _add_flags(p, TRAIN_FLAGS + MODEL_FLAGS)

    p = sub.add_parser("eval", help="score a model on a dataset")
    common(p)
    p.add_argument("--model", help="model archive")
    p.add_argument("--data", help="dataset to score")
    p.add_argument("--out", help="metrics report to write (JSON)")
    p.add_argument("--workers", type=_positive_int, default=1)
    _add_flags(p, LOSS_FLAGS)

    p = sub.add_parser("gradcheck", help="compare reverse-mode and finite-difference gradients")
    common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=_positive_float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--frames", dest="model__t", type=_positive_int, default=None)
    p.add_argument("--nodes", dest="model__n", type=_positive_int, default=None)
    p.add_argument("--features", dest="model__f", type=_positive_int, default=None)
    _add_flags(p, MODEL_FLAGS)

    p = sub.add_parser("predict", help="write per-node probabilities and attention weights")
    common(p)
    p.add_argument("--model", help="model archive")
    p.add_argument("--data", help="dataset to predict")
    p.add_argument("--out", help="predictions file (JSON Lines)")
    return parser


def _require(args, *names):
    missing = [f"--{n}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")


# --- commands ----------------------------------------------------------------


def cmd_generate(args, cfg) -> int:
    synth = SynthConfig.from_dict(cfg["synth"])
    _require(args, "out")
    dataset = generate_synthetic(synth, workers=args.workers)
    write_dataset(args.out, dataset)
    counts = label_counts(dataset)
    print(f"videos\t{len(dataset)}")
    for v, (alive, dead) in enumerate(counts):
        print(f"node{v + 1}\talive\t{alive}\tdead\t{dead}")
    return EXIT_OK


def _model_config_for(dataset, given: dict) -> ModelConfig:
    values = dict(given)
    if dataset:
        dims = {"t": dataset[0].t, "n": dataset[0].n, "f": dataset[0].f}
        for key, actual in dims.items():
            if key in values and values[key] != actual:
                raise ValidationError(f"model config {key}={values[key]} but the dataset has {key}={actual}")
            values[key] = actual
    return ModelConfig.from_dict(values)


def cmd_train(args, cfg) -> int:
    _require(args, "data", "out")
    train_cfg = TrainConfig.from_dict(cfg["train"])
    dataset = read_dataset(args.data)
    if not dataset:
        raise ValidationError(f"{args.data}: training dataset is empty")
    model_cfg = _model_config_for(dataset, cfg["model"])
    validation = read_dataset(args.validation) if args.validation else None

    log_fh = open(args.log, "w", encoding="utf-8") if args.log else sys.stderr
    try:
        def log(line):
            log_fh.write(line + "\n")
            log_fh.flush()

        def ev(params, seqs):
            return evaluate(params, seqs, train_cfg).to_dict()

        started = time.perf_counter()
        params, _ = train(dataset, model_cfg, train_cfg, validation=validation, evaluate=ev, log=log)
        logger.info("trained %d epochs in %.1fs", train_cfg.epochs, time.perf_counter() - started)
    finally:
        if args.log:
            log_fh.close()
    save_model(args.out, params)
    return EXIT_OK


def _load_compatible(args):
    _require(args, "model", "data")
    archive = load_model(args.model)
    dataset = read_dataset(args.data)
    cfg = archive.model_config
    for seq in dataset:
        if (seq.n, seq.f) != (cfg.n, cfg.f):
            raise ValidationError(
                f"sequence {seq.id!r} has (n, f)=({seq.n}, {seq.f}); model expects ({cfg.n}, {cfg.f})"
            )
    return archive, dataset


def cmd_eval(args, cfg) -> int:
    archive, dataset = _load_compatible(args)
    train_cfg = TrainConfig.from_dict(cfg["train"])
    report = evaluate(archive.params, dataset, train_cfg, workers=args.workers)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.dumps())
    print("average_accuracy\tmean_loss\taverage_precision\taverage_recall")
    print(report.summary_row())
    return EXIT_OK


def cmd_gradcheck(args, cfg) -> int:
    small = dict(t=4, n=3, f=5, g=6, h=6, d_a=4)
    small.update(cfg["model"])
    model_cfg = ModelConfig.from_dict(small)
    report = grad_check_model(model_cfg, seed=args.seed, eps=args.eps, tol=args.tol)
    idx = ",".join(str(i) for i in report.worst_index)
    print(f"max_rel_err\t{report.max_rel_err!r}\tworst\t{report.worst_parameter}[{idx}]\tpass\t{str(report.passed).lower()}")
    if not report.passed:
        print(f"numeric-error: max relative error {report.max_rel_err!r} exceeds tol {args.tol!r}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_predict(args, cfg) -> int:
    _require(args, "out")
    archive, dataset = _load_compatible(args)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for seq in sorted(dataset, key=lambda s: s.id):
            pred = forward(seq, archive.params)
            nodes = [
                {
                    "node": v,
                    "p_dead": float(pred.probs[v, 1]),
                    "decision": hard_decision(pred.probs[v]),
                    "attention": pred.attention_weights[v].tolist(),
                }
                for v in range(seq.n)
            ]
            fh.write(json.dumps({"id": seq.id, "nodes": nodes}, separators=(",", ":")) + "\n")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "predict": cmd_predict,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage-error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = _run_config(args)
        # construct every config once so bad values fail before any work
        ModelConfig.from_dict(cfg["model"])
        TrainConfig.from_dict(cfg["train"])
        SynthConfig.from_dict(cfg["synth"])
        if args.print_config:
            sys.stdout.write(format_config(cfg))
            return EXIT_OK
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage-error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"{exc.kind}: {exc}".replace("\n", " "), file=sys.stderr)
        return EXIT_NUMERIC
    except (AttnTGCNError, TypeError) as exc:
        kind = getattr(exc, "kind", "validation-error")
        print(f"{kind}: {exc}".replace("\n", " "), file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"io-error: {exc}".replace("\n", " "), file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
