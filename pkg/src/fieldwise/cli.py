"""Command-line entry point: ``fieldwise <command> [--config FILE] [flags]``.

Settings come from a flat ``key=value`` config file; flags override it. Every
run that writes an output directory also writes ``resolved.cfg`` with the
effective settings.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .metrics import evaluate
from .model import FieldWiseModel, ModelFormatError, RankPolicy, init_model
from .schema import (
    EncodingError,
    Vocabulary,
    build_vocabulary,
    encode_rows,
    make_specs,
    read_delimited,
    split_indices,
    write_delimited,
)
from .synth import PlantedSpec, generate_planted
from .training import TrainConfig, train

log = logging.getLogger("fieldwise")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

VOCAB_FILE = "vocab.tsv"
MODEL_FILE = "model.fwm"
HISTORY_FILE = "history.tsv"
RESOLVED_FILE = "resolved.cfg"

# key -> (type, default); flag spelling is the key with "_" -> "-"
SETTINGS = {
    "data": (str, None),
    "vocab": (str, None),
    "out_dir": (str, None),
    "model_in": (str, None),
    "model_out": (str, None),
    "delimiter": (str, "tab"),
    "header": (bool, False),
    "fields": (str, None),
    "numeric_fields": (str, ""),
    "min_count": (str, "1"),
    "split": (str, "0.8,0.1,0.1"),
    "seed": (int, 0),
    "lr": (float, 0.1),
    "lambda": (float, 0.0),
    "weight_decay": (float, 0.0),
    "batch_size": (int, 2048),
    "reg_period": (int, 1000),
    "scale_reg_by_period": (bool, False),
    "rank": (int, None),
    "rank_log_base": (float, None),
    "init_scale": (float, 0.1),
    "max_epochs": (int, 20),
    "patience": (int, 1),
    "n": (int, None),
    "delta": (float, 0.05),
    "loss_cap": (float, None),
    "ranks": (str, "1,2,4,8"),
    "target": (float, None),
    "cards": (str, None),
    "planted_rank": (int, 3),
    "weight_scale": (float, 0.5),
    "noise": (float, 0.0),
    "out": (str, None),
}

COMMAND_KEYS = {
    "vocab": ["data", "out_dir", "delimiter", "header", "fields", "numeric_fields", "min_count", "split", "seed"],
    "train": ["data", "vocab", "out_dir", "model_out", "delimiter", "header", "fields", "numeric_fields",
              "min_count", "split", "seed", "lr", "lambda", "weight_decay", "batch_size", "reg_period",
              "scale_reg_by_period", "rank", "rank_log_base", "init_scale", "max_epochs", "patience"],
    "eval": ["model_in", "data", "vocab", "delimiter", "header", "out"],
    "analyze": ["model_in", "data", "vocab", "delimiter", "header", "n", "delta", "loss_cap", "out_dir"],
    "trend": ["data", "vocab", "out_dir", "delimiter", "header", "fields", "numeric_fields", "min_count",
              "seed", "lr", "lambda", "weight_decay", "batch_size", "reg_period", "scale_reg_by_period",
              "init_scale", "max_epochs", "ranks", "target"],
    "synth": ["out_dir", "cards", "planted_rank", "weight_scale", "noise", "seed", "n"],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def read_config(path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in SETTINGS:
                raise UsageError(f"{path}:{lineno}: unknown setting {key!r}")
            out[key] = value
    return out


def resolve(command: str, args: argparse.Namespace) -> dict:
    file_values = read_config(args.config) if args.config else {}
    settings = {}
    for key in COMMAND_KEYS[command]:
        kind, default = SETTINGS[key]
        value = getattr(args, key, None)
        if value is None and key in file_values:
            value = file_values[key]
        if value is None:
            settings[key] = default
            continue
        try:
            settings[key] = _parse_bool(value) if kind is bool else kind(value)
        except ValueError:
            raise UsageError(f"bad value for {key}: {value!r}") from None
    return settings


def write_resolved(settings: dict, out_dir: Path) -> None:
    lines = [f"{k}={'' if v is None else v}" for k, v in sorted(settings.items())]
    (out_dir / RESOLVED_FILE).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fieldwise", description="Field-wise learning for multi-field categorical data.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for command, keys in COMMAND_KEYS.items():
        p = sub.add_parser(command)
        p.add_argument("--config")
        for key in keys:
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, default=None)
    return parser


def _need(settings: dict, *keys: str) -> None:
    missing = [k for k in keys if settings.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _delimiter(settings: dict) -> str:
    d = settings["delimiter"]
    return {"tab": "\t", "\\t": "\t", "comma": ","}.get(d, d)


def _rank_policy(settings: dict) -> RankPolicy:
    if settings.get("rank") is not None and settings.get("rank_log_base") is not None:
        raise UsageError("give only one of --rank and --rank-log-base")
    try:
        if settings.get("rank_log_base") is not None:
            return RankPolicy.log_base(settings["rank_log_base"])
        return RankPolicy.constant(4 if settings.get("rank") is None else settings["rank"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _train_config(settings: dict) -> TrainConfig:
    try:
        return _make_train_config(settings)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _make_train_config(settings: dict) -> TrainConfig:
    return TrainConfig(
        learning_rate=settings["lr"],
        reg_lambda=settings["lambda"],
        weight_decay=settings["weight_decay"],
        batch_size=settings["batch_size"],
        reg_period=settings["reg_period"],
        scale_reg_by_period=settings["scale_reg_by_period"],
        max_epochs=settings["max_epochs"],
        patience=settings.get("patience", 1),
        seed=settings["seed"],
    )


def _load_rows(settings: dict):
    rows, header_names = read_delimited(settings["data"], _delimiter(settings), settings["header"])
    m = len(rows[0]) - 1
    if settings.get("fields"):
        names = [s.strip() for s in settings["fields"].split(",")]
    elif header_names is not None:
        names = header_names
    else:
        names = [f"f{i}" for i in range(m)]
    if len(names) != m:
        raise EncodingError(f"{len(names)} field names for {m} data columns")
    numeric = [s.strip() for s in (settings.get("numeric_fields") or "").split(",") if s.strip()]
    return rows, make_specs(names, numeric)


def _min_count(settings: dict, m: int):
    parts = [int(p) for p in str(settings["min_count"]).split(",")]
    return parts[0] if len(parts) == 1 else parts


def _split_ratios(settings: dict):
    try:
        return tuple(float(p) for p in settings["split"].split(","))
    except ValueError:
        raise UsageError(f"bad --split {settings['split']!r}") from None


def _out_dir(settings: dict) -> Path:
    _need(settings, "out_dir")
    out = Path(settings["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _split_rows(settings: dict, rows):
    ratios = _split_ratios(settings)
    try:
        parts = split_indices(len(rows), ratios, settings["seed"])
    except ValueError as exc:
        raise EncodingError(str(exc)) from None
    return [[rows[j] for j in np.sort(p)] for p in parts]


def _model_vocab(settings: dict) -> tuple[FieldWiseModel, Vocabulary]:
    _need(settings, "model_in")
    path = Path(settings["model_in"])
    model, ref = FieldWiseModel.load(path)
    vocab_path = settings.get("vocab") or (str(path.parent / ref) if ref else None)
    if vocab_path is None:
        return model, None
    vocab = Vocabulary.load(vocab_path)
    if vocab.dims != model.dims:
        raise ModelFormatError("vocabulary cardinalities do not match the model")
    model.names = vocab.names
    return model, vocab


def cmd_vocab(settings: dict) -> int:
    _need(settings, "data")
    out = _out_dir(settings)
    rows, specs = _load_rows(settings)
    train_rows, _, _ = _split_rows(settings, rows)
    vocab = build_vocabulary(train_rows, specs, _min_count(settings, len(specs)))
    vocab.save(out / VOCAB_FILE)
    write_resolved(settings, out)
    print(f"m={vocab.m} d={vocab.d} dims={','.join(map(str, vocab.dims))}")
    return EXIT_OK


def cmd_train(settings: dict) -> int:
    _need(settings, "data")
    out = _out_dir(settings)
    rows, specs = _load_rows(settings)
    train_rows, val_rows, test_rows = _split_rows(settings, rows)
    if settings.get("vocab"):
        vocab = Vocabulary.load(settings["vocab"])
    else:
        vocab = build_vocabulary(train_rows, specs, _min_count(settings, len(specs)))
    vocab.save(out / VOCAB_FILE)
    train_data, val_data = encode_rows(train_rows, vocab), encode_rows(val_rows, vocab)
    model = init_model(vocab, _rank_policy(settings), settings["init_scale"], settings["seed"])
    cfg = _train_config(settings)
    best, history = train(model, train_data, val_data, cfg,
                          callback=lambda epoch, _: log.info("epoch %d done", epoch))
    model_path = Path(settings["model_out"]) if settings.get("model_out") else out / MODEL_FILE
    best.save(model_path, vocab_ref=VOCAB_FILE if model_path.parent == out else str((out / VOCAB_FILE).resolve()))
    history.write(out / HISTORY_FILE)
    write_resolved(settings, out)
    report = evaluate(best, encode_rows(test_rows, vocab))
    (out / "test_eval.txt").write_text(report.format() + "\n", encoding="utf-8")
    print(f"best_epoch={history.best_epoch} stop_epoch={history.stop_epoch} params={best.n_params}")
    print("test " + report.format())
    return EXIT_OK


def cmd_eval(settings: dict) -> int:
    _need(settings, "model_in", "data")
    model, vocab = _model_vocab(settings)
    if vocab is None:
        raise UsageError("model has no vocabulary reference; pass --vocab")
    rows, _ = read_delimited(settings["data"], _delimiter(settings), settings["header"])
    report = evaluate(model, encode_rows(rows, vocab))
    print(report.format())
    if settings.get("out"):
        Path(settings["out"]).write_text("".join(line + "\n" for line in report.as_lines()), encoding="utf-8")
    return EXIT_OK


def cmd_analyze(settings: dict) -> int:
    model, vocab = _model_vocab(settings)
    out = _out_dir(settings)
    data = None
    if settings.get("data"):
        if vocab is None:
            raise UsageError("analyzing against data needs a vocabulary")
        rows, _ = read_delimited(settings["data"], _delimiter(settings), settings["header"])
        data = encode_rows(rows, vocab)
    if data is None and settings.get("n") is None:
        raise UsageError("give --n or --data")
    report = analysis.bound_report(model, settings.get("n"), data, settings["delta"], settings.get("loss_cap"))
    report.write(out / "bound.tsv")
    importance = analysis.field_importance(model)
    importance.write(out / "importance.tsv")
    write_resolved(settings, out)
    print(f"rademacher_bound={report.rademacher_bound!r} n={report.n} m={report.m} params={report.n_params}")
    if report.risk_bound is not None:
        print(f"risk_bound={report.risk_bound!r} empirical_risk={report.empirical_risk!r}")
    return EXIT_OK


def cmd_trend(settings: dict) -> int:
    _need(settings, "data", "target")
    out = _out_dir(settings)
    rows, specs = _load_rows(settings)
    vocab = Vocabulary.load(settings["vocab"]) if settings.get("vocab") else build_vocabulary(
        rows, specs, _min_count(settings, len(specs)))
    data = encode_rows(rows, vocab)
    try:
        ranks = [int(r) for r in settings["ranks"].split(",")]
    except ValueError:
        raise UsageError(f"bad --ranks {settings['ranks']!r}") from None
    cfg = _train_config({**settings, "patience": 1})
    table = analysis.bound_trend_experiment(data, cfg, ranks, settings["target"], settings["init_scale"],
                                            settings["seed"])
    table.write(out / "trend.tsv")
    write_resolved(settings, out)
    print("\n".join(table.lines()))
    return EXIT_OK


def cmd_synth(settings: dict) -> int:
    _need(settings, "cards", "n")
    out = _out_dir(settings)
    try:
        cards = tuple(int(c) for c in settings["cards"].split(","))
        spec = PlantedSpec(cards, settings["planted_rank"], settings["weight_scale"], settings["noise"],
                           settings["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data, planted, bayes = generate_planted(spec, settings["n"])
    write_delimited(out / "data.tsv", data)
    data.vocab.save(out / VOCAB_FILE)
    planted.save(out / "planted.fwm", vocab_ref=VOCAB_FILE)
    (out / "planted.txt").write_text(f"bayes_logloss\t{bayes!r}\nn\t{data.n}\n", encoding="utf-8")
    write_resolved(settings, out)
    print(f"n={data.n} bayes_logloss={bayes!r}")
    return EXIT_OK


COMMANDS = {
    "vocab": cmd_vocab,
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "trend": cmd_trend,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        settings = resolve(args.command, args)
        return COMMANDS[args.command](settings)
    except UsageError as exc:
        print(f"fieldwise: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EncodingError, ModelFormatError, OSError, ValueError) as exc:
        print(f"fieldwise: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        last = getattr(exc, "last_good_epoch", None)
        suffix = f" (last good epoch {last})" if last is not None else ""
        print(f"fieldwise: numerical failure: {exc}{suffix}", file=sys.stderr)
        return EXIT_NUMERIC
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
