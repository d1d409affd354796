"""Command-line interface: train, evaluate, forecast, gradcheck, inspect-periods.

Configuration is a flat key=value file (one pair per line, ``#`` comments)
merged with repeated ``--set key=value`` overrides; overrides win. Unknown
keys are rejected. Exit codes: 0 ok, 2 configuration error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import data_io, evaluation, gradcheck, training
from .backbone import AttentionConfig
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    IngestionError,
    MetricUndefinedError,
    ParameterError,
    SizingError,
)
from .model import ElasTSTConfig, ModelState, forward_batch, load_model
from .trope import PeriodSpec


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(","))


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(","))


# key -> (parser, default); None default means "required where used"
CONFIG_KEYS = {
    "data.path": (str, None),
    "data.split": (_parse_float_list, (0.7, 0.1, 0.2)),
    "model.patch_sizes": (_parse_int_list, (8, 16, 32)),
    "model.d_model": (int, 64),
    "model.n_heads": (int, 4),
    "model.head_dim": (int, 16),
    "model.d_ff": (int, 128),
    "model.n_layers": (int, 2),
    "model.lookback": (int, 96),
    "model.instance_norm": (_parse_bool, True),
    "trope.p_min": (float, 1.0),
    "trope.p_max": (float, 1000.0),
    "train.t_max": (int, 720),
    "train.reweight_mode": (str, "log-approx"),
    "train.lr": (float, 0.001),
    "train.epochs": (int, 50),
    "train.batches_per_epoch": (int, 100),
    "train.batch_size": (int, 32),
    "train.seed": (int, 0),
    "out.checkpoint": (str, "model.ckpt"),
    "out.log": (str, "training_log.csv"),
}


def _config_help() -> str:
    lines = ["configuration keys (file or --set key=value, overrides win):"]
    for key, (_, default) in CONFIG_KEYS.items():
        shown = "required" if default is None else default
        if isinstance(shown, tuple):
            shown = ",".join(str(v) for v in shown)
        lines.append(f"  {key:<28} default: {shown}")
    return "\n".join(lines)


def _read_config_file(path: str) -> list[tuple[str, str]]:
    pairs = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{i}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def build_config(config_file: str | None, overrides: list[str]) -> dict:
    pairs = _read_config_file(config_file) if config_file else []
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs.append((key.strip(), value.strip()))

    config = {key: default for key, (_, default) in CONFIG_KEYS.items()}
    for key, value in pairs:
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown configuration key {key!r}")
        parser, _ = CONFIG_KEYS[key]
        try:
            config[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
    return config


def _require(config: dict, key: str):
    if config[key] is None:
        raise ConfigError(f"missing required configuration key {key!r}")
    return config[key]


def model_config(config: dict) -> ElasTSTConfig:
    return ElasTSTConfig(
        patch_sizes=config["model.patch_sizes"],
        period_spec=PeriodSpec(
            p_min=config["trope.p_min"],
            p_max=config["trope.p_max"],
            head_dim=config["model.head_dim"],
        ),
        attention=AttentionConfig(
            d_model=config["model.d_model"],
            n_heads=config["model.n_heads"],
            head_dim=config["model.head_dim"],
            d_ff=config["model.d_ff"],
            n_layers=config["model.n_layers"],
        ),
        lookback=config["model.lookback"],
        instance_norm=config["model.instance_norm"],
    )


def train_config(config: dict) -> training.TrainConfig:
    return training.TrainConfig(
        t_max=config["train.t_max"],
        reweight_mode=config["train.reweight_mode"],
        learning_rate=config["train.lr"],
        batches_per_epoch=config["train.batches_per_epoch"],
        batch_size=config["train.batch_size"],
        epochs=config["train.epochs"],
        seed=config["train.seed"],
        checkpoint_path=config["out.checkpoint"],
        log_path=config["out.log"],
    )


def _load_splits(config: dict):
    ds = data_io.load_csv(_require(config, "data.path"))
    split = config["data.split"]
    if len(split) != 3:
        raise ConfigError(f"data.split needs three fractions, got {split}")
    spec = data_io.SplitSpec(*split)
    min_len = config["model.lookback"] + config["train.t_max"]
    train_v, val_v, test_v, scaler = data_io.split_and_scale(ds, spec, min_len=min_len)
    return ds, train_v, val_v, test_v, scaler


def cmd_train(args) -> int:
    config = build_config(args.config, args.set)
    ds, train_v, val_v, _, scaler = _load_splits(config)
    state = ModelState.init(model_config(config), seed=config["train.seed"])
    data = training.TrainData(train_values=train_v, val_values=val_v, scaler=scaler, name=ds.name)
    best = training.train(state, data, train_config(config))
    if best.epoch == 0:  # epochs=0: nothing was checkpointed during training
        training.save_training_checkpoint(config["out.checkpoint"], best)
    print(f"best validation NMAE: {best.best_val_nmae!r} (epoch {best.epoch})")
    print(f"checkpoint: {config['out.checkpoint']}")
    print(f"training log: {config['out.log']}")
    return 0


def cmd_evaluate(args) -> int:
    config = build_config(args.config, args.set)
    checkpoint_path = args.checkpoint or config["out.checkpoint"]
    state, _, _ = load_model(checkpoint_path)
    ds, _, _, test_v, scaler = _load_splits(config)
    horizons = list(_parse_int_list(args.horizons))
    if any(h < 1 for h in horizons):
        raise ConfigError(f"horizons must be >= 1, got {args.horizons!r}")
    report = evaluation.varied_horizon_eval(
        state,
        test_v,
        state.config.lookback,
        horizons,
        scaler,
        stride=args.stride,
        dataset=ds.name,
        checkpoint_id=str(checkpoint_path),
    )
    if args.out:
        Path(args.out).write_text(report.to_csv(), encoding="utf-8")
        print(report.format_table())
    else:
        sys.stdout.write(report.to_csv())
    return 0


def _resolve_at(ds: data_io.Dataset, at: str | None, lookback: int) -> int:
    if at is None:
        idx = ds.n_steps - 1
    else:
        try:
            idx = int(at)
            if idx < 0:
                idx += ds.n_steps
        except ValueError:
            try:
                idx = ds.timestamps.index(at)
            except ValueError:
                raise IngestionError(f"--at {at!r} matches no timestamp in the dataset") from None
    if idx >= ds.n_steps:
        raise SizingError(f"--at index {idx} is beyond the last row {ds.n_steps - 1}")
    if idx < lookback - 1:
        raise SizingError(
            f"--at index {idx} leaves only {idx + 1} context steps, lookback needs {lookback}"
        )
    return idx


def _resolve_variate(ds: data_io.Dataset, variate: str) -> int:
    try:
        k = int(variate)
    except ValueError:
        try:
            return ds.columns.index(variate)
        except ValueError:
            raise IngestionError(f"--variate {variate!r} matches no column") from None
    if not 0 <= k < ds.n_variates:
        raise SizingError(f"--variate index {k} out of range for {ds.n_variates} variates")
    return k


def cmd_forecast(args) -> int:
    config = build_config(args.config, args.set)
    if args.horizon < 1:
        raise ConfigError(f"--horizon must be >= 1, got {args.horizon}")
    checkpoint_path = args.checkpoint or config["out.checkpoint"]
    state, _, _ = load_model(checkpoint_path)
    ds, *_, scaler = _load_splits(config)
    lookback = state.config.lookback
    idx = _resolve_at(ds, args.at, lookback)
    k = _resolve_variate(ds, args.variate)
    context = scaler.transform_variate(ds.values[idx - lookback + 1 : idx + 1, k], k)
    forecast = forward_batch(state, context[None, :], args.horizon)
    values = scaler.inverse_variate(forecast.values[0], k)
    lines = ["step,value"] + [f"{i + 1},{float(v)!r}" for i, v in enumerate(values)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    config = build_config(args.config, args.set)
    report = gradcheck.tiny_report(seed=config["train.seed"])
    worst = 0.0
    for name, err in report.items():
        print(f"{name:<28} {err:.3e}")
        worst = max(worst, err)
    print(f"max relative error: {worst:.3e}")
    return 0 if worst < 1e-4 else 4


def cmd_inspect_periods(args) -> int:
    state, _, _ = load_model(args.checkpoint)
    lines = ["j,period"] + [f"{j + 1},{float(p)!r}" for j, p in enumerate(state.periods.periods())]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="override one configuration key"
    )
    parser.add_argument(
        "--threads", type=int, default=1,
        help="upper bound on internal parallelism (default 1; execution is sequential)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elastst",
        description="Train-once, forecast-any-horizon time-series transformer.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=_config_help(),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint + log",
                       formatter_class=argparse.RawDescriptionHelpFormatter, epilog=_config_help())
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="varied-horizon evaluation on the test split",
                       formatter_class=argparse.RawDescriptionHelpFormatter, epilog=_config_help())
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint path (default: out.checkpoint)")
    p.add_argument("--horizons", default="96,192,336,720,1024", help="comma-separated horizons")
    p.add_argument("--stride", type=int, default=None, help="window stride (default: horizon)")
    p.add_argument("--out", help="write the CSV report here instead of stdout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("forecast", help="single-window forecast as CSV (step,value)",
                       formatter_class=argparse.RawDescriptionHelpFormatter, epilog=_config_help())
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint path (default: out.checkpoint)")
    p.add_argument("--horizon", type=int, required=True, help="forecast steps (>= 1)")
    p.add_argument("--at", help="timestamp or row index of the last context point (default: last row)")
    p.add_argument("--variate", default="0", help="variate column name or index (default: 0)")
    p.add_argument("--out", help="write the CSV here instead of stdout")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("gradcheck", help="finite-difference check on a tiny model",
                       formatter_class=argparse.RawDescriptionHelpFormatter, epilog=_config_help())
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect-periods", help="dump learned rotary periods as CSV (j,period)")
    p.add_argument("--checkpoint", required=True, help="checkpoint path")
    p.add_argument("--out", help="write the CSV here instead of stdout")
    p.set_defaults(func=cmd_inspect_periods)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise ConfigError(f"--threads must be >= 1, got {args.threads}")
        return args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (IngestionError, FormatError, SizingError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (MetricUndefinedError, DimensionError, ContractError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


def entrypoint() -> int:
    return main(sys.argv[1:])
