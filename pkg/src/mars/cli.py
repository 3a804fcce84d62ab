"""Command-line entry point.

Subcommands: gen-data, train-mars, train-uniform, train-plain,
analyze-curvature, verify-theorem, eval.  Every flag mirrors a RunConfig
key; --config loads the same keys from a flat file and explicit flags win.
Each run writes a resolved-config echo next to its outputs so artifacts are
self-describing and reproducible.

Exit codes: 0 success, 1 validation error, 2 runtime failure.  MARS_LOG
(error|warn|info|debug) controls diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from . import data_io
from .augmentation import Augmenter, AugmenterSpec
from .bt_core import RewardParams, TrainConfig, reward_params, zero_params
from .errors import (
    ConfigError,
    DatasetFormatError,
    EmptyDatasetError,
    MarsError,
)
from .fisher_lab import bin_by_margin, make_assumption_dataset, mixture_spec, verify_theorem
from .mars_engine import MarsConfig, run_mars, run_uniform_baseline
from .metrics import evaluate

log = logging.getLogger("mars")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract here is exit 1 with usage.
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


_FLAG_TYPES = {f.name: f.type for f in dataclasses.fields(data_io.RunConfig)}


def _add_config_flags(parser: argparse.ArgumentParser, keys: list[str]) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    for key in keys:
        flag = "--" + key.replace("_", "-")
        kind = _FLAG_TYPES[key]
        if kind == "bool":
            parser.add_argument(flag, choices=["true", "false"], default=None, help=f"RunConfig {key}")
        elif kind == "int":
            parser.add_argument(flag, type=int, default=None, help=f"RunConfig {key}")
        elif kind == "float":
            parser.add_argument(flag, type=float, default=None, help=f"RunConfig {key}")
        else:
            parser.add_argument(flag, default=None, help=f"RunConfig {key}")


_TRAIN_KEYS = [
    "mode", "feat_dim", "epochs", "budget", "tau", "split_policy", "cumulative", "allow_reaugment",
    "seed", "learning_rate", "epochs_inner", "l2", "train_seed", "init_scale",
    "augmenter", "jitter_scale", "noise", "edit_rate", "endpoint", "timeout_ms", "aug_seed",
    "data", "out",
]
_GEN_KEYS = ["dim", "n", "margin_lo", "margin_hi", "seed", "out"]
_CURV_KEYS = ["mode", "feat_dim", "bins", "data", "params", "out"]
_VERIFY_KEYS = ["dim", "gamma_org", "gamma_aug", "alpha_grid", "n_p", "n_q", "seed", "out"]
_EVAL_KEYS = ["mode", "feat_dim", "hist_bin_width", "data", "params", "out"]


def build_parser() -> _Parser:
    parser = _Parser(prog="mars", description="Margin-aware preference augmentation and curvature analysis")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in (
        ("gen-data", _GEN_KEYS),
        ("train-mars", _TRAIN_KEYS),
        ("train-uniform", _TRAIN_KEYS),
        ("train-plain", _TRAIN_KEYS),
        ("analyze-curvature", _CURV_KEYS),
        ("verify-theorem", _VERIFY_KEYS),
        ("eval", _EVAL_KEYS),
    ):
        _add_config_flags(sub.add_parser(name), keys)
    return parser


def _resolve_config(args: argparse.Namespace) -> data_io.RunConfig:
    cfg = data_io.load_run_config(args.config) if getattr(args, "config", None) else data_io.RunConfig()
    for key in _FLAG_TYPES:
        value = getattr(args, key, None)
        if value is None:
            continue
        if _FLAG_TYPES[key] == "bool":
            value = value == "true"
        setattr(cfg, key, value)
    return cfg


def _ensure_out(cfg: data_io.RunConfig) -> str:
    out = cfg.out or "out"
    os.makedirs(out, exist_ok=True)
    return out


def _echo_config(cfg: data_io.RunConfig, out: str) -> None:
    data_io.write_text_atomic(os.path.join(out, "run_config.txt"), data_io.format_run_config(cfg))


def _initial_params(cfg: data_io.RunConfig, dim: int) -> RewardParams:
    if cfg.init_scale == 0.0:
        return zero_params(dim)
    rng = np.random.default_rng(cfg.train_seed & ((1 << 64) - 1))
    return reward_params(cfg.init_scale * rng.standard_normal(dim) / np.sqrt(dim))


def _augmenter_spec(cfg: data_io.RunConfig) -> AugmenterSpec:
    if cfg.augmenter == "feature_jitter":
        return AugmenterSpec(kind="feature_jitter", seed=cfg.aug_seed, jitter_scale=cfg.jitter_scale, noise=cfg.noise)
    if cfg.augmenter == "token_perturb":
        return AugmenterSpec(kind="token_perturb", seed=cfg.aug_seed, edit_rate=cfg.edit_rate)
    if cfg.augmenter == "external_service":
        return AugmenterSpec(
            kind="external_service", seed=cfg.aug_seed, endpoint=cfg.endpoint, timeout_ms=cfg.timeout_ms
        )
    raise ConfigError(f"unknown augmenter {cfg.augmenter!r}")


def _require(cfg: data_io.RunConfig, key: str) -> str:
    value = getattr(cfg, key)
    if not value:
        raise ConfigError(f"--{key.replace('_', '-')} is required for this command")
    return value


def cmd_gen_data(cfg: data_io.RunConfig) -> int:
    out = _ensure_out(cfg)
    rng = np.random.default_rng(cfg.seed & ((1 << 64) - 1))
    direction = rng.standard_normal(cfg.dim)
    theta = reward_params(direction / np.linalg.norm(direction))
    dataset = data_io.generate_synthetic(cfg.dim, cfg.n, (cfg.margin_lo, cfg.margin_hi), theta, cfg.seed)
    data_io.save_dataset(dataset, os.path.join(out, "dataset.jsonl"))
    data_io.save_params(theta, os.path.join(out, "params.json"))
    _echo_config(cfg, out)
    log.info("wrote %d tuples to %s", len(dataset), out)
    return 0


def _cmd_train(cfg: data_io.RunConfig, variant: str) -> int:
    dataset = data_io.load_dataset(_require(cfg, "data"), cfg.mode, cfg.feat_dim)
    budget = 0 if variant == "plain" else (cfg.budget if cfg.budget >= 0 else 2 * len(dataset))
    cfg.budget = budget  # echo the resolved value
    out = _ensure_out(cfg)
    mars_cfg = MarsConfig(
        epochs_T=cfg.epochs,
        budget_B=budget,
        tau=cfg.tau,
        split_policy=cfg.split_policy,
        cumulative=cfg.cumulative,
        seed=cfg.seed,
        allow_reaugment=cfg.allow_reaugment,
    )
    train_cfg = TrainConfig(
        learning_rate=cfg.learning_rate, epochs_inner=cfg.epochs_inner, l2=cfg.l2, seed=cfg.train_seed
    )
    augmenter = Augmenter(_augmenter_spec(cfg))
    params0 = _initial_params(cfg, dataset.dim)
    runner = run_uniform_baseline if variant == "uniform" else run_mars
    params, reports = runner(dataset, params0, mars_cfg, train_cfg, augmenter)
    data_io.write_text_atomic(os.path.join(out, "epochs.csv"), data_io.epochs_csv(reports))
    data_io.save_params(params, os.path.join(out, "params.json"))
    _echo_config(cfg, out)
    log.info("trained %s: final loss %.6f", variant, reports[-1].loss_after)
    return 0


def cmd_analyze_curvature(cfg: data_io.RunConfig) -> int:
    dataset = data_io.load_dataset(_require(cfg, "data"), cfg.mode, cfg.feat_dim)
    params = data_io.load_params(_require(cfg, "params"))
    out = _ensure_out(cfg)
    bins = bin_by_margin(params, dataset, cfg.bins)
    data_io.write_text_atomic(os.path.join(out, "bins.csv"), data_io.bins_csv(bins))
    _echo_config(cfg, out)
    return 0


def cmd_verify_theorem(cfg: data_io.RunConfig) -> int:
    out = _ensure_out(cfg)
    template = mixture_spec(cfg.n_p, cfg.n_q, cfg.gamma_org, cfg.gamma_aug)
    p, q, params, spec = make_assumption_dataset(template, cfg.dim, (cfg.n_p, cfg.n_q), cfg.seed)
    report = verify_theorem(p, q, params, spec, data_io.parse_alpha_grid(cfg.alpha_grid))
    data_io.write_text_atomic(os.path.join(out, "verdict.json"), data_io.verdict_json(report))
    _echo_config(cfg, out)
    print(report.verdict)
    return 0


def cmd_eval(cfg: data_io.RunConfig) -> int:
    dataset = data_io.load_dataset(_require(cfg, "data"), cfg.mode, cfg.feat_dim)
    params = data_io.load_params(_require(cfg, "params"))
    out = _ensure_out(cfg)
    summary = evaluate(params, dataset, cfg.hist_bin_width)
    data_io.write_text_atomic(os.path.join(out, "eval.csv"), data_io.eval_csv(summary))
    data_io.write_text_atomic(os.path.join(out, "eval.json"), data_io.eval_json(summary))
    _echo_config(cfg, out)
    print(data_io.eval_json(summary), end="")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-mars": lambda cfg: _cmd_train(cfg, "mars"),
    "train-uniform": lambda cfg: _cmd_train(cfg, "uniform"),
    "train-plain": lambda cfg: _cmd_train(cfg, "plain"),
    "analyze-curvature": cmd_analyze_curvature,
    "verify-theorem": cmd_verify_theorem,
    "eval": cmd_eval,
}


def dispatch(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _resolve_config(args)
    return _COMMANDS[args.command](cfg)


def main(argv: list[str] | None = None) -> int:
    level = _LOG_LEVELS.get(os.environ.get("MARS_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ConfigError, DatasetFormatError, EmptyDatasetError, FileNotFoundError) as exc:
        log.error("%s", exc)
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except MarsError as exc:
        log.error("%s", exc)
        sys.stderr.write(f"runtime error: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"runtime error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
