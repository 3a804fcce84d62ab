"""Dataset schemas, loaders, generators, report writers, and run configuration.

Datasets are JSONL, one comparison per line:

  feature mode  {"id": ..., "chosen_feat": [...], "rejected_feat": [...]}
  text mode     {"id": ..., "prompt": ..., "chosen": ..., "rejected": ...}

plus optional "origin" and "parent_id" on either.  Run configuration is a
flat key = value document (one per line, # comments); unknown keys are
rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .augmentation import featurize
from .bt_core import (
    ORIGIN_HUMAN,
    Dataset,
    PreferenceTuple,
    RewardParams,
    TextPayload,
    preference_tuple,
    reward_params,
)
from .errors import ConfigError, DatasetFormatError, EmptyDatasetError
from .mars_engine import EpochReport
from .fisher_lab import CurvatureReport, MarginBin
from .metrics import EvalSummary

MODE_FEATURE = "feature"
MODE_TEXT = "text"

_FEATURE_KEYS = {"id", "chosen_feat", "rejected_feat"}
_TEXT_KEYS = {"id", "prompt", "chosen", "rejected"}
_OPTIONAL_KEYS = {"origin", "parent_id"}


def _parse_record(obj: dict, mode: str, featurizer_dim: int, path: str, line_no: int) -> PreferenceTuple:
    if not isinstance(obj, dict):
        raise DatasetFormatError(path, line_no, "line is not a JSON object")
    required = _FEATURE_KEYS if mode == MODE_FEATURE else _TEXT_KEYS
    missing = required - obj.keys()
    if missing:
        raise DatasetFormatError(path, line_no, f"missing keys: {sorted(missing)}")
    unknown = obj.keys() - required - _OPTIONAL_KEYS
    if unknown:
        raise DatasetFormatError(path, line_no, f"unknown keys: {sorted(unknown)}")
    origin = obj.get("origin", ORIGIN_HUMAN)
    parent_id = obj.get("parent_id")
    try:
        if mode == MODE_FEATURE:
            return preference_tuple(
                obj["id"],
                obj["chosen_feat"],
                obj["rejected_feat"],
                origin=origin,
                parent_id=parent_id,
            )
        payload = TextPayload(prompt=str(obj["prompt"]), chosen=str(obj["chosen"]), rejected=str(obj["rejected"]))
        return preference_tuple(
            obj["id"],
            featurize(payload.chosen, featurizer_dim),
            featurize(payload.rejected, featurizer_dim),
            origin=origin,
            parent_id=parent_id,
            payload=payload,
        )
    except (ConfigError, ValueError, TypeError) as exc:
        raise DatasetFormatError(path, line_no, str(exc)) from exc


def load_dataset(path: str, mode: str = MODE_FEATURE, featurizer_dim: int = 64) -> Dataset:
    """Load a JSONL dataset; every malformed input names its 1-based line."""
    if mode not in (MODE_FEATURE, MODE_TEXT):
        raise ConfigError(f"mode must be feature or text, got {mode!r}")
    tuples: list[PreferenceTuple] = []
    seen: set[str] = set()
    dim: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(path, line_no, f"invalid JSON: {exc.msg}") from exc
            tup = _parse_record(obj, mode, featurizer_dim, path, line_no)
            if tup.id in seen:
                raise DatasetFormatError(path, line_no, f"duplicate id {tup.id!r}")
            seen.add(tup.id)
            if dim is None:
                dim = tup.dim
            elif tup.dim != dim:
                raise DatasetFormatError(path, line_no, f"dimension {tup.dim} does not match file dimension {dim}")
            tuples.append(tup)
    if not tuples:
        raise EmptyDatasetError(f"{path}: dataset is empty")
    return Dataset(tuples)


def _tuple_to_obj(tup: PreferenceTuple, mode: str) -> dict:
    if mode == MODE_FEATURE:
        obj = {
            "id": tup.id,
            "chosen_feat": [float(v) for v in tup.chosen_feat],
            "rejected_feat": [float(v) for v in tup.rejected_feat],
        }
    else:
        if tup.payload is None:
            raise ConfigError(f"tuple {tup.id} has no text payload; save in feature mode")
        obj = {
            "id": tup.id,
            "prompt": tup.payload.prompt,
            "chosen": tup.payload.chosen,
            "rejected": tup.payload.rejected,
        }
    if tup.origin != ORIGIN_HUMAN:
        obj["origin"] = tup.origin
    if tup.parent_id is not None:
        obj["parent_id"] = tup.parent_id
    return obj


def write_text_atomic(path: str, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(dataset: Dataset, path: str, mode: str = MODE_FEATURE) -> None:
    """Write JSONL; round-trips field-for-field through load_dataset."""
    if mode not in (MODE_FEATURE, MODE_TEXT):
        raise ConfigError(f"mode must be feature or text, got {mode!r}")
    lines = [json.dumps(_tuple_to_obj(t, mode), separators=(",", ":")) for t in dataset]
    write_text_atomic(path, "\n".join(lines) + "\n")


def save_params(params: RewardParams, path: str) -> None:
    doc = {"dim": params.dim, "theta": [float(v) for v in params.theta]}
    write_text_atomic(path, json.dumps(doc, separators=(",", ":")) + "\n")


def load_params(path: str) -> RewardParams:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(path, None, f"invalid JSON: {exc.msg}") from exc
    if not isinstance(doc, dict) or "theta" not in doc:
        raise DatasetFormatError(path, None, "expected an object with a theta array")
    params = reward_params(doc["theta"])
    if "dim" in doc and int(doc["dim"]) != params.dim:
        raise DatasetFormatError(path, None, f"declared dim {doc['dim']} != len(theta) {params.dim}")
    return params


def generate_synthetic(
    dim: int,
    n: int,
    margin_regime: tuple[float, float],
    theta_true: RewardParams,
    seed: int,
    id_prefix: str = "gen",
) -> Dataset:
    """Deterministic tuples whose |margin| under theta_true is uniform in
    [lo, hi], with balanced signs and unit-norm direction components.

    psi = (margin/||theta||) * theta_hat + w with w a unit vector orthogonal
    to theta; both sides share a random context offset that cancels in psi.
    """
    lo, hi = float(margin_regime[0]), float(margin_regime[1])
    if not (0.0 <= lo < hi):
        raise ConfigError(f"need 0 <= lo < hi, got [{lo}, {hi}]")
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    theta = theta_true.theta
    if theta.shape[0] != dim:
        raise ConfigError(f"theta dim {theta.shape[0]} != requested dim {dim}")
    norm = float(np.linalg.norm(theta))
    if norm == 0.0:
        raise ConfigError("theta_true must be non-zero")
    theta_hat = theta / norm
    rng = np.random.default_rng(np.random.SeedSequence([seed & ((1 << 64) - 1), dim, n]))
    signs = np.ones(n)
    signs[n // 2 :] = -1.0
    signs = signs[rng.permutation(n)]
    mags = rng.uniform(lo, hi, size=n)
    tuples = []
    for i in range(n):
        m = float(signs[i] * mags[i])
        if dim == 1:
            w = np.zeros(1)
        else:
            v = rng.standard_normal(dim)
            v -= (theta_hat @ v) * theta_hat
            vnorm = float(np.linalg.norm(v))
            while vnorm < 1e-9:
                v = rng.standard_normal(dim)
                v -= (theta_hat @ v) * theta_hat
                vnorm = float(np.linalg.norm(v))
            w = v / vnorm
        psi = (m / norm) * theta_hat + w
        context = rng.standard_normal(dim)
        tuples.append(preference_tuple(f"{id_prefix}-{i:05d}", context + psi / 2.0, context - psi / 2.0))
    return Dataset(tuples)


# ---------------------------------------------------------------------------
# Report writers.  All floats use repr() so artifacts are byte-reproducible.


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def epochs_csv(reports: Sequence[EpochReport]) -> str:
    header = "epoch,size_before,size_after,synthetic_added,loss_before,loss_after,mean_abs_margin,snr"
    rows = [header]
    for r in reports:
        rows.append(
            ",".join(
                _fmt(v)
                for v in (
                    r.epoch,
                    r.dataset_size_before,
                    r.dataset_size_after,
                    r.synthetic_added,
                    r.loss_before,
                    r.loss_after,
                    r.mean_abs_margin,
                    r.snr,
                )
            )
        )
    return "\n".join(rows) + "\n"


def bins_csv(bins: Sequence[MarginBin]) -> str:
    header = "bin_index,lo,hi,mean_curvature,min_eig"
    rows = [header]
    for b in bins:
        rows.append(
            ",".join(
                _fmt(v)
                for v in (b.index, b.abs_margin_range[0], b.abs_margin_range[1], b.mean_curvature_weight, b.min_eigenvalue)
            )
        )
    return "\n".join(rows) + "\n"


def verdict_json(report: CurvatureReport) -> str:
    return json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"


def _histogram_cells(summary: EvalSummary) -> str:
    cells = []
    for i, count in enumerate(summary.counts):
        lo = (summary.bin_start + i) * summary.bin_width
        cells.append(f"{_fmt(float(lo))}:{count}")
    return "|".join(cells)


def eval_csv(summary: EvalSummary) -> str:
    header = "n,pairwise_accuracy,margin_mean,margin_std,snr,snr_degenerate,histogram"
    row = ",".join(
        [
            str(summary.n),
            _fmt(summary.pairwise_accuracy),
            _fmt(summary.margin_mean),
            _fmt(summary.margin_std),
            _fmt(summary.snr),
            str(summary.snr_degenerate).lower(),
            _histogram_cells(summary),
        ]
    )
    return header + "\n" + row + "\n"


def eval_json(summary: EvalSummary) -> str:
    doc = {
        "n": summary.n,
        "pairwise_accuracy": summary.pairwise_accuracy,
        "margin_mean": summary.margin_mean,
        "margin_std": summary.margin_std,
        "snr": None if math.isinf(summary.snr) else summary.snr,
        "snr_degenerate": summary.snr_degenerate,
        "histogram": {
            "bin_width": summary.bin_width,
            "bin_start": summary.bin_start,
            "counts": list(summary.counts),
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Flat run configuration.


@dataclass
class RunConfig:
    mode: str = MODE_FEATURE
    feat_dim: int = 64
    epochs: int = 3
    budget: int = -1  # -1 means "2x dataset size", resolved at run time
    tau: float = 0.1
    split_policy: str = "balanced"
    cumulative: bool = True
    allow_reaugment: bool = False
    seed: int = 0
    learning_rate: float = 0.5
    epochs_inner: int = 100
    l2: float = 0.0
    train_seed: int = 0
    init_scale: float = 0.0
    augmenter: str = "feature_jitter"
    jitter_scale: float = 0.05
    noise: str = "uniform"
    edit_rate: float = 0.15
    endpoint: str = ""
    timeout_ms: int = 30000
    aug_seed: int = 0
    bins: int = 5
    hist_bin_width: float = 0.5
    dim: int = 8
    n: int = 1000
    margin_lo: float = 0.0
    margin_hi: float = 6.0
    gamma_org: float = 2.0
    gamma_aug: float = 0.5
    alpha_grid: str = "0,0.25,0.5,0.75,1"
    n_p: int = 200
    n_q: int = 200
    data: str = ""
    params: str = ""
    out: str = "out"


_CONFIG_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_value(key: str, raw: str, path: str, line_no: int | None):
    kind = _CONFIG_FIELDS[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw not in ("true", "false"):
                raise ValueError("expected true or false")
            return raw == "true"
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise DatasetFormatError(path, line_no, f"bad value for {key}: {exc}") from exc


def parse_run_config(text: str, path: str = "<config>") -> RunConfig:
    """Parse the flat key = value grammar; unknown keys are rejected."""
    cfg = RunConfig()
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise DatasetFormatError(path, line_no, "expected key = value")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _CONFIG_FIELDS:
            raise DatasetFormatError(path, line_no, f"unknown key {key!r}")
        setattr(cfg, key, _parse_value(key, raw, path, line_no))
    return cfg


def load_run_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_run_config(fh.read(), path=path)


def format_run_config(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        if f.type == "bool":
            rendered = "true" if value else "false"
        elif f.type == "float":
            rendered = _fmt(float(value))
        else:
            rendered = str(value)
        lines.append(f"{f.name} = {rendered}")
    return "\n".join(lines) + "\n"


def parse_alpha_grid(raw: str) -> tuple[float, ...]:
    try:
        values = tuple(float(part) for part in raw.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad alpha grid {raw!r}: {exc}") from exc
    if not values:
        raise ConfigError("alpha grid must not be empty")
    return values
