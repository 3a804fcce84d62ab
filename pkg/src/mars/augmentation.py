"""Pluggable response-variant generation.

Three augmenter kinds share one contract:

  feature_jitter    add bounded per-coordinate noise to a feature vector
  token_perturb     deterministic token drop/swap/duplicate edits on text
  external_service  HTTP client for a paraphrase sidecar

Every variant is reproducible: noise and edits are seeded by
(spec seed, parent tuple id, side, variant index), so identical requests
yield identical batches regardless of call order or thread count.
"""

from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass, replace
import numpy as np
import requests

from .bt_core import PreferenceTuple
from .errors import AugmentationError, ConfigError, ParaphraseServiceError

SIDE_CHOSEN = "chosen"
SIDE_REJECTED = "rejected"

KIND_FEATURE_JITTER = "feature_jitter"
KIND_TOKEN_PERTURB = "token_perturb"
KIND_EXTERNAL_SERVICE = "external_service"
_KINDS = (KIND_FEATURE_JITTER, KIND_TOKEN_PERTURB, KIND_EXTERNAL_SERVICE)

_MASK64 = (1 << 64) - 1

# At most this many paraphrase requests are in flight at once.
_DEFAULT_MAX_INFLIGHT = 4
_request_gate = threading.BoundedSemaphore(_DEFAULT_MAX_INFLIGHT)


def set_max_inflight(k: int) -> None:
    """Resize the request gate for the external-service client."""
    global _request_gate
    if k < 1:
        raise ConfigError(f"max in-flight requests must be >= 1, got {k}")
    _request_gate = threading.BoundedSemaphore(k)


@dataclass(frozen=True)
class AugmenterSpec:
    """Which augmenter to use and its parameters.

    Exactly the active kind's parameters may be set; leaving another kind's
    knobs at a non-default value is rejected so configs cannot silently mix.
    """

    kind: str
    seed: int = 0
    jitter_scale: float | None = None
    noise: str = "uniform"
    edit_rate: float | None = None
    endpoint: str | None = None
    timeout_ms: int = 30000

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown augmenter kind {self.kind!r}")
        if self.kind == KIND_FEATURE_JITTER:
            if self.jitter_scale is None:
                raise ConfigError("feature_jitter requires jitter_scale")
            if self.jitter_scale < 0:
                raise ConfigError(f"jitter_scale must be >= 0, got {self.jitter_scale}")
            if self.noise not in ("uniform", "gaussian"):
                raise ConfigError(f"noise must be uniform or gaussian, got {self.noise!r}")
            if self.edit_rate is not None or self.endpoint is not None:
                raise ConfigError("feature_jitter takes only jitter_scale/noise")
        elif self.kind == KIND_TOKEN_PERTURB:
            if self.edit_rate is None:
                raise ConfigError("token_perturb requires edit_rate")
            if not 0.0 <= self.edit_rate <= 1.0:
                raise ConfigError(f"edit_rate must be in [0, 1], got {self.edit_rate}")
            if self.jitter_scale is not None or self.endpoint is not None:
                raise ConfigError("token_perturb takes only edit_rate")
        else:
            if not self.endpoint:
                raise ConfigError("external_service requires an endpoint URL")
            if self.timeout_ms < 1:
                raise ConfigError(f"timeout_ms must be >= 1, got {self.timeout_ms}")
            if self.jitter_scale is not None or self.edit_rate is not None:
                raise ConfigError("external_service takes only endpoint/timeout_ms")


@dataclass(frozen=True)
class VariantBatch:
    """Variants of one side of one tuple; index in the list = variant index."""

    parent_tuple_id: str
    side: str
    variants: tuple


def _stable_u64(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "big")


def _variant_rng(seed: int, parent_id: str, side: str, index: int) -> np.random.Generator:
    entropy = [seed & _MASK64, _stable_u64(parent_id), 0 if side == SIDE_CHOSEN else 1, index]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def mix_seed(seed: int, *salts) -> int:
    """Fold extra context (e.g. an epoch number) into a seed, stably."""
    return _stable_u64(":".join([str(seed)] + [str(s) for s in salts]))


def featurize(text: str, dim: int) -> np.ndarray:
    """Deterministic hashed token-count embedding.

    Lowercase, split on non-alphanumerics, hash each token to one of dim
    buckets with a +/-1 sign from a second hash, accumulate, L2-normalize.
    The zero vector (empty text) stays zero.
    """
    if dim < 1:
        raise ConfigError(f"featurizer dim must be >= 1, got {dim}")
    acc = np.zeros(dim)
    for token in re.split(r"[^0-9a-z]+", text.lower()):
        if not token:
            continue
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=16).digest()
        bucket = int.from_bytes(digest[:8], "big") % dim
        sign = 1.0 if digest[8] % 2 == 0 else -1.0
        acc[bucket] += sign
    norm = float(np.linalg.norm(acc))
    if norm > 0:
        acc /= norm
    return acc


def _side_code(side: str) -> str:
    if side not in (SIDE_CHOSEN, SIDE_REJECTED):
        raise ConfigError(f"side must be chosen or rejected, got {side!r}")
    return side


def _jitter_variants(payload: np.ndarray, side: str, count: int, spec: AugmenterSpec, parent_id: str):
    base = np.asarray(payload, dtype=np.float64)
    scale = float(spec.jitter_scale)
    out = []
    for k in range(count):
        rng = _variant_rng(spec.seed, parent_id, side, k)
        if spec.noise == "uniform":
            eps = rng.uniform(-scale, scale, size=base.shape)
        else:
            eps = rng.normal(0.0, scale, size=base.shape)
        out.append(base + eps)
    return out


def _perturb_tokens(tokens: list[str], rate: float, rng: np.random.Generator) -> list[str]:
    # At least one edit always happens, so the variant differs from the input.
    n = len(tokens)
    edit_at = [i for i in range(n) if rng.random() < rate]
    if not edit_at:
        edit_at = [int(rng.integers(0, n))]
    result: list[str] = []
    skip = False
    for i, tok in enumerate(tokens):
        if skip:
            skip = False
            continue
        if i not in edit_at:
            result.append(tok)
            continue
        op = int(rng.integers(0, 3))
        if op == 0 and (len(result) + (n - i - 1)) >= 1:
            continue  # drop, but never down to an empty text
        if op == 1 and i + 1 < n:
            result.append(tokens[i + 1])
            result.append(tok)
            skip = True
            continue
        result.append(tok)
        result.append(tok)  # duplicate
    return result if result else tokens + tokens


def _token_variants(payload: str, side: str, count: int, spec: AugmenterSpec, parent_id: str):
    tokens = payload.split()
    if not tokens:
        raise AugmentationError("token_perturb cannot edit empty text", parent_id)
    out = []
    for k in range(count):
        rng = _variant_rng(spec.seed, parent_id, side, k)
        edited = _perturb_tokens(tokens, float(spec.edit_rate), rng)
        text = " ".join(edited)
        if text == payload:
            text = " ".join(edited + [edited[-1]])
        out.append(text)
    return out


def healthcheck(endpoint: str, timeout_ms: int = 30000) -> bool:
    """True if the paraphrase service answers GET /healthz with 200."""
    try:
        resp = requests.get(endpoint.rstrip("/") + "/healthz", timeout=timeout_ms / 1000.0)
    except requests.RequestException:
        return False
    return resp.status_code == 200


def request_paraphrases(endpoint: str, text: str, n: int, seed: int, timeout_ms: int) -> list[str]:
    """POST /paraphrase and validate the reply: exactly n non-empty strings."""
    url = endpoint.rstrip("/") + "/paraphrase"
    body = {"text": text, "n": n, "seed": seed}
    try:
        with _request_gate:
            resp = requests.post(url, json=body, timeout=timeout_ms / 1000.0)
    except requests.RequestException as exc:
        raise ParaphraseServiceError(f"paraphrase request failed: {exc}") from exc
    if resp.status_code != 200:
        try:
            detail = resp.json().get("error", "")
        except ValueError:
            detail = resp.text[:200]
        raise ParaphraseServiceError(f"paraphrase service returned {resp.status_code}: {detail}")
    try:
        payload = resp.json()
    except ValueError as exc:
        raise ParaphraseServiceError("paraphrase service returned non-JSON body") from exc
    variants = payload.get("variants")
    if not isinstance(variants, list) or len(variants) != n:
        got = len(variants) if isinstance(variants, list) else "no"
        raise ParaphraseServiceError(f"expected exactly {n} variants, got {got}")
    if not all(isinstance(v, str) and v for v in variants):
        raise ParaphraseServiceError("variants must be non-empty strings")
    return variants


def _service_variants(payload: str, side: str, count: int, spec: AugmenterSpec, parent_id: str):
    seed = mix_seed(spec.seed, parent_id, side)
    try:
        return request_paraphrases(spec.endpoint, payload, count, seed, spec.timeout_ms)
    except ParaphraseServiceError as exc:
        raise ParaphraseServiceError(str(exc), parent_id) from exc


def augment(payload, side: str, count: int, spec: AugmenterSpec, parent_id: str = "") -> VariantBatch:
    """Produce exactly count variants of one side's payload.

    Failure is all-or-nothing: a short or invalid batch raises, never returns
    partially.  count=0 yields an empty batch.
    """
    _side_code(side)
    if count < 0:
        raise ConfigError(f"variant count must be >= 0, got {count}")
    if count == 0:
        return VariantBatch(parent_tuple_id=parent_id, side=side, variants=())
    if spec.kind == KIND_FEATURE_JITTER:
        variants = _jitter_variants(payload, side, count, spec, parent_id)
    elif spec.kind == KIND_TOKEN_PERTURB:
        variants = _token_variants(payload, side, count, spec, parent_id)
    else:
        variants = _service_variants(payload, side, count, spec, parent_id)
    return VariantBatch(parent_tuple_id=parent_id, side=side, variants=tuple(variants))


class Augmenter:
    """Engine-facing wrapper: turns a tuple's side into (text, feature) variants.

    For feature_jitter the text is None and the feature is the jittered
    vector; text augmenters re-featurize each variant at the tuple's own
    dimension so text and feature pipelines stay consistent.
    """

    def __init__(self, spec: AugmenterSpec):
        self.spec = spec

    def reseeded(self, *salts) -> "Augmenter":
        return Augmenter(replace(self.spec, seed=mix_seed(self.spec.seed, *salts)))

    def side_variants(self, tup: PreferenceTuple, side: str, count: int) -> list[tuple[str | None, np.ndarray]]:
        _side_code(side)
        if self.spec.kind == KIND_FEATURE_JITTER:
            base = tup.chosen_feat if side == SIDE_CHOSEN else tup.rejected_feat
            batch = augment(base, side, count, self.spec, parent_id=tup.id)
            return [(None, vec) for vec in batch.variants]
        if tup.payload is None:
            raise AugmentationError(f"{self.spec.kind} needs text payloads", tup.id)
        text = tup.payload.chosen if side == SIDE_CHOSEN else tup.payload.rejected
        batch = augment(text, side, count, self.spec, parent_id=tup.id)
        return [(t, featurize(t, tup.dim)) for t in batch.variants]
