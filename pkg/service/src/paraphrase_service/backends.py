"""Paraphrase backends.

The builtin rule backend is fully deterministic for a fixed (text, n, seed)
and needs no model download, which keeps the service testable offline.  A
Hugging Face seq2seq backend can wrap a locally available checkpoint via
--model-id /path/to/model; it seeds generation so repeated calls match
whenever the model supports seeded decoding.
"""

from __future__ import annotations

import random
import re
from typing import Protocol


class BackendError(Exception):
    pass


class ParaphraseBackend(Protocol):
    def generate(self, text: str, count: int, seed: int) -> list[str]:
        """Return up to count candidate paraphrases (pre-filtering)."""
        ...


def normalize_ws(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


_LEAD_TEMPLATES = (
    "In other words, {}",
    "Put differently, {}",
    "To rephrase: {}",
    "Simply put, {}",
    "Said another way, {}",
    "Rephrased: {}",
    "Stated plainly, {}",
    "Another way to say it: {}",
)

_TAIL_TEMPLATES = (
    "{} - or so one might put it",
    "{}, in essence",
    "{}, roughly speaking",
    "{}, to put it another way",
)

_CONNECTOR_SWAPS = (
    ("but", "yet"),
    ("because", "since"),
    ("so", "therefore"),
    ("also", "additionally"),
    ("very", "quite"),
    ("however", "that said"),
)


class RuleBackend:
    """Deterministic template-and-edit paraphraser.

    Candidates come from a finite transformation space, so very large n is
    genuinely unsatisfiable and surfaces as a 422 upstream.
    """

    def __init__(self, max_len: int = 64):
        self.max_len = max_len

    def _swap_connectors(self, words: list[str], rng: random.Random) -> list[str]:
        out = list(words)
        for a, b in _CONNECTOR_SWAPS:
            for i, w in enumerate(out):
                if w.lower() == a and rng.random() < 0.8:
                    out[i] = b
        return out

    def _reorder_clause(self, text: str, rng: random.Random) -> str:
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if len(parts) >= 2:
            k = rng.randrange(1, len(parts))
            parts = parts[k:] + parts[:k]
            return ", ".join(parts)
        return text

    def _one(self, text: str, rng: random.Random) -> str:
        base = normalize_ws(text)
        body = base
        if rng.random() < 0.5:
            body = " ".join(self._swap_connectors(body.split(), rng))
        if "," in body and rng.random() < 0.35:
            body = self._reorder_clause(body, rng)
        candidate = body
        if rng.random() < 0.7:
            candidate = rng.choice(_LEAD_TEMPLATES).format(candidate)
        if rng.random() < 0.45:
            candidate = rng.choice(_TAIL_TEMPLATES).format(candidate)
        if normalize_ws(candidate) == base:
            candidate = rng.choice(_LEAD_TEMPLATES).format(base)
        capped = candidate.split()
        if len(capped) > self.max_len:
            candidate = " ".join(capped[: self.max_len])
        return candidate

    def generate(self, text: str, count: int, seed: int) -> list[str]:
        rng = random.Random(f"{seed}:{normalize_ws(text)}")
        return [self._one(text, rng) for _ in range(count)]


class HfBackend:
    """Seq2seq checkpoint wrapper (requires transformers + torch and a local
    model directory; never downloads)."""

    def __init__(self, model_id: str, max_len: int = 64):
        try:
            import torch
            from transformers import AutoModelForSeq2SeqLM, AutoTokenizer
        except ImportError as exc:
            raise BackendError("transformers/torch not installed; use --model-id builtin") from exc
        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(model_id, local_files_only=True)
        self.model = AutoModelForSeq2SeqLM.from_pretrained(model_id, local_files_only=True)
        self.model.eval()
        self.max_len = max_len

    def generate(self, text: str, count: int, seed: int) -> list[str]:
        torch = self._torch
        torch.manual_seed(seed & ((1 << 63) - 1))
        inputs = self.tokenizer([text], return_tensors="pt", truncation=True, max_length=self.max_len)
        with torch.no_grad():
            out = self.model.generate(
                **inputs,
                num_beams=max(4, count),
                num_return_sequences=count,
                do_sample=True,
                top_p=0.95,
                max_length=self.max_len,
            )
        return self.tokenizer.batch_decode(out, skip_special_tokens=True)


def load_backend(model_id: str, max_len: int) -> ParaphraseBackend:
    if model_id == "builtin":
        return RuleBackend(max_len=max_len)
    return HfBackend(model_id, max_len=max_len)
