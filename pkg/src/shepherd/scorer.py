"""Process-reward scorers: (context, action) -> score in [0, 1].

``FeatureScorer`` is a clamped linear model over hand-built features, trained
with full-batch gradient descent on squared error. ``RemoteScorer`` talks to a
scoring service over HTTP for LLM-backed reward models.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import posixpath
import re
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import numpy as np
import requests

from shepherd import kernels
from shepherd.dataset import CURRENT_STEP_PREFIX, PRMSample
from shepherd.errors import (
    DivergenceDetected,
    EmptyDataset,
    InsufficientSamples,
    ProtocolError,
    ScorerUnavailable,
)
from shepherd.model import ActionKind, classify_action, normalize_action, normalize_path, SOURCE_SUFFIXES

log = logging.getLogger(__name__)

FEATURE_NAMES = (
    "kind_read",
    "kind_edit",
    "kind_run_tests",
    "kind_submit",
    "kind_other",
    "relevant_path",
    "repeat",
    "action_length_log",
    "step_fraction",
    "history_error",
    "bias",
)
DIM = len(FEATURE_NAMES)
_KIND_ORDER = (ActionKind.READ, ActionKind.EDIT, ActionKind.RUN_TESTS, ActionKind.SUBMIT, ActionKind.OTHER)

_HISTORY_BLOCK = re.compile(r"(?:^|\n\n)STEP \d+:\nACTION:\n(.*?)\nOBSERVATION:\n", re.DOTALL)
_HISTORY_START = re.compile(r"\n\nSTEP \d+:\nACTION:\n|\n\n" + re.escape(CURRENT_STEP_PREFIX))
_STEP_TRAILER = re.compile(r"\n" + re.escape(CURRENT_STEP_PREFIX) + r" (\d+)/(\d+)\s*$")
_WORDISH = re.compile(r"[\w./-]+")


@dataclass(frozen=True)
class ScoreRequest:
    context_text: str
    action_text: str

    def __post_init__(self) -> None:
        if not self.context_text or not self.action_text:
            raise ValueError("ScoreRequest needs non-empty context and action")


class Scorer(Protocol):
    def score(self, request: ScoreRequest) -> float: ...

    def score_batch(self, requests: Sequence[ScoreRequest]) -> list[float]: ...


def clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def path_hints(text: str) -> set[str]:
    hints = set()
    for tok in _WORDISH.findall(text):
        tok = tok.rstrip(".-")
        if "/" in tok or tok.endswith(SOURCE_SUFFIXES):
            p = normalize_path(tok)
            if p:
                hints.add(p)
    return hints


def _split_context(context: str) -> tuple[str, str]:
    m = _HISTORY_START.search(context)
    if m is None:
        return context, ""
    return context[: m.start()], context[m.start():]


def featurize(request: ScoreRequest, step_fraction: float | None = None) -> np.ndarray:
    """Map a request to the fixed-order feature vector (see ``FEATURE_NAMES``)."""
    ctx, action = request.context_text, request.action_text
    x = np.zeros(DIM, dtype=np.float64)
    kind, paths = classify_action(action)
    x[_KIND_ORDER.index(kind)] = 1.0

    problem, history = _split_context(ctx)
    hints = path_hints(problem)
    hint_names = {posixpath.basename(h) for h in hints}
    if any(p in hints or posixpath.basename(p) in hint_names for p in paths):
        x[5] = 1.0

    norm = normalize_action(action)
    if any(normalize_action(a) == norm for a in _HISTORY_BLOCK.findall(history)):
        x[6] = 1.0

    x[7] = math.log(max(1, len(action)))

    if step_fraction is None:
        m = _STEP_TRAILER.search(ctx)
        step_fraction = int(m.group(1)) / int(m.group(2)) if m and int(m.group(2)) > 0 else 0.0
    x[8] = step_fraction

    body = _STEP_TRAILER.sub("", history)
    if "error" in body.lower() or "FAILED" in body:
        x[9] = 1.0
    x[10] = 1.0
    return x


def featurize_samples(samples: Sequence[PRMSample]) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([featurize(ScoreRequest(s.context_text, s.action_text)) for s in samples])
    y = np.array([s.label for s in samples], dtype=np.float64)
    return X, y


@dataclass
class FeatureScorerModel:
    weights: np.ndarray
    training_meta: dict[str, Any] = field(default_factory=dict)
    loss_history: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (DIM,):
            raise ValueError(f"expected {DIM} weights, got shape {self.weights.shape}")

    def to_json(self) -> dict[str, Any]:
        return {"dim": DIM, "weights": self.weights.tolist(), "training_meta": self.training_meta}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> FeatureScorerModel:
        if obj.get("dim") != DIM:
            raise ValueError(f"model dim {obj.get('dim')} != {DIM}")
        return cls(np.array(obj["weights"], dtype=np.float64), dict(obj.get("training_meta", {})))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> FeatureScorerModel:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


class FeatureScorer:
    def __init__(self, model: FeatureScorerModel):
        self.model = model

    def raw(self, request: ScoreRequest) -> float:
        return float(self.model.weights @ featurize(request))

    def score(self, request: ScoreRequest) -> float:
        return clamp01(self.raw(request))

    def score_batch(self, requests: Sequence[ScoreRequest]) -> list[float]:
        return [self.score(r) for r in requests]


class ConstantScorer:
    def __init__(self, value: float = 0.5):
        self.value = clamp01(value)

    def score(self, request: ScoreRequest) -> float:
        return self.value

    def score_batch(self, requests: Sequence[ScoreRequest]) -> list[float]:
        return [self.value] * len(requests)


class RandomScorer:
    """Uniform scores derived from a hash of (seed, context, action).

    Order-independent, so concurrent episodes see the same scores as serial ones.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed

    def score(self, request: ScoreRequest) -> float:
        h = hashlib.sha256(
            f"{self.seed}\x00{request.context_text}\x00{request.action_text}".encode()
        ).digest()
        return int.from_bytes(h[:8], "big") / 2**64

    def score_batch(self, requests: Sequence[ScoreRequest]) -> list[float]:
        return [self.score(r) for r in requests]


def mse_loss_grad(X: np.ndarray, y: np.ndarray, w: np.ndarray, l2: float = 0.0) -> tuple[float, np.ndarray]:
    """Penalized loss mean((Xw - y)^2) + l2 * |w|^2 and its gradient."""
    return kernels.mse_loss_grad(X, y, w, l2)


def fit_weights(
    X: np.ndarray,
    y: np.ndarray,
    epochs: int,
    learning_rate: float,
    l2: float = 0.0,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Full-batch gradient descent from a small seeded initialization.

    Returns the final weights and the per-epoch loss history (length epochs + 1).
    """
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    w0 = np.random.default_rng(seed).normal(0.0, 0.01, size=X.shape[1])
    w, losses = kernels.gradient_descent(X, y, w0, learning_rate, l2, epochs)
    if not np.all(np.isfinite(losses)) or not np.all(np.isfinite(w)):
        raise DivergenceDetected(f"loss became non-finite (lr={learning_rate})")
    return w, losses


def train_feature_scorer(
    samples: Sequence[PRMSample],
    epochs: int = 5000,
    learning_rate: float = 0.05,
    l2: float = 0.0,
    seed: int = 0,
) -> FeatureScorerModel:
    if not samples:
        raise EmptyDataset("no training samples")
    X, y = featurize_samples(samples)
    w, losses = fit_weights(X, y, epochs, learning_rate, l2, seed)
    resid = X @ w - y
    meta = {
        "epochs": epochs,
        "learning_rate": learning_rate,
        "l2": l2,
        "seed": seed,
        "n_samples": len(samples),
        "final_mse": float(resid @ resid) / len(y),
        "feature_names": list(FEATURE_NAMES),
    }
    return FeatureScorerModel(w, meta, loss_history=losses)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(a: Sequence[float], b: Sequence[float]) -> float:
    """Rank correlation with average ranks for ties; 0.0 if either side is constant."""
    ra = _average_ranks(np.asarray(a, dtype=np.float64))
    rb = _average_ranks(np.asarray(b, dtype=np.float64))
    da, db = ra - ra.mean(), rb - rb.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        return 0.0
    return float(da @ db) / denom


def evaluate_scorer(scorer: Scorer, samples: Sequence[PRMSample]) -> dict[str, float]:
    if len(samples) < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {len(samples)}")
    preds = scorer.score_batch([ScoreRequest(s.context_text, s.action_text) for s in samples])
    labels = [s.label for s in samples]
    mse = math.fsum((p - y) ** 2 for p, y in zip(preds, labels)) / len(labels)
    return {"mse": mse, "spearman_rho": spearman_rho(preds, labels)}


class RemoteScorer:
    """Client for ``POST /v1/score_batch``.

    Non-2xx responses and connection errors are retried ``retries`` times with
    the given backoff delays; a response with the wrong number of scores is a
    ``ProtocolError`` and is not retried. Out-of-range scores are clamped.
    """

    def __init__(
        self,
        url: str,
        timeout: float = 30.0,
        retries: int = 3,
        backoff: Sequence[float] = (1.0, 2.0, 4.0),
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = tuple(backoff)
        self.sleep = sleep

    @property
    def endpoint(self) -> str:
        return f"{self.url}/v1/score_batch"

    def _delay(self, attempt: int) -> float:
        if attempt < len(self.backoff):
            return self.backoff[attempt]
        return self.backoff[-1] * 2 ** (attempt - len(self.backoff) + 1) if self.backoff else 0.0

    def _post(self, body: dict[str, Any]) -> Any:
        last_err = "no attempt made"
        for attempt in range(self.retries + 1):
            try:
                resp = requests.post(self.endpoint, json=body, timeout=self.timeout)
            except requests.RequestException as exc:
                last_err = f"{type(exc).__name__}: {exc}"
            else:
                if 200 <= resp.status_code < 300:
                    try:
                        return resp.json()
                    except ValueError:
                        raise ProtocolError("response body is not JSON") from None
                last_err = f"HTTP {resp.status_code}"
            if attempt < self.retries:
                delay = self._delay(attempt)
                log.warning("score_batch attempt %d failed (%s); retrying in %.1fs", attempt + 1, last_err, delay)
                self.sleep(delay)
        raise ScorerUnavailable(f"{self.endpoint}: {last_err} after {self.retries} retries")

    def score_batch(self, requests_: Sequence[ScoreRequest]) -> list[float]:
        if not requests_:
            raise ValueError("empty scoring batch")
        body = {"items": [{"context": r.context_text, "action": r.action_text} for r in requests_]}
        payload = self._post(body)
        scores = payload.get("scores") if isinstance(payload, dict) else None
        if not isinstance(scores, list):
            raise ProtocolError("response lacks a 'scores' list")
        if len(scores) != len(requests_):
            raise ProtocolError(f"got {len(scores)} scores for {len(requests_)} items")
        out = []
        for i, s in enumerate(scores):
            if isinstance(s, bool) or not isinstance(s, (int, float)) or not math.isfinite(s):
                raise ProtocolError(f"score {i} is not a finite number: {s!r}")
            if not 0.0 <= s <= 1.0:
                log.warning("clamping out-of-range score %r at position %d", s, i)
            out.append(clamp01(float(s)))
        return out

    def score(self, request: ScoreRequest) -> float:
        return self.score_batch([request])[0]


def remote_score(endpoint: RemoteScorer | str, requests_: Sequence[ScoreRequest]) -> list[float]:
    client = endpoint if isinstance(endpoint, RemoteScorer) else RemoteScorer(endpoint)
    return client.score_batch(requests_)
