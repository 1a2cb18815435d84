"""Shared classifier interface and versioned JSON artifacts."""

from __future__ import annotations

import json

import numpy as np

ARTIFACT_VERSION = 1

_PROB_EPS = 1e-12


def clip_probability(p: np.ndarray) -> np.ndarray:
    """Keep linear-model probabilities strictly inside (0,1)."""
    return np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS)


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class ClassifierModel:
    """A trained base learner exposing P(y=1 | x).

    Subclasses set `kind` and implement predict_proba plus the artifact
    dict round-trip.
    """

    kind: str = ""

    def predict_proba(self, X) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X) > threshold).astype(int)

    def to_dict(self) -> dict:
        raise NotImplementedError

    @classmethod
    def from_dict(cls, data: dict) -> "ClassifierModel":
        raise NotImplementedError


_REGISTRY: dict = {}


def register(cls):
    _REGISTRY[cls.kind] = cls
    return cls


def dumps_model(model: ClassifierModel) -> str:
    payload = model.to_dict()
    payload["format_version"] = ARTIFACT_VERSION
    payload["kind"] = model.kind
    return json.dumps(payload, sort_keys=True, indent=2)


def loads_model(text: str) -> ClassifierModel:
    data = json.loads(text)
    if data.get("format_version") != ARTIFACT_VERSION:
        raise ValueError(f"unsupported artifact version {data.get('format_version')!r}")
    kind = data.get("kind")
    if kind not in _REGISTRY:
        raise ValueError(f"unknown model kind {kind!r}")
    return _REGISTRY[kind].from_dict(data)


def save_model(model: ClassifierModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(model))


def load_model(path) -> ClassifierModel:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_model(fh.read())
