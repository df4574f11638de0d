"""Ensembles of independently seeded LSTM networks and their model files.

The nowcast is the plain mean of the member predictions, mapped back to
target units with the scaler fitted on the training window.

Model file layout (JSON, keys sorted, UTF-8)::

    {
      "format_version": 1,
      "checksum": "<sha256 of the document without this field>",
      "hyperparams": {...},
      "feature_names": [...], "target_name": "...", "train_end": "YYYY-MM",
      "scaler": {"feature_mean": <array>, "feature_sd": <array>, ...},
      "members": [{"seed": s, "W_x": [<array>, ...], "W_h": [...], "b": [...],
                   "w_out": <array>, "b_out": <array>, "loss_history": <array>,
                   "epochs_run": e}, ...]
    }

where ``<array>`` is ``{"shape": [...], "data": [float.hex strings]}`` so every
double round-trips exactly.
"""
from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import lstm
from .errors import DataError, IntegrityError, TrainingError, UnsupportedVersionError
from .lstm import LstmHyperparams, LstmNetwork
from .panel import format_month, parse_month
from .tensorize import ScalerStats, unscale_predictions

FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class Ensemble:
    members: tuple
    scaler: ScalerStats
    hyperparams: LstmHyperparams
    feature_names: tuple
    target_name: str
    train_end: tuple
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        shapes = [[p.shape for p in m.parameters()] for m in self.members]
        if any(s != shapes[0] for s in shapes[1:]):
            raise ValueError("ensemble members have different shapes")
        if self.members[0].n_features != len(self.feature_names):
            raise ValueError("feature_names do not match the member input width")

    def __len__(self):
        return len(self.members)

    @property
    def seeds(self) -> tuple:
        return tuple(m.seed for m in self.members)


def _train_member(batch, hp, seed, k):
    try:
        return lstm.train(batch, hp, seed=seed)
    except TrainingError as exc:
        raise TrainingError(f"ensemble member {k} (seed {seed}): {exc}", exc.epoch) from exc


def train_ensemble(batch, hp: LstmHyperparams, n_networks: int, base_seed: int,
                   scaler: ScalerStats, train_end=None, n_jobs: int = 1) -> Ensemble:
    """Train ``n_networks`` members, member ``k`` with seed ``base_seed + k``.

    Members are independent, so with ``n_jobs > 1`` they train on a thread
    pool; the result is assembled by member index and does not depend on the
    execution order.
    """
    if n_networks < 1:
        raise ValueError("n_networks must be >= 1")
    seeds = [int(base_seed) + k for k in range(n_networks)]
    if n_jobs > 1 and n_networks > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(_train_member, batch, hp, s, k) for k, s in enumerate(seeds)]
            members = [f.result() for f in futures]
    else:
        members = [_train_member(batch, hp, s, k) for k, s in enumerate(seeds)]
    train_end = scaler.fit_end if train_end is None else tuple(train_end)
    return Ensemble(tuple(members), scaler, hp, tuple(scaler.feature_names),
                    scaler.target_name, train_end)


def predict_standardized(e: Ensemble, batch) -> np.ndarray:
    x = batch.inputs if hasattr(batch, "inputs") else np.asarray(batch, dtype=float)
    names = getattr(batch, "feature_names", None)
    if names is not None and tuple(names) != e.feature_names:
        raise DataError("batch features do not match the ensemble's features")
    if x.ndim != 3 or x.shape[2] != len(e.feature_names):
        raise DataError(f"expected inputs of shape (N, T, {len(e.feature_names)}), got {x.shape}")
    acc = np.zeros(x.shape[0])
    for member in e.members:
        acc += lstm.predict(member, x)
    return acc / len(e.members)


def predict_ensemble(e: Ensemble, batch) -> np.ndarray:
    """Member-mean prediction in original target units."""
    return unscale_predictions(e.scaler, predict_standardized(e, batch))


def member_predictions(e: Ensemble, batch) -> np.ndarray:
    """(M, N) standardized predictions, one row per member."""
    x = batch.inputs if hasattr(batch, "inputs") else np.asarray(batch, dtype=float)
    return np.stack([lstm.predict(m, x) for m in e.members])


# -- persistence -------------------------------------------------------------

def _enc(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": [float(v).hex() for v in a.ravel()]}


def _dec(d) -> np.ndarray:
    data = np.array([float.fromhex(v) for v in d["data"]], dtype=float)
    return data.reshape([int(s) for s in d["shape"]])


def _hp_dict(hp: LstmHyperparams) -> dict:
    out = {k: getattr(hp, k) for k in hp.__dataclass_fields__}
    out["learning_rate"] = float(hp.learning_rate).hex()
    return out


def _hp_from(d) -> LstmHyperparams:
    d = dict(d)
    d["learning_rate"] = float.fromhex(d["learning_rate"])
    return LstmHyperparams(**d)


def to_document(e: Ensemble) -> dict:
    s = e.scaler
    doc = {
        "format_version": e.format_version,
        "hyperparams": _hp_dict(e.hyperparams),
        "feature_names": list(e.feature_names),
        "target_name": e.target_name,
        "train_end": format_month(e.train_end),
        "scaler": {
            "feature_names": list(s.feature_names),
            "feature_mean": _enc(s.feature_mean),
            "feature_sd": _enc(s.feature_sd),
            "target_name": s.target_name,
            "target_mean": float(s.target_mean).hex(),
            "target_sd": float(s.target_sd).hex(),
            "fit_start": format_month(s.fit_start),
            "fit_end": format_month(s.fit_end),
        },
        "members": [],
    }
    for m in e.members:
        doc["members"].append({
            "seed": int(m.seed),
            "n_features": int(m.n_features),
            "W_x": [_enc(w) for w in m.W_x],
            "W_h": [_enc(w) for w in m.W_h],
            "b": [_enc(v) for v in m.b],
            "w_out": _enc(m.w_out),
            "b_out": _enc(m.b_out),
            "loss_history": _enc(m.loss_history),
            "epochs_run": int(m.epochs_run),
        })
    return doc


def _canonical(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def _checksum(doc) -> str:
    body = {k: v for k, v in doc.items() if k != "checksum"}
    return hashlib.sha256(_canonical(body).encode("ascii")).hexdigest()


def dumps(e: Ensemble) -> str:
    doc = to_document(e)
    doc["checksum"] = _checksum(doc)
    return json.dumps(doc, sort_keys=True, indent=1, ensure_ascii=True) + "\n"


def save(e: Ensemble, sink) -> None:
    """Write ``e`` to a path or a writable text stream."""
    text = dumps(e)
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sink.write(text)


def from_document(doc) -> Ensemble:
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise IntegrityError("model file has no format_version")
    version = doc["format_version"]
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"model format_version {version!r} is not supported "
                                      f"(expected {FORMAT_VERSION})")
    if doc.get("checksum") != _checksum(doc):
        raise IntegrityError("model file checksum mismatch (corrupted or edited)")
    try:
        hp = _hp_from(doc["hyperparams"])
        s = doc["scaler"]
        scaler = ScalerStats(tuple(s["feature_names"]), _dec(s["feature_mean"]), _dec(s["feature_sd"]),
                             s["target_name"], float.fromhex(s["target_mean"]),
                             float.fromhex(s["target_sd"]), parse_month(s["fit_start"]),
                             parse_month(s["fit_end"]))
        members = []
        for m in doc["members"]:
            members.append(LstmNetwork(
                [_dec(w) for w in m["W_x"]], [_dec(w) for w in m["W_h"]], [_dec(v) for v in m["b"]],
                _dec(m["w_out"]), _dec(m["b_out"]), hp, int(m["n_features"]), int(m["seed"]),
                [float(v) for v in _dec(m["loss_history"])], int(m["epochs_run"])))
        return Ensemble(tuple(members), scaler, hp, tuple(doc["feature_names"]),
                        doc["target_name"], parse_month(doc["train_end"]), version)
    except (KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"malformed model file: {exc}") from exc


def loads(text: str) -> Ensemble:
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise IntegrityError(f"model file is not valid JSON: {exc}") from exc
    return from_document(doc)


def load(source) -> Ensemble:
    """Read an ensemble from a path, bytes or a readable stream."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            raw = fh.read()
    elif isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    else:
        raw = source.read()
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise IntegrityError("model file is not UTF-8 text") from exc
    if not raw.strip():
        raise IntegrityError("model file is empty")
    return loads(raw)


__all__ = ["Ensemble", "FORMAT_VERSION", "train_ensemble", "predict_ensemble", "predict_standardized",
           "member_predictions", "save", "load", "dumps", "loads", "to_document", "from_document"]
