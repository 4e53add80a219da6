"""Versioned JSON checkpoints.

Floats are written with ``repr`` precision, so a save/load round trip is
bit-exact.  Weight matrices are stored row-major as flat lists next to
their dimensions.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .network import AdamState, NetworkParameters, Policy, RunningNormalizer, Snapshot

FORMAT = "dockrl-checkpoint"
VERSION = 1


class CheckpointError(Exception):
    pass


def _arr(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": a.ravel(order="C").tolist()}


def _unarr(d: dict) -> np.ndarray:
    data = np.array(d["data"], dtype=float)
    shape = tuple(d["shape"])
    if data.size != int(np.prod(shape)):
        raise CheckpointError(f"array data length {data.size} does not match shape {shape}")
    return data.reshape(shape)


def _net(params: NetworkParameters) -> dict:
    return {"sizes": list(params.sizes),
            "weights": [_arr(W) for W in params.weights],
            "biases": [_arr(b) for b in params.biases]}


def _unnet(d: dict) -> NetworkParameters:
    net = NetworkParameters([_unarr(w) for w in d["weights"]], [_unarr(b) for b in d["biases"]])
    if list(net.sizes) != list(d["sizes"]):
        raise CheckpointError("layer sizes do not match stored weights")
    return net


def _adam(state: AdamState) -> dict:
    return {"t": state.t, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps,
            "m": [_arr(a) for a in state.m], "v": [_arr(a) for a in state.v]}


def _unadam(d: dict) -> AdamState:
    return AdamState([_unarr(a) for a in d["m"]], [_unarr(a) for a in d["v"]], int(d["t"]),
                     float(d["beta1"]), float(d["beta2"]), float(d["eps"]))


def snapshot_to_dict(snap: Snapshot) -> dict:
    return {
        "policy": {"net": _net(snap.policy.net), "log_var": _arr(snap.policy.log_var)},
        "value": _net(snap.value),
        "normalizer": {"dim": snap.normalizer.dim, "count": snap.normalizer.count,
                       "mean": _arr(snap.normalizer.mean), "m2": _arr(snap.normalizer.m2)},
        "value_scale": snap.value_scale,
        "normalize_quaternion": snap.normalize_quaternion,
    }


def snapshot_from_dict(d: dict) -> Snapshot:
    nd = d["normalizer"]
    return Snapshot(
        policy=Policy(_unnet(d["policy"]["net"]), _unarr(d["policy"]["log_var"])),
        value=_unnet(d["value"]),
        normalizer=RunningNormalizer(int(nd["dim"]), int(nd["count"]), _unarr(nd["mean"]), _unarr(nd["m2"])),
        value_scale=float(d["value_scale"]),
        normalize_quaternion=bool(d["normalize_quaternion"]),
    )


def save_checkpoint(path, snapshot: Snapshot, config_hash: str, config: dict | None = None,
                    trainer: dict | None = None, optimizer=None) -> None:
    doc = {"format": FORMAT, "version": VERSION, "config_hash": config_hash,
           "config": config, "snapshot": snapshot_to_dict(snapshot)}
    if trainer is not None:
        doc["trainer"] = trainer
    if optimizer is not None:
        doc["optimizer"] = {"policy": _adam(optimizer.policy), "value": _adam(optimizer.value)}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc))
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    """Parsed checkpoint with ``snapshot`` (and ``optimizer`` if present) rebuilt."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise CheckpointError(f"{path}: checkpoint not found") from None
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    try:
        doc["snapshot"] = snapshot_from_dict(doc["snapshot"])
        if "optimizer" in doc:
            from .ppo import OptimizerState

            doc["optimizer"] = OptimizerState(_unadam(doc["optimizer"]["policy"]),
                                              _unadam(doc["optimizer"]["value"]))
    except (KeyError, TypeError, ValueError, CheckpointError) as exc:
        raise CheckpointError(f"{path}: corrupted checkpoint ({exc})") from None
    return doc
