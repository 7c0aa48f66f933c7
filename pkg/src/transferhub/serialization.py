"""Plain-text (JSON) persistence for models, adapted forecasters and ensembles.

Floats are written by ``json`` with their shortest round-trip repr, so loading
restores every array bit for bit.  BLR heads are embedded as their flat text
block.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import blr
from .adaptation import Forecaster, IdentityExtractor
from .ensembles import BmaModel, CsgeModel, PcaBasis
from .models.belm import Belm
from .models.gbrt import Gbrt, RegressionTree
from .models.mlp import Mlp

FORMAT_VERSION = 1


def _arr(a):
    return None if a is None else np.asarray(a).tolist()


def _np(v, dtype=float):
    return None if v is None else np.asarray(v, dtype=dtype)


def _head_to(h):
    return None if h is None else h.to_text()


def to_dict(obj) -> dict:
    if isinstance(obj, Mlp):
        return {
            "kind": "mlp",
            "weights": [_arr(W) for W in obj.weights],
            "biases": [_arr(b) for b in obj.biases],
            "x_mean": _arr(obj.x_mean),
            "x_scale": _arr(obj.x_scale),
        }
    if isinstance(obj, Belm):
        return {
            "kind": "belm",
            "W": _arr(obj.W),
            "activation": obj.activation,
            "include_raw": obj.include_raw,
            "head": obj.head.to_text(),
            "x_mean": _arr(obj.x_mean),
            "x_scale": _arr(obj.x_scale),
        }
    if isinstance(obj, Gbrt):
        return {
            "kind": "gbrt",
            "base_prediction": obj.base_prediction,
            "learning_rate": obj.learning_rate,
            "max_depth": obj.max_depth,
            "trees": [
                {"feature": _arr(t.feature), "threshold": _arr(t.threshold), "left": _arr(t.left),
                 "right": _arr(t.right), "value": _arr(t.value)}
                for t in obj.trees
            ],
        }
    if isinstance(obj, IdentityExtractor):
        return {"kind": "identity", "n_inputs": obj.out_dim}
    if isinstance(obj, Forecaster):
        return {
            "kind": "forecaster",
            "mode": obj.mode,
            "source": to_dict(obj.source),
            "per_horizon": obj.per_horizon,
            "n_target_used": obj.n_target_used,
            "heads": None if obj.heads is None else {str(k): _head_to(v) for k, v in obj.heads.items()},
            "priors": None if obj.priors is None else {str(k): _head_to(v) for k, v in obj.priors.items()},
        }
    if isinstance(obj, CsgeModel):
        return {
            "kind": "csge",
            "members": [to_dict(m) for m in obj.members],
            "global_errors": _arr(obj.global_errors),
            "horizon_errors": _arr(obj.horizon_errors),
            "pca_mean": _arr(obj.pca.mean),
            "pca_components": _arr(obj.pca.components),
            "pca_degenerate": obj.pca.degenerate,
            "points": _arr(obj.points),
            "local_errors": _arr(obj.local_errors),
            "etas": list(obj.etas),
            "eps": obj.eps,
            "x_scale": _arr(obj.x_scale),
            "empty_horizons": list(obj.empty_horizons),
            "k_neighbors": obj.k_neighbors,
        }
    if isinstance(obj, BmaModel):
        return {
            "kind": "bma",
            "members": [to_dict(m) for m in obj.members],
            "log_weights": _arr(obj.log_weights),
            "log_evidence": _arr(obj.log_evidence),
            "degenerate": obj.degenerate,
        }
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def from_dict(d: dict):
    kind = d.get("kind")
    if kind == "mlp":
        return Mlp(tuple(_np(W) for W in d["weights"]), tuple(_np(b) for b in d["biases"]),
                   _np(d["x_mean"]), _np(d["x_scale"]))
    if kind == "belm":
        return Belm(_np(d["W"]), d["activation"], d["include_raw"], blr.GaussianLinear.from_text(d["head"]),
                    _np(d["x_mean"]), _np(d["x_scale"]))
    if kind == "gbrt":
        trees = tuple(
            RegressionTree(_np(t["feature"], np.intp), _np(t["threshold"]), _np(t["left"], np.intp),
                           _np(t["right"], np.intp), _np(t["value"]))
            for t in d["trees"]
        )
        return Gbrt(d["base_prediction"], d["learning_rate"], d["max_depth"], trees)
    if kind == "identity":
        return IdentityExtractor(d["n_inputs"])
    if kind == "forecaster":
        def heads(key):
            if d[key] is None:
                return None
            return {int(k): blr.GaussianLinear.from_text(v) for k, v in d[key].items()}
        return Forecaster(d["mode"], from_dict(d["source"]), heads("heads"), heads("priors"),
                          d["per_horizon"], d["n_target_used"])
    if kind == "csge":
        basis = PcaBasis(_np(d["pca_mean"]), _np(d["pca_components"]), d["pca_degenerate"])
        return CsgeModel(tuple(from_dict(m) for m in d["members"]), _np(d["global_errors"]),
                         _np(d["horizon_errors"]), basis, _np(d["points"]), _np(d["local_errors"]),
                         tuple(d["etas"]), d["eps"], _np(d["x_scale"]), tuple(d["empty_horizons"]),
                         d["k_neighbors"])
    if kind == "bma":
        return BmaModel(tuple(from_dict(m) for m in d["members"]), _np(d["log_weights"]),
                        _np(d["log_evidence"]), d["degenerate"])
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(obj, path) -> None:
    payload = {"format": FORMAT_VERSION, **to_dict(obj)}
    Path(path).write_text(json.dumps(payload, indent=None, separators=(",", ":")) + "\n", encoding="utf-8")


def load_model(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    return from_dict(json.loads(path.read_text(encoding="utf-8")))
