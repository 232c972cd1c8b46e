"""Feature extractor, label classifier, and global/local domain discriminators."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    affine,
    as_tensor,
    column,
    grad_reverse,
    relu,
    scale_rows,
    softmax,
)

CHECKPOINT_FORMAT = "daan-checkpoint-v1"

SOURCE, TARGET = 0, 1


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    num_classes: int
    feature_dim: int = 32
    hidden_width: int = 64
    discriminator_hidden: int = 64
    init_seed: int = 0

    def __post_init__(self):
        for name in ("input_dim", "feature_dim", "hidden_width", "discriminator_hidden"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")


def _layer_shapes(cfg: NetConfig):
    d, h, k, C, dh = (
        cfg.input_dim,
        cfg.hidden_width,
        cfg.feature_dim,
        cfg.num_classes,
        cfg.discriminator_hidden,
    )
    layers = [("f0", d, h), ("f1", h, h), ("f2", h, k), ("y", k, C), ("d0", k, dh), ("d1", dh, 2)]
    for c in range(C):
        layers += [(f"l{c}.0", k, dh), (f"l{c}.1", dh, 2)]
    return layers


@dataclass
class DaanModel:
    """Parameter arrays keyed ``<layer>.W`` / ``<layer>.b``.

    Layers: ``f0``-``f2`` extractor, ``y`` classifier, ``d0``/``d1`` global
    discriminator, ``l{c}.0``/``l{c}.1`` the class-``c`` local discriminator.
    """

    cfg: NetConfig
    params: Dict[str, np.ndarray] = field(default_factory=dict)

    def bind(self, tape: Optional[Tape] = None) -> "BoundModel":
        if tape is None:
            return BoundModel(self.cfg, {k: Tensor(v) for k, v in self.params.items()})
        return BoundModel(self.cfg, {k: tape.param(v, k) for k, v in self.params.items()})

    def copy(self) -> "DaanModel":
        return DaanModel(self.cfg, {k: v.copy() for k, v in self.params.items()})

    @property
    def local_names(self) -> List[str]:
        return [k for k in self.params if k.startswith("l")]

    @property
    def global_names(self) -> List[str]:
        return [k for k in self.params if k.startswith("d")]

    @property
    def classifier_names(self) -> List[str]:
        return [k for k in self.params if k.startswith("y.")]

    def equals(self, other: "DaanModel") -> bool:
        return self.cfg == other.cfg and self.params.keys() == other.params.keys() and all(
            np.array_equal(v, other.params[k]) for k, v in self.params.items()
        )


@dataclass
class BoundModel:
    cfg: NetConfig
    p: Dict[str, Tensor]


ModelLike = Union[DaanModel, BoundModel]


def _bound(m: ModelLike) -> BoundModel:
    return m.bind(None) if isinstance(m, DaanModel) else m


def init_model(cfg: NetConfig) -> DaanModel:
    """Glorot-uniform weights, zero biases; a pure function of ``cfg``."""
    rng = np.random.default_rng(cfg.init_seed)
    params = {}
    for name, fan_in, fan_out in _layer_shapes(cfg):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"{name}.W"] = rng.uniform(-s, s, size=(fan_in, fan_out))
        params[f"{name}.b"] = np.zeros(fan_out)
    return DaanModel(cfg, params)


def _check_cols(x: Tensor, n: int, what: str):
    if x.values.ndim != 2 or x.shape[1] != n:
        raise ValueError(f"{what}: expected a (batch, {n}) matrix, got shape {x.shape}")


def _mlp_head(p: Dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    h = relu(affine(x, p[f"{prefix}0.W"], p[f"{prefix}0.b"]))
    return softmax(affine(h, p[f"{prefix}1.W"], p[f"{prefix}1.b"]))


def extract_features(m: ModelLike, x) -> Tensor:
    b = _bound(m)
    x = as_tensor(x)
    _check_cols(x, b.cfg.input_dim, "extract_features")
    p = b.p
    h = relu(affine(x, p["f0.W"], p["f0.b"]))
    h = relu(affine(h, p["f1.W"], p["f1.b"]))
    return affine(h, p["f2.W"], p["f2.b"])


def classify(m: ModelLike, f) -> Tensor:
    b = _bound(m)
    f = as_tensor(f)
    _check_cols(f, b.cfg.feature_dim, "classify")
    return softmax(affine(f, b.p["y.W"], b.p["y.b"]))


def global_domain_logits(m: ModelLike, f, coeff: float = 1.0) -> Tensor:
    """Two-way domain probabilities from the global discriminator, behind a reversal."""
    b = _bound(m)
    f = as_tensor(f)
    _check_cols(f, b.cfg.feature_dim, "global_domain_logits")
    return _mlp_head(b.p, "d", grad_reverse(f, coeff))


def local_domain_logits(
    m: ModelLike, f, yhat, coeff: float = 1.0, detach: bool = True
) -> List[Tensor]:
    """One two-way output per class; discriminator ``c`` sees ``yhat[:, c] * f``."""
    b = _bound(m)
    f, yhat = as_tensor(f), as_tensor(yhat)
    C = b.cfg.num_classes
    _check_cols(f, b.cfg.feature_dim, "local_domain_logits")
    _check_cols(yhat, C, "local_domain_logits (yhat)")
    if yhat.shape[0] != f.shape[0]:
        raise ValueError(f"yhat has {yhat.shape[0]} rows but features have {f.shape[0]}")
    if detach:
        yhat = yhat.detach()
    # reverse the weighted product so an undetached weighting path is reversed too
    return [
        _mlp_head(b.p, f"l{c}.", grad_reverse(scale_rows(f, column(yhat, c)), coeff))
        for c in range(C)
    ]


def predict_proba(m: DaanModel, X) -> np.ndarray:
    return classify(m, extract_features(m, X)).values


# ---------------------------------------------------------------- checkpoints


def save_model(path, m: DaanModel) -> None:
    path = Path(path)
    arrays = {f"param:{k}": v for k, v in m.params.items()}
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format=np.array(CHECKPOINT_FORMAT),
            config=np.array(json.dumps(asdict(m.cfg), sort_keys=True)),
            order=np.array(list(m.params)),
            **arrays,
        )


def load_model(path) -> DaanModel:
    with np.load(Path(path), allow_pickle=False) as z:
        fmt = str(z["format"]) if "format" in z.files else None
        if fmt != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {fmt!r}")
        cfg = NetConfig(**json.loads(str(z["config"])))
        params = {str(k): z[f"param:{k}"].astype(np.float64) for k in z["order"]}
    expected = {f"{n}.{s}" for n, _, _ in _layer_shapes(cfg) for s in ("W", "b")}
    if set(params) != expected:
        raise ValueError(f"{path}: parameter set does not match the stored config")
    return DaanModel(cfg, params)
