"""Minibatch SGD for the adversarial objective with per-epoch weight updates."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import Tape, backward, take_rows
from .datagen import LabeledDomain, TargetDomain
from .losses import global_domain_loss, label_loss, local_domain_loss, objective
from .net import (
    SOURCE,
    TARGET,
    DaanModel,
    NetConfig,
    classify,
    extract_features,
    global_domain_logits,
    init_model,
    local_domain_logits,
    predict_proba,
)
from .omega import OmegaState, a_distance

METRICS_COLUMNS = ("epoch", "loss_y", "loss_g", "loss_l", "omega", "lr", "src_acc", "tgt_acc", "seconds")

Omega = Union[str, float]


def parse_omega(text: Union[str, float]) -> Omega:
    """``"dynamic"``, ``"fixed:<v>"`` or a bare number."""
    if isinstance(text, (int, float)):
        v = float(text)
    else:
        s = str(text).strip().lower()
        if s == "dynamic":
            return "dynamic"
        if s.startswith("fixed:"):
            s = s[len("fixed:"):]
        try:
            v = float(s)
        except ValueError:
            raise ValueError(f"omega must be 'dynamic' or 'fixed:<v>', got {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"fixed omega must lie in [0, 1], got {v}")
    return v


def format_omega(omega: Omega) -> str:
    return "dynamic" if omega == "dynamic" else f"fixed:{float(omega):g}"


@dataclass(frozen=True)
class TrainConfig:
    net: NetConfig
    lam: float = 1.0
    batch_size: int = 32
    epochs: int = 30
    eta0: float = 0.01
    alpha: float = 10.0
    beta: float = 0.75
    momentum: float = 0.9
    omega: Omega = "dynamic"
    seed: int = 0
    classifier_lr_mult: float = 10.0
    grl_coeff: float = 1.0
    detach_weights: bool = True
    local_class_norm: bool = False
    omega_ema: Optional[float] = None
    mask_fraction: float = 1e-6

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ValueError(f"eta0 must be > 0, got {self.eta0}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        object.__setattr__(self, "omega", parse_omega(self.omega))


@dataclass
class MetricsRow:
    epoch: int
    L_y: float
    L_g: float
    L_l: float
    omega: float
    lr: float
    source_accuracy: float
    target_accuracy: float
    wall_seconds: float


@dataclass
class EpochLosses:
    L_y: float
    L_g: float
    L_l: float
    per_class_local: np.ndarray
    steps: int


def lr_at(k: float, cfg: TrainConfig) -> float:
    """``eta0 / (1 + alpha * k) ** beta`` for training progress ``k`` in [0, 1]."""
    if not 0.0 <= k <= 1.0:
        raise ValueError(f"training progress must lie in [0, 1], got {k}")
    return cfg.eta0 / (1.0 + cfg.alpha * k) ** cfg.beta


class MomentumSGD:
    """``v <- mu * v + g``; ``theta <- theta - lr * v``. Buffers start at zero."""

    def __init__(self, params: Dict[str, np.ndarray], momentum: float):
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads, lr: float, lr_mult: Dict[str, float]):
        mu = self.momentum
        for name, g in grads.items():
            v = self.velocity[name]
            v *= mu
            v += g
            params[name] -= (lr * lr_mult.get(name, 1.0)) * v


class _Stream:
    """Endless reshuffled index stream over ``n`` rows."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n, self.rng = n, rng
        self.order = rng.permutation(n)
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            if self.pos == self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            chunk = self.order[self.pos:self.pos + k]
            self.pos += chunk.size
            k -= chunk.size
            out.append(chunk)
        return np.concatenate(out)


def steps_per_epoch(n_source: int, n_target: int, batch_size: int) -> int:
    return math.ceil(max(n_source, n_target) / (batch_size // 2))


def _check_pair(Xs, ys, Xt, cfg: TrainConfig):
    if Xs.shape[0] == 0 or Xt.shape[0] == 0:
        raise ValueError("source and target domains must both be non-empty")
    d = cfg.net.input_dim
    if Xs.shape[1] != d or Xt.shape[1] != d:
        raise ValueError(f"expected {d} input columns, got {Xs.shape[1]} (source), {Xt.shape[1]} (target)")
    if ys.shape != (Xs.shape[0],):
        raise ValueError("source labels do not match source rows")
    if ys.min() < 0 or ys.max() >= cfg.net.num_classes:
        raise ValueError(f"source labels must lie in [0, {cfg.net.num_classes})")


def train_step(model: DaanModel, xs, ys, xt, cfg: TrainConfig, omega: float):
    """Forward all heads on one batch; returns (gradients, losses)."""
    tape = Tape()
    m = model.bind(tape)
    ns = xs.shape[0]
    x = np.concatenate([xs, xt])
    d = np.concatenate([np.full(ns, SOURCE), np.full(xt.shape[0], TARGET)])
    f = extract_features(m, x)
    yhat = classify(m, f)
    L_y = label_loss(take_rows(yhat, 0, ns), ys)
    L_g = global_domain_loss(global_domain_logits(m, f, cfg.grl_coeff), d)
    local = local_domain_logits(m, f, yhat, cfg.grl_coeff, detach=cfg.detach_weights)
    L_l, per_class = local_domain_loss(local, d, cfg.net.num_classes, class_norm=cfg.local_class_norm)
    grads = backward(objective(L_y, L_g, L_l, omega, cfg.lam), tape)
    losses = (L_y.item(), L_g.item(), L_l.item(), np.array([t.item() for t in per_class]))
    return grads, losses, yhat.values.sum(axis=0)


def train_epoch(
    model: DaanModel,
    Xs: np.ndarray,
    ys: np.ndarray,
    Xt: np.ndarray,
    cfg: TrainConfig,
    omega: float,
    step_range: Tuple[int, int],
    rng: np.random.Generator,
    optimizer: MomentumSGD,
    omega_state: Optional[OmegaState] = None,
) -> EpochLosses:
    """One pass of balanced half-source/half-target batches, updating ``model`` in place.

    ``step_range`` is ``(first_global_step, total_steps)`` and sets the
    training progress used by the learning-rate schedule.
    """
    Xs, Xt, ys = np.asarray(Xs, float), np.asarray(Xt, float), np.asarray(ys)
    _check_pair(Xs, ys, Xt, cfg)
    half = cfg.batch_size // 2
    n_steps = steps_per_epoch(Xs.shape[0], Xt.shape[0], cfg.batch_size)
    step0, total_steps = step_range
    src, tgt = _Stream(Xs.shape[0], rng), _Stream(Xt.shape[0], rng)
    lr_mult = {k: cfg.classifier_lr_mult for k in model.classifier_names}
    sums = np.zeros(3)
    per_class_sum = np.zeros(cfg.net.num_classes)
    for i in range(n_steps):
        si, ti = src.take(half), tgt.take(half)
        grads, (ly, lg, ll, pc), mass = train_step(model, Xs[si], ys[si], Xt[ti], cfg, omega)
        k = min((step0 + i) / max(total_steps, 1), 1.0)
        optimizer.step(model.params, grads, lr_at(k, cfg), lr_mult)
        sums += (ly, lg, ll)
        per_class_sum += pc
        if omega_state is not None:
            omega_state.accumulate(lg, pc, mass, batch_size=2 * half)
    sums /= n_steps
    return EpochLosses(sums[0], sums[1], sums[2], per_class_sum / n_steps, n_steps)


def evaluate(model: DaanModel, X, y) -> float:
    """Fraction of rows whose arg-max class matches ``y`` (ties go to the lowest index)."""
    X, y = np.asarray(X, float), np.asarray(y)
    if X.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty set")
    if y.shape != (X.shape[0],):
        raise ValueError(f"{X.shape[0]} rows but {y.shape[0] if y.ndim else 0} labels")
    return float(np.mean(np.argmax(predict_proba(model, X), axis=1) == y))


@dataclass
class FitResult:
    model: DaanModel
    metrics: List[MetricsRow]
    omega_history: List[Tuple[int, float]] = field(default_factory=list)
    last_global_loss: Optional[float] = None

    @property
    def global_distance(self) -> Optional[float]:
        """Proxy A-distance of the final epoch's mean global discriminator loss."""
        return None if self.last_global_loss is None else a_distance(self.last_global_loss)


def fit(
    cfg: TrainConfig,
    source: LabeledDomain,
    target: Union[TargetDomain, np.ndarray],
    model: Optional[DaanModel] = None,
) -> FitResult:
    """Train from ``init_model(cfg.net)`` (or ``model``) for ``cfg.epochs`` epochs.

    Target labels, when present, feed only the ``target_accuracy`` column.
    """
    if isinstance(target, TargetDomain):
        Xt, y_eval = target.X, target.y_eval
    else:
        Xt, y_eval = np.asarray(target, float), None
    model = init_model(cfg.net) if model is None else model
    rng = np.random.default_rng(cfg.seed)
    optimizer = MomentumSGD(model.params, cfg.momentum)
    state = OmegaState(
        cfg.net.num_classes, current_omega=1.0, mask_fraction=cfg.mask_fraction, ema=cfg.omega_ema
    )
    n_steps = steps_per_epoch(source.X.shape[0], Xt.shape[0], cfg.batch_size)
    total = n_steps * cfg.epochs
    rows, last_lg = [], None
    for epoch in range(cfg.epochs):
        omega = state.current_omega if cfg.omega == "dynamic" else float(cfg.omega)
        t0 = time.perf_counter()
        dynamic = cfg.omega == "dynamic"
        losses = train_epoch(
            model, source.X, source.y, Xt, cfg, omega, (epoch * n_steps, total), rng, optimizer,
            state if dynamic else None,
        )
        if dynamic:
            state.epoch_update()
        src_acc = evaluate(model, source.X, source.y)
        tgt_acc = evaluate(model, Xt, y_eval) if y_eval is not None else float("nan")
        last_lg = losses.L_g
        rows.append(MetricsRow(
            epoch + 1, losses.L_y, losses.L_g, losses.L_l, omega,
            lr_at(epoch * n_steps / total, cfg), src_acc, tgt_acc, time.perf_counter() - t0,
        ))
    history = state.history if cfg.omega == "dynamic" else [(e, float(cfg.omega)) for e in range(cfg.epochs + 1)]
    return FitResult(model, rows, list(history), last_lg)


# ---------------------------------------------------------------- metrics CSV


def _g9(v: float) -> str:
    return "nan" if v != v else format(float(v), ".9g")


def metrics_csv(rows: Sequence[MetricsRow], wall_clock: bool = False) -> str:
    """Render rows; with ``wall_clock=False`` the seconds column is written as 0."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for r in rows:
        w.writerow([
            r.epoch, _g9(r.L_y), _g9(r.L_g), _g9(r.L_l), _g9(r.omega), _g9(r.lr),
            _g9(r.source_accuracy), _g9(r.target_accuracy), _g9(r.wall_seconds if wall_clock else 0.0),
        ])
    return buf.getvalue()


def write_metrics(path, rows: Sequence[MetricsRow], wall_clock: bool = False) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(metrics_csv(rows, wall_clock))
    tmp.replace(path)
    return path


def read_metrics(path) -> List[MetricsRow]:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != METRICS_COLUMNS:
        raise ValueError(f"{path}: row 1: header must be {','.join(METRICS_COLUMNS)}")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(METRICS_COLUMNS):
            raise ValueError(f"{path}: row {i}: expected {len(METRICS_COLUMNS)} fields")
        try:
            out.append(MetricsRow(int(row[0]), *map(float, row[1:])))
        except ValueError as exc:
            raise ValueError(f"{path}: row {i}: {exc}") from None
    return out


def with_omega(cfg: TrainConfig, omega: Omega) -> TrainConfig:
    return replace(cfg, omega=omega)
