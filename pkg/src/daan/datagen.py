"""Synthetic source/target pairs with controllable marginal or conditional shift.

The source is a ring of ``C`` isotropic Gaussian clusters in the first two
coordinates (radius ``4 * spread``); remaining coordinates are noise.
Targets are fresh draws from the same cluster model, then moved:

* marginal    -- the whole cloud is rotated about its centroid and translated;
* conditional -- the class means turn together about the centroid (plus a
                 small per-class jitter), so labels move while the global
                 moments barely do;
* mixed       -- conditional followed by marginal.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

KINDS = ("marginal", "conditional", "mixed")


@dataclass
class ClusterModel:
    means: np.ndarray  # (C, d)
    spread: float

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]


@dataclass
class LabeledDomain:
    X: np.ndarray
    y: np.ndarray
    model: Optional[ClusterModel] = field(default=None, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ValueError(f"X must be (n, d) with n labels; got {self.X.shape}, {self.y.shape}")
        if not np.isfinite(self.X).all():
            raise ValueError("domain features contain NaN or Inf")
        if self.y.size == 0:
            raise ValueError("a labelled domain needs at least one row")
        if self.y.min() < 0:
            raise ValueError("class labels must be non-negative")
        empty = np.flatnonzero(np.bincount(self.y) == 0)
        if empty.size:
            raise ValueError(f"classes {empty.tolist()} have no samples")

    @property
    def num_classes(self) -> int:
        return int(self.y.max()) + 1


@dataclass
class TargetDomain:
    """Unlabelled target features; ``y_eval`` is read only by evaluation code."""

    X: np.ndarray
    y_eval: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError(f"X must be (n, d), got {self.X.shape}")
        if not np.isfinite(self.X).all():
            raise ValueError("domain features contain NaN or Inf")
        if self.y_eval is not None:
            self.y_eval = np.asarray(self.y_eval, dtype=np.int64)
            if self.y_eval.shape != (self.X.shape[0],):
                raise ValueError("y_eval length does not match X")


@dataclass(frozen=True)
class ShiftScenario:
    kind: str = "marginal"
    magnitude: float = 1.0
    seed: int = 0
    conditional_magnitude: Optional[float] = None  # mixed only; defaults to ``magnitude``

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; choose from {KINDS}")
        if self.magnitude < 0 or (self.conditional_magnitude or 0) < 0:
            raise ValueError("shift magnitudes must be >= 0")


def _rotation(deg: float) -> np.ndarray:
    t = np.deg2rad(deg)
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


def _class_counts(n: int, C: int) -> np.ndarray:
    counts = np.full(C, n // C)
    counts[: n % C] += 1
    return counts


def _draw(model: ClusterModel, counts: np.ndarray, rng: np.random.Generator):
    y = np.repeat(np.arange(model.num_classes), counts)
    X = model.means[y] + model.spread * rng.standard_normal((y.size, model.means.shape[1]))
    order = rng.permutation(y.size)
    return X[order], y[order]


def make_source(n: int, C: int, d: int = 2, cluster_spread: float = 1.0, seed=0) -> LabeledDomain:
    if C < 2 or n < C:
        raise ValueError(f"need C >= 2 and n >= C, got n={n}, C={C}")
    if d < 2:
        raise ValueError(f"need d >= 2, got {d}")
    if cluster_spread < 0:
        raise ValueError("cluster_spread must be >= 0")
    angles = 2 * np.pi * np.arange(C) / C
    means = np.zeros((C, d))
    means[:, 0] = np.cos(angles)
    means[:, 1] = np.sin(angles)
    means *= 4.0 * cluster_spread
    model = ClusterModel(means, float(cluster_spread))
    X, y = _draw(model, _class_counts(n, C), np.random.default_rng(seed))
    return LabeledDomain(X, y, model)


def _source_model(src: LabeledDomain) -> ClusterModel:
    if src.model is not None:
        return src.model
    # domain loaded from disk: re-estimate the cluster model
    C = src.num_classes
    means = np.stack([src.X[src.y == c].mean(axis=0) for c in range(C)])
    spread = float(np.sqrt(np.mean((src.X - means[src.y]) ** 2)))
    return ClusterModel(means, spread)


def _centroid(model: ClusterModel, counts: np.ndarray) -> np.ndarray:
    return (counts[:, None] * model.means).sum(axis=0) / counts.sum()


def _conditional_means(model, counts, magnitude, rng) -> np.ndarray:
    # shared turn of half the inter-class angle per unit magnitude, plus a
    # small per-class jitter; the ring stays near-isotropic
    C = model.num_classes
    step = 360.0 / C
    sign = rng.choice((-1.0, 1.0))
    angles = magnitude * (0.5 * step * sign + 0.04 * step * rng.uniform(-1.0, 1.0, C))
    center = _centroid(model, counts)
    means = model.means.copy()
    for c in range(C):
        means[c, :2] = _rotation(angles[c]) @ (means[c, :2] - center[:2]) + center[:2]
    w = counts[:, None] / counts.sum()
    return means - (w * means).sum(axis=0) + center


def _shift(src: LabeledDomain, marginal: float, conditional: float, seed) -> TargetDomain:
    model = _source_model(src)
    counts = np.bincount(src.y, minlength=model.num_classes)
    rng = np.random.default_rng(seed)
    X, y = _draw(model, counts, rng)
    class_angles_rng = np.random.default_rng(rng.integers(2**63))
    direction = rng.standard_normal(2)
    direction /= np.linalg.norm(direction)
    if conditional > 0:
        moved = _conditional_means(model, counts, conditional, class_angles_rng)
        X = X + (moved - model.means)[y]
    if marginal > 0:
        center = _centroid(model, counts)[:2]
        X[:, :2] = (X[:, :2] - center) @ _rotation(15.0 * marginal).T + center
        X[:, :2] += marginal * model.spread * direction
    return TargetDomain(X, y)


def apply_marginal_shift(src: LabeledDomain, magnitude: float, seed=1) -> TargetDomain:
    """Rotate the cloud by ``15 * magnitude`` degrees and translate it by ``magnitude * spread``."""
    if magnitude < 0:
        raise ValueError("magnitude must be >= 0")
    return _shift(src, magnitude, 0.0, seed)


def apply_conditional_shift(src: LabeledDomain, magnitude: float, seed=1) -> TargetDomain:
    """Turn the class means about the centroid by a seeded shared angle plus jitter."""
    if magnitude < 0:
        raise ValueError("magnitude must be >= 0")
    return _shift(src, 0.0, magnitude, seed)


def make_task(
    scenario: ShiftScenario,
    n: int = 600,
    num_classes: int = 3,
    dim: int = 2,
    cluster_spread: float = 1.0,
) -> Tuple[LabeledDomain, TargetDomain]:
    src = make_source(n, num_classes, dim, cluster_spread, seed=[scenario.seed, 0])
    cond = scenario.conditional_magnitude
    if scenario.kind == "marginal":
        m, c = scenario.magnitude, 0.0
    elif scenario.kind == "conditional":
        m, c = 0.0, scenario.magnitude
    else:
        m, c = scenario.magnitude, scenario.magnitude if cond is None else cond
    return src, _shift(src, m, c, [scenario.seed, 1])


# ---------------------------------------------------------------- CSV persistence


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _write_rows(path: Path, header, rows):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    tmp.replace(path)


def _read_rows(path: Path, expect_label: Optional[bool]):
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    has_label = bool(header) and header[-1] == "label"
    feat = header[:-1] if has_label else header
    if feat != [f"x{i}" for i in range(len(feat))]:
        raise ValueError(f"{path}: row 1: header must be x0,...,x{{d-1}}[,label], got {','.join(header)}")
    if expect_label is True and not has_label:
        raise ValueError(f"{path}: row 1: missing label column")
    if expect_label is False and has_label:
        raise ValueError(f"{path}: row 1: unexpected label column")
    X, y = [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {i}: expected {len(header)} fields, got {len(row)}")
        try:
            X.append([float(v) for v in row[: len(feat)]])
            if has_label:
                y.append(int(row[-1]))
        except ValueError as exc:
            raise ValueError(f"{path}: row {i}: {exc}") from None
    if not X:
        raise ValueError(f"{path}: no data rows")
    return np.array(X, dtype=np.float64).reshape(len(X), len(feat)), (np.array(y) if has_label else None)


def write_source(path, dom: LabeledDomain) -> None:
    d = dom.X.shape[1]
    rows = ([*map(_fmt, x), str(int(c))] for x, c in zip(dom.X, dom.y))
    _write_rows(path, [f"x{i}" for i in range(d)] + ["label"], rows)


def read_source(path) -> LabeledDomain:
    X, y = _read_rows(path, expect_label=True)
    return LabeledDomain(X, y)


def write_target(prefix, dom: TargetDomain) -> Tuple[Path, Optional[Path]]:
    """Write ``<prefix>_x.csv`` and, when labels are known, ``<prefix>_eval.csv``."""
    prefix = Path(prefix)
    xpath = prefix.with_name(prefix.name + "_x.csv")
    _write_rows(xpath, [f"x{i}" for i in range(dom.X.shape[1])], (map(_fmt, x) for x in dom.X))
    if dom.y_eval is None:
        return xpath, None
    epath = prefix.with_name(prefix.name + "_eval.csv")
    _write_rows(epath, ["label"], ([str(int(c))] for c in dom.y_eval))
    return xpath, epath


def read_target(prefix) -> TargetDomain:
    """Read ``<prefix>_x.csv``; ``<prefix>_eval.csv`` is optional."""
    prefix = Path(prefix)
    X, _ = _read_rows(prefix.with_name(prefix.name + "_x.csv"), expect_label=False)
    epath = prefix.with_name(prefix.name + "_eval.csv")
    y_eval = read_eval_labels(epath) if epath.exists() else None
    if y_eval is not None and y_eval.shape[0] != X.shape[0]:
        raise ValueError(f"{epath}: {y_eval.shape[0]} labels for {X.shape[0]} target rows")
    return TargetDomain(X, y_eval)


def read_eval_labels(path) -> np.ndarray:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    if [h.strip() for h in rows[0]] != ["label"]:
        raise ValueError(f"{path}: row 1: header must be 'label'")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 1:
            raise ValueError(f"{path}: row {i}: expected 1 field, got {len(row)}")
        try:
            out.append(int(row[0]))
        except ValueError as exc:
            raise ValueError(f"{path}: row {i}: {exc}") from None
    if not out:
        raise ValueError(f"{path}: no data rows")
    return np.array(out, dtype=np.int64)


def write_dataset(directory, source: LabeledDomain, target: TargetDomain) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_source(directory / "source.csv", source)
    write_target(directory / "target", target)
    return directory


def read_dataset(directory) -> Tuple[LabeledDomain, TargetDomain]:
    directory = Path(directory)
    return read_source(directory / "source.csv"), read_target(directory / "target")
