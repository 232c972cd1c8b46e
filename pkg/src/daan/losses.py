"""Classification, global and local domain losses, and the combined objective."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .autodiff import Tensor, as_tensor, cross_entropy, mean, mul
from .net import SOURCE, TARGET


@dataclass
class LossBundle:
    L_y: float
    L_g: float
    L_l: float
    per_class_local: List[float]
    total: float


def label_loss(yhat_src, y_src) -> Tensor:
    """Mean cross-entropy over source rows only."""
    yhat_src = as_tensor(yhat_src)
    y = np.asarray(y_src)
    if yhat_src.values.ndim != 2 or yhat_src.shape[0] == 0:
        raise ValueError("label_loss needs a non-empty (n_s, C) batch of source predictions")
    return mean(cross_entropy(yhat_src, y))


def _domain_labels(d) -> np.ndarray:
    d = np.asarray(d)
    if not ((d == SOURCE) | (d == TARGET)).all():
        raise ValueError("domain labels must be 0 (source) or 1 (target)")
    if not ((d == SOURCE).any() and (d == TARGET).any()):
        raise ValueError("domain loss needs both source and target rows in the batch")
    return d.astype(np.int64)


def global_domain_loss(dhat, d) -> Tensor:
    """Mean two-way cross-entropy over the combined source+target batch."""
    return _domain_ce(dhat, _domain_labels(d))


def _domain_ce(dhat, d: np.ndarray) -> Tensor:
    dhat = as_tensor(dhat)
    if dhat.shape != (d.shape[0], 2):
        raise ValueError(f"dhat must be ({d.shape[0]}, 2), got {dhat.shape}")
    return mean(cross_entropy(dhat, d))


def local_domain_loss(
    dhat_per_class: Sequence, d, num_classes: int = None, class_norm: bool = False
) -> Tuple[Tensor, List[Tensor]]:
    """Per-class discriminator losses and their sum.

    Each per-class term is a plain batch mean. The combined term sums the
    classes (``class_norm=True`` divides that sum by ``C``).
    """
    if num_classes is not None and len(dhat_per_class) != num_classes:
        raise ValueError(f"expected {num_classes} local predictions, got {len(dhat_per_class)}")
    if len(dhat_per_class) < 2:
        raise ValueError("local_domain_loss needs at least 2 classes")
    d = _domain_labels(d)
    per_class = [_domain_ce(dh, d) for dh in dhat_per_class]
    acc = per_class[0]
    for term in per_class[1:]:
        acc = acc + term
    if class_norm:
        acc = mul(acc, 1.0 / len(per_class))
    return acc, per_class


def _check_weights(omega: float, lam: float):
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"omega must lie in [0, 1], got {omega}")
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")


def total_loss(L_y, L_g, L_l, omega: float, lam: float):
    """``L_y - lam * ((1 - omega) * L_g + omega * L_l)``, the saddle-point value."""
    _check_weights(omega, lam)
    return L_y - lam * ((1.0 - omega) * L_g + omega * L_l)


def objective(L_y: Tensor, L_g: Tensor, L_l: Tensor, omega: float, lam: float) -> Tensor:
    """Descent target when the domain losses were built on reversed features.

    The sign flip that makes the extractor maximise the domain losses is done
    by the reversal nodes, so the domain terms enter with a plus sign here.
    Zero-weight terms are left out of the graph entirely.
    """
    _check_weights(omega, lam)
    out = as_tensor(L_y)
    if lam > 0 and omega < 1.0:
        out = out + mul(L_g, lam * (1.0 - omega))
    if lam > 0 and omega > 0.0:
        out = out + mul(L_l, lam * omega)
    return out


def bundle(L_y, L_g, L_l, per_class, omega: float, lam: float) -> LossBundle:
    f = lambda t: as_tensor(t).item()  # noqa: E731
    vals = (f(L_y), f(L_g), f(L_l))
    return LossBundle(*vals, [f(t) for t in per_class], total_loss(*vals, omega, lam))

