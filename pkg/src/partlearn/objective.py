"""Regularized least-squares objectives over part/modality structured weights.

All variants share the summed squared residual ``||X W - Y||_F^2`` for a
weight matrix W of shape (n_features, n_classes) and differ in the penalty:

``l1``
    entrywise absolute sum of W (smoothed).
``l2``
    squared Frobenius norm of W (exact, needs no smoothing).
``mp``
    per class, sum of Euclidean norms of each part's coefficient block:
    group sparsity at part level, modalities within a part tied together.
``mmmp``
    a row-wise L2,1 term coupling classes (feature selection shared across
    tasks) plus, per class and part, the square root of the summed squared
    L4 norms of that part's modality blocks: parts switch off jointly while
    modalities within a surviving part keep individual freedom.
``warm_start``
    the single-modality objective used to initialize: row-wise L2,1 plus
    the part-level group term, with its own lambda pair.
``fine_tune``
    the ``mmmp`` penalty plus a proximity term ``lambda3 ||W - anchor||_F^2``
    keeping the solution near a merged warm-start anchor.

Every fractional root in a penalty receives the smoothing ``epsilon`` of
the config, so objective values and gradients are those of the smoothed
problem; gradients are exact derivatives of the returned values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .layout import FeatureLayout
from .norms import DEFAULT_EPSILON, check_epsilon

__all__ = [
    "VARIANTS",
    "ObjectiveConfig",
    "one_hot",
    "validate_label_matrix",
    "squared_loss",
    "multitask_row_penalty",
    "objective_value_and_grad",
    "make_objective",
]

VARIANTS = ("l1", "l2", "mp", "mmmp", "warm_start", "fine_tune")

# variants whose penalty reads the part/modality structure
_NEEDS_LAYOUT = ("mp", "mmmp", "warm_start", "fine_tune")


@dataclass(frozen=True)
class ObjectiveConfig:
    """Penalty variant and weights.

    ``warm_lambda1`` / ``warm_lambda2`` apply to the ``warm_start`` variant
    and fall back to ``lambda1`` / ``lambda2`` when left as None.
    """

    variant: str = "mmmp"
    lambda1: float = 0.0
    lambda2: float = 0.0
    lambda3: float = 0.0
    warm_lambda1: float | None = None
    warm_lambda2: float | None = None
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        for name in ("lambda1", "lambda2", "lambda3"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)
        for name in ("warm_lambda1", "warm_lambda2"):
            v = getattr(self, name)
            if v is not None:
                v = float(v)
                if not np.isfinite(v) or v < 0:
                    raise ValueError(f"{name} must be finite and >= 0, got {v}")
                object.__setattr__(self, name, v)
        check_epsilon(self.epsilon, allow_zero=False)

    @property
    def effective_warm_lambda1(self) -> float:
        return self.lambda1 if self.warm_lambda1 is None else self.warm_lambda1

    @property
    def effective_warm_lambda2(self) -> float:
        return self.lambda2 if self.warm_lambda2 is None else self.warm_lambda2


# ----------------------------------------------------------------------
# labels


def one_hot(y, n_classes: int | None = None) -> np.ndarray:
    """Integer class indices to a one-hot {0,1} matrix with unit row sums."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-d, got shape {y.shape}")
    if y.size and (np.any(y < 0) or y.dtype.kind not in "iu"):
        raise ValueError("labels must be non-negative integers")
    C = int(y.max()) + 1 if n_classes is None else int(n_classes)
    if y.size and y.max() >= C:
        raise ValueError(f"label {int(y.max())} out of range for {C} classes")
    Y = np.zeros((y.size, C))
    Y[np.arange(y.size), y] = 1.0
    return Y


def validate_label_matrix(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise ValueError(f"label matrix must be 2-d, got shape {Y.shape}")
    if not np.all((Y == 0.0) | (Y == 1.0)):
        raise ValueError("label matrix entries must be 0 or 1")
    if not np.all(Y.sum(axis=1) == 1.0):
        raise ValueError("each label matrix row must contain exactly one 1")
    return Y


# ----------------------------------------------------------------------
# loss and penalty terms; each returns (value, gradient wrt W)


def squared_loss(X, W, Y) -> float:
    """Summed squared residual ``||X W - Y||_F^2`` (not averaged over rows)."""
    R = np.asarray(X) @ np.asarray(W) - np.asarray(Y)
    return float(np.sum(R * R))


def _loss_term(X, W, Y):
    R = X @ W - Y
    return float(np.sum(R * R)), 2.0 * (X.T @ R)


def _l1_term(W, eps):
    t = np.sqrt(W * W + eps)
    return float(np.sum(t)), W / t


def _l2sq_term(W):
    return float(np.sum(W * W)), 2.0 * W


def _row_term(W, eps):
    t = np.sqrt(np.sum(W * W, axis=1) + eps)
    return float(np.sum(t)), W / t[:, None]


def _part_term(W, layout, eps):
    val = 0.0
    grad = np.empty_like(W)
    for j in range(layout.n_parts):
        sl = layout.part_slice(j)
        t = np.sqrt(np.sum(W[sl] * W[sl], axis=0) + eps)
        val += float(np.sum(t))
        grad[sl] = W[sl] / t[None, :]
    return val, grad


def _hier_term(W, layout, eps):
    val = 0.0
    grad = np.empty_like(W)
    for j in range(layout.n_parts):
        blocks = layout.part_blocks(j)
        cubes = [W[b.slice] ** 3 for b in blocks]
        t = [np.sqrt(np.sum(W[b.slice] ** 4, axis=0) + eps) for b in blocks]
        u = np.sqrt(sum(t) + eps)
        val += float(np.sum(u))
        for b, cube, t_m in zip(blocks, cubes, t):
            grad[b.slice] = cube / (t_m * u)[None, :]
    return val, grad


def multitask_row_penalty(W, eps: float = 0.0) -> float:
    """Sum over feature rows of the Euclidean norm across classes.

    This is the term coupling the per-class regressors: a row reaches zero
    only by being zero for every class at once.  ``eps=0`` gives the exact
    value; positive eps the smoothed surrogate used inside objectives.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2:
        raise ValueError(f"W must be 2-d, got shape {W.shape}")
    check_epsilon(eps)
    return float(np.sum(np.sqrt(np.sum(W * W, axis=1) + eps)))


# ----------------------------------------------------------------------
# assembly


def _check_inputs(X, W, Y, layout, config, anchor):
    X = np.asarray(X, dtype=float)
    W = np.asarray(W, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or W.ndim != 2 or Y.ndim != 2:
        raise ValueError("X, W, Y must all be 2-d arrays")
    n, d = X.shape
    if W.shape[0] != d:
        raise ValueError(f"X has {d} columns but W has {W.shape[0]} rows")
    if Y.shape != (n, W.shape[1]):
        raise ValueError(
            f"Y shape {Y.shape} does not match {n} samples x {W.shape[1]} classes"
        )
    for name, a in (("X", X), ("W", W), ("Y", Y)):
        if not np.all(np.isfinite(a)):
            raise ValueError(f"non-finite entries in {name}")
    if config.variant in _NEEDS_LAYOUT:
        if layout is None:
            raise ValueError(f"variant {config.variant!r} requires a feature layout")
        if layout.total_dim != d:
            raise ValueError(
                f"layout describes {layout.total_dim} columns but X has {d}"
            )
    if config.variant == "fine_tune":
        if anchor is None:
            raise ValueError("fine_tune variant requires an anchor weight matrix")
        anchor = np.asarray(anchor, dtype=float)
        if anchor.shape != W.shape:
            raise ValueError(
                f"anchor shape {anchor.shape} does not match W shape {W.shape}"
            )
        if not np.all(np.isfinite(anchor)):
            raise ValueError("non-finite entries in anchor")
    elif anchor is not None:
        raise ValueError(f"variant {config.variant!r} takes no anchor")
    return X, W, Y, anchor


def objective_value_and_grad(
    X,
    W,
    Y,
    layout: FeatureLayout | None = None,
    config: ObjectiveConfig = ObjectiveConfig(),
    anchor=None,
) -> tuple[float, np.ndarray]:
    """Value and exact gradient of the smoothed objective at W.

    Returns
    -------
    value : float
    grad : ndarray, same shape as W
    """
    X, W, Y, anchor = _check_inputs(X, W, Y, layout, config, anchor)
    eps = config.epsilon
    val, grad = _loss_term(X, W, Y)

    variant = config.variant
    if variant == "l1":
        v, g = _l1_term(W, eps)
        val += config.lambda2 * v
        grad += config.lambda2 * g
    elif variant == "l2":
        v, g = _l2sq_term(W)
        val += config.lambda2 * v
        grad += config.lambda2 * g
    elif variant == "mp":
        v, g = _part_term(W, layout, eps)
        val += config.lambda2 * v
        grad += config.lambda2 * g
    elif variant == "warm_start":
        l1_, l2_ = config.effective_warm_lambda1, config.effective_warm_lambda2
        if l1_ > 0:
            v, g = _row_term(W, eps)
            val += l1_ * v
            grad += l1_ * g
        if l2_ > 0:
            v, g = _part_term(W, layout, eps)
            val += l2_ * v
            grad += l2_ * g
    else:  # mmmp, fine_tune
        if config.lambda1 > 0:
            v, g = _row_term(W, eps)
            val += config.lambda1 * v
            grad += config.lambda1 * g
        if config.lambda2 > 0:
            v, g = _hier_term(W, layout, eps)
            val += config.lambda2 * v
            grad += config.lambda2 * g
        if variant == "fine_tune":
            D = W - anchor
            val += config.lambda3 * float(np.sum(D * D))
            grad += 2.0 * config.lambda3 * D
    return val, grad


def make_objective(
    X,
    Y,
    layout: FeatureLayout | None,
    config: ObjectiveConfig,
    anchor=None,
) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    """Flat-vector objective callable for the optimizer.

    The returned function maps a flattened weight vector (row-major over a
    (n_features, n_classes) matrix) to ``(value, flat gradient)``.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    d, C = X.shape[1], Y.shape[1]

    def fun(w: np.ndarray) -> tuple[float, np.ndarray]:
        W = np.asarray(w, dtype=float).reshape(d, C)
        val, grad = objective_value_and_grad(X, W, Y, layout, config, anchor)
        return val, grad.ravel()

    return fun
