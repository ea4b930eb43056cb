r"""Nested mixed norms over grouped coefficients, with optional smoothing.

Two families are implemented.  The two-level norm applies an inner
:math:`\ell_q` norm to each group of a partition and an outer
:math:`\ell_p` norm across groups,

.. math::  N(z) = \Bigl(\sum_i \|z_{g_i}\|_q^p\Bigr)^{1/p} .

The three-level norm inserts another grouping between those, where the
inner partition must refine the outer one,

.. math::
    N(z) = \Bigl(\sum_i \bigl(\sum_{j}
           \|z_{g_{ij}}\|_r^q\bigr)^{p/q}\Bigr)^{1/p} .

Setting ``(r, q, p) = (2, 2, 1)`` collapses the middle level, recovering
the two-level ``(q, p) = (2, 1)`` norm over the outer partition exactly.

Group norms are non-differentiable wherever a whole group vanishes, which
is precisely where sparse solutions live.  To keep quasi-Newton solvers
applicable, a small ``eps`` is added under every fractional root before it
is taken; powers with exponent 1 (or larger) take no ``eps``.  The smoothed
value is never below the exact one and converges to it as ``eps`` goes to
zero.  Gradient routines differentiate the smoothed expression exactly, so
finite differences of the smoothed value must match them to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "DEFAULT_EPSILON",
    "MAX_EPSILON",
    "NormSpec",
    "mixed_norm",
    "mixed_norm_grad",
    "hierarchical_norm",
    "hierarchical_norm_grad",
    "norm_value",
    "norm_gradient",
    "group_magnitudes",
]

DEFAULT_EPSILON = 1e-8
MAX_EPSILON = 1e-4


def check_epsilon(eps: float, allow_zero: bool = True) -> float:
    eps = float(eps)
    if not np.isfinite(eps) or eps < 0 or eps > MAX_EPSILON:
        raise ValueError(f"eps must lie in [0, {MAX_EPSILON}], got {eps}")
    if eps == 0 and not allow_zero:
        raise ValueError("smoothing eps must be positive for gradients")
    return eps


def _eps_under(exponent: float, eps: float) -> float:
    """Smoothing term added under a power: only fractional roots get eps."""
    return eps if exponent < 1.0 else 0.0


def _as_vector(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ValueError(f"expected a vector, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite entries in input vector")
    return z


def _as_groups(groups, n: int) -> list[np.ndarray]:
    """Coerce to index arrays and require an exact partition of range(n)."""
    out = []
    for g in groups:
        g = np.asarray(g, dtype=int)
        if g.ndim != 1 or g.size == 0:
            raise ValueError("each group must be a non-empty 1-d index collection")
        out.append(g)
    if not out:
        raise ValueError("no groups given")
    flat = np.concatenate(out)
    if flat.size != n or np.unique(flat).size != n or flat.min() < 0 or flat.max() >= n:
        raise ValueError(
            f"groups do not partition range({n}): {flat.size} indices, "
            f"{np.unique(flat).size} unique"
        )
    return out


def _check_exponent_pair(q: float, p: float):
    if p < 1 or q < p:
        raise ValueError(f"exponents must satisfy q >= p >= 1, got q={q}, p={p}")


# ----------------------------------------------------------------------
# two-level


def mixed_norm(z, groups, q: float = 2.0, p: float = 1.0, eps: float = 0.0) -> float:
    """Two-level Lq-within / Lp-across norm of `z` over a group partition.

    With ``eps > 0`` every fractional root becomes ``(. + eps)**e``, giving
    the smoothed surrogate; ``eps=0`` gives the exact norm.
    """
    z = _as_vector(z)
    q, p = float(q), float(p)
    _check_exponent_pair(q, p)
    eps = check_epsilon(eps)
    e_q = _eps_under(1.0 / q, eps)
    s = 0.0
    for g in _as_groups(groups, z.size):
        a = np.sum(np.abs(z[g]) ** q)
        s += (a + e_q) ** (p / q)
    return float((s + _eps_under(1.0 / p, eps)) ** (1.0 / p))


def mixed_norm_grad(z, groups, q: float = 2.0, p: float = 1.0,
                    eps: float = DEFAULT_EPSILON) -> np.ndarray:
    """Exact gradient of the eps-smoothed two-level norm."""
    z = _as_vector(z)
    q, p = float(q), float(p)
    _check_exponent_pair(q, p)
    if q < 2:
        raise ValueError("gradient requires inner exponent >= 2 (smooth power)")
    eps = check_epsilon(eps, allow_zero=False)
    e_q = _eps_under(1.0 / q, eps)
    e_p = _eps_under(1.0 / p, eps)
    grp = _as_groups(groups, z.size)
    a = np.array([np.sum(np.abs(z[g]) ** q) for g in grp])
    s = np.sum((a + e_q) ** (p / q))
    outer = (s + e_p) ** (1.0 / p - 1.0)
    grad = np.empty_like(z)
    for g, a_i in zip(grp, a):
        zi = z[g]
        inner = (a_i + e_q) ** ((p - q) / q)
        grad[g] = outer * inner * np.abs(zi) ** (q - 1.0) * np.sign(zi)
    return grad


# ----------------------------------------------------------------------
# three-level


def _nested_groups(z, outer_groups, inner_groups):
    """Validate that inner blocks refine the outer partition."""
    outer = _as_groups(outer_groups, z.size)
    if len(inner_groups) != len(outer):
        raise ValueError(
            f"{len(outer)} outer groups but inner blocks for {len(inner_groups)}"
        )
    inner = []
    for g, blocks in zip(outer, inner_groups):
        blocks = [np.asarray(b, dtype=int) for b in blocks]
        if any(b.ndim != 1 or b.size == 0 for b in blocks) or not blocks:
            raise ValueError("each inner block must be a non-empty 1-d index collection")
        flat = np.concatenate(blocks)
        if not np.array_equal(np.sort(flat), np.sort(g)):
            raise ValueError(
                "inner partition does not refine the outer one "
                f"(outer group of size {g.size}, inner blocks cover {flat.size})"
            )
        inner.append(blocks)
    return outer, inner


def _check_exponent_triple(r: float, q: float, p: float):
    if p < 1 or q < p or r < q:
        raise ValueError(
            f"exponents must satisfy r >= q >= p >= 1, got r={r}, q={q}, p={p}"
        )


def hierarchical_norm(z, outer_groups, inner_groups, r: float = 4.0,
                      q: float = 2.0, p: float = 1.0, eps: float = 0.0) -> float:
    """Three-level Lr/Lq/Lp norm over nested partitions.

    `inner_groups[i]` lists the blocks refining `outer_groups[i]`.  The
    ``(2, 2, 1)`` configuration reduces exactly to the two-level ``(2, 1)``
    norm over the outer partition, smoothed or not, because an exponent of
    1 on the middle level takes no eps.
    """
    z = _as_vector(z)
    r, q, p = float(r), float(q), float(p)
    _check_exponent_triple(r, q, p)
    eps = check_epsilon(eps)
    outer, inner = _nested_groups(z, outer_groups, inner_groups)
    e_r = _eps_under(q / r, eps)
    e_q = _eps_under(p / q, eps)
    e_p = _eps_under(1.0 / p, eps)
    s = 0.0
    for blocks in inner:
        v = 0.0
        for b in blocks:
            bsum = np.sum(np.abs(z[b]) ** r)
            v += (bsum + e_r) ** (q / r)
        s += (v + e_q) ** (p / q)
    return float((s + e_p) ** (1.0 / p))


def hierarchical_norm_grad(z, outer_groups, inner_groups, r: float = 4.0,
                           q: float = 2.0, p: float = 1.0,
                           eps: float = DEFAULT_EPSILON) -> np.ndarray:
    """Exact gradient of the eps-smoothed three-level norm."""
    z = _as_vector(z)
    r, q, p = float(r), float(q), float(p)
    _check_exponent_triple(r, q, p)
    if r < 2:
        raise ValueError("gradient requires innermost exponent >= 2 (smooth power)")
    eps = check_epsilon(eps, allow_zero=False)
    outer, inner = _nested_groups(z, outer_groups, inner_groups)
    e_r = _eps_under(q / r, eps)
    e_q = _eps_under(p / q, eps)
    e_p = _eps_under(1.0 / p, eps)

    bsums = [[np.sum(np.abs(z[b]) ** r) for b in blocks] for blocks in inner]
    vsums = [sum((bs + e_r) ** (q / r) for bs in row) for row in bsums]
    s = sum((v + e_q) ** (p / q) for v in vsums)

    # Chain rule through the three nested powers; the exponent prefactors
    # (1/p)(p/q)(q/r)r cancel to 1.
    outer_fac = (s + e_p) ** (1.0 / p - 1.0)
    grad = np.empty_like(z)
    for blocks, row, v in zip(inner, bsums, vsums):
        mid_fac = (v + e_q) ** (p / q - 1.0)
        for b, bs in zip(blocks, row):
            zb = z[b]
            inner_fac = (bs + e_r) ** (q / r - 1.0)
            grad[b] = (
                outer_fac * mid_fac * inner_fac
                * np.abs(zb) ** (r - 1.0) * np.sign(zb)
            )
    return grad


# ----------------------------------------------------------------------
# spec-driven entry points


@dataclass(frozen=True)
class NormSpec:
    """A nested-norm configuration: exponents innermost-first, plus groups.

    ``exponents`` of length 1 select a plain norm (p=1 entrywise, p=2
    Euclidean), length 2 a two-level norm (`groups` is a partition), and
    length 3 a three-level norm (`groups[i]` lists the inner blocks of
    outer group i, whose union is the outer group).
    """

    exponents: tuple[float, ...]
    groups: tuple = ()

    def __post_init__(self):
        k = len(self.exponents)
        if k not in (1, 2, 3):
            raise ValueError("exponents must have length 1, 2, or 3")
        if k == 1 and self.exponents[0] not in (1.0, 2.0, 1, 2):
            raise ValueError("plain norms support p in {1, 2}")


def _plain_as_two_level(z: np.ndarray, p: float):
    # Plain L1 is the singleton-group (2, 1) norm; plain L2 the one-group case.
    if p == 1:
        groups = [np.array([k]) for k in range(z.size)]
    else:
        groups = [np.arange(z.size)]
    return groups


def norm_value(z, spec: NormSpec, eps: float = 0.0) -> float:
    z = _as_vector(z)
    ex = spec.exponents
    if len(ex) == 1:
        return mixed_norm(z, _plain_as_two_level(z, ex[0]), q=2.0, p=1.0, eps=eps)
    if len(ex) == 2:
        return mixed_norm(z, spec.groups, q=ex[0], p=ex[1], eps=eps)
    outer = [np.concatenate([np.asarray(b, int) for b in blocks])
             for blocks in spec.groups]
    return hierarchical_norm(z, outer, spec.groups, r=ex[0], q=ex[1], p=ex[2], eps=eps)


def norm_gradient(z, spec: NormSpec, eps: float = DEFAULT_EPSILON) -> np.ndarray:
    z = _as_vector(z)
    ex = spec.exponents
    if len(ex) == 1:
        return mixed_norm_grad(z, _plain_as_two_level(z, ex[0]), q=2.0, p=1.0, eps=eps)
    if len(ex) == 2:
        return mixed_norm_grad(z, spec.groups, q=ex[0], p=ex[1], eps=eps)
    outer = [np.concatenate([np.asarray(b, int) for b in blocks])
             for blocks in spec.groups]
    return hierarchical_norm_grad(z, outer, spec.groups,
                                  r=ex[0], q=ex[1], p=ex[2], eps=eps)


# ----------------------------------------------------------------------
# per-part magnitudes


def group_magnitudes(W, layout, r: float = 4.0, q: float = 2.0,
                     eps: float = 0.0) -> np.ndarray:
    """Per-class, per-part composite magnitudes of a weight matrix.

    For each class column and part, computes the inner two levels of the
    hierarchical norm over that part's modality blocks,
    ``(sum_m ||w_block||_r^q [, + eps])**(1/q)``.  The default ``(r, q) =
    (4, 2)`` matches the part-level term of the hierarchical penalty;
    ``(2, 2)`` gives the plain Euclidean part magnitude.  A zero matrix
    yields all zeros when ``eps=0``.

    Returns
    -------
    ndarray of shape (n_classes, n_parts)
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2:
        raise ValueError(f"W must be 2-d (features, classes), got shape {W.shape}")
    if W.shape[0] != layout.total_dim:
        raise ValueError(
            f"W has {W.shape[0]} rows but layout describes {layout.total_dim} columns"
        )
    r, q = float(r), float(q)
    if q < 1 or r < q:
        raise ValueError(f"exponents must satisfy r >= q >= 1, got r={r}, q={q}")
    eps = check_epsilon(eps)
    e_r = _eps_under(q / r, eps)
    e_q = _eps_under(1.0 / q, eps)
    C = W.shape[1]
    mags = np.zeros((C, layout.n_parts))
    for j in range(layout.n_parts):
        v = np.zeros(C)
        for b in layout.part_blocks(j):
            bsum = np.sum(np.abs(W[b.slice]) ** r, axis=0)
            v += (bsum + e_r) ** (q / r)
        mags[:, j] = (v + e_q) ** (1.0 / q)
    return mags
