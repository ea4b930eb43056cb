import numpy as np
import pytest

from partlearn.layout import FeatureLayout
from partlearn.norms import hierarchical_norm, mixed_norm
from partlearn.objective import (
    VARIANTS,
    ObjectiveConfig,
    make_objective,
    multitask_row_penalty,
    objective_value_and_grad,
    one_hot,
    squared_loss,
    validate_label_matrix,
)


def demo_layout():
    return FeatureLayout([
        ("a", [("m1", 2), ("m2", 3)]),
        ("b", [("m1", 2), ("m2", 1)]),
    ])


def demo_problem(seed=0, n=6, C=3):
    rng = np.random.default_rng(seed)
    lay = demo_layout()
    X = rng.standard_normal((n, lay.total_dim))
    W = rng.standard_normal((lay.total_dim, C))
    Y = one_hot(rng.integers(0, C, size=n), C)
    return lay, X, W, Y


def row_groups(d, C):
    return [list(range(k * C, (k + 1) * C)) for k in range(d)]


def oracle_value(X, W, Y, lay, cfg, anchor=None):
    """Recompose each variant from the norm primitives."""
    val = float(np.sum((X @ W - Y) ** 2))
    eps = cfg.epsilon
    v = cfg.variant
    if v == "l1":
        val += cfg.lambda2 * float(np.sum(np.sqrt(W ** 2 + eps)))
    elif v == "l2":
        val += cfg.lambda2 * float(np.sum(W ** 2))
    elif v == "mp":
        for c in range(W.shape[1]):
            val += cfg.lambda2 * mixed_norm(W[:, c], lay.part_groups(), eps=eps)
    elif v == "warm_start":
        val += cfg.effective_warm_lambda1 * mixed_norm(
            W.ravel(), row_groups(*W.shape), eps=eps
        )
        for c in range(W.shape[1]):
            val += cfg.effective_warm_lambda2 * mixed_norm(
                W[:, c], lay.part_groups(), eps=eps
            )
    else:  # mmmp, fine_tune
        val += cfg.lambda1 * mixed_norm(W.ravel(), row_groups(*W.shape), eps=eps)
        for c in range(W.shape[1]):
            val += cfg.lambda2 * hierarchical_norm(
                W[:, c], lay.part_groups(), lay.block_groups(), eps=eps
            )
        if v == "fine_tune":
            val += cfg.lambda3 * float(np.sum((W - anchor) ** 2))
    return val


def config_for(variant, eps=1e-8):
    return ObjectiveConfig(
        variant=variant,
        lambda1=0.3,
        lambda2=0.7,
        lambda3=0.5,
        warm_lambda1=0.2,
        warm_lambda2=0.9,
        epsilon=eps,
    )


def fd_grad(fun, w, h=1e-6):
    g = np.zeros_like(w)
    for k in range(w.size):
        wp = w.copy(); wp[k] += h
        wm = w.copy(); wm[k] -= h
        g[k] = (fun(wp)[0] - fun(wm)[0]) / (2 * h)
    return g


def max_rel_err(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


# ----------------------------------------------------------------------


def test_loss_pinned_identity_case():
    X = np.eye(2)
    W = np.zeros((2, 2))
    Y = np.eye(2)
    assert squared_loss(X, W, Y) == 2.0


def test_loss_is_summed_not_averaged():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((5, 3))
    W = rng.standard_normal((3, 2))
    Y = rng.standard_normal((5, 2))
    stacked_X = np.vstack([X, X])
    stacked_Y = np.vstack([Y, Y])
    assert squared_loss(stacked_X, W, stacked_Y) == pytest.approx(
        2 * squared_loss(X, W, Y), rel=1e-12
    )


def test_row_penalty_pinned():
    W = np.zeros((3, 4))
    W[1] = 1.0
    assert multitask_row_penalty(W) == pytest.approx(2.0, abs=1e-15)
    assert multitask_row_penalty(np.zeros((3, 4))) == 0.0


@pytest.mark.parametrize("variant", VARIANTS)
def test_value_matches_norm_composition(variant):
    lay, X, W, Y = demo_problem(seed=3)
    cfg = config_for(variant)
    anchor = np.random.default_rng(4).standard_normal(W.shape) \
        if variant == "fine_tune" else None
    val, _ = objective_value_and_grad(X, W, Y, lay, cfg, anchor)
    assert val == pytest.approx(oracle_value(X, W, Y, lay, cfg, anchor), rel=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
def test_gradient_matches_finite_differences(variant):
    lay, X, W, Y = demo_problem(seed=5, n=5, C=2)
    cfg = config_for(variant)
    anchor = (np.random.default_rng(6).standard_normal(W.shape)
              if variant == "fine_tune" else None)
    fun = make_objective(X, Y, lay, cfg, anchor)
    w = W.ravel()
    _, g = fun(w)
    num = fd_grad(fun, w)
    assert max_rel_err(g, num) < 1e-7


def test_values_non_negative():
    rng = np.random.default_rng(7)
    lay, X, W, Y = demo_problem(seed=7)
    for variant in VARIANTS:
        cfg = config_for(variant)
        anchor = rng.standard_normal(W.shape) if variant == "fine_tune" else None
        val, _ = objective_value_and_grad(X, W, Y, lay, cfg, anchor)
        assert val >= 0


def test_l2_penalty_is_exact_no_smoothing():
    lay, X, W, Y = demo_problem(seed=8)
    for eps in (1e-8, 1e-6):
        cfg = ObjectiveConfig(variant="l2", lambda2=0.7, epsilon=eps)
        val, _ = objective_value_and_grad(X, W, Y, lay, cfg)
        assert val == pytest.approx(
            squared_loss(X, W, Y) + 0.7 * np.sum(W ** 2), rel=1e-14
        )


def test_warm_lambdas_fall_back_to_main():
    lay, X, W, Y = demo_problem(seed=9)
    explicit = ObjectiveConfig(variant="warm_start", lambda1=0.3, lambda2=0.7,
                               warm_lambda1=0.3, warm_lambda2=0.7)
    implicit = ObjectiveConfig(variant="warm_start", lambda1=0.3, lambda2=0.7)
    v1, g1 = objective_value_and_grad(X, W, Y, lay, explicit)
    v2, g2 = objective_value_and_grad(X, W, Y, lay, implicit)
    assert v1 == v2
    np.testing.assert_array_equal(g1, g2)


def test_anchor_contract():
    lay, X, W, Y = demo_problem(seed=10)
    cfg = ObjectiveConfig(variant="fine_tune", lambda2=0.1, lambda3=1.0)
    with pytest.raises(ValueError, match="anchor"):
        objective_value_and_grad(X, W, Y, lay, cfg)
    cfg2 = ObjectiveConfig(variant="mmmp", lambda2=0.1)
    with pytest.raises(ValueError, match="anchor"):
        objective_value_and_grad(X, W, Y, lay, cfg2, anchor=W)


def test_fine_tune_proximity_pulls_toward_anchor():
    lay, X, W, Y = demo_problem(seed=11)
    cfg = ObjectiveConfig(variant="fine_tune", lambda3=2.0)
    at_anchor, _ = objective_value_and_grad(X, W, Y, lay, cfg, anchor=W)
    away, _ = objective_value_and_grad(X, W, Y, lay, cfg, anchor=W + 1.0)
    assert away > at_anchor


def test_layout_required_for_structured_variants():
    _, X, W, Y = demo_problem(seed=12)
    cfg = ObjectiveConfig(variant="mp", lambda2=0.5)
    with pytest.raises(ValueError, match="layout"):
        objective_value_and_grad(X, W, Y, None, cfg)
    # plain variants run without one
    cfg2 = ObjectiveConfig(variant="l2", lambda2=0.5)
    objective_value_and_grad(X, W, Y, None, cfg2)


def test_shape_and_finite_checks():
    lay, X, W, Y = demo_problem(seed=13)
    cfg = ObjectiveConfig(variant="mp", lambda2=0.5)
    with pytest.raises(ValueError, match="columns"):
        objective_value_and_grad(X[:, :4], W, Y, lay, cfg)
    with pytest.raises(ValueError, match="Y shape"):
        objective_value_and_grad(X, W, Y[:, :2], lay, cfg)
    Xbad = X.copy()
    Xbad[0, 0] = np.inf
    with pytest.raises(ValueError, match="non-finite"):
        objective_value_and_grad(Xbad, W, Y, lay, cfg)


def test_config_validation():
    with pytest.raises(ValueError, match="variant"):
        ObjectiveConfig(variant="ridge")
    with pytest.raises(ValueError):
        ObjectiveConfig(lambda1=-0.1)
    with pytest.raises(ValueError):
        ObjectiveConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        ObjectiveConfig(epsilon=1e-3)


def test_one_hot():
    Y = one_hot(np.array([0, 2, 1]), 3)
    np.testing.assert_array_equal(Y, [[1, 0, 0], [0, 0, 1], [0, 1, 0]])
    assert validate_label_matrix(Y) is not None
    with pytest.raises(ValueError, match="out of range"):
        one_hot(np.array([0, 3]), 3)
    with pytest.raises(ValueError, match="row"):
        validate_label_matrix(np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(ValueError, match="0 or 1"):
        validate_label_matrix(np.array([[0.5, 0.5]]))


def test_make_objective_round_trip():
    lay, X, W, Y = demo_problem(seed=14)
    cfg = config_for("mmmp")
    fun = make_objective(X, Y, lay, cfg)
    val_flat, g_flat = fun(W.ravel())
    val_mat, g_mat = objective_value_and_grad(X, W, Y, lay, cfg)
    assert val_flat == val_mat
    np.testing.assert_array_equal(g_flat, g_mat.ravel())
