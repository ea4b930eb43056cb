import warnings

import numpy as np
import pytest
from sklearn.base import clone

from partlearn.bundle import SyntheticSpec, generate_synthetic, make_split
from partlearn.estimators import (
    MultipartClassifier,
    cross_validate_subjects,
    evaluate,
    evaluate_split,
    fit_bundle,
    load_model,
    report_part_selection,
    save_model,
)
from partlearn.layout import FeatureLayout
from partlearn.objective import objective_value_and_grad, one_hot


SMALL = SyntheticSpec(n_parts=4, n_modalities=2, block_dim=3, n_classes=3,
                      n_train=120, n_test=60, active_parts=2, noise=0.0)


def small_problem(seed=0):
    ds = generate_synthetic(SyntheticSpec(
        n_parts=SMALL.n_parts, n_modalities=SMALL.n_modalities,
        block_dim=SMALL.block_dim, n_classes=SMALL.n_classes,
        n_train=SMALL.n_train, n_test=SMALL.n_test,
        active_parts=SMALL.active_parts, noise=SMALL.noise, seed=seed))
    tr, te = ds.train_test_bundles()
    return ds, tr, te


def test_fit_predict_recovers_planted_problem():
    ds, tr, te = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout)
    clf.fit(tr.X, tr.labels)
    assert np.mean(clf.predict(te.X) == te.labels) >= 0.95
    assert clf.coef_.shape == (ds.bundle.layout.total_dim, 3)
    assert clf.n_iter_ >= 1
    assert clf.termination_ in ("grad_tol", "f_tol", "max_iters")


def test_two_step_auto_engages_on_multimodal_mmmp():
    ds, tr, te = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout).fit(tr.X, tr.labels)
    # auto mode: mmmp + two modalities => warm solves plus fine-tune
    assert set(clf.warm_traces_) == {"mod0", "mod1"}
    assert clf.anchor_ is not None
    assert clf.anchor_objective_ is not None
    assert clf.objective_config_.variant == "fine_tune"


def test_two_step_off_for_single_modality_layout():
    rng = np.random.default_rng(3)
    lay = FeatureLayout([("p0", [("only", 4)]), ("p1", [("only", 4)])])
    X = rng.standard_normal((40, 8))
    y = rng.integers(0, 2, size=40)
    clf = MultipartClassifier(layout=lay).fit(X, y)
    assert clf.anchor_ is None
    assert clf.warm_traces_ == {}
    assert clf.objective_config_.variant == "mmmp"


def test_two_step_requires_mmmp():
    ds, tr, _ = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout, variant="mp", two_step=True)
    with pytest.raises(ValueError, match="mmmp"):
        clf.fit(tr.X, tr.labels)


def test_fine_tune_improves_on_anchor():
    for seed in range(3):
        ds, tr, _ = small_problem(seed)
        clf = MultipartClassifier(layout=ds.bundle.layout, two_step=True)
        clf.fit(tr.X, tr.labels)
        assert clf.final_objective_ <= clf.anchor_objective_


def test_anchor_gathers_back_to_warm_blocks():
    ds, tr, _ = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout, two_step=True)
    clf.fit(tr.X, tr.labels)
    for mod, W_m in clf.warm_blocks_.items():
        _, cols = clf.layout_.modality_sublayout(mod)
        assert np.array_equal(clf.anchor_[cols], W_m)


def test_anchor_objective_matches_recomputation():
    ds, tr, _ = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout, two_step=True)
    clf.fit(tr.X, tr.labels)
    Xs = (tr.X - clf.mean_) / clf.scale_
    Y = one_hot(np.searchsorted(clf.classes_, tr.labels), clf.classes_.size)
    f, _ = objective_value_and_grad(Xs, clf.anchor_, Y, clf.layout_,
                                    clf.objective_config_, anchor=clf.anchor_)
    assert f == pytest.approx(clf.anchor_objective_, rel=1e-12)


def test_single_modality_training_zeroes_other_columns():
    ds, tr, te = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout, modality="mod0")
    clf.fit(tr.X, tr.labels)
    _, cols0 = clf.layout_.modality_sublayout("mod0")
    _, cols1 = clf.layout_.modality_sublayout("mod1")
    assert np.all(clf.coef_[cols1] == 0.0)
    assert np.any(clf.coef_[cols0] != 0.0)
    # half the planted signal still classifies decently above chance
    assert np.mean(clf.predict(te.X) == te.labels) > 0.5


def test_single_modality_conflicts_with_two_step():
    ds, tr, _ = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout, modality="mod0",
                              two_step=True)
    with pytest.raises(ValueError, match="two_step"):
        clf.fit(tr.X, tr.labels)


def test_unknown_variant_rejected():
    ds, tr, _ = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout, variant="ridge")
    with pytest.raises(ValueError, match="variant"):
        clf.fit(tr.X, tr.labels)


def test_warm_start_only_variants_not_public():
    ds, tr, _ = small_problem()
    for hidden in ("warm_start", "fine_tune"):
        clf = MultipartClassifier(layout=ds.bundle.layout, variant=hidden)
        with pytest.raises(ValueError):
            clf.fit(tr.X, tr.labels)


def test_layout_none_warns_and_falls_back_to_singletons():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 5))
    y = rng.integers(0, 2, size=30)
    clf = MultipartClassifier(variant="l2")
    with pytest.warns(UserWarning, match="layout"):
        clf.fit(X, y)
    assert clf.layout_.n_parts == 5


def test_layout_dimension_mismatch_rejected():
    ds, tr, _ = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout)
    with pytest.raises(ValueError, match="features"):
        clf.fit(tr.X[:, :-1], tr.labels)


def test_constant_column_neutralized_with_warning():
    ds, tr, te = small_problem()
    X = tr.X.copy()
    X[:, 7] = 4.2
    clf = MultipartClassifier(layout=ds.bundle.layout)
    with pytest.warns(UserWarning, match="constant"):
        clf.fit(X, tr.labels)
    assert clf.scale_[7] == 1.0
    assert np.abs(clf.coef_[7]).max() < 1e-10
    # the dead column cannot influence predictions
    Xt = te.X.copy()
    Xt[:, 7] = -100.0
    np.testing.assert_allclose(clf.decision_function(Xt),
                               clf.decision_function(te.X), atol=1e-8)


def test_standardize_off_keeps_identity_transform():
    ds, tr, _ = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout, standardize=False)
    clf.fit(tr.X, tr.labels)
    assert np.all(clf.mean_ == 0.0)
    assert np.all(clf.scale_ == 1.0)


def test_labels_can_be_strings():
    ds, tr, te = small_problem()
    names = np.array(["walk", "run", "sit"])
    clf = MultipartClassifier(layout=ds.bundle.layout)
    clf.fit(tr.X, names[tr.labels])
    assert sorted(clf.classes_.tolist()) == ["run", "sit", "walk"]
    pred = clf.predict(te.X)
    assert np.mean(pred == names[te.labels]) >= 0.95


def test_label_permutation_equivariance():
    # relabeling classes permutes coefficient columns, nothing else
    ds, tr, te = small_problem()
    clf_a = MultipartClassifier(layout=ds.bundle.layout).fit(tr.X, tr.labels)
    perm = np.array([2, 0, 1])  # class c becomes perm[c]
    clf_b = MultipartClassifier(layout=ds.bundle.layout).fit(tr.X, perm[tr.labels])
    # column of new label perm[c] must equal column of old label c
    np.testing.assert_allclose(clf_b.coef_[:, perm], clf_a.coef_, atol=1e-6)
    np.testing.assert_array_equal(perm[clf_a.predict(te.X)], clf_b.predict(te.X))


def test_decision_function_shape_and_tie_rule():
    ds, tr, _ = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout).fit(tr.X, tr.labels)
    scores = clf.decision_function(tr.X[:4])
    assert scores.shape == (4, 3)
    clf.coef_ = np.zeros_like(clf.coef_)  # force exact ties
    assert np.all(clf.predict(tr.X[:4]) == clf.classes_[0])


def test_predict_rejects_wrong_width():
    ds, tr, _ = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout).fit(tr.X, tr.labels)
    with pytest.raises(ValueError, match="features"):
        clf.predict(tr.X[:, :-1])


def test_single_class_rejected():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((10, 4))
    clf = MultipartClassifier(variant="l2")
    with pytest.raises(ValueError, match="two classes"):
        clf.fit(X, np.zeros(10, dtype=int))


def test_sklearn_clone_roundtrip():
    clf = MultipartClassifier(lambda1=0.3, lambda2=7.0, variant="mp",
                              max_iters=77)
    dup = clone(clf)
    assert dup.get_params() == clf.get_params()


def test_same_seed_fits_are_bitwise_identical():
    ds, tr, _ = small_problem()
    a = MultipartClassifier(layout=ds.bundle.layout).fit(tr.X, tr.labels)
    b = MultipartClassifier(layout=ds.bundle.layout).fit(tr.X, tr.labels)
    assert np.array_equal(a.coef_, b.coef_)
    assert a.final_objective_ == b.final_objective_


# ----------------------------------------------------------------------
# evaluation helpers


def test_evaluate_report_fields_and_confusion():
    ds, tr, te = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout).fit(tr.X, tr.labels)
    rep = evaluate(clf, te.X, te.labels)
    assert rep.n_test == te.X.shape[0]
    assert rep.confusion.sum() == rep.n_test
    assert rep.n_correct == np.trace(rep.confusion)
    assert rep.accuracy == pytest.approx(rep.n_correct / rep.n_test)
    # row sums are the true-label counts
    np.testing.assert_array_equal(rep.confusion.sum(axis=1), rep.per_class_counts)
    text = rep.to_text()
    assert "accuracy" in text and "%" in text


def test_evaluate_handles_absent_class_as_nan():
    ds, tr, te = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout).fit(tr.X, tr.labels)
    keep = te.labels != 2
    rep = evaluate(clf, te.X[keep], te.labels[keep])
    assert np.isnan(rep.per_class_accuracy[2])
    assert "n/a" in rep.to_text()


def test_evaluate_rejects_unknown_labels_and_empty_input():
    ds, tr, te = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout).fit(tr.X, tr.labels)
    bad = te.labels.copy()
    bad[0] = 99
    with pytest.raises(ValueError, match="never seen"):
        evaluate(clf, te.X, bad)
    with pytest.raises(ValueError, match="empty"):
        evaluate(clf, te.X[:0], te.labels[:0])


def test_evaluate_split_and_fit_bundle():
    ds, _, _ = small_problem()
    split = make_split(ds.bundle, "first-five")
    clf = fit_bundle(MultipartClassifier(), ds.bundle, split)
    assert clf.layout_ == ds.bundle.layout
    rep = evaluate_split(clf, ds.bundle, split)
    assert rep.accuracy >= 0.95


def test_evaluate_split_rejects_empty_test_side():
    ds, _, _ = small_problem()
    split = make_split(ds.bundle, list(range(1, 11)))  # every subject trains
    clf = fit_bundle(MultipartClassifier(), ds.bundle, split)
    with pytest.raises(ValueError, match="empty test"):
        evaluate_split(clf, ds.bundle, split)


# ----------------------------------------------------------------------
# part selection


def test_part_selection_ranks_planted_parts_first():
    ds, tr, _ = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout).fit(tr.X, tr.labels)
    rep = report_part_selection(clf)
    K = SMALL.active_parts
    for c, parts in enumerate(ds.active_parts):
        top = set(rep.ranking[c, :K].tolist())
        assert top == set(parts)
    named = rep.top_parts(K)
    assert named[0][0] in ds.bundle.layout.part_names


def test_part_selection_zero_model_is_index_ordered():
    ds, tr, _ = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout).fit(tr.X, tr.labels)
    clf.part_activations_ = np.zeros_like(clf.part_activations_)
    rep = report_part_selection(clf)
    np.testing.assert_array_equal(rep.ranking,
                                  np.tile(np.arange(4), (3, 1)))


def test_part_selection_table_is_tab_separated():
    ds, tr, _ = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout).fit(tr.X, tr.labels)
    table = report_part_selection(clf).to_table()
    lines = table.strip().split("\n")
    assert lines[0].split("\t") == ["class"] + list(ds.bundle.layout.part_names)
    assert len(lines) == 1 + 3


# ----------------------------------------------------------------------
# cross validation


def test_cross_validation_explicit_splits_and_formatting():
    ds, _, _ = small_problem()
    splits = [make_split(ds.bundle, "first-five"),
              make_split(ds.bundle, "odd")]
    res = cross_validate_subjects(MultipartClassifier(variant="l2"),
                                  ds.bundle, splits=splits)
    assert res.accuracies.shape == (2,)
    assert 0.0 <= res.mean <= 1.0
    formatted = res.format_mean_std()
    assert formatted.endswith("%") and "±" in formatted
    table = res.to_table()
    assert table.startswith("split\ttrain_subjects\taccuracy")


def test_cross_validation_parallel_matches_serial():
    ds, _, _ = small_problem()
    splits = [make_split(ds.bundle, "first-five"), make_split(ds.bundle, "odd")]
    model = MultipartClassifier(variant="l2")
    serial = cross_validate_subjects(model, ds.bundle, splits=splits, n_jobs=1)
    parallel = cross_validate_subjects(model, ds.bundle, splits=splits, n_jobs=2)
    np.testing.assert_array_equal(serial.accuracies, parallel.accuracies)


def test_cross_validation_single_split_std_zero():
    ds, _, _ = small_problem()
    res = cross_validate_subjects(MultipartClassifier(variant="l2"), ds.bundle,
                                  splits=[make_split(ds.bundle, "first-five")])
    assert res.std == 0.0


# ----------------------------------------------------------------------
# persistence


def test_save_load_roundtrip(tmp_path):
    ds, tr, te = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout, lambda2=3.0)
    clf.fit(tr.X, tr.labels)
    path = tmp_path / "model.bin"
    save_model(clf, path)
    back = load_model(path)
    np.testing.assert_array_equal(back.coef_, clf.coef_)
    np.testing.assert_array_equal(back.mean_, clf.mean_)
    np.testing.assert_array_equal(back.scale_, clf.scale_)
    np.testing.assert_array_equal(back.classes_, clf.classes_)
    np.testing.assert_array_equal(back.anchor_, clf.anchor_)
    assert back.get_params()["lambda2"] == 3.0
    assert back.layout_ == clf.layout_
    assert back.termination_ == clf.termination_
    np.testing.assert_array_equal(back.predict(te.X), clf.predict(te.X))


def test_saved_model_reusable_after_reload(tmp_path):
    ds, tr, _ = small_problem()
    clf = MultipartClassifier(layout=ds.bundle.layout).fit(tr.X, tr.labels)
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_model(clf, p1)
    save_model(load_model(p1), p2)  # loaded models can be saved again
    assert np.array_equal(load_model(p2).coef_, clf.coef_)


def test_string_classes_roundtrip(tmp_path):
    ds, tr, te = small_problem()
    names = np.array(["walk", "run", "sit"])
    clf = MultipartClassifier(layout=ds.bundle.layout)
    clf.fit(tr.X, names[tr.labels])
    path = tmp_path / "model.bin"
    save_model(clf, path)
    back = load_model(path)
    assert back.classes_.tolist() == clf.classes_.tolist()
    assert back.predict(te.X[:5]).dtype.kind == "U"


def test_save_unfitted_model_rejected(tmp_path):
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        save_model(MultipartClassifier(), tmp_path / "nope.bin")
