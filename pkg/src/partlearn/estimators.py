"""Multiclass linear models with part/modality structured sparsity.

The classifier fits one least-squares regressor per class against one-hot
targets and predicts by the largest score.  The penalty couples the
regressors across classes and across the feature layout's parts and
modalities; see :mod:`partlearn.objective` for the variants.

For multimodal layouts the hierarchical variant supports two-step
training: each modality is first solved on its own columns (row-sparsity
plus part-group penalty), the per-modality solutions are scattered into a
full-width anchor matrix, and the final model is fit from that anchor with
an added proximity term.  This matches how the penalties were designed to
be used and is the default when more than one modality is present.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._container import read_container, write_container
from .bundle import FeatureBundle, Split
from .layout import FeatureLayout, singleton_layout
from .norms import group_magnitudes
from .objective import ObjectiveConfig, make_objective, objective_value_and_grad, one_hot
from .optimize import OptimizerConfig, minimize

__all__ = [
    "MultipartClassifier",
    "EvaluationReport",
    "PartSelectionReport",
    "evaluate",
    "evaluate_split",
    "report_part_selection",
    "cross_validate_subjects",
    "CrossValidationResult",
    "fit_bundle",
    "save_model",
    "load_model",
]

_MODEL_KIND = "model"

PUBLIC_VARIANTS = ("l1", "l2", "mp", "mmmp")


def _resolve_two_step(two_step, variant, layout, modality):
    if modality is not None:
        if two_step:
            raise ValueError("two_step does not combine with single-modality training")
        return False
    if two_step is None:
        return variant == "mmmp" and len(layout.modality_ids) > 1
    two_step = bool(two_step)
    if two_step and variant != "mmmp":
        raise ValueError(f"two_step training applies to variant 'mmmp', not {variant!r}")
    return two_step


def _standardizer(X, enabled):
    d = X.shape[1]
    if not enabled:
        return np.zeros(d), np.ones(d)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    # detect constancy by exact range; the computed mean of a constant
    # column can be off by rounding, so pin it to the shared value so the
    # column standardizes to exactly zero
    constant = X.max(axis=0) == X.min(axis=0)
    if np.any(constant):
        warnings.warn(
            f"{int(constant.sum())} constant feature column(s); they carry "
            "no information and are effectively dropped",
            UserWarning,
        )
        mean = np.where(constant, X[0], mean)
        scale = np.where(constant, 1.0, scale)
    return mean, scale


class MultipartClassifier(BaseEstimator, ClassifierMixin):
    """Linear one-vs-all classifier with structured-sparsity penalties.

    Parameters
    ----------
    layout : FeatureLayout or None
        Column grouping into parts and modalities.  When None, every
        feature becomes its own single-modality part (with a warning), so
        the structured penalties degrade to entrywise ones.
    variant : {"mmmp", "mp", "l1", "l2"}
        Penalty family.  ``mmmp`` is the hierarchical part/modality penalty
        with a class-coupling row term; ``mp`` is part-level group
        sparsity; ``l1`` / ``l2`` are the unstructured baselines.
    lambda1 : float
        Weight of the row-coupling term (``mmmp`` only).
    lambda2 : float
        Weight of the main penalty term.
    lambda3 : float
        Weight of the proximity-to-anchor term during two-step fine-tuning.
    warm_lambda1, warm_lambda2 : float or None
        Penalty weights of the per-modality warm-start solves; default to
        ``lambda1`` / ``lambda2``.
    two_step : bool or None
        Warm-start each modality separately, then fine-tune from the merged
        anchor.  None (default) enables it for ``mmmp`` with more than one
        modality.
    modality : str or None
        Train on a single modality's columns only; coefficients of other
        columns stay zero.  Uses the warm-start objective on that
        modality's sublayout.
    epsilon : float
        Smoothing constant of the penalty roots.
    standardize : bool
        Center/scale features using training statistics (stored on the
        model).  Constant columns are neutralized with a warning.
    memory, max_iters, grad_tol, f_tol : optimizer knobs, see
        :class:`partlearn.optimize.OptimizerConfig`.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features, n_classes)
    classes_ : ndarray of shape (n_classes,)
    layout_ : FeatureLayout actually used
    mean_, scale_ : standardization vectors
    part_activations_ : ndarray of shape (n_classes, n_parts)
        Composite per-part coefficient magnitudes (exact, unsmoothed).
    trace_ : OptimizationTrace of the final solve
    warm_traces_ : dict of modality id to warm-start trace (two-step only)
    anchor_ : merged warm-start weights (two-step only)
    final_objective_, anchor_objective_ : objective values of the final
        solve, and of the same objective at the anchor (two-step only).
    termination_ : reason the final solve stopped.

    Notes
    -----
    Ties in the decision scores resolve to the lowest class index, matching
    ``np.argmax``.
    """

    def __init__(
        self,
        layout: FeatureLayout | None = None,
        variant: str = "mmmp",
        lambda1: float = 0.05,
        lambda2: float = 2.0,
        lambda3: float = 1.0,
        warm_lambda1: float | None = None,
        warm_lambda2: float | None = None,
        two_step: bool | None = None,
        modality: str | None = None,
        epsilon: float = 1e-8,
        standardize: bool = True,
        memory: int = 10,
        max_iters: int = 500,
        grad_tol: float = 1e-5,
        f_tol: float = 1e-9,
    ):
        self.layout = layout
        self.variant = variant
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.warm_lambda1 = warm_lambda1
        self.warm_lambda2 = warm_lambda2
        self.two_step = two_step
        self.modality = modality
        self.epsilon = epsilon
        self.standardize = standardize
        self.memory = memory
        self.max_iters = max_iters
        self.grad_tol = grad_tol
        self.f_tol = f_tol

    # ------------------------------------------------------------------

    def _objective_config(self, variant) -> ObjectiveConfig:
        return ObjectiveConfig(
            variant=variant,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            lambda3=self.lambda3,
            warm_lambda1=self.warm_lambda1,
            warm_lambda2=self.warm_lambda2,
            epsilon=self.epsilon,
        )

    def _optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            memory=self.memory,
            max_iters=self.max_iters,
            grad_tol=self.grad_tol,
            f_tol=self.f_tol,
        )

    def _solve(self, X, Y, layout, config, w0, anchor=None):
        fun = make_objective(X, Y, layout, config, anchor)
        w, trace = minimize(fun, w0.ravel(), self._optimizer_config())
        return w.reshape(X.shape[1], Y.shape[1]), trace

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes to fit")
        n, d = X.shape
        self.n_features_in_ = d

        if self.variant not in PUBLIC_VARIANTS:
            raise ValueError(
                f"variant must be one of {PUBLIC_VARIANTS}, got {self.variant!r}"
            )
        if self.layout is None:
            warnings.warn(
                "no feature layout given; treating every feature as its own "
                "part, which reduces the structured penalties to entrywise ones",
                UserWarning,
            )
            layout = singleton_layout(d)
        else:
            layout = self.layout.validate()
            if layout.total_dim != d:
                raise ValueError(
                    f"layout describes {layout.total_dim} features, data has {d}"
                )
        self.layout_ = layout

        self.mean_, self.scale_ = _standardizer(X, self.standardize)
        Xs = (X - self.mean_) / self.scale_
        Y = one_hot(y_idx, self.classes_.size)
        C = self.classes_.size

        two_step = _resolve_two_step(self.two_step, self.variant, layout, self.modality)

        self.warm_traces_ = {}
        self.warm_blocks_ = {}
        self.anchor_ = None
        self.anchor_objective_ = None

        if self.modality is not None:
            sub, cols = layout.modality_sublayout(self.modality)
            cfg = self._objective_config("warm_start")
            W_m, trace = self._solve(
                Xs[:, cols], Y, sub, cfg, np.zeros((cols.size, C))
            )
            W = np.zeros((d, C))
            W[cols] = W_m
            self.warm_blocks_[self.modality] = W_m
            self.warm_traces_[self.modality] = trace
            self.coef_, self.trace_ = W, trace
            self.objective_config_ = cfg
        elif two_step:
            anchor = np.zeros((d, C))
            warm_cfg = self._objective_config("warm_start")
            for mod in layout.modality_ids:
                sub, cols = layout.modality_sublayout(mod)
                W_m, trace = self._solve(
                    Xs[:, cols], Y, sub, warm_cfg, np.zeros((cols.size, C))
                )
                anchor[cols] = W_m
                self.warm_blocks_[mod] = W_m
                self.warm_traces_[mod] = trace
            self.anchor_ = anchor
            cfg = self._objective_config("fine_tune")
            self.anchor_objective_ = objective_value_and_grad(
                Xs, anchor, Y, layout, cfg, anchor=anchor
            )[0]
            self.coef_, self.trace_ = self._solve(
                Xs, Y, layout, cfg, anchor, anchor=anchor
            )
            self.objective_config_ = cfg
        else:
            cfg = self._objective_config(self.variant)
            self.coef_, self.trace_ = self._solve(
                Xs, Y, layout, cfg, np.zeros((d, C))
            )
            self.objective_config_ = cfg

        self.final_objective_ = self.trace_.final.f
        self.termination_ = self.trace_.termination
        self.n_iter_ = self.trace_.n_iterations
        self.part_activations_ = group_magnitudes(self.coef_, layout, eps=0.0)
        return self

    # ------------------------------------------------------------------

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, model was fit with {self.n_features_in_}"
            )
        return ((X - self.mean_) / self.scale_) @ self.coef_

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]


# ----------------------------------------------------------------------
# evaluation


@dataclass
class EvaluationReport:
    accuracy: float
    n_test: int
    n_correct: int
    per_class_accuracy: np.ndarray
    per_class_counts: np.ndarray
    confusion: np.ndarray
    class_labels: list

    def to_text(self, class_names=None) -> str:
        names = class_names or [str(c) for c in self.class_labels]
        width = max(len(n) for n in names)
        lines = [
            f"accuracy: {100 * self.accuracy:.2f}% "
            f"({self.n_correct}/{self.n_test})"
        ]
        for name, acc, count in zip(names, self.per_class_accuracy,
                                    self.per_class_counts):
            shown = "   n/a" if np.isnan(acc) else f"{100 * acc:6.2f}%"
            lines.append(f"  {name:<{width}}  {shown}  ({count} samples)")
        return "\n".join(lines)


def evaluate(model, X, y) -> EvaluationReport:
    """Accuracy, per-class accuracy, and confusion matrix on held-out data."""
    X = np.asarray(X)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise ValueError("empty test split: no samples to evaluate")
    pred = model.predict(X)
    classes = list(model.classes_)
    index = {c: k for k, c in enumerate(classes)}
    unknown = sorted(set(y.tolist()) - set(classes))
    if unknown:
        raise ValueError(f"test labels {unknown} were never seen during training")
    C = len(classes)
    confusion = np.zeros((C, C), dtype=int)
    for true, hat in zip(y, pred):
        confusion[index[true], index[hat]] += 1
    counts = confusion.sum(axis=1)
    with np.errstate(invalid="ignore"):
        per_class = np.where(counts > 0, np.diag(confusion) / np.maximum(counts, 1),
                             np.nan)
    n_correct = int(np.trace(confusion))
    return EvaluationReport(
        accuracy=n_correct / X.shape[0],
        n_test=int(X.shape[0]),
        n_correct=n_correct,
        per_class_accuracy=per_class,
        per_class_counts=counts,
        confusion=confusion,
        class_labels=classes,
    )


def evaluate_split(model, bundle: FeatureBundle, split: Split) -> EvaluationReport:
    """Evaluate on the test side of a subject-wise split."""
    if split.test_indices.size == 0:
        raise ValueError(
            f"split {split.rule!r} has an empty test side"
        )
    idx = split.test_indices
    return evaluate(model, bundle.X[idx], bundle.labels[idx])


def fit_bundle(model: MultipartClassifier, bundle: FeatureBundle,
               split: Split | None = None) -> MultipartClassifier:
    """Fit on a bundle's training rows (all rows when `split` is None)."""
    if split is None:
        X, y = bundle.X, bundle.labels
    else:
        if split.train_indices.size == 0:
            raise ValueError(f"split {split.rule!r} has an empty train side")
        X, y = bundle.X[split.train_indices], bundle.labels[split.train_indices]
    model.set_params(layout=bundle.layout)
    return model.fit(X, y)


# ----------------------------------------------------------------------
# part-selection reporting


@dataclass
class PartSelectionReport:
    magnitudes: np.ndarray          # (n_classes, n_parts), exact
    ranking: np.ndarray             # (n_classes, n_parts), part indices, best first
    part_names: tuple[str, ...]
    class_labels: list

    def top_parts(self, k: int) -> list[list[str]]:
        return [
            [self.part_names[j] for j in row[:k]]
            for row in self.ranking
        ]

    def to_text(self, top: int = 5, class_names=None) -> str:
        names = class_names or [str(c) for c in self.class_labels]
        lines = ["per-class part ranking (magnitude):"]
        for name, row, mags in zip(names, self.ranking, self.magnitudes):
            entries = ", ".join(
                f"{self.part_names[j]}={mags[j]:.4g}" for j in row[:top]
            )
            lines.append(f"  {name}: {entries}")
        return "\n".join(lines)

    def to_table(self) -> str:
        """Tab-separated table: class, then one magnitude column per part."""
        header = "class\t" + "\t".join(self.part_names)
        rows = [
            str(label) + "\t" + "\t".join(f"{v:.12g}" for v in mags)
            for label, mags in zip(self.class_labels, self.magnitudes)
        ]
        return "\n".join([header] + rows) + "\n"


def report_part_selection(model: MultipartClassifier) -> PartSelectionReport:
    """Rank parts per class by composite coefficient magnitude.

    A zero model ranks parts in index order (stable sort on equal keys).
    """
    check_is_fitted(model, "part_activations_")
    mags = model.part_activations_
    ranking = np.argsort(-mags, axis=1, kind="stable")
    return PartSelectionReport(
        magnitudes=mags,
        ranking=ranking,
        part_names=model.layout_.part_names,
        class_labels=list(model.classes_),
    )


# ----------------------------------------------------------------------
# subject-wise cross validation


@dataclass
class CrossValidationResult:
    accuracies: np.ndarray
    splits: list[Split]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        # sample standard deviation across splits
        return float(np.std(self.accuracies, ddof=1)) if len(self.accuracies) > 1 else 0.0

    def format_mean_std(self) -> str:
        return f"{100 * self.mean:.2f}±{100 * self.std:.2f}%"

    def to_table(self) -> str:
        lines = ["split\ttrain_subjects\taccuracy"]
        for k, (sp, acc) in enumerate(zip(self.splits, self.accuracies)):
            subj = ",".join(map(str, sp.train_subjects))
            lines.append(f"{k}\t{subj}\t{acc:.6f}")
        return "\n".join(lines) + "\n"


def _run_split(model, bundle, split):
    fitted = fit_bundle(clone(model), bundle, split)
    return evaluate_split(fitted, bundle, split).accuracy


def cross_validate_subjects(
    model: MultipartClassifier,
    bundle: FeatureBundle,
    train_count: int = 5,
    splits: list[Split] | None = None,
    n_jobs: int = 1,
) -> CrossValidationResult:
    """Fit and score one model per subject-wise split.

    Results are deterministic and independent of `n_jobs`; splits are
    enumerated lexicographically when not given.
    """
    from .bundle import enumerate_splits

    if splits is None:
        splits = enumerate_splits(bundle, train_count)
    if n_jobs == 1:
        accs = [_run_split(model, bundle, sp) for sp in splits]
    else:
        accs = Parallel(n_jobs=n_jobs)(
            delayed(_run_split)(model, bundle, sp) for sp in splits
        )
    return CrossValidationResult(accuracies=np.array(accs), splits=list(splits))


# ----------------------------------------------------------------------
# model io


def save_model(model: MultipartClassifier, path) -> None:
    check_is_fitted(model, "coef_")
    params = model.get_params()
    params.pop("layout")
    header = {
        "params": params,
        "layout": model.layout_.to_dict(),
        "classes": np.asarray(model.classes_).tolist(),
        "classes_kind": np.asarray(model.classes_).dtype.kind,
        "n_features": int(model.n_features_in_),
        "final_objective": model.final_objective_,
        "termination": model.termination_,
    }
    arrays = {
        "coef": model.coef_,
        "mean": model.mean_,
        "scale": model.scale_,
        "part_activations": model.part_activations_,
    }
    if model.anchor_ is not None:
        arrays["anchor"] = model.anchor_
    write_container(path, _MODEL_KIND, header, arrays)


def load_model(path) -> MultipartClassifier:
    header, arrays = read_container(path, _MODEL_KIND)
    layout = FeatureLayout.from_dict(header["layout"])
    model = MultipartClassifier(layout=layout, **header["params"])
    classes = header["classes"]
    if header.get("classes_kind") in ("i", "u"):
        model.classes_ = np.asarray(classes, dtype=int)
    else:
        model.classes_ = np.asarray(classes)
    model.layout_ = layout
    model.coef_ = arrays["coef"]
    model.mean_ = arrays["mean"]
    model.scale_ = arrays["scale"]
    model.part_activations_ = arrays["part_activations"]
    model.anchor_ = arrays.get("anchor")
    model.n_features_in_ = int(header["n_features"])
    model.final_objective_ = header["final_objective"]
    model.termination_ = header["termination"]
    return model
