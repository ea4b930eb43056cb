"""Feature bundles: a sample matrix plus everything needed to learn from it.

A bundle couples the feature matrix with its column layout, per-sample
class labels and subject ids, stable sample ids for cross-bundle
alignment, and free-text provenance.  Bundles round-trip losslessly
through the binary container format, merge across modalities by sample id,
and are the unit the splitting and synthetic-generation helpers operate
on.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._container import (
    ChecksumError,
    ContainerError,
    CorruptHeaderError,
    FormatVersionError,
    read_container,
    write_container,
)
from .layout import FeatureLayout

__all__ = [
    "FeatureBundle",
    "Split",
    "SyntheticSpec",
    "SyntheticDataset",
    "read_bundle",
    "write_bundle",
    "merge_modalities",
    "subset",
    "make_split",
    "enumerate_splits",
    "split_from_file",
    "write_split_file",
    "generate_synthetic",
    "import_text_features",
    "append_constant_feature",
    "ContainerError",
    "CorruptHeaderError",
    "FormatVersionError",
    "ChecksumError",
]

_BUNDLE_KIND = "feature-bundle"


@dataclass
class FeatureBundle:
    """Feature matrix with layout, labels, subjects, and sample identity."""

    X: np.ndarray
    layout: FeatureLayout
    labels: np.ndarray
    subjects: np.ndarray
    sample_ids: list[str]
    class_names: list[str]
    provenance: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        self.subjects = np.asarray(self.subjects, dtype=int)
        self.sample_ids = [str(s) for s in self.sample_ids]
        self.class_names = [str(c) for c in self.class_names]
        if self.X.ndim != 2:
            raise ValueError(f"X must be 2-d, got shape {self.X.shape}")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("non-finite entries in feature matrix")
        n = self.X.shape[0]
        for name, length in (
            ("labels", self.labels.size),
            ("subjects", self.subjects.size),
            ("sample_ids", len(self.sample_ids)),
        ):
            if length != n:
                raise ValueError(f"{name} has {length} entries for {n} samples")
        if self.layout.total_dim != self.X.shape[1]:
            raise ValueError(
                f"layout describes {self.layout.total_dim} columns, "
                f"X has {self.X.shape[1]}"
            )
        if len(set(self.sample_ids)) != n:
            raise ValueError("sample ids must be unique")
        if not self.class_names:
            raise ValueError("class_names must not be empty")
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError(
                f"labels must lie in [0, {len(self.class_names)}), "
                f"got range [{self.labels.min()}, {self.labels.max()}]"
            )

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def label_names(self) -> list[str]:
        return [self.class_names[k] for k in self.labels]


def subset(bundle: FeatureBundle, indices) -> FeatureBundle:
    """New bundle holding the given sample rows, order preserved."""
    idx = np.asarray(indices, dtype=int)
    return FeatureBundle(
        X=bundle.X[idx].copy(),
        layout=bundle.layout,
        labels=bundle.labels[idx].copy(),
        subjects=bundle.subjects[idx].copy(),
        sample_ids=[bundle.sample_ids[i] for i in idx],
        class_names=list(bundle.class_names),
        provenance=bundle.provenance,
    )


# ----------------------------------------------------------------------
# container io


def write_bundle(bundle: FeatureBundle, path) -> None:
    header = {
        "n_samples": bundle.n_samples,
        "n_features": bundle.n_features,
        "class_names": bundle.class_names,
        "layout": bundle.layout.to_dict(),
        "sample_ids": bundle.sample_ids,
        "labels": bundle.labels.tolist(),
        "subjects": bundle.subjects.tolist(),
        "provenance": bundle.provenance,
    }
    write_container(path, _BUNDLE_KIND, header, {"X": bundle.X})


def read_bundle(path) -> FeatureBundle:
    header, arrays = read_container(path, _BUNDLE_KIND)
    try:
        bundle = FeatureBundle(
            X=arrays["X"],
            layout=FeatureLayout.from_dict(header["layout"]),
            labels=np.asarray(header["labels"]),
            subjects=np.asarray(header["subjects"]),
            sample_ids=header["sample_ids"],
            class_names=header["class_names"],
            provenance=header.get("provenance", ""),
        )
    except (KeyError, TypeError) as exc:
        raise CorruptHeaderError(f"{path}: incomplete bundle header: {exc}") from exc
    return bundle


# ----------------------------------------------------------------------
# merging


def merge_modalities(bundles: Sequence[FeatureBundle]) -> FeatureBundle:
    """Join per-modality bundles of the same samples into one wide bundle.

    Rows are aligned by sample id to the first bundle's order; labels,
    subjects, and class names must agree sample by sample.  Parts are
    matched by name: the merged part order is first-appearance order, so
    bundles may carry different part sets (a whole-body part present only
    in the skeleton modality, say), but shared parts must appear in a
    consistent relative order.  Modality ids must be globally disjoint
    across bundles; within each merged part, blocks follow bundle order.
    """
    bundles = list(bundles)
    if not bundles:
        raise ValueError("no bundles to merge")
    if len(bundles) == 1:
        return bundles[0]

    first = bundles[0]
    seen_mods: set[str] = set()
    for b in bundles:
        mods = set(b.layout.modality_ids)
        clash = seen_mods & mods
        if clash:
            raise ValueError(f"modality ids repeat across bundles: {sorted(clash)}")
        seen_mods |= mods
        if b.class_names != first.class_names:
            raise ValueError("bundles disagree on class names")

    id_order = first.sample_ids
    id_set = set(id_order)
    aligned_rows = []
    for b in bundles:
        if set(b.sample_ids) != id_set:
            missing = sorted(id_set - set(b.sample_ids))[:3]
            extra = sorted(set(b.sample_ids) - id_set)[:3]
            raise ValueError(
                f"bundles cover different samples (missing {missing}, extra {extra})"
            )
        pos = {s: i for i, s in enumerate(b.sample_ids)}
        rows = np.array([pos[s] for s in id_order])
        if not np.array_equal(b.labels[rows], first.labels):
            raise ValueError("bundles disagree on sample labels")
        if not np.array_equal(b.subjects[rows], first.subjects):
            raise ValueError("bundles disagree on sample subjects")
        aligned_rows.append(rows)

    # merged part order: first appearance scanning bundles left to right
    merged_names: list[str] = []
    for b in bundles:
        known = [merged_names.index(n) for n in b.layout.part_names
                 if n in merged_names]
        if known != sorted(known):
            raise ValueError(
                "shared parts appear in conflicting orders across bundles"
            )
        for n in b.layout.part_names:
            if n not in merged_names:
                merged_names.append(n)

    parts = []
    for name in merged_names:
        mods = []
        for b in bundles:
            if name in b.layout.part_names:
                for blk in b.layout.part_blocks(name):
                    mods.append((blk.modality_id, blk.length))
        parts.append((name, mods))
    layout = FeatureLayout(parts)

    n = first.n_samples
    X = np.empty((n, layout.total_dim))
    for b, rows in zip(bundles, aligned_rows):
        Xb = b.X[rows]
        for blk in b.layout.blocks:
            name = b.layout.part_names[blk.part]
            dest = layout.block(name, blk.modality_id)
            X[:, dest.slice] = Xb[:, blk.slice]

    return FeatureBundle(
        X=X,
        layout=layout,
        labels=first.labels.copy(),
        subjects=first.subjects.copy(),
        sample_ids=list(id_order),
        class_names=list(first.class_names),
        provenance=" + ".join(b.provenance for b in bundles if b.provenance),
    )


# ----------------------------------------------------------------------
# subject-wise splits


@dataclass(eq=False)
class Split:
    """Train/test division of a bundle's rows by subject."""

    train_indices: np.ndarray
    test_indices: np.ndarray
    train_subjects: tuple[int, ...]
    test_subjects: tuple[int, ...]
    rule: str


def _split_by_subjects(bundle, train_subjects, rule) -> Split:
    subs = np.unique(bundle.subjects)
    train = tuple(sorted(int(s) for s in train_subjects))
    unknown = sorted(set(train) - set(subs.tolist()))
    if unknown:
        raise ValueError(f"subjects {unknown} not present in bundle")
    test = tuple(int(s) for s in subs if int(s) not in train)
    mask = np.isin(bundle.subjects, train)
    return Split(
        train_indices=np.flatnonzero(mask),
        test_indices=np.flatnonzero(~mask),
        train_subjects=train,
        test_subjects=test,
        rule=rule,
    )


def make_split(bundle: FeatureBundle, rule="first-five") -> Split:
    """Split by subject id.

    `rule` is ``"first-five"`` (first five subjects in sorted order train,
    the rest test), ``"odd"`` (odd-numbered subjects train), or an explicit
    iterable of training subject ids.
    """
    if isinstance(rule, str):
        subs = np.unique(bundle.subjects)
        if rule == "first-five":
            train = subs[:5]
        elif rule == "odd":
            train = [s for s in subs if s % 2 == 1]
        else:
            raise ValueError(f"unknown split rule {rule!r}")
        return _split_by_subjects(bundle, train, rule)
    train = list(rule)
    label = "subjects:" + ",".join(str(int(s)) for s in sorted(train))
    return _split_by_subjects(bundle, train, label)


def enumerate_splits(bundle: FeatureBundle, train_count: int = 5) -> list[Split]:
    """All subject-wise splits with `train_count` training subjects.

    Deterministic lexicographic order over sorted subject ids; with ten
    subjects and five training ones this is the full set of 252 splits.
    """
    subs = [int(s) for s in np.unique(bundle.subjects)]
    if not 0 < train_count < len(subs):
        raise ValueError(
            f"train_count must be in (0, {len(subs)}), got {train_count}"
        )
    return [
        _split_by_subjects(
            bundle, combo, "subjects:" + ",".join(map(str, combo))
        )
        for combo in itertools.combinations(subs, train_count)
    ]


def write_split_file(split: Split, path) -> None:
    with open(path, "w") as fh:
        for s in split.train_subjects:
            fh.write(f"train {s}\n")
        for s in split.test_subjects:
            fh.write(f"test {s}\n")


def split_from_file(bundle: FeatureBundle, path) -> Split:
    """Load a split file (lines of ``train <id>`` / ``test <id>``).

    The two sides must exactly partition the bundle's subjects.
    """
    train, test = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                side, value = line.split()
                value = int(value)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: expected 'train|test <id>'") from exc
            if side == "train":
                train.append(value)
            elif side == "test":
                test.append(value)
            else:
                raise ValueError(f"{path}:{lineno}: unknown side {side!r}")
    overlap = set(train) & set(test)
    if overlap:
        raise ValueError(f"{path}: subjects {sorted(overlap)} listed on both sides")
    declared = set(train) | set(test)
    present = set(int(s) for s in np.unique(bundle.subjects))
    if declared != present:
        raise ValueError(
            f"{path}: split subjects {sorted(declared)} do not match "
            f"bundle subjects {sorted(present)}"
        )
    return _split_by_subjects(bundle, train, rule=f"file:{path}")


# ----------------------------------------------------------------------
# synthetic data with planted part supports


@dataclass(frozen=True)
class SyntheticSpec:
    """Geometry of a planted-support classification problem.

    Every class selects `active_parts` parts; all modality blocks of a
    selected part are filled with standard normal weights, everything else
    is zero, and the column is scaled to unit norm.  Each sample is a
    standard Gaussian noise field plus `margin` times the template of its
    intended class, so class scores against the planted weights sit near
    `margin` for the intended class and near zero elsewhere.  Labels are
    the argmax of those scores plus Gaussian score noise of scale `noise`
    (at ``noise=0`` they are exactly the argmax of ``X @ W_true``).
    Subjects are assigned round-robin so that the ``first-five`` rule
    (with the default ten subjects) recovers exactly the generator's
    train/test row ranges.
    """

    n_parts: int = 10
    n_modalities: int = 2
    block_dim: int = 8
    n_classes: int = 5
    n_train: int = 400
    n_test: int = 400
    active_parts: int = 3
    noise: float = 0.1
    seed: int = 0
    n_subjects: int = 10
    margin: float = 6.0

    def __post_init__(self):
        for name in ("n_parts", "n_modalities", "block_dim", "n_classes",
                     "n_train", "n_test"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if not 0 < self.active_parts <= self.n_parts:
            raise ValueError("active_parts must lie in [1, n_parts]")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.n_subjects < 2:
            raise ValueError("need at least two subjects")
        if not self.margin > 0 or not np.isfinite(self.margin):
            raise ValueError("margin must be positive and finite")

    @property
    def layout(self) -> FeatureLayout:
        return FeatureLayout([
            (
                f"part_{j:02d}",
                [(f"mod{m}", self.block_dim) for m in range(self.n_modalities)],
            )
            for j in range(self.n_parts)
        ])


@dataclass
class SyntheticDataset:
    bundle: FeatureBundle
    true_weights: np.ndarray
    active_parts: list[tuple[int, ...]]
    train_indices: np.ndarray
    test_indices: np.ndarray

    def train_test_bundles(self) -> tuple[FeatureBundle, FeatureBundle]:
        return subset(self.bundle, self.train_indices), subset(self.bundle, self.test_indices)


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> SyntheticDataset:
    rng = np.random.default_rng(spec.seed)
    layout = spec.layout
    d, C = layout.total_dim, spec.n_classes
    n = spec.n_train + spec.n_test

    W = np.zeros((d, C))
    active = []
    for c in range(C):
        parts = tuple(sorted(rng.choice(spec.n_parts, spec.active_parts,
                                        replace=False).tolist()))
        active.append(parts)
        for j in parts:
            sl = layout.part_slice(j)
            W[sl, c] = rng.standard_normal(sl.stop - sl.start)
        W[:, c] /= np.linalg.norm(W[:, c])

    # balanced intended classes, permuted so subjects don't confound labels
    intended = rng.permutation(np.resize(np.arange(C), n))
    X = rng.standard_normal((n, d)) + spec.margin * W[:, intended].T
    scores = X @ W + spec.noise * rng.standard_normal((n, C))
    labels = np.argmax(scores, axis=1)

    h = spec.n_subjects // 2
    subjects = np.empty(n, dtype=int)
    train_idx = np.arange(spec.n_train)
    test_idx = np.arange(spec.n_train, n)
    subjects[train_idx] = 1 + train_idx % h
    subjects[test_idx] = h + 1 + (test_idx - spec.n_train) % (spec.n_subjects - h)

    bundle = FeatureBundle(
        X=X,
        layout=layout,
        labels=labels,
        subjects=subjects,
        sample_ids=[f"synth_{i:05d}" for i in range(n)],
        class_names=[f"class_{c}" for c in range(C)],
        provenance=(
            f"synthetic seed={spec.seed} parts={spec.n_parts} "
            f"mods={spec.n_modalities} block={spec.block_dim} "
            f"classes={C} active={spec.active_parts} noise={spec.noise} "
            f"margin={spec.margin}"
        ),
    )
    return SyntheticDataset(
        bundle=bundle,
        true_weights=W,
        active_parts=active,
        train_indices=train_idx,
        test_indices=test_idx,
    )


# ----------------------------------------------------------------------
# interoperability helpers


def import_text_features(matrix_path, meta_path, delimiter=None) -> FeatureBundle:
    """Build a bundle from a delimited text matrix plus a JSON sidecar.

    The sidecar declares ``layout``, ``class_names``, and a ``samples``
    list of ``{"id", "label", "subject"}`` records (labels as class names
    or integer indices), in matrix row order.
    """
    X = np.loadtxt(matrix_path, delimiter=delimiter, ndmin=2)
    with open(meta_path) as fh:
        meta = json.load(fh)
    try:
        layout = FeatureLayout.from_dict(meta["layout"])
        class_names = [str(c) for c in meta["class_names"]]
        samples = meta["samples"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{meta_path}: incomplete sidecar: {exc}") from exc
    labels = []
    for rec in samples:
        lab = rec["label"]
        labels.append(class_names.index(lab) if isinstance(lab, str) else int(lab))
    return FeatureBundle(
        X=X,
        layout=layout,
        labels=np.array(labels, dtype=int),
        subjects=np.array([int(rec["subject"]) for rec in samples]),
        sample_ids=[rec["id"] for rec in samples],
        class_names=class_names,
        provenance=meta.get("provenance", f"imported from {matrix_path}"),
    )


def append_constant_feature(bundle: FeatureBundle, part_name: str = "bias") -> FeatureBundle:
    """Add a constant-1 column as its own single-modality part.

    Gives penalized models an intercept-like degree of freedom without a
    separate intercept code path; off by default everywhere.
    """
    parts = [(p.name, list(p.modalities)) for p in bundle.layout.parts]
    parts.append((part_name, [("constant", 1)]))
    return FeatureBundle(
        X=np.hstack([bundle.X, np.ones((bundle.n_samples, 1))]),
        layout=FeatureLayout(parts),
        labels=bundle.labels.copy(),
        subjects=bundle.subjects.copy(),
        sample_ids=list(bundle.sample_ids),
        class_names=list(bundle.class_names),
        provenance=bundle.provenance,
    )
