"""Skeleton sequences to fixed-length part-structured feature vectors.

A recording is a ``(frames, 20, 3)`` array of joint positions.  Encoding
proceeds in two steps.  Normalization removes location (hip-center origin),
body size (divide by the mean hip-to-spine distance), and heading (rotate
each frame about the vertical axis so the left-to-right hip direction
points along +x); what the normalization removes is kept as an auxiliary
whole-body signal, the raw per-frame centroid plus the unwrapped facing
angle.  Each resulting scalar trajectory is then summarized by a Fourier
temporal pyramid: the series is split into 1, 2, then 4 segments over the
pyramid levels and each segment contributes the magnitudes of its first
few DFT coefficients, so the encoding sees both the whole motion and its
halves and quarters, at a fixed dimension regardless of sequence length.

The emitted bundle has one part per joint plus a ``body`` part, all under
a single ``skeleton`` modality, ready to merge with bundles from other
descriptors.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .bundle import FeatureBundle
from .layout import FeatureLayout

__all__ = [
    "N_JOINTS",
    "ReferenceJoints",
    "SkeletonSequence",
    "PyramidConfig",
    "DegenerateSkeletonError",
    "normalize_skeleton",
    "fourier_temporal_pyramid",
    "skeleton_layout",
    "encode_sequence",
    "encode_bundle",
    "read_skeleton_file",
    "write_skeleton_file",
    "read_manifest",
    "write_manifest",
]

N_JOINTS = 20


class DegenerateSkeletonError(ValueError):
    """Reference joints coincide; the pose cannot be normalized."""


@dataclass(frozen=True)
class ReferenceJoints:
    """Joint indices used for normalization (first-generation Kinect order)."""

    hip_center: int = 0
    spine: int = 1
    hip_left: int = 12
    hip_right: int = 16


@dataclass
class SkeletonSequence:
    positions: np.ndarray
    label: str
    subject: int
    sample_id: str

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 3 or self.positions.shape[1:] != (N_JOINTS, 3):
            raise ValueError(
                f"positions must have shape (frames, {N_JOINTS}, 3), "
                f"got {self.positions.shape}"
            )
        if self.positions.shape[0] < 2:
            raise ValueError("a sequence needs at least two frames")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError(f"non-finite joint positions in {self.sample_id!r}")
        self.label = str(self.label)
        self.subject = int(self.subject)
        self.sample_id = str(self.sample_id)

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class PyramidConfig:
    """Temporal pyramid depth and DFT coefficients kept per segment."""

    levels: int = 3
    coefficients: int = 4

    def __post_init__(self):
        if int(self.levels) < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if int(self.coefficients) < 1:
            raise ValueError(f"coefficients must be >= 1, got {self.coefficients}")

    @property
    def n_segments(self) -> int:
        return 2 ** self.levels - 1

    @property
    def features_per_series(self) -> int:
        return self.n_segments * self.coefficients


# ----------------------------------------------------------------------
# normalization


def normalize_skeleton(positions, refs: ReferenceJoints = ReferenceJoints()):
    """Location/scale/heading normalized joints plus the removed signal.

    Parameters
    ----------
    positions : ndarray of shape (frames, n_joints, 3)
        Joint coordinates; axis order x, y (vertical), z.
    refs : ReferenceJoints
        Which joints define the origin, the body scale, and the heading.

    Returns
    -------
    normalized : ndarray, same shape
        Hip-centered, scaled by the mean hip-to-spine distance, rotated
        per frame about the vertical axis so the hip line runs along +x.
    auxiliary : ndarray of shape (frames, 4)
        Raw body centroid (x, y, z) and the unwrapped facing angle.

    Raises
    ------
    DegenerateSkeletonError
        If the hip-to-spine distance vanishes or the hip line has no
        horizontal extent (heading undefined).
    """
    P = np.asarray(positions, dtype=float)
    if P.ndim != 3 or P.shape[2] != 3:
        raise ValueError(f"positions must have shape (frames, joints, 3), got {P.shape}")
    n_joints = P.shape[1]
    for name in ("hip_center", "spine", "hip_left", "hip_right"):
        j = getattr(refs, name)
        if not 0 <= j < n_joints:
            raise ValueError(f"reference joint {name}={j} outside [0, {n_joints})")

    scale = float(np.mean(np.linalg.norm(
        P[:, refs.spine] - P[:, refs.hip_center], axis=1
    )))
    if not np.isfinite(scale) or scale < 1e-12:
        raise DegenerateSkeletonError(
            "hip-center and spine coincide; body scale is undefined"
        )

    centered = P - P[:, refs.hip_center:refs.hip_center + 1]
    hips = centered[:, refs.hip_right] - centered[:, refs.hip_left]
    planar = np.hypot(hips[:, 0], hips[:, 2])
    if np.any(planar < 1e-6 * scale):
        bad = int(np.argmin(planar))
        raise DegenerateSkeletonError(
            f"hip joints have no horizontal separation at frame {bad}; "
            "facing direction is undefined"
        )
    theta = np.arctan2(hips[:, 2], hips[:, 0])

    cos = np.cos(theta)[:, None]
    sin = np.sin(theta)[:, None]
    x, y, z = centered[..., 0], centered[..., 1], centered[..., 2]
    rotated = np.stack([cos * x + sin * z, y, -sin * x + cos * z], axis=-1)

    auxiliary = np.column_stack([P.mean(axis=1), np.unwrap(theta)])
    return rotated / scale, auxiliary


# ----------------------------------------------------------------------
# temporal pyramid


def fourier_temporal_pyramid(series, config: PyramidConfig = PyramidConfig()) -> np.ndarray:
    """Low-frequency DFT magnitudes of a series over a binary segment pyramid.

    Level ``l`` splits the series into ``2**l`` near-equal segments
    (earlier segments take the remainder).  Each segment yields the
    magnitudes of its first ``coefficients`` DFT bins, including the DC
    term, unnormalized: a constant segment of value v and length L
    contributes ``L * v`` in its first slot and zeros after.  Segments
    shorter than the coefficient count are zero-padded to it.
    """
    s = np.asarray(series, dtype=float)
    if s.ndim != 1 or s.size == 0:
        raise ValueError(f"series must be a non-empty vector, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite values in series")
    out = np.empty(config.features_per_series)
    k = config.coefficients
    pos = 0
    for level in range(config.levels):
        for seg in np.array_split(s, 2 ** level):
            if seg.size < k:
                seg = np.concatenate([seg, np.zeros(k - seg.size)])
            out[pos:pos + k] = np.abs(np.fft.fft(seg)[:k])
            pos += k
    return out


# ----------------------------------------------------------------------
# encoding


def skeleton_layout(config: PyramidConfig = PyramidConfig(),
                    n_joints: int = N_JOINTS) -> FeatureLayout:
    """One part per joint (3 coordinate series) plus the body part (4 series)."""
    per_series = config.features_per_series
    parts = [
        (f"joint_{j:02d}", [("skeleton", 3 * per_series)]) for j in range(n_joints)
    ]
    parts.append(("body", [("skeleton", 4 * per_series)]))
    return FeatureLayout(parts)


def encode_sequence(positions, config: PyramidConfig = PyramidConfig(),
                    refs: ReferenceJoints = ReferenceJoints()) -> np.ndarray:
    normalized, auxiliary = normalize_skeleton(positions, refs)
    pieces = []
    for j in range(normalized.shape[1]):
        for axis in range(3):
            pieces.append(fourier_temporal_pyramid(normalized[:, j, axis], config))
    for axis in range(auxiliary.shape[1]):
        pieces.append(fourier_temporal_pyramid(auxiliary[:, axis], config))
    return np.concatenate(pieces)


def encode_bundle(sequences, config: PyramidConfig = PyramidConfig(),
                  refs: ReferenceJoints = ReferenceJoints(),
                  class_names=None) -> FeatureBundle:
    """Encode sequences into a single-modality skeleton feature bundle.

    Class names default to the sorted unique labels; pass an explicit list
    to fix the class universe (and its order) across bundles.
    """
    sequences = list(sequences)
    if not sequences:
        raise ValueError("no sequences to encode")
    joint_counts = {s.positions.shape[1] for s in sequences}
    if len(joint_counts) != 1:
        raise ValueError(f"sequences disagree on joint count: {sorted(joint_counts)}")

    if class_names is None:
        class_names = sorted({s.label for s in sequences})
    class_names = [str(c) for c in class_names]
    index = {c: k for k, c in enumerate(class_names)}
    unknown = sorted({s.label for s in sequences} - set(class_names))
    if unknown:
        raise ValueError(f"labels {unknown} missing from class_names")

    X = np.stack([encode_sequence(s.positions, config, refs) for s in sequences])
    layout = skeleton_layout(config, n_joints=joint_counts.pop())
    return FeatureBundle(
        X=X,
        layout=layout,
        labels=np.array([index[s.label] for s in sequences]),
        subjects=np.array([s.subject for s in sequences]),
        sample_ids=[s.sample_id for s in sequences],
        class_names=class_names,
        provenance=(
            f"skeleton-ftp levels={config.levels} coefficients={config.coefficients}"
        ),
    )


# ----------------------------------------------------------------------
# file io


def read_skeleton_file(path) -> np.ndarray:
    """Text skeleton recording: one frame per line, 60 reals (20 joints x 3)."""
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] != N_JOINTS * 3:
        raise ValueError(
            f"{path}: expected {N_JOINTS * 3} values per frame, got {data.shape[1]}"
        )
    return data.reshape(data.shape[0], N_JOINTS, 3)


def write_skeleton_file(positions, path) -> None:
    P = np.asarray(positions, dtype=float)
    np.savetxt(path, P.reshape(P.shape[0], -1), fmt="%.10g")


def read_manifest(path) -> list[SkeletonSequence]:
    """Load sequences listed in a manifest CSV.

    Columns: ``sample_id``, ``path`` (relative to the manifest), ``label``,
    ``subject``.  A listed file that does not exist raises FileNotFoundError
    naming it.
    """
    base = os.path.dirname(os.path.abspath(path))
    sequences = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"sample_id", "path", "label", "subject"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(
                f"{path}: manifest must have columns {sorted(required)}, "
                f"got {reader.fieldnames}"
            )
        for row in reader:
            full = os.path.join(base, row["path"])
            if not os.path.exists(full):
                raise FileNotFoundError(
                    f"{full} (listed in manifest {path} as {row['sample_id']!r})"
                )
            sequences.append(
                SkeletonSequence(
                    positions=read_skeleton_file(full),
                    label=row["label"],
                    subject=int(row["subject"]),
                    sample_id=row["sample_id"],
                )
            )
    if not sequences:
        raise ValueError(f"{path}: manifest lists no sequences")
    return sequences


def write_manifest(rows, path) -> None:
    """Write manifest rows of (sample_id, path, label, subject)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "path", "label", "subject"])
        for row in rows:
            writer.writerow(list(row))
