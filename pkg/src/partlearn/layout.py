"""Feature layouts: how the columns of a feature matrix group into parts.

A layout declares an ordered list of named parts (for skeleton data,
typically one part per joint plus an auxiliary whole-body part).  Each part
carries one contiguous block of columns per modality present for that part.
Blocks never overlap, parts occupy contiguous column ranges, and together
the blocks cover ``[0, total_dim)`` exactly.  A layout therefore doubles as
a two-level partition of the columns: parts on the outside, per-part
modality blocks on the inside, with the inner level refining the outer.

Parts may carry different modality sets.  This admits layouts where an
auxiliary part exists in only one modality, which is exactly what merging
a whole-body feature bundle with per-joint descriptor bundles produces.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = ["Block", "PartSpec", "FeatureLayout", "LayoutError"]


class LayoutError(ValueError):
    """Structural problem in a feature layout.

    Carries the full list of violations found so callers can fix everything
    at once rather than replaying validation one failure at a time.
    """

    def __init__(self, violations: Iterable[str]):
        self.violations = list(violations)
        super().__init__("invalid layout:\n  " + "\n  ".join(self.violations))


@dataclass(frozen=True)
class Block:
    """One contiguous run of columns: a single modality of a single part."""

    part: int
    modality: int
    modality_id: str
    offset: int
    length: int

    @property
    def stop(self) -> int:
        return self.offset + self.length

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.stop)

    def indices(self) -> np.ndarray:
        return np.arange(self.offset, self.stop)


@dataclass(frozen=True)
class PartSpec:
    """A named part and the (modality id, block length) pairs it carries."""

    name: str
    modalities: tuple[tuple[str, int], ...]

    def __post_init__(self):
        object.__setattr__(
            self,
            "modalities",
            tuple((str(m), int(w)) for m, w in self.modalities),
        )

    @property
    def width(self) -> int:
        return sum(w for _, w in self.modalities)

    @property
    def modality_ids(self) -> tuple[str, ...]:
        return tuple(m for m, _ in self.modalities)


class FeatureLayout:
    """Column grouping of a feature matrix into parts and modality blocks.

    Parameters
    ----------
    parts : sequence
        Parts in column order, each a :class:`PartSpec` or a
        ``(name, [(modality_id, length), ...])`` pair.  Column offsets are
        assigned contiguously in the given order, one block per
        (part, modality) entry.

    Notes
    -----
    Instances are validated on construction and should be treated as
    immutable afterwards.  :meth:`validate` re-checks the invariants and
    raises :class:`LayoutError` listing every violation; on an already valid
    layout it is a no-op returning ``self``.
    """

    def __init__(self, parts: Sequence):
        specs = []
        for p in parts:
            if isinstance(p, PartSpec):
                specs.append(p)
            else:
                name, mods = p
                specs.append(PartSpec(str(name), tuple(mods)))
        self.parts: tuple[PartSpec, ...] = tuple(specs)
        blocks = []
        offset = 0
        for j, spec in enumerate(self.parts):
            for m, (mid, width) in enumerate(spec.modalities):
                blocks.append(Block(j, m, mid, offset, width))
                offset += width
        self.blocks: tuple[Block, ...] = tuple(blocks)
        self.total_dim: int = offset
        self.validate()

    @classmethod
    def from_blocks(
        cls,
        part_names: Sequence[str],
        blocks: Iterable[Block],
        total_dim: int,
    ) -> "FeatureLayout":
        """Rebuild a layout from explicit blocks, validating the geometry.

        This is the deserialization path; unlike ``__init__`` it does not
        assign offsets itself, so gap and overlap violations are possible
        and reported.
        """
        obj = object.__new__(cls)
        names = tuple(str(n) for n in part_names)
        obj.blocks = tuple(blocks)
        obj.total_dim = int(total_dim)
        per_part: dict[int, list] = {j: [] for j in range(len(names))}
        for b in obj.blocks:
            if 0 <= b.part < len(names):
                per_part[b.part].append((b.modality, b.modality_id, b.length))
        specs = []
        for j, name in enumerate(names):
            entries = sorted(per_part[j])
            specs.append(PartSpec(name, tuple((mid, w) for _, mid, w in entries)))
        obj.parts = tuple(specs)
        obj.validate()
        return obj

    # ------------------------------------------------------------------
    # validation

    def validate(self) -> "FeatureLayout":
        problems: list[str] = []
        if not self.parts:
            problems.append("layout has no parts")
        for name, count in Counter(p.name for p in self.parts).items():
            if count > 1:
                problems.append(f"part name {name!r} appears {count} times")
        for spec in self.parts:
            if not spec.name:
                problems.append("part with empty name")
            if not spec.modalities:
                problems.append(f"part {spec.name!r} carries no modality blocks")
            for mid, count in Counter(spec.modality_ids).items():
                if count > 1:
                    problems.append(
                        f"part {spec.name!r} repeats modality {mid!r} ({count} blocks)"
                    )
        n_parts = len(self.parts)
        for b in self.blocks:
            where = f"block (part {b.part}, modality {b.modality_id!r})"
            if not 0 <= b.part < n_parts:
                problems.append(f"{where} references a part out of range [0, {n_parts})")
                continue
            if b.length < 1:
                problems.append(f"empty block: {where} has length {b.length}")
            if b.offset < 0:
                problems.append(f"{where} starts at negative offset {b.offset}")

        # Coverage: sorted by offset, blocks must tile [0, total_dim) exactly.
        cursor = 0
        for b in sorted(self.blocks, key=lambda b: (b.offset, b.stop)):
            if b.length < 1 or b.offset < 0:
                continue
            if b.offset > cursor:
                problems.append(f"gap: columns [{cursor}, {b.offset}) belong to no block")
            elif b.offset < cursor:
                problems.append(
                    f"overlap: block (part {b.part}, modality {b.modality_id!r}) "
                    f"starts at {b.offset} before column {cursor} is closed"
                )
            cursor = max(cursor, b.stop)
        if cursor != self.total_dim:
            problems.append(f"blocks cover [0, {cursor}) but total_dim is {self.total_dim}")

        # Parts must occupy contiguous ranges with modalities in column order.
        for j in range(n_parts):
            mine = sorted((b for b in self.blocks if b.part == j), key=lambda b: b.offset)
            if not mine:
                continue
            if [b.modality for b in mine] != list(range(len(mine))):
                problems.append(
                    f"part {self.parts[j].name!r}: modality indices do not follow column order"
                )
            for prev, nxt in zip(mine, mine[1:]):
                if nxt.offset != prev.stop:
                    problems.append(
                        f"part {self.parts[j].name!r} is not a contiguous column range "
                        f"(break between offsets {prev.stop} and {nxt.offset})"
                    )
        if problems:
            raise LayoutError(problems)
        return self

    # ------------------------------------------------------------------
    # lookups

    @property
    def n_parts(self) -> int:
        return len(self.parts)

    @property
    def part_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.parts)

    @property
    def modality_ids(self) -> tuple[str, ...]:
        """All modality ids, in first-appearance order."""
        seen: dict[str, None] = {}
        for b in self.blocks:
            seen.setdefault(b.modality_id, None)
        return tuple(seen)

    def part_index(self, part: int | str) -> int:
        if isinstance(part, str):
            for j, spec in enumerate(self.parts):
                if spec.name == part:
                    return j
            raise KeyError(f"no part named {part!r}")
        j = int(part)
        if not 0 <= j < self.n_parts:
            raise IndexError(f"part {j} out of range for layout with {self.n_parts} parts")
        return j

    def part_blocks(self, part: int | str) -> tuple[Block, ...]:
        j = self.part_index(part)
        return tuple(b for b in self.blocks if b.part == j)

    def part_slice(self, part: int | str) -> slice:
        blocks = self.part_blocks(part)
        return slice(blocks[0].offset, blocks[-1].stop)

    def part_indices(self, part: int | str) -> np.ndarray:
        s = self.part_slice(part)
        return np.arange(s.start, s.stop)

    def block(self, part: int | str, modality: int | str) -> Block:
        blocks = self.part_blocks(part)
        if isinstance(modality, str):
            for b in blocks:
                if b.modality_id == modality:
                    return b
            raise KeyError(f"part {self.parts[self.part_index(part)].name!r} "
                           f"has no modality {modality!r}")
        m = int(modality)
        if not 0 <= m < len(blocks):
            raise IndexError(f"modality {m} out of range for part with {len(blocks)} blocks")
        return blocks[m]

    def modality_indices(self, modality_id: str) -> np.ndarray:
        """Column indices of every block carrying `modality_id`, ascending."""
        if modality_id not in self.modality_ids:
            raise KeyError(f"no modality {modality_id!r} in layout")
        idx = [b.indices() for b in self.blocks if b.modality_id == modality_id]
        return np.concatenate(idx)

    def modality_sublayout(self, modality_id: str) -> tuple["FeatureLayout", np.ndarray]:
        """Layout of a single modality plus the parent columns it occupies.

        Returns
        -------
        sub : FeatureLayout
            Only the parts carrying `modality_id`, each reduced to that one
            block, in part order.
        columns : ndarray
            Parent column indices such that ``X[:, columns]`` is the feature
            matrix the sublayout describes.
        """
        parts = []
        cols = []
        for j, spec in enumerate(self.parts):
            for b in self.part_blocks(j):
                if b.modality_id == modality_id:
                    parts.append((spec.name, [(modality_id, b.length)]))
                    cols.append(b.indices())
        if not parts:
            raise KeyError(f"no modality {modality_id!r} in layout")
        return FeatureLayout(parts), np.concatenate(cols)

    # ------------------------------------------------------------------
    # partitions, as index groups, for the generic norm routines

    def part_groups(self) -> list[np.ndarray]:
        return [self.part_indices(j) for j in range(self.n_parts)]

    def block_groups(self) -> list[list[np.ndarray]]:
        return [[b.indices() for b in self.part_blocks(j)] for j in range(self.n_parts)]

    # ------------------------------------------------------------------
    # serialization and comparison

    def to_dict(self) -> dict:
        return {
            "parts": [
                {
                    "name": p.name,
                    "modalities": [{"id": m, "length": w} for m, w in p.modalities],
                }
                for p in self.parts
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureLayout":
        parts = [
            (p["name"], [(m["id"], m["length"]) for m in p["modalities"]])
            for p in data["parts"]
        ]
        return cls(parts)

    def __eq__(self, other) -> bool:
        return isinstance(other, FeatureLayout) and self.parts == other.parts

    def __hash__(self) -> int:
        return hash(self.parts)

    def __repr__(self) -> str:
        return (
            f"FeatureLayout({self.n_parts} parts, "
            f"{len(self.modality_ids)} modalities, dim {self.total_dim})"
        )


def singleton_layout(n_features: int, modality_id: str = "feature") -> FeatureLayout:
    """Fallback layout treating every column as its own single-modality part."""
    return FeatureLayout(
        [(f"f{k}", [(modality_id, 1)]) for k in range(int(n_features))]
    )
