import numpy as np
import pytest

from partlearn.layout import Block, FeatureLayout, LayoutError, PartSpec, singleton_layout


def small_layout():
    return FeatureLayout([
        ("arm", [("pos", 3), ("depth", 2)]),
        ("leg", [("pos", 3), ("depth", 2)]),
        ("body", [("pos", 4)]),
    ])


def test_offsets_assigned_contiguously():
    lay = small_layout()
    assert lay.total_dim == 14
    assert lay.n_parts == 3
    offsets = [(b.part, b.modality, b.offset, b.length) for b in lay.blocks]
    assert offsets == [
        (0, 0, 0, 3), (0, 1, 3, 2),
        (1, 0, 5, 3), (1, 1, 8, 2),
        (2, 0, 10, 4),
    ]


def test_part_lookup_by_name_and_index():
    lay = small_layout()
    assert lay.part_slice("leg") == slice(5, 10)
    assert lay.part_slice(1) == slice(5, 10)
    np.testing.assert_array_equal(lay.part_indices("body"), np.arange(10, 14))
    b = lay.block("arm", "depth")
    assert (b.offset, b.length) == (3, 2)
    assert lay.block(0, 1) == b
    assert b.slice == slice(3, 5)


def test_unknown_lookups_raise():
    lay = small_layout()
    with pytest.raises(IndexError):
        lay.part_slice(3)
    with pytest.raises(KeyError):
        lay.part_slice("head")
    with pytest.raises(KeyError):
        lay.block("arm", "flow")
    with pytest.raises(IndexError):
        lay.block("arm", 5)
    with pytest.raises(KeyError):
        lay.modality_indices("flow")


def test_modality_ids_and_indices():
    lay = small_layout()
    assert lay.modality_ids == ("pos", "depth")
    pos = lay.modality_indices("pos")
    depth = lay.modality_indices("depth")
    np.testing.assert_array_equal(pos, [0, 1, 2, 5, 6, 7, 10, 11, 12, 13])
    np.testing.assert_array_equal(depth, [3, 4, 8, 9])
    # Together the modalities partition the columns.
    both = np.sort(np.concatenate([pos, depth]))
    np.testing.assert_array_equal(both, np.arange(14))


def test_modality_sublayout():
    lay = small_layout()
    sub, cols = lay.modality_sublayout("depth")
    assert sub.part_names == ("arm", "leg")
    assert sub.total_dim == 4
    np.testing.assert_array_equal(cols, [3, 4, 8, 9])
    # The auxiliary-only modality keeps its single part.
    sub2, cols2 = lay.modality_sublayout("pos")
    assert sub2.part_names == ("arm", "leg", "body")
    assert sub2.total_dim == 10


def test_part_and_block_groups_partition_columns():
    lay = small_layout()
    outer = lay.part_groups()
    flat = np.sort(np.concatenate(outer))
    np.testing.assert_array_equal(flat, np.arange(lay.total_dim))
    inner = lay.block_groups()
    for g, blocks in zip(outer, inner):
        np.testing.assert_array_equal(np.sort(np.concatenate(blocks)), np.sort(g))


def test_dict_round_trip_and_equality():
    lay = small_layout()
    again = FeatureLayout.from_dict(lay.to_dict())
    assert again == lay
    assert hash(again) == hash(lay)
    other = FeatureLayout([("arm", [("pos", 3)])])
    assert other != lay


def test_validate_is_idempotent():
    lay = small_layout()
    assert lay.validate() is lay


def test_from_blocks_round_trip():
    lay = small_layout()
    again = FeatureLayout.from_blocks(lay.part_names, lay.blocks, lay.total_dim)
    assert again == lay


def test_gap_and_overlap_reported_together():
    blocks = [
        Block(0, 0, "pos", 0, 3),
        Block(1, 0, "pos", 4, 3),   # gap at column 3
        Block(2, 0, "pos", 6, 3),   # overlaps previous block
    ]
    with pytest.raises(LayoutError) as err:
        FeatureLayout.from_blocks(["a", "b", "c"], blocks, 9)
    msg = str(err.value)
    assert "gap" in msg and "overlap" in msg
    assert len(err.value.violations) >= 2


def test_empty_block_rejected():
    with pytest.raises(LayoutError, match="empty block"):
        FeatureLayout([("a", [("pos", 3), ("depth", 0)])])


def test_duplicate_names_rejected():
    with pytest.raises(LayoutError, match="appears 2 times"):
        FeatureLayout([("a", [("pos", 1)]), ("a", [("pos", 1)])])
    with pytest.raises(LayoutError, match="repeats modality"):
        FeatureLayout([("a", [("pos", 1), ("pos", 2)])])


def test_empty_layout_rejected():
    with pytest.raises(LayoutError, match="no parts"):
        FeatureLayout([])
    with pytest.raises(LayoutError, match="no modality blocks"):
        FeatureLayout([("a", [])])


def test_non_contiguous_part_rejected():
    # part 0's blocks are split by part 1's block
    blocks = [
        Block(0, 0, "pos", 0, 2),
        Block(1, 0, "pos", 2, 2),
        Block(0, 1, "depth", 4, 2),
    ]
    with pytest.raises(LayoutError, match="not a contiguous column range"):
        FeatureLayout.from_blocks(["a", "b"], blocks, 6)


def test_total_dim_mismatch_rejected():
    blocks = [Block(0, 0, "pos", 0, 3)]
    with pytest.raises(LayoutError, match="total_dim"):
        FeatureLayout.from_blocks(["a"], blocks, 5)


def test_singleton_layout():
    lay = singleton_layout(5)
    assert lay.n_parts == 5
    assert lay.total_dim == 5
    assert lay.modality_ids == ("feature",)
    assert all(len(lay.part_blocks(j)) == 1 for j in range(5))


def test_benchmark_scale_layout():
    # 20 joint parts carrying three descriptor modalities plus one auxiliary
    # whole-body part: per-part 84 + 252 + 700, body block 196.
    parts = [
        (f"joint_{j:02d}", [("skeleton", 84), ("lop", 252), ("hon4d", 700)])
        for j in range(20)
    ]
    parts.append(("body", [("skeleton", 196)]))
    lay = FeatureLayout(parts)
    assert lay.total_dim == 20916
    assert lay.n_parts == 21
    skel, _ = lay.modality_sublayout("skeleton")
    assert skel.total_dim == 20 * 84 + 196 == 1876
    lop, _ = lay.modality_sublayout("lop")
    assert lop.total_dim == 5040
    hon, _ = lay.modality_sublayout("hon4d")
    assert hon.total_dim == 14000
    assert 1876 + 5040 + 14000 == 20916
