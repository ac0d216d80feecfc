from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from angkit.core_types import (
    Clip,
    FeatureTensor,
    SchemaError,
    SkeletonTopology,
    flatten_index,
    parse_schema,
)


class TestFlattenIndex:
    def test_identity_case(self):
        assert flatten_index((1, 1, 1, 1), 0, 0, 0, 0) == 0

    def test_last_element(self):
        assert flatten_index((2, 3, 4, 5), 1, 2, 3, 4) == 2 * 3 * 4 * 5 - 1

    def test_direct_evaluation(self):
        assert flatten_index((3, 300, 25, 2), 1, 0, 0, 1) == 15001

    @pytest.mark.parametrize("bad", [(2, 0, 0, 0), (0, 3, 0, 0), (0, 0, 4, 0), (0, 0, 0, 5), (-1, 0, 0, 0)])
    def test_out_of_range(self, bad):
        with pytest.raises(IndexError):
            flatten_index((2, 3, 4, 5), *bad)

    @given(st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)))
    def test_bijection(self, shape):
        seen = [
            flatten_index(shape, c, t, v, m)
            for c, t, v, m in itertools.product(*(range(d) for d in shape))
        ]
        assert seen == list(range(int(np.prod(shape))))


class TestKinect25:
    def test_tree_shape(self, topo):
        assert topo.num_joints == 25
        assert len(topo.edges) == 24

    def test_connected_by_traversal(self, topo):
        adj = topo.neighbor_sets()
        seen = {0}
        frontier = [0]
        while frontier:
            nxt = [n for j in frontier for n in adj[j] if n not in seen]
            seen.update(nxt)
            frontier = nxt
        assert seen == set(range(25))

    def test_angle_table(self, topo):
        assert [a.name for a in topo.angle_table] == [
            "ang_local", "ang_ctr_unfixed", "ang_ctr_fixed",
            "ang_pair_hands", "ang_pair_elbows", "ang_pair_knees", "ang_pair_feet",
            "ang_finger_left", "ang_finger_right",
        ]

    def test_neck_local_pair_is_the_shoulders(self, topo):
        local = topo.angle_table[0]
        assert local.adjacent_pairs[topo.neck] == (4, 8)

    def test_leaves_are_zeroed_in_local(self, topo):
        local = topo.angle_table[0]
        degree = [len(s) for s in topo.neighbor_sets()]
        for j in range(25):
            if degree[j] < 2:
                assert j in local.zero_joints

    def test_bone_parent_root_is_pelvis(self, topo):
        roots = [j for j, p in enumerate(topo.bone_parent) if p is None]
        assert roots == [topo.pelvis]

    def test_round_trips_through_dict(self, topo):
        assert SkeletonTopology.from_dict(topo.to_dict()) == topo


class TestSchemaValidation:
    MINIMAL = """
    num_joints = 3
    edges = 0-1, 1-2
    center_pair = 1, 0
    bone_parent = -1, 0, 1
    adjacent_pairs = 1:0-2
    angle local
    angle center_unfixed
    angle center_fixed
    angle pair hands
    angle pair elbows
    angle pair knees
    angle feet
    endpoint_pairs = hands:0-2 elbows:0-2 knees:0-2 feet:0-2
    """

    def test_minimal_schema_error_reports_bad_angle(self):
        with pytest.raises(SchemaError):
            parse_schema(self.MINIMAL)  # "angle feet" is not a kind

    def test_minimal_schema_parses_when_fixed(self):
        topo = parse_schema(self.MINIMAL.replace("angle feet", "angle pair feet"))
        assert topo.num_joints == 3
        assert len(topo.angle_table) == 7

    def test_disconnected_edges_rejected(self):
        text = self.MINIMAL.replace("angle feet", "angle pair feet")
        with pytest.raises(SchemaError, match="tree|connected"):
            parse_schema(text.replace("edges = 0-1, 1-2", "edges = 0-1, 0-1"))

    def test_local_pair_must_be_neighbors(self):
        text = self.MINIMAL.replace("angle feet", "angle pair feet")
        with pytest.raises(SchemaError, match="neighbors"):
            parse_schema(text.replace("adjacent_pairs = 1:0-2", "adjacent_pairs = 0:1-2"))

    def test_wrong_angle_count_rejected(self):
        text = self.MINIMAL.replace("angle feet", "angle pair feet")
        with pytest.raises(SchemaError, match="angle table"):
            parse_schema(text + "\nangle pair feet")


class TestClipAndTensor:
    def test_clip_rejects_nan(self):
        coords = np.zeros((2, 3, 1, 3))
        coords[1, 1, 0, 0] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            Clip(coords=coords, valid_frames=2)

    def test_clip_valid_frames_bounds(self):
        with pytest.raises(ValueError):
            Clip(coords=np.zeros((2, 3, 1, 3)), valid_frames=3)

    def test_tensor_name_count_must_match(self):
        with pytest.raises(ValueError):
            FeatureTensor(data=np.zeros((2, 1, 1, 1)), channel_names=["only_one"])

    def test_channel_lookup(self):
        t = FeatureTensor(data=np.zeros((2, 1, 1, 1)), channel_names=["a", "b"])
        assert t.channel_index("b") == 1
        with pytest.raises(KeyError):
            t.channel_index("c")

    def test_layout_matches_flatten_index(self, rng):
        data = rng.normal(size=(2, 3, 4, 5))
        t = FeatureTensor(data=data, channel_names=["a", "b"])
        flat = t.data.reshape(-1)
        for c, tt, v, m in itertools.product(range(2), range(3), range(4), range(5)):
            assert flat[flatten_index(t.shape, c, tt, v, m)] == data[c, tt, v, m]
