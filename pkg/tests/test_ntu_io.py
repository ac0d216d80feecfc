from __future__ import annotations

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from angkit.core_types import FeatureTensor
from angkit.ntu_io import (
    ParseError,
    RawBody,
    RawSequence,
    TensorFormatError,
    normalize_clip,
    parse_skeleton_file,
    read_tensor,
    write_tensor,
)

# ---------------------------------------------------------------------------
# Fixture emitter: writes capture text independently of the parser so the
# round-trip comparison is value-for-value against known inputs.
# ---------------------------------------------------------------------------


def emit_capture(frames: list[list[tuple[int, np.ndarray]]], aux_cols: int = 9) -> str:
    lines = [str(len(frames))]
    for bodies in frames:
        lines.append(str(len(bodies)))
        for tracking_id, joints in bodies:
            lines.append(" ".join([str(tracking_id)] + ["0"] * aux_cols))
            lines.append(str(len(joints)))
            for x, y, z in joints:
                lines.append(f"{float(x)!r} {float(y)!r} {float(z)!r} 0.1 0.2")
    return "\n".join(lines) + "\n"


def body(rng, tracking_id: int, joints: int = 25) -> tuple[int, np.ndarray]:
    return tracking_id, rng.normal(size=(joints, 3))


class TestParser:
    def test_zero_case(self, topo):
        text = emit_capture([[(0, np.zeros((25, 3)))]])
        raw = parse_skeleton_file(text, topo)
        assert len(raw.frames) == 1
        assert raw.frames[0][0].tracking_id == 0
        assert np.all(raw.frames[0][0].joints == 0.0)

    def test_empty_body_frame_allowed(self, topo, rng):
        text = emit_capture([[], [body(rng, 7)]])
        raw = parse_skeleton_file(text, topo)
        assert raw.frames[0] == []
        assert len(raw.frames[1]) == 1

    def test_exact_round_trip_of_fixture(self, topo, rng):
        frames = [
            [body(rng, 3), body(rng, 1)],
            [body(rng, 1)],
            [body(rng, 5), body(rng, 2)],
        ]
        raw = parse_skeleton_file(emit_capture(frames).encode(), topo)
        for parsed, original in zip(raw.frames, frames):
            assert [b.tracking_id for b in parsed] == [tid for tid, _ in original]
            for b, (_, joints) in zip(parsed, original):
                np.testing.assert_array_equal(b.joints, joints)

    @pytest.mark.parametrize(
        "text,fragment",
        [
            ("", "frame count"),
            ("x", "frame count"),
            ("1\n", "body count"),
            ("1\n1\n1 0 0 0 0 0 0 0 0 0\n", "joint count"),
            ("1\n1\n1 0 0\n25\n", "body header"),
            ("1\n1\n" + " ".join(["9"] * 10) + "\n25\n0 0\n", "fields"),
            ("1\n1\n" + " ".join(["9"] * 10) + "\n24\n", "schema expects"),
            ("1\n1\n" + " ".join(["9"] * 10) + "\n25\n0 0 zzz\n", "non-numeric"),
            ("1\n1\n" + " ".join(["9"] * 10) + "\n25\n" + "0 0 nan\n" * 25, "non-finite"),
            ("2\n0\n0\nleftover\n", "trailing"),
        ],
    )
    def test_structured_errors(self, topo, text, fragment):
        with pytest.raises(ParseError, match=fragment):
            parse_skeleton_file(text, topo)

    def test_error_carries_line_number(self, topo):
        try:
            parse_skeleton_file("1\n1\n1 0 0 0 0 0 0 0 0 0\n25\n0 0 bad\n", topo)
        except ParseError as exc:
            assert exc.lineno == 5
        else:
            pytest.fail("expected ParseError")

    def test_fuzz_never_raises_anything_else(self, topo, rng):
        for _ in range(300):
            blob = rng.bytes(int(rng.integers(0, 120)))
            try:
                parse_skeleton_file(blob, topo)
            except ParseError:
                pass


class TestNormalize:
    def test_repeat_padding_single_frame(self, topo, rng):
        raw = parse_skeleton_file(emit_capture([[body(rng, 0)]]), topo)
        clip = normalize_clip(raw, topo, target_frames=4, max_persons=2)
        assert clip.valid_frames == 1
        for t in range(1, 4):
            np.testing.assert_array_equal(clip.coords[t], clip.coords[0])

    def test_translation_puts_first_pelvis_at_origin(self, topo, rng):
        joints = rng.normal(size=(25, 3))
        joints[0] = [1.0, 2.0, 3.0]
        raw = RawSequence(frames=[[RawBody(0, joints)]])
        clip = normalize_clip(raw, topo, target_frames=1, max_persons=1)
        np.testing.assert_allclose(clip.coords[0, 0, 0], 0.0, atol=0)
        np.testing.assert_allclose(clip.coords[0, :, 0], joints - [1.0, 2.0, 3.0])

    def test_cyclic_repetition_order(self, topo, rng):
        frames = [[body(rng, 0)] for _ in range(3)]
        raw = parse_skeleton_file(emit_capture(frames), topo)
        clip = normalize_clip(raw, topo, target_frames=7, max_persons=1)
        assert clip.valid_frames == 3
        for t in range(7):
            np.testing.assert_array_equal(clip.coords[t], clip.coords[t % 3])

    def test_bodies_sorted_by_tracking_id_and_capped(self, topo, rng):
        b1, b2, b3 = body(rng, 30), body(rng, 10), body(rng, 20)
        raw = parse_skeleton_file(emit_capture([[b1, b2, b3]]), topo)
        clip = normalize_clip(raw, topo, target_frames=1, max_persons=2)
        offset = b2[1][0]  # person 0 is the lowest tracking id
        np.testing.assert_allclose(clip.coords[0, :, 0], b2[1] - offset)
        np.testing.assert_allclose(clip.coords[0, :, 1], b3[1] - offset)

    def test_absent_person_stays_zero(self, topo, rng):
        raw = parse_skeleton_file(emit_capture([[body(rng, 0)]]), topo)
        clip = normalize_clip(raw, topo, target_frames=2, max_persons=2)
        assert np.all(clip.coords[:, :, 1, :] == 0.0)

    def test_zero_frames_rejected(self, topo):
        with pytest.raises(ValueError, match="zero frames"):
            normalize_clip(RawSequence(frames=[]), topo, target_frames=4)

    def test_idempotent_when_already_normalized(self, topo, rng):
        raw = parse_skeleton_file(emit_capture([[body(rng, 0)] for _ in range(4)]), topo)
        clip = normalize_clip(raw, topo, target_frames=4, max_persons=2)
        again = RawSequence(frames=[
            [RawBody(m, clip.coords[t, :, m, :]) for m in range(2)]
            for t in range(4)
        ])
        clip2 = normalize_clip(again, topo, target_frames=4, max_persons=2)
        np.testing.assert_array_equal(clip.coords, clip2.coords)
        assert clip2.valid_frames == 4


class TestTensorFormat:
    def test_singleton_round_trip(self):
        t = FeatureTensor(data=np.full((1, 1, 1, 1), 0.5), channel_names=["c"])
        buf = io.BytesIO()
        n = write_tensor(t, buf)
        assert n == len(buf.getvalue())
        buf.seek(0)
        back = read_tensor(buf)
        assert back.channel_names == ["c"]
        np.testing.assert_array_equal(back.data, t.data)

    @given(
        st.tuples(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6), st.integers(1, 2)),
        st.integers(0, 2**32 - 1),
    )
    @settings(max_examples=60)
    def test_write_read_write_byte_identical(self, shape, seed):
        rng = np.random.default_rng(seed)
        t = FeatureTensor(
            data=rng.normal(size=shape),
            channel_names=[f"ch{i}" for i in range(shape[0])],
        )
        first = io.BytesIO()
        write_tensor(t, first)
        first.seek(0)
        second = io.BytesIO()
        write_tensor(read_tensor(first), second)
        assert first.getvalue() == second.getvalue()

    def test_bad_magic(self):
        t = FeatureTensor(data=np.zeros((1, 1, 1, 1)), channel_names=["c"])
        buf = io.BytesIO()
        write_tensor(t, buf)
        corrupted = bytearray(buf.getvalue())
        corrupted[0] ^= 0xFF
        with pytest.raises(TensorFormatError, match="magic"):
            read_tensor(io.BytesIO(bytes(corrupted)))

    def test_truncation(self):
        t = FeatureTensor(data=np.zeros((2, 3, 4, 1)), channel_names=["a", "b"])
        buf = io.BytesIO()
        write_tensor(t, buf)
        blob = buf.getvalue()
        with pytest.raises(TensorFormatError, match="truncated"):
            read_tensor(io.BytesIO(blob[:-5]))

    def test_zero_dim_rejected(self):
        blob = b"ANGK1\x00" + b"\x00" * 16 + b"\x00\x00\x00\x00"
        with pytest.raises(TensorFormatError, match="zero dimension"):
            read_tensor(io.BytesIO(blob))

    def test_newline_in_channel_name_rejected(self):
        t = FeatureTensor(data=np.zeros((1, 1, 1, 1)), channel_names=["a\nb"])
        with pytest.raises(TensorFormatError, match="newline"):
            write_tensor(t, io.BytesIO())
