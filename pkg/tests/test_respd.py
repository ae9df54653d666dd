"""Sliding-window sum against a naive double-loop oracle."""

import numpy as np
import pytest

from radarood.dsp import RangeDopplerImage
from radarood.errors import DataError
from radarood.respd import (
    FrameWindowConfig,
    RdiSequence,
    normalize_unit,
    normalize_unit_frames,
    respd_transform,
)


def naive_windowed_sum(frames, w, stride=1):
    n = len(frames)
    out = []
    for start in range(0, n - w + 1, stride):
        acc = np.zeros_like(frames[0], dtype=np.float64)
        for j in range(start, start + w):
            acc = acc + frames[j]
        out.append(acc)
    return np.stack(out)


def seq_of(frames):
    frames = np.asarray(frames, dtype=np.float64)
    return RdiSequence(frames=frames, frame_indices=np.arange(len(frames)))


class TestRespdTransform:
    def test_constant_frames(self):
        seq = seq_of(np.full((60, 4, 4), 3.0))
        out = respd_transform(seq, FrameWindowConfig(window_size=50))
        assert out.frames.shape == (11, 4, 4)
        assert np.allclose(out.frames, 150.0)

    def test_length_equals_window_gives_single_frame(self):
        rng = np.random.default_rng(0)
        frames = rng.random((50, 3, 3))
        out = respd_transform(seq_of(frames), FrameWindowConfig(window_size=50))
        assert len(out) == 1
        assert np.abs(out.frames[0] - frames.sum(axis=0)).max() <= 1e-9

    @pytest.mark.parametrize("w", [1, 7, 50])
    def test_matches_naive_oracle(self, w):
        rng = np.random.default_rng(w)
        frames = rng.random((200, 8, 8)) * 100
        out = respd_transform(seq_of(frames), FrameWindowConfig(window_size=w))
        expected = naive_windowed_sum(frames, w)
        assert out.frames.shape == expected.shape
        assert np.abs(out.frames - expected).max() <= 1e-9

    def test_recompute_branch_matches_oracle(self):
        rng = np.random.default_rng(42)
        frames = rng.random((80, 4, 4))
        cfg = FrameWindowConfig(window_size=7, recompute_interval=5)
        out = respd_transform(seq_of(frames), cfg)
        assert np.abs(out.frames - naive_windowed_sum(frames, 7)).max() <= 1e-9

    def test_stride(self):
        rng = np.random.default_rng(1)
        frames = rng.random((100, 2, 2))
        cfg = FrameWindowConfig(window_size=10, stride=5)
        out = respd_transform(seq_of(frames), cfg)
        expected = naive_windowed_sum(frames, 10, stride=5)
        assert out.frames.shape == expected.shape
        assert np.abs(out.frames - expected).max() <= 1e-9
        assert list(out.frame_indices) == list(range(0, 91, 5))

    def test_output_indexed_by_first_frame_of_window(self):
        frames = np.ones((55, 2, 2))
        out = respd_transform(seq_of(frames), FrameWindowConfig(window_size=50))
        assert list(out.frame_indices) == [0, 1, 2, 3, 4, 5]

    def test_short_sequence_rejected_with_minimum(self):
        with pytest.raises(ValueError, match="at least 50"):
            respd_transform(seq_of(np.ones((49, 2, 2))), FrameWindowConfig(window_size=50))

    def test_linearity(self):
        rng = np.random.default_rng(2)
        a = rng.random((60, 3, 3))
        b = rng.random((60, 3, 3))
        cfg = FrameWindowConfig(window_size=20)
        out_lin = respd_transform(seq_of(2.5 * a + b), cfg).frames
        expected = 2.5 * respd_transform(seq_of(a), cfg).frames + respd_transform(seq_of(b), cfg).frames
        assert np.abs(out_lin - expected).max() <= 1e-9

    def test_window_config_validation(self):
        with pytest.raises(ValueError):
            FrameWindowConfig(window_size=0)
        with pytest.raises(ValueError):
            FrameWindowConfig(stride=0)


class TestStreamingWindowSum:
    def test_matches_batch_transform(self):
        from radarood.respd import StreamingWindowSum

        rng = np.random.default_rng(9)
        frames = rng.random((130, 4, 4)) * 10
        cfg = FrameWindowConfig(window_size=50, recompute_interval=16)
        expected = respd_transform(seq_of(frames), cfg).frames
        ring = StreamingWindowSum(cfg)
        outputs = [out for f in frames if (out := ring.push(f)) is not None]
        assert len(outputs) == len(expected)
        assert np.abs(np.stack(outputs) - expected).max() <= 1e-9

    def test_reset(self):
        from radarood.respd import StreamingWindowSum

        ring = StreamingWindowSum(FrameWindowConfig(window_size=3))
        for f in np.ones((3, 2, 2)):
            out = ring.push(f)
        assert np.allclose(out, 3.0)
        ring.reset()
        assert ring.push(np.ones((2, 2))) is None


class TestNormalizeUnit:
    def test_zero_image_stays_zero(self):
        out = normalize_unit(RangeDopplerImage(np.zeros((4, 4)), 3))
        assert np.all(out.data == 0)
        assert out.frame_index == 3

    def test_peak_becomes_one(self):
        data = np.zeros((4, 4))
        data[1, 2] = 8.0
        data[0, 0] = 2.0
        out = normalize_unit(RangeDopplerImage(data, 0))
        assert out.data[1, 2] == 1.0
        assert out.data[0, 0] == 0.25
        assert out.data.max() == 1.0

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        img = RangeDopplerImage(rng.random((5, 5)) * 7, 0)
        once = normalize_unit(img)
        twice = normalize_unit(once)
        assert np.array_equal(once.data, twice.data)

    def test_rejects_negative_and_non_finite(self):
        with pytest.raises(DataError):
            normalize_unit(RangeDopplerImage(np.array([[-1.0, 0.0]]), 0))
        with pytest.raises(DataError):
            normalize_unit(RangeDopplerImage(np.array([[np.nan, 0.0]]), 0))

    def test_batch_variant_matches(self):
        rng = np.random.default_rng(4)
        frames = rng.random((6, 4, 4)) * 5
        frames[2] = 0.0
        batch = normalize_unit_frames(frames)
        for i in range(6):
            single = normalize_unit(RangeDopplerImage(frames[i], i)).data
            assert np.array_equal(batch[i], single)
