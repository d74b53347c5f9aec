import numpy as np
import pytest

from ulpsim.stream import (
    Dfs,
    FrameMeta,
    FrameTrace,
    SizeModel,
    TraceError,
    estimate_iframe_stats,
    generate_trace,
    load_trace,
    save_trace,
    segment_dfs,
)


def pattern_of(trace):
    return "".join(f.frame_type for f in trace.frames)


class TestGenerateTrace:
    def test_degenerate_gop(self):
        t = generate_trace(gop_length=1, b_run=0, n_gops=3, seed=0)
        assert pattern_of(t) == "III"
        assert all(f.dist_to_gop_end == 0 for f in t.frames)

    def test_classic_12frame_gop_pattern(self):
        t = generate_trace(gop_length=12, b_run=2, n_gops=2, seed=0)
        assert pattern_of(t) == "IBBPBBPBBPBB" * 2

    def test_default_gop_pattern(self):
        t = generate_trace(n_gops=1, seed=0)
        assert pattern_of(t) == "I" + "BBP" * 7

    def test_default_profile_near_12mbps(self):
        # expected value of the size model: 989 packets per 22-frame GOP,
        # 1356-byte packets at 25 fps -> 12.2 Mbit/s
        t = generate_trace(n_gops=250, seed=1)
        assert t.bitrate(1356 * 8) == pytest.approx(12e6, rel=0.10)

    def test_zero_stddev_gives_constant_sizes(self):
        model = SizeModel(
            mean={"I": 50, "P": 20, "B": 10}, stddev={"I": 0.0, "P": 0.0, "B": 0.0}
        )
        t = generate_trace(n_gops=4, size_model=model, seed=3)
        for f in t.frames:
            assert f.size_packets == {"I": 50, "P": 20, "B": 10}[f.frame_type]

    def test_deterministic_for_seed(self):
        a = generate_trace(n_gops=5, seed=7)
        b = generate_trace(n_gops=5, seed=7)
        assert a == b

    def test_bad_gop_spec(self):
        with pytest.raises(TraceError):
            generate_trace(gop_length=4, b_run=4, n_gops=1)

    @pytest.mark.parametrize("gop_length,b_run", [(1, 0), (2, 0), (5, 1), (12, 2), (13, 3), (30, 2)])
    def test_gop_invariants_hold(self, gop_length, b_run):
        t = generate_trace(gop_length=gop_length, b_run=b_run, n_gops=3, seed=11)
        for i, f in enumerate(t.frames):
            assert f.size_packets >= 1
            in_gop = i % gop_length
            assert f.dist_to_gop_end == gop_length - 1 - in_gop
            assert (f.frame_type == "I") == (in_gop == 0)


class TestFrameTraceValidation:
    def test_rejects_non_i_gop_start(self):
        frames = (
            FrameMeta(0, "P", 10, 1),
            FrameMeta(1, "B", 10, 0),
        )
        with pytest.raises(TraceError, match="I-frames must start"):
            FrameTrace(frames=frames, gop_length=2, framerate=25)

    def test_rejects_bad_distance_chain(self):
        frames = (
            FrameMeta(0, "I", 10, 3),
            FrameMeta(1, "P", 10, 1),
        )
        with pytest.raises(TraceError, match="decrease by 1"):
            FrameTrace(frames=frames, gop_length=4, framerate=25)


class TestSegmentDfs:
    def test_hand_segmentation_of_12frame_gop(self):
        t = generate_trace(gop_length=12, b_run=2, n_gops=1, seed=0)  # IBBPBBPBBPBB
        windows = segment_dfs(t, 5)
        assert [w.kind for w in windows] == ["I_DFS", "PB_DFS", "PB_DFS"]
        assert [len(w) for w in windows] == [5, 5, 2]

    def test_single_frame_windows(self):
        t = generate_trace(n_gops=2, seed=0)
        windows = segment_dfs(t, 1)
        for w in windows:
            assert len(w) == 1
            assert (w.kind == "I_DFS") == (w.frames[0].frame_type == "I")

    def test_windows_partition_trace(self):
        t = generate_trace(n_gops=7, seed=2)
        for n in (1, 2, 5, 8):
            windows = segment_dfs(t, n)
            rebuilt = [f for w in windows for f in w.frames]
            assert rebuilt == list(t.frames)
            for w in windows:
                assert (w.kind == "I_DFS") == any(f.frame_type == "I" for f in w.frames)

    def test_empty_trace(self):
        t = FrameTrace(frames=(), gop_length=12, framerate=25)
        assert segment_dfs(t, 5) == []


class TestIFrameStats:
    def test_two_iframes_hand_computed(self):
        frames = (
            FrameMeta(0, "I", 40, 1),
            FrameMeta(1, "P", 10, 0),
            FrameMeta(2, "I", 60, 1),
            FrameMeta(3, "P", 10, 0),
        )
        t = FrameTrace(frames=frames, gop_length=2, framerate=25)
        stats = estimate_iframe_stats(t)
        assert stats.mu == pytest.approx(50.0)
        assert stats.sigma == pytest.approx(14.142135623730951)

    def test_equal_sizes_zero_sigma(self):
        model = SizeModel(mean={"I": 64, "P": 9, "B": 4}, stddev={"I": 0, "P": 0, "B": 0})
        t = generate_trace(gop_length=4, b_run=1, n_gops=5, size_model=model, seed=0)
        stats = estimate_iframe_stats(t)
        assert (stats.mu, stats.sigma) == (64.0, 0.0)

    def test_sampling_recovers_mean(self):
        model = SizeModel(mean={"I": 60, "P": 9, "B": 4}, stddev={"I": 10, "P": 0, "B": 0})
        t = generate_trace(gop_length=2, b_run=0, n_gops=10_000, size_model=model, seed=5)
        stats = estimate_iframe_stats(t)
        assert abs(stats.mu - 60) < 0.5

    def test_insufficient_data(self):
        t = generate_trace(gop_length=3, b_run=0, n_gops=1, seed=0)
        with pytest.raises(TraceError, match="I-frames"):
            estimate_iframe_stats(t)


class TestTraceFile:
    def test_round_trip(self, tmp_path):
        t = generate_trace(n_gops=4, seed=9)
        path = tmp_path / "trace.txt"
        save_trace(t, path)
        assert load_trace(path) == t

    def test_empty_trace_with_header(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_text("#framerate=25 gop_length=12\n")
        t = load_trace(path)
        assert len(t) == 0 and t.framerate == 25.0 and t.gop_length == 12

    def test_header_framerate_carried(self, tmp_path):
        path = tmp_path / "t.txt"
        save_trace(generate_trace(n_gops=1, framerate=25, seed=0), path)
        assert load_trace(path).framerate == 25.0

    def test_malformed_line_reports_lineno(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("#framerate=25 gop_length=2\n0,I,10,1\n1,P,oops,0\n")
        with pytest.raises(TraceError, match="line 3"):
            load_trace(path)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "noheader.txt"
        path.write_text("0,I,10,0\n")
        with pytest.raises(TraceError, match="header"):
            load_trace(path)
