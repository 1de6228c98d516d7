import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surggap.errors import (
    BadMagic,
    DimensionMismatch,
    DimMismatchAcrossVideos,
    DuplicateVideoId,
    GrsOutOfRange,
    InfeasibleSampling,
    InvalidArgument,
    MissingFile,
    TruncatedPayload,
    UnsupportedVersion,
)
from surggap.features import (
    FeatureSet,
    VideoFeatures,
    load_manifest,
    read_feature_file,
    snippet_starts,
    temporal_average,
    write_feature_file,
    write_manifest,
)


def test_snippet_starts_exact_partition():
    assert snippet_starts(160, 16, 10) == list(range(0, 160, 16))


def test_snippet_starts_spread():
    # floor(i * 84 / 3) for i = 0..3
    assert snippet_starts(100, 16, 4) == [0, 28, 56, 84]


def test_snippet_starts_infeasible():
    with pytest.raises(InfeasibleSampling):
        snippet_starts(40, 16, 3)


@pytest.mark.parametrize("args", [(10, 0, 1), (10, 1, 0)])
def test_snippet_starts_bad_arguments(args):
    with pytest.raises(InvalidArgument):
        snippet_starts(*args)


@given(st.integers(1, 32), st.integers(1, 12), st.integers(0, 400))
def test_snippet_starts_properties(L, K, extra):
    T = K * L + extra
    starts = snippet_starts(T, L, K)
    assert len(starts) == K
    assert starts[0] == 0
    assert all(0 <= s <= T - L for s in starts)
    assert all(b - a >= L for a, b in zip(starts, starts[1:]))
    if K > 1:
        assert starts[-1] == T - L


def test_temporal_average_constant_snippet():
    x = np.arange(5.0)
    v = VideoFeatures("v", np.tile(x, (1, 16, 1)))
    np.testing.assert_array_equal(temporal_average(v).data[0, 0], x)


def test_temporal_average_two_frames():
    v = VideoFeatures("v", np.array([[[1.0], [3.0]]]))
    assert temporal_average(v).data.tolist() == [[[2.0]]]


def test_temporal_average_matches_loop_oracle():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(3, 16, 8))
    expected = np.zeros((3, 1, 8))
    for k in range(3):
        for j in range(8):
            total = 0.0
            for t in range(16):
                total += data[k, t, j]
            expected[k, 0, j] = total / 16
    got = temporal_average(VideoFeatures("v", data)).data
    np.testing.assert_allclose(got, expected, rtol=1e-12)


def test_temporal_average_affine_and_idempotent():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(2, 4, 5, 3))
    va, vb = VideoFeatures("a", a), VideoFeatures("b", b)
    mixed = temporal_average(VideoFeatures("m", 2.0 * a - 0.5 * b)).data
    np.testing.assert_allclose(mixed, 2.0 * temporal_average(va).data - 0.5 * temporal_average(vb).data, atol=1e-12)
    once = temporal_average(va)
    np.testing.assert_array_equal(temporal_average(once).data, once.data)


def test_video_features_validation():
    with pytest.raises(ValueError):
        VideoFeatures("v", np.array([[[np.nan]]]))
    with pytest.raises(GrsOutOfRange):
        VideoFeatures("v", np.zeros((1, 1, 2)), grs=31)
    v = VideoFeatures("v", np.zeros((3, 2)))
    assert (v.num_snippets, v.frames_per_snippet, v.dim) == (3, 1, 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_round_trip_bit_exact(tmp_path_factory, K, L, d, seed):
    data = np.random.default_rng(seed).normal(size=(K, L, d)).astype(np.float32)
    path = tmp_path_factory.mktemp("rt") / "clip.fsfb"
    write_feature_file(VideoFeatures("clip", data), path)
    back = read_feature_file(path)
    assert back.video_id == "clip"
    assert back.data.shape == (K, L, d)
    assert back.data.astype(np.float32).tobytes() == data.tobytes()


def _raw(path, magic=b"FSFB", version=1, K=2, L=16, d=4, n_floats=128):
    path.write_bytes(struct.pack("<4sIIII", magic, version, K, L, d) + np.zeros(n_floats, "<f4").tobytes())
    return path


def test_bad_magic(tmp_path):
    with pytest.raises(BadMagic):
        read_feature_file(_raw(tmp_path / "x.fsfb", magic=b"XXXX"))


def test_truncated_payload_reports_expected_count(tmp_path):
    with pytest.raises(TruncatedPayload, match="128"):
        read_feature_file(_raw(tmp_path / "x.fsfb", n_floats=100))


def test_truncated_header(tmp_path):
    p = tmp_path / "x.fsfb"
    p.write_bytes(b"FSFB\x01\x00")
    with pytest.raises(TruncatedPayload):
        read_feature_file(p)


def test_unsupported_version(tmp_path):
    with pytest.raises(UnsupportedVersion):
        read_feature_file(_raw(tmp_path / "x.fsfb", version=2))


def test_trailing_payload_is_dimension_mismatch(tmp_path):
    with pytest.raises(DimensionMismatch):
        read_feature_file(_raw(tmp_path / "x.fsfb", n_floats=129))


def _manifest(tmp_path, videos, dim=4, name="m"):
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps({"name": name, "dim": dim, "videos": videos}))
    return p


def _video_file(tmp_path, name, dim, K=2):
    write_feature_file(VideoFeatures(name, np.ones((K, 1, dim))), tmp_path / f"{name}.fsfb")
    return f"{name}.fsfb"


def test_manifest_empty(tmp_path):
    fs = load_manifest(_manifest(tmp_path, []))
    assert len(fs) == 0
    assert fs.flatten().shape == (0, 4)


def test_manifest_dim_mismatch_across_videos(tmp_path):
    videos = [
        {"id": "a", "file": _video_file(tmp_path, "a", 384), "grs": 20},
        {"id": "b", "file": _video_file(tmp_path, "b", 512), "grs": 26},
    ]
    with pytest.raises(DimMismatchAcrossVideos):
        load_manifest(_manifest(tmp_path, videos, dim=384))


def test_manifest_grs_out_of_range(tmp_path):
    videos = [{"id": "a", "file": _video_file(tmp_path, "a", 4), "grs": 31}]
    with pytest.raises(GrsOutOfRange):
        load_manifest(_manifest(tmp_path, videos))


def test_manifest_missing_file(tmp_path):
    with pytest.raises(MissingFile):
        load_manifest(_manifest(tmp_path, [{"id": "a", "file": "nope.fsfb"}]))


def test_manifest_duplicate_id(tmp_path):
    f = _video_file(tmp_path, "a", 4)
    with pytest.raises(DuplicateVideoId):
        load_manifest(_manifest(tmp_path, [{"id": "a", "file": f}, {"id": "a", "file": f}]))


def test_manifest_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    videos = tuple(
        VideoFeatures(f"v{i}", rng.normal(size=(3, 2, 5)).astype(np.float32), grs=19 + i) for i in range(4)
    )
    fs = FeatureSet("set", 5, videos)
    fs2 = load_manifest(write_manifest(fs, tmp_path / "out"))
    assert fs2.name == "set" and fs2.dim == 5
    assert [v.video_id for v in fs2.videos] == [v.video_id for v in videos]
    assert [v.grs for v in fs2.videos] == [19, 20, 21, 22]
    for a, b in zip(videos, fs2.videos):
        np.testing.assert_array_equal(a.data, b.data)


def test_flatten_is_snippet_rows():
    rng = np.random.default_rng(3)
    videos = (VideoFeatures("a", rng.normal(size=(3, 4, 2))), VideoFeatures("b", rng.normal(size=(5, 4, 2))))
    rows = FeatureSet("s", 2, videos).flatten()
    assert rows.shape == (8, 2)
    np.testing.assert_allclose(rows[:3], videos[0].data.mean(axis=1))


def test_feature_set_rejects_dim_mismatch():
    with pytest.raises(DimMismatchAcrossVideos):
        FeatureSet("s", 3, (VideoFeatures("a", np.zeros((1, 1, 2))),))
