"""Video feature containers, the FSFB binary format and manifest loading.

A video is stored as a ``K x L x d`` block: ``K`` snippets of ``L`` frames,
each frame a ``d``-dimensional feature vector. After temporal averaging
``L`` is 1. Feature files hold float32; arrays in memory are float64.

FSFB layout (little-endian)::

    b"FSFB" | u32 version=1 | u32 K | u32 L | u32 d | f32[K*L*d]

with the payload in ``[snippet][frame][dim]`` order.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
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

MAGIC = b"FSFB"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")

GRS_MIN = 6
GRS_MAX = 30


@dataclass(frozen=True)
class VideoFeatures:
    video_id: str
    data: np.ndarray
    grs: int | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, None, :]
        if data.ndim != 3:
            raise InvalidArgument(f"video {self.video_id!r}: expected K x L x d data, got shape {data.shape}")
        if min(data.shape) < 1:
            raise InvalidArgument(f"video {self.video_id!r}: empty dimension in shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidArgument(f"video {self.video_id!r}: non-finite feature values")
        if self.grs is not None and not GRS_MIN <= self.grs <= GRS_MAX:
            raise GrsOutOfRange(f"video {self.video_id!r}: GRS {self.grs} outside [{GRS_MIN}, {GRS_MAX}]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def num_snippets(self) -> int:
        return self.data.shape[0]

    @property
    def frames_per_snippet(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def snippets(self) -> np.ndarray:
        """``K x d`` snippet matrix; requires ``L == 1``."""
        if self.frames_per_snippet != 1:
            raise InvalidArgument(f"video {self.video_id!r} is not temporally averaged (L={self.frames_per_snippet})")
        return self.data[:, 0, :]


@dataclass(frozen=True)
class FeatureSet:
    name: str
    dim: int
    videos: tuple[VideoFeatures, ...] = field(default_factory=tuple)

    def __post_init__(self):
        videos = tuple(self.videos)
        seen = set()
        for v in videos:
            if v.dim != self.dim:
                raise DimMismatchAcrossVideos(
                    f"feature set {self.name!r}: video {v.video_id!r} has dim {v.dim}, expected {self.dim}"
                )
            if v.video_id in seen:
                raise DuplicateVideoId(f"feature set {self.name!r}: duplicate video id {v.video_id!r}")
            seen.add(v.video_id)
        object.__setattr__(self, "videos", videos)

    def __len__(self) -> int:
        return len(self.videos)

    def flatten(self) -> np.ndarray:
        """Stack every snippet of every video into a ``(sum K_i) x d`` matrix."""
        if not self.videos:
            return np.zeros((0, self.dim))
        return np.concatenate([temporal_average(v).snippets() for v in self.videos], axis=0)


def snippet_starts(total_frames: int, snippet_len: int, num_snippets: int) -> list[int]:
    """Start frames of ``num_snippets`` evenly spread, non-overlapping snippets.

    ``start_i = floor(i * (T - L) / (K - 1))``; a single snippet starts at 0.
    """
    T, L, K = int(total_frames), int(snippet_len), int(num_snippets)
    if K < 1 or L < 1:
        raise InvalidArgument(f"snippet_len and num_snippets must be >= 1 (got L={L}, K={K})")
    if T < K * L:
        raise InfeasibleSampling(f"{K} non-overlapping snippets of {L} frames need {K * L} frames, video has {T}")
    if K == 1:
        return [0]
    return [(i * (T - L)) // (K - 1) for i in range(K)]


def temporal_average(v: VideoFeatures) -> VideoFeatures:
    if v.frames_per_snippet == 1:
        return v
    return replace(v, data=v.data.mean(axis=1, keepdims=True))


def write_feature_file(v: VideoFeatures, path: str | os.PathLike) -> None:
    K, L, d = v.data.shape
    payload = np.ascontiguousarray(v.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, K, L, d))
        fh.write(payload.tobytes())


def read_feature_file(path: str | os.PathLike, video_id: str | None = None, grs: int | None = None) -> VideoFeatures:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"feature file not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < 4 or head[:4] != MAGIC:
            raise BadMagic(f"{path}: bad magic {head[:4]!r}, expected {MAGIC!r}")
        if len(head) < _HEADER.size:
            raise TruncatedPayload(f"{path}: header truncated ({len(head)} of {_HEADER.size} bytes)")
        _, version, K, L, d = _HEADER.unpack(head)
        if version != VERSION:
            raise UnsupportedVersion(f"{path}: format version {version}, only {VERSION} is supported")
        if min(K, L, d) < 1:
            raise DimensionMismatch(f"{path}: header declares empty shape K={K}, L={L}, d={d}")
        expected = K * L * d
        available = (os.fstat(fh.fileno()).st_size - _HEADER.size) // 4
        if available < expected:
            raise TruncatedPayload(
                f"{path}: header declares K={K}, L={L}, d={d} ({expected} floats), payload holds {available}"
            )
        raw = fh.read(expected * 4)
        if fh.read(1):
            raise DimensionMismatch(f"{path}: payload longer than the {expected} floats declared by the header")
    data = np.frombuffer(raw, dtype="<f4").reshape(K, L, d)
    return VideoFeatures(video_id=video_id if video_id is not None else path.stem, data=data, grs=grs)


def load_manifest(path: str | os.PathLike) -> FeatureSet:
    """Load a JSON manifest and every feature file it references.

    File paths in the manifest are resolved relative to the manifest.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    with open(path) as fh:
        doc = json.load(fh)
    try:
        name = str(doc["name"])
        dim = int(doc["dim"])
        entries: Sequence[dict] = doc["videos"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidArgument(f"{path}: malformed manifest ({exc})") from exc

    videos = []
    seen = set()
    for entry in entries:
        vid = str(entry["id"])
        if vid in seen:
            raise DuplicateVideoId(f"{path}: duplicate video id {vid!r}")
        seen.add(vid)
        grs = entry.get("grs")
        if grs is not None:
            grs = int(grs)
            if not GRS_MIN <= grs <= GRS_MAX:
                raise GrsOutOfRange(f"{path}: video {vid!r} has GRS {grs} outside [{GRS_MIN}, {GRS_MAX}]")
        v = read_feature_file(path.parent / entry["file"], video_id=vid, grs=grs)
        if v.dim != dim:
            raise DimMismatchAcrossVideos(f"{path}: video {vid!r} has dim {v.dim}, manifest declares dim {dim}")
        videos.append(v)
    return FeatureSet(name=name, dim=dim, videos=tuple(videos))


def write_manifest(fs: FeatureSet, directory: str | os.PathLike, filename: str = "manifest.json") -> Path:
    """Write ``fs`` as a manifest plus one ``.fsfb`` file per video."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for v in fs.videos:
        fname = f"{v.video_id}.fsfb"
        write_feature_file(v, directory / fname)
        entry = {"id": v.video_id, "file": fname}
        if v.grs is not None:
            entry["grs"] = v.grs
        entries.append(entry)
    out = directory / filename
    with open(out, "w") as fh:
        json.dump({"name": fs.name, "dim": fs.dim, "videos": entries}, fh, indent=2)
        fh.write("\n")
    return out
