"""Seeded synthetic feature sets for tests, fixtures and demos."""

from __future__ import annotations

import numpy as np

from .features import FeatureSet, VideoFeatures

# GRS values cycled through when labelling synthetic videos
PROFICIENT_GRS = (19, 20, 21, 22, 23, 24)
EXPERT_GRS = (25, 26, 27, 28, 29, 30)


def gaussian_cloud_set(
    name: str,
    n_videos: int,
    snippets: int,
    dim: int,
    shift: float = 0.0,
    seed: int = 0,
) -> FeatureSet:
    """Snippets drawn i.i.d. from N(shift * e_1, I), already temporally averaged."""
    rng = np.random.default_rng(seed)
    offset = np.zeros(dim)
    offset[0] = shift
    videos = tuple(
        VideoFeatures(f"{name}_{i:03d}", rng.normal(size=(snippets, 1, dim)) + offset) for i in range(n_videos)
    )
    return FeatureSet(name, dim, videos)


def skill_dataset(
    name: str = "synthetic_skill",
    class_sizes: tuple[int, int] = (17, 16),
    snippets: int = 8,
    frames: int = 16,
    dim: int = 16,
    separation: float = 10.0,
    seed: int = 0,
    frame_noise: float = 0.1,
    snippet_noise: float = 0.5,
) -> FeatureSet:
    """Two skill classes whose video-level means sit ``separation`` sigma apart.

    Each video draws a centre from N(class_mean, I); snippets scatter around
    it with ``snippet_noise`` and frames around their snippet with
    ``frame_noise``. Videos are interleaved by class and carry GRS labels
    from the matching range.
    """
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    means = (-0.5 * separation * direction, 0.5 * separation * direction)
    order = []
    counts = list(class_sizes)
    while any(counts):
        for c in (0, 1):
            if counts[c]:
                order.append(c)
                counts[c] -= 1
    videos = []
    seen = [0, 0]
    for i, c in enumerate(order):
        centre = means[c] + rng.normal(size=dim)
        snip = centre + snippet_noise * rng.normal(size=(snippets, 1, dim))
        data = snip + frame_noise * rng.normal(size=(snippets, frames, dim))
        grs_pool = PROFICIENT_GRS if c == 0 else EXPERT_GRS
        grs = grs_pool[seen[c] % len(grs_pool)]
        seen[c] += 1
        # float32-representable so a file round trip is lossless
        videos.append(VideoFeatures(f"{name}_{i:03d}", data.astype(np.float32), grs))
    return FeatureSet(name, dim, tuple(videos))


def write_fixtures(root) -> None:
    """Regenerate the bundled fixture manifests under ``root``."""
    from pathlib import Path

    from .features import write_manifest

    root = Path(root)
    write_manifest(skill_dataset("skill33", dim=64, frames=1, seed=0), root / "skill33")
    write_manifest(_as_float32(gaussian_cloud_set("gap_a", 8, 8, 8, shift=0.0, seed=1)), root / "gap_a")
    write_manifest(_as_float32(gaussian_cloud_set("gap_b", 8, 8, 8, shift=1.0, seed=2)), root / "gap_b")
    write_manifest(
        skill_dataset("small_class", class_sizes=(5, 10), snippets=4, frames=1, dim=8, seed=3), root / "small_class"
    )


def _as_float32(fs: FeatureSet) -> FeatureSet:
    videos = tuple(VideoFeatures(v.video_id, v.data.astype(np.float32), v.grs) for v in fs.videos)
    return FeatureSet(fs.name, fs.dim, videos)


if __name__ == "__main__":
    import sys

    write_fixtures(sys.argv[1] if len(sys.argv) > 1 else "fixtures")
