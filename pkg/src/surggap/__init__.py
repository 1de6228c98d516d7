"""Domain-gap measurement and few-shot skill-assessment evaluation over video features."""

from importlib import resources
from pathlib import Path

from .features import FeatureSet, VideoFeatures, load_manifest, read_feature_file, write_feature_file
from .fewshot import EvalReport, compute_gains, run_eval
from .ot import GapResult, PointCloud, domain_gap, emd_exact, emd_sinkhorn

__version__ = "0.1.0"


def fixtures_dir() -> Path:
    """Directory of the bundled synthetic manifests."""
    return Path(str(resources.files(__name__) / "fixtures"))


__all__ = [
    "EvalReport",
    "FeatureSet",
    "GapResult",
    "PointCloud",
    "VideoFeatures",
    "compute_gains",
    "domain_gap",
    "emd_exact",
    "emd_sinkhorn",
    "fixtures_dir",
    "load_manifest",
    "read_feature_file",
    "run_eval",
    "write_feature_file",
]
