"""Episodic few-shot skill classification over frozen video features.

GRS scores are binarised into proficient (19-24) and expert (25-30). Each
episode draws ``k`` support videos per class, trains a freshly initialised
head on them for a fixed number of epochs (batch size 1, AdamW, cosine
schedule) and scores the remaining videos. Accuracy and macro-F1 are
reported as percentages, averaged over episodes.
"""

from __future__ import annotations

import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import nn
from .errors import (
    CellMismatch,
    EmptyInput,
    GrsOutOfTaskRange,
    InsufficientClassSize,
    InvalidArgument,
    LengthMismatch,
    MissingGrs,
)
from .features import FeatureSet, VideoFeatures, temporal_average

PROFICIENT, EXPERT = 0, 1
CLASS_NAMES = ("proficient", "expert")
TASK_GRS_MIN, TASK_GRS_MAX = 19, 30
EXPERT_MIN_GRS = 25


def binarize_grs(grs: int, allow_extrapolation: bool = False) -> int:
    """0 (proficient) for GRS 19-24, 1 (expert) for 25-30.

    Scores outside 19-30 raise unless ``allow_extrapolation`` is set, in
    which case they are clamped to the nearest class.
    """
    grs = int(grs)
    if not TASK_GRS_MIN <= grs <= TASK_GRS_MAX and not allow_extrapolation:
        raise GrsOutOfTaskRange(f"GRS {grs} outside the task range [{TASK_GRS_MIN}, {TASK_GRS_MAX}]")
    return EXPERT if grs >= EXPERT_MIN_GRS else PROFICIENT


@dataclass(frozen=True)
class LabeledItem:
    video_id: str
    features: VideoFeatures
    label: int

    def sequence(self) -> np.ndarray:
        """``K x d`` snippet sequence (TCN input)."""
        return self.features.snippets()

    def pooled(self) -> np.ndarray:
        """Mean over snippets (linear-probe input)."""
        return self.features.snippets().mean(axis=0)


def label_items(fs: FeatureSet, allow_extrapolation: bool = False) -> list[LabeledItem]:
    items = []
    for v in fs.videos:
        if v.grs is None:
            raise MissingGrs(f"video {v.video_id!r} in {fs.name!r} has no GRS label")
        label = binarize_grs(v.grs, allow_extrapolation)
        items.append(LabeledItem(v.video_id, temporal_average(v), label))
    return items


@dataclass(frozen=True)
class Episode:
    shot: int
    support: tuple[int, ...]
    query: tuple[int, ...]
    seed: int


def episode_seed(master_seed: int, shot: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, shot, index]).generate_state(1, dtype=np.uint32)[0])


def sample_episodes(items: Sequence[LabeledItem], k: int, n_episodes: int, master_seed: int) -> list[Episode]:
    """Draw ``n_episodes`` support/query splits with ``k`` support items per class.

    Episode ``i`` depends only on ``(master_seed, k, i)``. The query set is
    every item not in the support set, in index order.
    """
    if k < 1:
        raise InvalidArgument(f"shot count must be >= 1, got {k}")
    if n_episodes < 1:
        raise InvalidArgument(f"episode count must be >= 1, got {n_episodes}")
    labels = np.array([it.label for it in items], dtype=int)
    by_class = [np.flatnonzero(labels == c) for c in (PROFICIENT, EXPERT)]
    for c, members in enumerate(by_class):
        if members.size < k + 1:
            raise InsufficientClassSize(
                f"class {CLASS_NAMES[c]!r} has {members.size} items; {k}-shot episodes need at least {k + 1}"
            )
    episodes = []
    for i in range(n_episodes):
        seed = episode_seed(master_seed, k, i)
        rng = np.random.default_rng(seed)
        support = np.concatenate([rng.choice(members, size=k, replace=False) for members in by_class])
        chosen = set(support.tolist())
        query = tuple(j for j in range(len(items)) if j not in chosen)
        episodes.append(Episode(k, tuple(int(j) for j in support), query, seed))
    return episodes


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    decay_bias: bool = False
    channels: int = 64
    dilations: tuple[int, ...] = (1, 2, 4)
    kernel_width: int = 3
    init: str = "uniform"

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidArgument(f"epochs must be >= 0, got {self.epochs}")
        if not self.lr > 0:
            raise InvalidArgument(f"lr must be positive, got {self.lr}")
        if self.init not in ("uniform", "zeros"):
            raise InvalidArgument(f"init must be 'uniform' or 'zeros', got {self.init!r}")
        object.__setattr__(self, "dilations", tuple(int(x) for x in self.dilations))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["dilations"] = list(self.dilations)
        return out


HEAD_KINDS = ("linear", "tcn")


def _inputs(items: Sequence[LabeledItem], head_kind: str) -> list[np.ndarray]:
    if head_kind == "linear":
        return [it.pooled() for it in items]
    if head_kind == "tcn":
        return [it.sequence() for it in items]
    raise InvalidArgument(f"unknown head {head_kind!r} (expected one of {HEAD_KINDS})")


def _new_head(head_kind: str, dim: int, cfg: TrainConfig, rng: np.random.Generator) -> nn.Head:
    init_rng = None if cfg.init == "zeros" else rng
    if head_kind == "linear":
        return nn.init_linear(dim, 2, init_rng)
    return nn.init_tcn(dim, cfg.channels, cfg.dilations, cfg.kernel_width, 2, init_rng)


def predict(head: nn.Head, x: np.ndarray) -> int:
    # argmax returns the first maximum: ties go to the lower class index
    return int(np.argmax(nn.forward(head, x)))


def train_head(head: nn.Head, xs: Sequence[np.ndarray], ys: Sequence[int], cfg: TrainConfig, rng) -> list[float]:
    """Per-sample AdamW with a per-epoch cosine learning rate.

    Returns the mean training loss of every epoch.
    """
    params = head.params()
    state = nn.OptimizerState(
        lr=cfg.lr,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
        no_decay=frozenset() if cfg.decay_bias else nn.bias_names(params),
    )
    history = []
    for epoch in range(cfg.epochs):
        lr = nn.cosine_lr(epoch, cfg.epochs, cfg.lr)
        total = 0.0
        for j in rng.permutation(len(xs)):
            loss, grads = nn.backward(head, xs[j], ys[j])
            nn.adamw_step(state, params, grads, lr)
            total += loss
        history.append(total / len(xs))
    return history


def evaluate(predictions: Sequence[int], labels: Sequence[int]) -> dict:
    """Accuracy and two-class macro-F1, both in percent.

    A class that is neither present nor predicted contributes F1 = 0.
    """
    pred = np.asarray(predictions, dtype=int)
    true = np.asarray(labels, dtype=int)
    if pred.shape != true.shape:
        raise LengthMismatch(f"{pred.size} predictions for {true.size} labels")
    if pred.size == 0:
        raise EmptyInput("cannot evaluate an empty prediction set")
    accuracy = 100.0 * float(np.mean(pred == true))
    f1s = []
    for c in (PROFICIENT, EXPERT):
        tp = int(np.sum((pred == c) & (true == c)))
        fp = int(np.sum((pred == c) & (true != c)))
        fn = int(np.sum((pred != c) & (true == c)))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return {"accuracy": accuracy, "f1": 100.0 * float(np.mean(f1s))}


def run_episode(ep: Episode, items: Sequence[LabeledItem], head_kind: str, cfg: TrainConfig) -> dict:
    xs = _inputs(items, head_kind)
    ys = [it.label for it in items]
    rng = np.random.default_rng([ep.seed, 1])
    head = _new_head(head_kind, items[0].features.dim, cfg, rng)
    train_head(head, [xs[j] for j in ep.support], [ys[j] for j in ep.support], cfg, rng)
    preds = [predict(head, xs[j]) for j in ep.query]
    return evaluate(preds, [ys[j] for j in ep.query])


@dataclass
class EvalReport:
    config: dict
    per_episode: list[dict] = field(default_factory=list)
    mean_accuracy: float = 0.0
    std_accuracy: float = 0.0
    mean_f1: float = 0.0
    std_f1: float = 0.0

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "per_episode": self.per_episode,
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "mean_f1": self.mean_f1,
            "std_f1": self.std_f1,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        return cls(
            config=dict(d.get("config", {})),
            per_episode=[dict(e) for e in d.get("per_episode", [])],
            mean_accuracy=float(d["mean_accuracy"]),
            std_accuracy=float(d["std_accuracy"]),
            mean_f1=float(d["mean_f1"]),
            std_f1=float(d["std_f1"]),
        )

    def summary(self) -> str:
        return f"acc {self.mean_accuracy:.2f} ± {self.std_accuracy:.2f} / f1 {self.mean_f1:.2f} ± {self.std_f1:.2f}"


def aggregate(per_episode: Sequence[Mapping], config: dict | None = None) -> EvalReport:
    """Means and population standard deviations over episodes."""
    if not per_episode:
        raise EmptyInput("no episodes to aggregate")
    # statistics sums exactly, so identical episodes give a std of exactly 0
    acc = [float(e["accuracy"]) for e in per_episode]
    f1 = [float(e["f1"]) for e in per_episode]
    return EvalReport(
        config=dict(config or {}),
        per_episode=[{"accuracy": float(e["accuracy"]), "f1": float(e["f1"])} for e in per_episode],
        mean_accuracy=statistics.fmean(acc),
        std_accuracy=statistics.pstdev(acc),
        mean_f1=statistics.fmean(f1),
        std_f1=statistics.pstdev(f1),
    )


def _episode_job(args):
    ep, items, head_kind, cfg = args
    return run_episode(ep, items, head_kind, cfg)


def run_eval(
    items: Sequence[LabeledItem],
    head_kind: str,
    k: int,
    n_episodes: int = 100,
    master_seed: int = 0,
    cfg: TrainConfig | None = None,
    workers: int = 1,
    dataset: str | None = None,
) -> EvalReport:
    """Full protocol for one (head, shot) cell.

    With ``workers > 1`` episodes run in a process pool; results are merged
    in episode order, so the report does not depend on ``workers``.
    """
    cfg = cfg or TrainConfig()
    if head_kind not in HEAD_KINDS:
        raise InvalidArgument(f"unknown head {head_kind!r} (expected one of {HEAD_KINDS})")
    episodes = sample_episodes(items, k, n_episodes, master_seed)
    jobs = [(ep, items, head_kind, cfg) for ep in episodes]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_episode_job, jobs))
    else:
        results = [_episode_job(j) for j in jobs]
    config = {
        "dataset": dataset,
        "head": head_kind,
        "architecture": nn.TCN_ARCH if head_kind == "tcn" else "linear",
        "input": "snippet sequence" if head_kind == "tcn" else "mean over snippets",
        "k": k,
        "episodes": n_episodes,
        "master_seed": master_seed,
        "episode_seeds": [ep.seed for ep in episodes],
        "f1": "macro",
        "std": "population",
        "train": cfg.to_dict(),
    }
    return aggregate(results, config)


def default_workers() -> int:
    return max(1, min(8, os.cpu_count() or 1))


@dataclass(frozen=True)
class GainRow:
    comparison: str
    avg_accuracy_gain: float
    avg_f1_gain: float


Cell = tuple  # (head, k)


def compute_gains(
    combined: Mapping[Cell, EvalReport],
    baselines: Mapping[str, Mapping[Cell, EvalReport]],
    combined_name: str = "combined",
) -> list[GainRow]:
    """Mean over (head, shot) cells of ``combined.mean - baseline.mean``.

    One row per baseline, named ``"<combined_name> vs <baseline>"``, for
    accuracy and F1 separately.
    """
    if not combined:
        raise EmptyInput("combined report set is empty")
    cells = sorted(combined)
    rows = []
    for name, base in baselines.items():
        if sorted(base) != cells:
            missing = sorted(set(cells) ^ set(base))
            raise CellMismatch(f"report set {name!r} does not cover the same cells as {combined_name!r}: {missing}")
        d_acc = [combined[c].mean_accuracy - base[c].mean_accuracy for c in cells]
        d_f1 = [combined[c].mean_f1 - base[c].mean_f1 for c in cells]
        rows.append(GainRow(f"{combined_name} vs {name}", float(np.mean(d_acc)), float(np.mean(d_f1))))
    return rows


def format_gain_table(rows: Iterable[GainRow]) -> str:
    """Gains laid out with comparisons as columns, accuracy and F1 as rows."""
    rows = list(rows)
    head = ["Performance Gain (%)"] + [r.comparison for r in rows]
    acc = ["Avg. Accuracy Gain"] + [f"{r.avg_accuracy_gain:+.2f}" for r in rows]
    f1 = ["Avg. F1-score Gain"] + [f"{r.avg_f1_gain:+.2f}" for r in rows]
    widths = [max(len(col[i]) for col in (head, acc, f1)) for i in range(len(head))]
    lines = [" | ".join(cell.ljust(w) for cell, w in zip(line, widths)) for line in (head, acc, f1)]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines)
