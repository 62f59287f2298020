"""Evaluation statistics: matching quality, reward aggregation, reports.

Everything here is deterministic given its inputs; reports carry no
timestamps so reruns are byte-identical.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from scipy.special import gammaincc
from scipy.stats import t as student_t

from .scene import NO_OBJECT

# Canonical report row order; unknown conditions follow alphabetically.
CONDITION_ORDER = ("llm_only", "no_fix", "no_router", "ours")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def confusion_from_matches(
    predictions: Mapping[str, str], truth: Mapping[str, str]
) -> ConfusionCounts:
    """Score predicted crop -> asset assignments against ground truth.

    A prediction is counted only for crops present in the truth map.
    Predicting the right asset is a true positive; predicting any asset
    when the truth disagrees (different asset or no object) is a false
    positive; predicting no object where the truth has an asset is a
    false negative. Agreeing that a crop is no object counts nothing.
    """
    tp = fp = fn = 0
    for crop_id, actual in truth.items():
        if crop_id not in predictions:
            continue
        predicted = predictions[crop_id]
        if predicted == NO_OBJECT:
            if actual != NO_OBJECT:
                fn += 1
        elif predicted == actual:
            tp += 1
        else:
            fp += 1
    return ConfusionCounts(tp=tp, fp=fp, fn=fn)


def f1(counts: ConfusionCounts) -> float:
    """F1 = 2tp / (2tp + fp + fn); zero when there are no counts at all."""
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 0.0
    return 2 * counts.tp / denom


def mean_ci(values: Sequence[float], confidence: float = 0.95) -> tuple[float, float, float]:
    """Mean with a Student-t confidence interval, clipped to [0, 1].

    Returns (mean, lo, hi). A single value has no spread estimate, so its
    interval collapses to the point.
    """
    if not values:
        raise ValueError("mean_ci needs at least one value")
    n = len(values)
    mean = sum(values) / n
    if n == 1:
        point = min(1.0, max(0.0, mean))
        return mean, point, point
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    half = float(student_t.ppf(0.5 + confidence / 2.0, n - 1)) * math.sqrt(var / n)
    lo = max(0.0, mean - half)
    hi = min(1.0, mean + half)
    return mean, lo, hi


def _midranks(pooled: Sequence[float]) -> list[float]:
    """Ranks 1..N with ties sharing their average rank."""
    order = sorted(range(len(pooled)), key=lambda i: pooled[i])
    ranks = [0.0] * len(pooled)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> tuple[float, float]:
    """Kruskal-Wallis H with tie correction, and its chi-square p-value.

    Requires at least two non-empty groups. When every pooled value is
    identical the statistic is 0 and p is 1 by convention.
    """
    if len(groups) < 2:
        raise ValueError("kruskal_wallis needs at least two groups")
    if any(len(g) == 0 for g in groups):
        raise ValueError("kruskal_wallis groups must be non-empty")

    pooled: list[float] = [float(v) for g in groups for v in g]
    n_total = len(pooled)
    ranks = _midranks(pooled)

    h = 0.0
    offset = 0
    for g in groups:
        r_sum = sum(ranks[offset : offset + len(g)])
        h += r_sum * r_sum / len(g)
        offset += len(g)
    h = 12.0 / (n_total * (n_total + 1)) * h - 3.0 * (n_total + 1)

    # Tie correction: 1 - sum(t^3 - t) / (N^3 - N) over tie groups.
    tie_sum = 0
    for value in set(pooled):
        count = pooled.count(value)
        tie_sum += count**3 - count
    correction = 1.0 - tie_sum / (n_total**3 - n_total)
    if correction == 0.0:
        return 0.0, 1.0
    h /= correction

    df = len(groups) - 1
    p = float(gammaincc(df / 2.0, h / 2.0))
    return h, p


@dataclass(frozen=True)
class RunSample:
    """One evaluation run's outcome under one condition."""

    condition: str
    scene_id: str
    reward: float
    runtime_error: bool = False

    def to_json(self) -> dict:
        return {
            "condition": self.condition,
            "scene_id": self.scene_id,
            "reward": self.reward,
            "runtime_error": self.runtime_error,
        }

    @classmethod
    def from_json(cls, data: dict) -> "RunSample":
        return cls(
            condition=data["condition"],
            scene_id=data["scene_id"],
            reward=float(data["reward"]),
            runtime_error=bool(data.get("runtime_error", False)),
        )


@dataclass(frozen=True)
class RewardSummary:
    condition: str
    n_runs: int  # runs contributing to the mean
    n_excluded: int  # runtime-error runs left out
    mean: float
    ci_lo: float
    ci_hi: float


def aggregate_rewards(samples: Iterable[RunSample]) -> list[RewardSummary]:
    """Per-condition reward summaries; runtime-error runs never count.

    Conditions appear in canonical order first, then alphabetically.
    A condition with only errored runs reports zero runs and a zero mean.
    """
    by_condition: dict[str, list[RunSample]] = {}
    for s in samples:
        by_condition.setdefault(s.condition, []).append(s)

    known = [c for c in CONDITION_ORDER if c in by_condition]
    rest = sorted(c for c in by_condition if c not in CONDITION_ORDER)

    out: list[RewardSummary] = []
    for condition in known + rest:
        group = by_condition[condition]
        kept = [s.reward for s in group if not s.runtime_error]
        excluded = len(group) - len(kept)
        if not kept:
            out.append(RewardSummary(condition, 0, excluded, 0.0, 0.0, 0.0))
            continue
        mean, lo, hi = mean_ci(kept)
        out.append(RewardSummary(condition, len(kept), excluded, mean, lo, hi))
    return out


@dataclass(frozen=True)
class Report:
    text: str
    csv: str


def render_report(summaries: Sequence[RewardSummary], title: str = "Reward by condition") -> Report:
    """Fixed-width text table plus CSV; the best mean is starred.

    Output depends only on the summaries, so regenerating a report from
    the same data produces identical bytes.
    """
    best = max((s.mean for s in summaries if s.n_runs > 0), default=None)

    rows = []
    for s in summaries:
        flag = " *" if best is not None and s.n_runs > 0 and s.mean == best else ""
        rows.append(
            (
                s.condition,
                str(s.n_runs),
                str(s.n_excluded),
                f"{s.mean:.3f}{flag}",
                f"[{s.ci_lo:.3f}, {s.ci_hi:.3f}]",
            )
        )

    headers = ("condition", "runs", "excluded", "mean reward", "95% CI")
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in rows)) if rows else len(headers[i])
        for i in range(len(headers))
    ]

    buf = io.StringIO()
    buf.write(title + "\n")
    buf.write("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip() + "\n")
    buf.write("  ".join("-" * w for w in widths) + "\n")
    for r in rows:
        buf.write("  ".join(r[i].ljust(widths[i]) for i in range(len(r))).rstrip() + "\n")

    csv_lines = ["condition,n_runs,n_excluded,mean,ci_lo,ci_hi"]
    for s in summaries:
        csv_lines.append(
            f"{s.condition},{s.n_runs},{s.n_excluded},{s.mean:.6f},{s.ci_lo:.6f},{s.ci_hi:.6f}"
        )
    return Report(text=buf.getvalue(), csv="\n".join(csv_lines) + "\n")
