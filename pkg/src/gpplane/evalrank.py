"""Challenge scoring: per-bone score 2 * Q(|p - t| / 3), summaries, ranking, folds.

Q is the standard normal survival function. Per-bone score spread within a
test set and spread across CV folds are population stds; spread of MAE
across teams is a sample std.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCORE_SCALE = 3.0
_SQRT2 = math.sqrt(2.0)


def normal_ccdf(x: float) -> float:
    """Standard normal upper tail 1 - Phi(x), via the complementary error function."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"normal_ccdf needs a finite argument, got {x}")
    return 0.5 * math.erfc(x / _SQRT2)


def plane_score(p: int, t: int) -> float:
    """1 for an exact hit, decaying with the plane error |p - t|."""
    return 2.0 * normal_ccdf(abs(p - t) / SCORE_SCALE)


def mae_of(diffs) -> float:
    diffs = list(diffs)
    if not diffs:
        raise ValueError("mae of an empty list")
    return sum(abs(d) for d in diffs) / len(diffs)


@dataclass(frozen=True)
class ScoreRow:
    volume_id: str
    true_gppi: int
    pred_gppi: int
    error: int
    score: float


@dataclass
class ScoreReport:
    method: str
    rows: list[ScoreRow]
    mean_score: float = field(init=False)
    std_score: float = field(init=False)
    sum_score: float = field(init=False)
    mae: float = field(init=False)

    def __post_init__(self):
        scores = np.array([r.score for r in self.rows], dtype=np.float64)
        self.sum_score = float(math.fsum(scores))
        self.mean_score = self.sum_score / len(scores)
        self.std_score = float(np.std(scores))  # population
        self.mae = mae_of(r.error for r in self.rows)


def evaluate_predictions(preds: dict[str, int], truths: dict[str, int], method: str = "") -> ScoreReport:
    """Score predictions against truths keyed by volume id (ids must match exactly)."""
    if not preds:
        raise ValueError("no predictions")
    missing = sorted(set(preds) - set(truths))
    if missing:
        raise KeyError(f"no truth for volume ids {missing}")
    rows = []
    for vid in sorted(preds):
        p, t = int(preds[vid]), int(truths[vid])
        rows.append(ScoreRow(vid, t, p, abs(p - t), plane_score(p, t)))
    return ScoreReport(method, rows)


def pairs_to_dict(pairs, what: str) -> dict[str, int]:
    out: dict[str, int] = {}
    for vid, value in pairs:
        if vid in out:
            raise ValueError(f"duplicate volume id {vid!r} in {what}")
        out[vid] = int(value)
    return out


def rank_teams(reports: list[ScoreReport]) -> list[ScoreReport]:
    """Descending sum of scores; ties by lower MAE, then method id."""
    return sorted(reports, key=lambda r: (-r.sum_score, r.mae, r.method))


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    folds: dict[str, int]
    strata: dict[str, str]

    def members(self, fold: int) -> list[str]:
        return sorted(i for i, f in self.folds.items() if f == fold)

    def train_ids(self, fold: int) -> list[str]:
        return sorted(i for i, f in self.folds.items() if f != fold)


def kfold_split(ids_with_strata, k: int = 5, seed: int = 0) -> FoldAssignment:
    """Stratified folds: shuffle each stratum with a seeded generator, then deal round-robin.

    Dealing continues across strata (the next stratum starts where the last
    left off), so folds stay within one id of each other overall as well as
    per stratum.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    pairs = sorted((str(i), str(s)) for i, s in ids_with_strata)
    ids = [i for i, _ in pairs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate ids")
    strata: dict[str, list[str]] = {}
    for i, s in pairs:
        strata.setdefault(s, []).append(i)
    rng = np.random.default_rng(seed)
    folds = {}
    cursor = 0
    for s in sorted(strata):
        members = strata[s]
        for j in rng.permutation(len(members)):
            folds[members[j]] = cursor % k
            cursor += 1
    return FoldAssignment(k, folds, dict(pairs))


def aggregate_cv(fold_scores, ddof: int = 0) -> tuple[float, float, bool]:
    """(mean, std, std_defined) over folds; population std unless ``ddof=1``.

    A single fold reports std 0 with the flag False.
    """
    xs = [float(x) for x in fold_scores]
    if not xs:
        raise ValueError("no fold scores")
    mean = math.fsum(xs) / len(xs)
    if len(xs) == 1:
        return mean, 0.0, False
    return mean, float(np.std(xs, ddof=ddof)), True


def mean_std_sample(values) -> tuple[float, float]:
    mean, std, _ = aggregate_cv(values, ddof=1)
    return mean, std


# CSV / text outputs


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_report_csv(reports: list[ScoreReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["method", "volume_id", "true_gppi", "pred_gppi", "error", "score"])
        for rep in sorted(reports, key=lambda r: r.method):
            for r in rep.rows:
                w.writerow([rep.method, r.volume_id, r.true_gppi, r.pred_gppi, r.error, f"{r.score:.6f}"])


def write_summary_csv(reports: list[ScoreReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["method", "n", "mean_score", "std_score", "sum_score", "mae"])
        for rep in sorted(reports, key=lambda r: r.method):
            w.writerow(
                [rep.method, len(rep.rows), f"{rep.mean_score:.6f}", f"{rep.std_score:.6f}", f"{rep.sum_score:.6f}", f"{rep.mae:.6f}"]
            )


@dataclass(frozen=True)
class SummaryRow:
    method: str
    n: int
    mean_score: float
    std_score: float
    sum_score: float
    mae: float


def read_summary_csv(path) -> list[SummaryRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            SummaryRow(r["method"], int(r["n"]), float(r["mean_score"]), float(r["std_score"]), float(r["sum_score"]), float(r["mae"]))
            for r in csv.DictReader(fh)
        ]


def rank_summaries(rows: list[SummaryRow]) -> list[SummaryRow]:
    return sorted(rows, key=lambda r: (-r.sum_score, r.mae, r.method))


def leaderboard_text(rows) -> str:
    """Aligned plain-text table of ranked summary rows (ScoreReport or SummaryRow)."""
    header = ("rank", "method", "sum", "mean", "std", "mae")
    body = [
        (str(i + 1), r.method, f"{r.sum_score:.3f}", f"{r.mean_score:.3f}", f"{r.std_score:.3f}", f"{r.mae:.2f}")
        for i, r in enumerate(rows)
    ]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(c.rjust(wd) if j != 1 else c.ljust(wd) for j, (c, wd) in enumerate(zip(row, widths))) for row in [header, *body]]
    return "\n".join(line.rstrip() for line in lines) + "\n"


def write_leaderboard(rows, path) -> None:
    Path(path).write_text(leaderboard_text(rows), encoding="utf-8")
