"""EER, minimum normalized t-DCF, score files, and run aggregation."""
from __future__ import annotations

import math
import os
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateCosts,
    EmptyGroup,
    MalformedLine,
    MissingAsvClass,
    NoMatchedPairs,
    SingleClassInput,
)


@dataclass(frozen=True)
class ScoreRecord:
    utt_id: str
    score: float
    label: str

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"{self.utt_id}: non-finite score {self.score}")


@dataclass(frozen=True)
class TdcfCosts:
    """ASVspoof 2019 t-DCF parameters (defaults are the challenge values)."""
    p_target: float = 0.9405  # (1 - p_spoof) * 0.99
    p_nontarget: float = 0.0095  # (1 - p_spoof) * 0.01
    p_spoof: float = 0.05
    c_miss_asv: float = 1.0
    c_fa_asv: float = 10.0
    c_miss_cm: float = 1.0
    c_fa_cm: float = 10.0

    def __post_init__(self):
        priors = (self.p_target, self.p_nontarget, self.p_spoof)
        if any(not 0.0 < p < 1.0 for p in priors) or abs(sum(priors) - 1.0) > 1e-9:
            raise DegenerateCosts(f"priors must lie in (0, 1) and sum to 1: {priors}")
        if min(self.c_miss_asv, self.c_fa_asv, self.c_miss_cm, self.c_fa_cm) <= 0:
            raise DegenerateCosts("all costs must be positive")


@dataclass(frozen=True)
class AsvScores:
    target: np.ndarray
    nontarget: np.ndarray
    spoof: np.ndarray


@dataclass(frozen=True)
class EvalResult:
    eer: float
    eer_threshold: float
    min_tdcf: float | None = None


@dataclass(frozen=True)
class AggregateRow:
    model: str
    feature: str
    length: str
    eer_mean: float  # percent
    eer_std: float
    tdcf_mean: float | None
    tdcf_std: float | None
    n_runs: int


def _split_scores(records: Sequence[ScoreRecord]) -> tuple[np.ndarray, np.ndarray]:
    bona = np.array([r.score for r in records if r.label == "bonafide"], dtype=np.float64)
    spoof = np.array([r.score for r in records if r.label == "spoof"], dtype=np.float64)
    if len(bona) == 0 or len(spoof) == 0:
        raise SingleClassInput("EER needs at least one bonafide and one spoof score")
    return bona, spoof


# ---------------------------------------------------------------------------
# EER
# ---------------------------------------------------------------------------

def det_operating_points(bonafide: np.ndarray, spoof: np.ndarray):
    """All distinct (miss, false alarm) pairs, ordered by increasing threshold.

    Point 0 accepts everything; point i>0 rejects every score <= the i-th
    smallest distinct score. Returns (miss, fa, thresholds) where each
    threshold is a representative value realizing that point.
    """
    bonafide = np.sort(bonafide)
    spoof = np.sort(spoof)
    levels = np.unique(np.concatenate([bonafide, spoof]))
    miss = np.searchsorted(bonafide, levels, side="right") / len(bonafide)
    fa = (len(spoof) - np.searchsorted(spoof, levels, side="right")) / len(spoof)
    miss = np.concatenate([[0.0], miss])
    fa = np.concatenate([[1.0], fa])
    upper = np.nextafter(levels[-1], np.inf)
    thresholds = np.concatenate([[levels[0]], (levels[:-1] + levels[1:]) / 2.0, [upper]])
    return miss, fa, thresholds


def compute_eer(records: Sequence[ScoreRecord]) -> tuple[float, float]:
    """Equal error rate and the threshold where miss and false-alarm rates cross.

    Miss = bonafide scores below the threshold, false alarm = spoof scores at
    or above it. The crossing of the two rates is linearly interpolated
    between adjacent operating points of the DET curve.
    """
    bona, spoof = _split_scores(records)
    return eer_from_arrays(bona, spoof)


def eer_from_arrays(bonafide: np.ndarray, spoof: np.ndarray) -> tuple[float, float]:
    miss, fa, thr = det_operating_points(np.asarray(bonafide, float), np.asarray(spoof, float))
    diff = miss - fa  # non-decreasing, ends at +1
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0 or k == 0:
        return float(miss[k]), float(thr[k])
    w = -diff[k - 1] / (diff[k] - diff[k - 1])
    eer = miss[k - 1] + w * (miss[k] - miss[k - 1])
    return float(eer), float(thr[k - 1] + w * (thr[k] - thr[k - 1]))


# ---------------------------------------------------------------------------
# t-DCF
# ---------------------------------------------------------------------------

def _sorted_det(target: np.ndarray, nontarget: np.ndarray):
    # Challenge-toolkit DET convention: one point per trial in stable score
    # order (target trials first among ties), plus the accept-all point.
    scores = np.concatenate([target, nontarget])
    is_target = np.concatenate([np.ones(len(target), bool), np.zeros(len(nontarget), bool)])
    order = np.argsort(scores, kind="stable")
    is_target = is_target[order]
    n_below_tar = np.cumsum(is_target)
    n_below_non = np.cumsum(~is_target)
    frr = np.concatenate([[0.0], n_below_tar / len(target)])
    far = np.concatenate([[1.0], (len(nontarget) - n_below_non) / len(nontarget)])
    thresholds = np.concatenate([[scores[order[0]] - 0.001], scores[order]])
    return frr, far, thresholds


def asv_eer_threshold(target: np.ndarray, nontarget: np.ndarray) -> float:
    """ASV operating point used by the 2019 t-DCF: the DET point minimizing |FRR - FAR|."""
    frr, far, thresholds = _sorted_det(np.asarray(target, float), np.asarray(nontarget, float))
    return float(thresholds[int(np.argmin(np.abs(frr - far)))])


def tdcf_curve(bonafide_cm: np.ndarray, spoof_cm: np.ndarray, asv: AsvScores,
               costs: TdcfCosts = TdcfCosts()) -> tuple[np.ndarray, np.ndarray]:
    """Normalized t-DCF at every CM operating point (ASVspoof 2019 definition)."""
    if len(asv.target) == 0 or len(asv.nontarget) == 0 or len(asv.spoof) == 0:
        raise MissingAsvClass("ASV scores need target, nontarget and spoof trials")
    thr = asv_eer_threshold(asv.target, asv.nontarget)
    p_fa_asv = np.count_nonzero(asv.nontarget >= thr) / len(asv.nontarget)
    p_miss_asv = np.count_nonzero(asv.target < thr) / len(asv.target)
    p_miss_spoof_asv = np.count_nonzero(asv.spoof < thr) / len(asv.spoof)

    c1 = (costs.p_target * (costs.c_miss_cm - costs.c_miss_asv * p_miss_asv)
          - costs.p_nontarget * costs.c_fa_asv * p_fa_asv)
    c2 = costs.c_fa_cm * costs.p_spoof * (1.0 - p_miss_spoof_asv)
    if c1 <= 0 or c2 <= 0:
        raise DegenerateCosts(f"t-DCF weights must be positive (C1={c1}, C2={c2})")
    p_miss_cm, p_fa_cm, cm_thresholds = _sorted_det(np.asarray(bonafide_cm, float),
                                                    np.asarray(spoof_cm, float))
    return (c1 * p_miss_cm + c2 * p_fa_cm) / min(c1, c2), cm_thresholds


def compute_tdcf(cm_records: Sequence[ScoreRecord], asv_scores: AsvScores,
                 costs: TdcfCosts = TdcfCosts()) -> float:
    """Minimum normalized t-DCF of a CM in tandem with a fixed ASV system."""
    bona, spoof = _split_scores(cm_records)
    curve, _ = tdcf_curve(bona, spoof, asv_scores, costs)
    return float(np.min(curve))


# ---------------------------------------------------------------------------
# score files
# ---------------------------------------------------------------------------

def write_cm_scores(path: str | os.PathLike, scores: Iterable[tuple[str, float]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for utt_id, score in scores:
            f.write(f"{utt_id} {float(score)!r}\n")


def read_cm_scores(path: str | os.PathLike) -> dict[str, float]:
    scores: dict[str, float] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise MalformedLine(line_no, line.rstrip("\n"), "expected '<utt_id> <score>'")
            scores[parts[0]] = float(parts[1])
    return scores


def label_scores(scores: Mapping[str, float], labels: Mapping[str, str]) -> list[ScoreRecord]:
    return [ScoreRecord(utt, float(s), labels[utt]) for utt, s in scores.items()]


_ASV_KEYS = ("target", "nontarget", "spoof")


def read_asv_scores(path: str | os.PathLike) -> AsvScores:
    """Read ``<score> <key>`` lines; the challenge's ``<source> <key> <score>`` layout also parses."""
    buckets: dict[str, list[float]] = {k: [] for k in _ASV_KEYS}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            keys = [p for p in parts if p in _ASV_KEYS]
            if len(keys) != 1 or len(parts) not in (2, 3):
                raise MalformedLine(line_no, line.rstrip("\n"), "expected '<score> <key>'")
            value = parts[0] if len(parts) == 2 else parts[2]
            buckets[keys[0]].append(float(value))
    return AsvScores(*(np.array(buckets[k], dtype=np.float64) for k in _ASV_KEYS))


def write_asv_scores(path: str | os.PathLike, asv: AsvScores) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for key in _ASV_KEYS:
            for s in getattr(asv, key):
                f.write(f"{float(s)!r} {key}\n")


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def aggregate(per_run_results: Sequence[EvalResult], key: tuple[str, str, str]) -> AggregateRow:
    """Mean and population std over runs; EER reported in percent."""
    if not per_run_results:
        raise EmptyGroup(f"no results for {key}")
    eers = np.array([r.eer for r in per_run_results]) * 100.0
    tdcfs = [r.min_tdcf for r in per_run_results]
    if all(t is not None for t in tdcfs):
        t = np.array(tdcfs, dtype=np.float64)
        tdcf_mean, tdcf_std = float(t.mean()), float(t.std())
    else:
        tdcf_mean = tdcf_std = None
    model, feature, length = key
    return AggregateRow(model, feature, length, float(eers.mean()), float(eers.std()),
                        tdcf_mean, tdcf_std, len(per_run_results))


def aggregate_all(results: Iterable[tuple[tuple[str, str, str], EvalResult]]) -> list[AggregateRow]:
    groups: dict[tuple[str, str, str], list[EvalResult]] = defaultdict(list)
    for key, res in results:
        groups[key].append(res)
    return [aggregate(groups[k], k) for k in sorted(groups)]


@dataclass(frozen=True)
class FeatureEffect:
    mean_pair_reduction: float
    pooled_reduction: float
    n_pairs: int


def feature_effect(rows: Sequence[AggregateRow], from_kind: str, to_kind: str) -> FeatureEffect:
    """Relative EER reduction when swapping ``from_kind`` for ``to_kind``.

    Pairs rows with identical (model, length). Reports both the mean of the
    per-pair reductions and the reduction between the pooled means.
    """
    src = {(r.model, r.length): r.eer_mean for r in rows if r.feature == from_kind}
    dst = {(r.model, r.length): r.eer_mean for r in rows if r.feature == to_kind}
    keys = sorted(src.keys() & dst.keys())
    if not keys:
        raise NoMatchedPairs(f"no (model, length) has both {from_kind} and {to_kind}")
    a = np.array([src[k] for k in keys])
    b = np.array([dst[k] for k in keys])
    per_pair = np.where(a > 0, (a - b) / np.where(a > 0, a, 1.0), 0.0)
    pooled = (a.mean() - b.mean()) / a.mean() if a.mean() > 0 else 0.0
    return FeatureEffect(float(per_pair.mean()), float(pooled), len(keys))
