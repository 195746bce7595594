"""Task metrics, paired bootstrap confidence intervals and Holm-Bonferroni.

Bootstrap metrics come in two shapes, both evaluated on a whole matrix of
resampled case indices at once:

* :class:`RatioData` covers every governance metric. The value is
  sum(num) / sum(den) over the resampled cases. Plain means use den = 1. CDL
  and DIU use the deferral indicator as den, so they are undefined on a
  resample with no deferrals.
* :class:`LabelData` covers MCC, macro-F1 and accuracy, computed from a
  confusion matrix per resample.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from . import rng
from .decisions import DECISIONS, Decision, parse_decision
from .errors import ConfigError, ContractError

N_CLASSES = len(DECISIONS)
_CLASS_INDEX = {d: i for i, d in enumerate(DECISIONS)}
UNSTABLE_DISCARD_FRACTION = 0.20


# ------------------------------------------------------------ task metrics


def confusion_matrix(truth: Sequence[Decision | str], pred: Sequence[Decision | str]) -> np.ndarray:
    """5x5 counts, rows = ground truth, columns = prediction, fixed class order."""
    if len(truth) != len(pred):
        raise ContractError("truth and prediction lengths differ")
    t = np.array([_CLASS_INDEX[parse_decision(x)] for x in truth], dtype=np.int64)
    p = np.array([_CLASS_INDEX[parse_decision(x)] for x in pred], dtype=np.int64)
    return np.bincount(t * N_CLASSES + p, minlength=N_CLASSES * N_CLASSES).reshape(N_CLASSES, N_CLASSES)


def _check_matrix(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractError("confusion matrix must be square")
    if (m < 0).any():
        raise ContractError("confusion matrix has negative counts")
    if m.sum() == 0:
        raise ContractError("confusion matrix is empty")
    return m.astype(np.float64)


def mcc_multiclass(m: np.ndarray) -> float:
    """Multiclass MCC (Gorodkin's R_K); 0 when either marginal is degenerate."""
    m = _check_matrix(m)
    s = m.sum()
    c = np.trace(m)
    t = m.sum(axis=1)
    p = m.sum(axis=0)
    denom = math.sqrt((s * s - p @ p) * (s * s - t @ t))
    if denom == 0:
        return 0.0
    return float((c * s - t @ p) / denom)


def per_class_f1(m: np.ndarray) -> np.ndarray:
    m = _check_matrix(m)
    tp = np.diag(m)
    denom = m.sum(axis=0) + m.sum(axis=1)  # 2TP + FP + FN
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(denom > 0, 2 * tp / denom, 0.0)
    return f1


def macro_f1(m: np.ndarray) -> float:
    """Unweighted mean of per-class F1; a class absent from both axes scores 0."""
    return float(per_class_f1(m).mean())


def accuracy(m: np.ndarray) -> float:
    m = _check_matrix(m)
    return float(np.trace(m) / m.sum())


TASK_METRICS = {"mcc": mcc_multiclass, "f1": macro_f1, "acc": accuracy}


# ------------------------------------------------------------------ bootstrap


@dataclass(frozen=True)
class RatioData:
    num: np.ndarray
    den: np.ndarray

    @classmethod
    def mean_of(cls, values: Sequence[float]) -> "RatioData":
        v = np.asarray(values, dtype=np.float64)
        return cls(v, np.ones_like(v))

    def __len__(self) -> int:
        return len(self.num)

    def point(self) -> float | None:
        d = self.den.sum()
        return None if d == 0 else float(self.num.sum() / d)

    def batch(self, idx: np.ndarray) -> np.ndarray:
        num = self.num[idx].sum(axis=1)
        den = self.den[idx].sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / np.where(den > 0, den, 1), np.nan)


@dataclass(frozen=True)
class LabelData:
    truth: np.ndarray  # class indices
    pred: np.ndarray
    metric: str = "mcc"

    def __post_init__(self) -> None:
        if self.metric not in TASK_METRICS:
            raise ConfigError(f"unknown task metric {self.metric!r}")

    @classmethod
    def from_decisions(cls, truth: Sequence[Any], pred: Sequence[Any], metric: str = "mcc") -> "LabelData":
        t = np.array([_CLASS_INDEX[parse_decision(x)] for x in truth], dtype=np.int64)
        p = np.array([_CLASS_INDEX[parse_decision(x)] for x in pred], dtype=np.int64)
        return cls(t, p, metric)

    def __len__(self) -> int:
        return len(self.truth)

    def point(self) -> float | None:
        code = self.truth * N_CLASSES + self.pred
        m = np.bincount(code, minlength=N_CLASSES**2).reshape(N_CLASSES, N_CLASSES)
        return TASK_METRICS[self.metric](m)

    def batch(self, idx: np.ndarray) -> np.ndarray:
        b, _ = idx.shape
        code = (self.truth * N_CLASSES + self.pred)[idx] + (np.arange(b)[:, None] * N_CLASSES**2)
        cm = np.bincount(code.ravel(), minlength=b * N_CLASSES**2).reshape(b, N_CLASSES, N_CLASSES).astype(np.float64)
        return _batch_task_metric(cm, self.metric)


def _batch_task_metric(cm: np.ndarray, metric: str) -> np.ndarray:
    s = cm.sum(axis=(1, 2))
    diag = np.einsum("bii->bi", cm)
    t = cm.sum(axis=2)
    p = cm.sum(axis=1)
    if metric == "acc":
        return diag.sum(axis=1) / s
    if metric == "f1":
        denom = t + p
        with np.errstate(invalid="ignore", divide="ignore"):
            f1 = np.where(denom > 0, 2 * diag / np.where(denom > 0, denom, 1), 0.0)
        return f1.mean(axis=1)
    c = diag.sum(axis=1)
    denom = np.sqrt((s * s - (p * p).sum(axis=1)) * (s * s - (t * t).sum(axis=1)))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, (c * s - (t * p).sum(axis=1)) / np.where(denom > 0, denom, 1), 0.0)


@dataclass(frozen=True)
class PairedSample:
    """Per-case contributions of both regimes on the same, matched case ids."""

    case_ids: tuple[str, ...]
    r1: RatioData | LabelData
    r2: RatioData | LabelData

    def __post_init__(self) -> None:
        if not (len(self.case_ids) == len(self.r1) == len(self.r2)):
            raise ContractError("paired sample sides have different lengths")
        if len(set(self.case_ids)) != len(self.case_ids):
            raise ContractError("duplicate case ids in paired sample")

    def __len__(self) -> int:
        return len(self.case_ids)


@dataclass(frozen=True)
class CIResult:
    point_delta: float | None
    lower: float | None
    upper: float | None
    p_raw: float | None
    p_adjusted: float | None = None
    r1_point: float | None = None
    r2_point: float | None = None
    r1_sd: float | None = None
    r2_sd: float | None = None
    b: int = 0
    discarded: int = 0
    unstable: bool = False

    def with_adjusted(self, p_adj: float | None) -> "CIResult":
        return replace(self, p_adjusted=p_adj)

    def to_dict(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _index_chunks(n: int, b: int, seed: int, chunk: int):
    for j, start in enumerate(range(0, b, chunk)):
        size = min(chunk, b - start)
        yield rng.stream(seed, j, "bootstrap").integers(0, n, size=(size, n))


def resample_indices(n: int, b: int, seed: int, chunk: int = 1000) -> np.ndarray:
    """All ``b`` resamples of ``n`` case positions; chunk j draws from stream(seed, j)."""
    parts = list(_index_chunks(n, b, seed, chunk))
    return np.concatenate(parts) if parts else np.empty((0, n), dtype=np.int64)


def bootstrap_delta(sample: PairedSample, b: int = 10_000, seed: int = 42, *, chunk: int = 1000) -> CIResult:
    """Paired percentile bootstrap of R2 - R1.

    Resamples on which either regime's metric is undefined are dropped and
    counted. More than 20% dropped marks the result unstable.
    """
    if b < 1000:
        raise ConfigError("bootstrap needs B >= 1000")
    n = len(sample)
    if n == 0:
        raise ContractError("empty paired sample")
    p1, p2 = sample.r1.point(), sample.r2.point()
    point = None if p1 is None or p2 is None else p2 - p1

    v1_parts, v2_parts = [], []
    for idx in _index_chunks(n, b, seed, chunk):
        v1_parts.append(sample.r1.batch(idx))
        v2_parts.append(sample.r2.batch(idx))
    v1 = np.concatenate(v1_parts)
    v2 = np.concatenate(v2_parts)
    valid = ~(np.isnan(v1) | np.isnan(v2))
    discarded = int(b - valid.sum())
    unstable = discarded > UNSTABLE_DISCARD_FRACTION * b
    sd1 = float(np.std(v1[~np.isnan(v1)], ddof=1)) if (~np.isnan(v1)).sum() > 1 else None
    sd2 = float(np.std(v2[~np.isnan(v2)], ddof=1)) if (~np.isnan(v2)).sum() > 1 else None
    if not valid.any() or point is None:
        return CIResult(point, None, None, None, None, p1, p2, sd1, sd2, b, discarded, True)
    delta = v2[valid] - v1[valid]
    lower, upper = (float(x) for x in np.percentile(delta, [2.5, 97.5]))
    if point >= 0:
        opposite = float(np.mean(delta <= 0))
    else:
        opposite = float(np.mean(delta >= 0))
    p_raw = min(1.0, max(2.0 * opposite, 1.0 / b))
    return CIResult(point, lower, upper, p_raw, None, p1, p2, sd1, sd2, b, discarded, unstable)


def holm_bonferroni(p_values: Sequence[float]) -> list[float]:
    """Holm step-down adjusted p-values, returned in input order."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.size == 0:
        return []
    if ((p < 0) | (p > 1) | np.isnan(p)).any():
        raise ContractError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    adj_sorted = np.minimum(1.0, np.maximum.accumulate((m - np.arange(m)) * p[order]))
    out = np.empty(m)
    out[order] = adj_sorted
    return out.tolist()


def adjust_results(results: Sequence[CIResult]) -> list[CIResult]:
    """Holm-adjust every result that has a p-value; others pass through."""
    idx = [i for i, r in enumerate(results) if r.p_raw is not None]
    adj = holm_bonferroni([results[i].p_raw for i in idx])
    out = list(results)
    for i, a in zip(idx, adj):
        out[i] = results[i].with_adjusted(a)
    return out


# ---------------------------------------------------------------- MSUP table

MSUP_COLUMNS = (
    "metric", "r1", "r1_boot_sd", "r2", "r2_boot_sd", "delta", "ci_lower", "ci_upper", "p_raw", "p_adj", "unstable",
)


@dataclass
class MSUPTable:
    rows: list[tuple[str, CIResult]] = field(default_factory=list)

    def records(self) -> list[dict[str, Any]]:
        out = []
        for name, r in self.rows:
            out.append(
                {
                    "metric": name,
                    "r1": r.r1_point,
                    "r1_boot_sd": r.r1_sd,
                    "r2": r.r2_point,
                    "r2_boot_sd": r.r2_sd,
                    "delta": r.point_delta,
                    "ci_lower": r.lower,
                    "ci_upper": r.upper,
                    "p_raw": r.p_raw,
                    "p_adj": r.p_adjusted,
                    "unstable": r.unstable,
                }
            )
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=MSUP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for rec in self.records():
            w.writerow({k: _fmt(v) for k, v in rec.items()})
        return buf.getvalue()

    def to_text(self) -> str:
        lines = []
        header = f"{'Metric':<8} {'R1 (boot SD)':>16} {'R2 (boot SD)':>16} {'Delta [95% CI]':>28} {'p_adj':>8}"
        lines.append(header)
        lines.append("-" * len(header))
        for name, r in self.rows:
            r1 = _pair(r.r1_point, r.r1_sd)
            r2 = _pair(r.r2_point, r.r2_sd)
            if r.point_delta is None or r.lower is None:
                delta = "n/a"
            else:
                delta = f"{r.point_delta:+.3f} [{r.lower:+.3f}, {r.upper:+.3f}]"
            if r.unstable:
                delta += " *"
            p = "n/a" if r.p_adjusted is None else f"{r.p_adjusted:.4f}"
            lines.append(f"{name:<8} {r1:>16} {r2:>16} {delta:>28} {p:>8}")
        if any(r.unstable for _, r in self.rows):
            lines.append("* more than 20% of resamples undefined; interval unstable")
        return "\n".join(lines) + "\n"


def _pair(v: float | None, sd: float | None) -> str:
    if v is None:
        return "n/a"
    return f"{v:.3f} ({sd:.3f})" if sd is not None else f"{v:.3f}"


def _fmt(v: Any) -> Any:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return v
