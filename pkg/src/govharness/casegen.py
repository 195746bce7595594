"""Synthetic banking decision cases, rule-based ground truth and stress transforms."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import numpy as np
import yaml
from scipy import stats as sps

from . import rng
from .decisions import Decision, parse_decision
from .errors import ConfigError, ContractError, EmptyCaseSetError, StressError
from .rules import check_conditions, matches

TASK_TYPES = (
    "credit_approval",
    "fraud_alert",
    "sanctions_screening",
    "aml_review",
    "concentration_risk",
)
FLAG_NAMES = ("AML", "KYC", "SANCTIONS", "INSIDER", "CONCENTRATION")
STRESS_TAGS = ("S0", "S1", "S2", "S3")
GATE_RISK_THRESHOLDS = (0.3, 0.7, 0.85, 0.9)

# GenParams fields that a sensitivity sweep scales. Locations (amount log-mean)
# and categorical labels stay fixed.
SCALABLE_FIELDS = (
    "risk_alpha",
    "risk_beta",
    "completeness_alpha",
    "completeness_beta",
    "flag_bases",
    "flag_risk_slope",
    "amount_log_sd",
    "tenure_rate",
    "counterparty_alpha",
    "counterparty_beta",
)

_RANGES: dict[str, tuple[float, float]] = {
    "risk_alpha": (0.5, 20.0),
    "risk_beta": (0.5, 20.0),
    "completeness_alpha": (0.5, 20.0),
    "completeness_beta": (0.5, 20.0),
    "counterparty_alpha": (0.5, 20.0),
    "counterparty_beta": (0.5, 20.0),
    "flag_risk_slope": (0.0, 0.6),
    "amount_log_mean": (5.0, 20.0),
    "amount_log_sd": (0.05, 4.0),
    "tenure_rate": (0.01, 5.0),
}


@dataclass(frozen=True)
class GenParams:
    """Distribution parameters for case generation.

    None of these are published; the defaults are calibration constants chosen
    to reproduce the baseline dataset moments (risk 0.50/0.21, completeness
    0.52/0.18, 1.08 flags per case).
    """

    risk_alpha: float = 2.0
    risk_beta: float = 2.0
    completeness_alpha: float = 3.5
    completeness_beta: float = 3.2
    # per-flag base probability; p_i(r) = clamp(base_i + slope * r, 0, 1)
    flag_bases: Mapping[str, float] = field(
        default_factory=lambda: {
            "AML": 0.13,
            "KYC": 0.14,
            "SANCTIONS": 0.10,
            "INSIDER": 0.03,
            "CONCENTRATION": 0.13,
        }
    )
    flag_risk_slope: float = 0.22
    amount_log_mean: float = 11.0
    amount_log_sd: float = 1.5
    tenure_rate: float = 1.0 / 6.0
    counterparty_alpha: float = 2.0
    counterparty_beta: float = 5.0
    jurisdictions: tuple[str, ...] = ("US", "UK", "EU", "SG", "CH")

    def validate(self) -> "GenParams":
        for name, (lo, hi) in _RANGES.items():
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and lo <= v <= hi):
                raise ConfigError(f"{name}={v!r} outside calibration range [{lo}, {hi}]")
        if set(self.flag_bases) != set(FLAG_NAMES):
            raise ConfigError(f"flag_bases must define exactly {FLAG_NAMES}")
        for flag, b in self.flag_bases.items():
            if not 0.0 <= b <= 0.5:
                raise ConfigError(f"flag base {flag}={b!r} outside [0, 0.5]")
        if not self.jurisdictions:
            raise ConfigError("at least one jurisdiction label is required")
        return self

    def scaled(self, factor: float) -> "GenParams":
        """Scale every calibration parameter jointly by ``factor``."""
        changes: dict[str, Any] = {}
        for name in SCALABLE_FIELDS:
            v = getattr(self, name)
            if isinstance(v, Mapping):
                changes[name] = {k: x * factor for k, x in v.items()}
            else:
                changes[name] = v * factor
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["flag_bases"] = dict(self.flag_bases)
        d["jurisdictions"] = list(self.jurisdictions)
        return d

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "GenParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown GenParams keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "jurisdictions" in kwargs:
            kwargs["jurisdictions"] = tuple(kwargs["jurisdictions"])
        if "flag_bases" in kwargs:
            bases = dict(cls().flag_bases)
            bases.update(kwargs["flag_bases"])
            kwargs["flag_bases"] = bases
        return cls(**kwargs).validate()

    @classmethod
    def from_file(cls, path: str | Path) -> "GenParams":
        data = yaml.safe_load(Path(path).read_text()) or {}
        return cls.from_mapping(data.get("gen_params", data))


@dataclass(frozen=True)
class GroundTruth:
    label: Decision
    deterministic: bool
    rule_id: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"label": self.label.value, "deterministic": self.deterministic, "rule_id": self.rule_id}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GroundTruth":
        return cls(parse_decision(d["label"]), bool(d["deterministic"]), d.get("rule_id", ""))


@dataclass(frozen=True)
class Case:
    id: str
    index: int
    task_type: str
    risk: float
    completeness: float
    flags: frozenset[str]
    amount: float
    jurisdiction: str
    tenure: float
    counterparty_risk: float
    ground_truth: GroundTruth | None = None
    stress: str = "S0"
    original_values: Mapping[str, Any] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "flags", frozenset(self.flags))
        for name in ("risk", "completeness", "counterparty_risk"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"{self.id}: {name}={v} outside [0, 1]")
        if self.amount < 0 or self.tenure < 0:
            raise ContractError(f"{self.id}: negative amount or tenure")
        if not self.flags <= set(FLAG_NAMES):
            raise ContractError(f"{self.id}: unknown flags {sorted(self.flags - set(FLAG_NAMES))}")
        if (self.original_values is not None) != (self.stress != "S0"):
            raise ContractError(f"{self.id}: original_values must be present iff stressed")

    @property
    def severe_flags(self) -> frozenset[str]:
        return self.flags & {"AML", "SANCTIONS", "INSIDER"}

    def baseline_view(self) -> "Case":
        """The case as it was before any stress transform."""
        if self.original_values is None:
            return self
        ov = self.original_values
        return dataclasses.replace(
            self,
            risk=ov["risk"],
            completeness=ov["completeness"],
            flags=frozenset(ov["flags"]),
            stress="S0",
            original_values=None,
        )

    def with_values(self, **changes: Any) -> "Case":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "index": self.index,
            "task_type": self.task_type,
            "risk": self.risk,
            "completeness": self.completeness,
            "flags": sorted(self.flags),
            "amount": self.amount,
            "jurisdiction": self.jurisdiction,
            "tenure": self.tenure,
            "counterparty_risk": self.counterparty_risk,
            "ground_truth": self.ground_truth.to_dict() if self.ground_truth else None,
            "stress": self.stress,
            "original_values": (
                {
                    "risk": self.original_values["risk"],
                    "completeness": self.original_values["completeness"],
                    "flags": sorted(self.original_values["flags"]),
                }
                if self.original_values is not None
                else None
            ),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Case":
        gt = d.get("ground_truth")
        return cls(
            id=d["id"],
            index=int(d["index"]),
            task_type=d["task_type"],
            risk=float(d["risk"]),
            completeness=float(d["completeness"]),
            flags=frozenset(d["flags"]),
            amount=float(d["amount"]),
            jurisdiction=d["jurisdiction"],
            tenure=float(d["tenure"]),
            counterparty_risk=float(d["counterparty_risk"]),
            ground_truth=GroundTruth.from_dict(gt) if gt else None,
            stress=d.get("stress", "S0"),
            original_values=d.get("original_values"),
        )


@dataclass(frozen=True)
class CaseSet:
    """Immutable, ordered collection of cases sharing one seed and stress tag."""

    cases: tuple[Case, ...]
    seed: int
    stress: str = "S0"

    def __len__(self) -> int:
        return len(self.cases)

    def __iter__(self) -> Iterator[Case]:
        return iter(self.cases)

    def __getitem__(self, i: int) -> Case:
        return self.cases[i]

    def by_id(self) -> dict[str, Case]:
        return {c.id: c for c in self.cases}

    def to_records(self) -> list[dict[str, Any]]:
        return [c.to_dict() for c in self.cases]

    @classmethod
    def from_records(cls, records: Sequence[Mapping[str, Any]], seed: int = 0) -> "CaseSet":
        cases = tuple(Case.from_dict(r) for r in records)
        if not cases:
            raise EmptyCaseSetError("no cases in input")
        tags = {c.stress for c in cases}
        if len(tags) != 1:
            raise ContractError(f"mixed stress tags in one case set: {sorted(tags)}")
        return cls(cases, seed, tags.pop())


# ---------------------------------------------------------------- ground truth


@dataclass(frozen=True)
class GroundTruthRow:
    id: str
    when: Mapping[str, Any]
    label: Decision
    deterministic: bool


@lru_cache(maxsize=None)
def _load_gt_table_text(text: str) -> tuple[GroundTruthRow, ...]:
    data = yaml.safe_load(text)
    rows = []
    for r in data["rows"]:
        when = r.get("when") or {}
        check_conditions(when)
        rows.append(GroundTruthRow(r["id"], when, parse_decision(r["label"]), bool(r["deterministic"])))
    if rows[-1].when:
        raise ConfigError("ground truth table must end with a catch-all row")
    return tuple(rows)


def ground_truth_table(path: str | Path | None = None) -> tuple[GroundTruthRow, ...]:
    if path is None:
        text = resources.files("govharness.data").joinpath("ground_truth.yaml").read_text()
    else:
        text = Path(path).read_text()
    return _load_gt_table_text(text)


def assign_ground_truth(case: Case, table: Sequence[GroundTruthRow] | None = None) -> GroundTruth:
    """Label a baseline case with the first matching ground-truth row."""
    if case.stress != "S0":
        raise ContractError("ground truth is assigned on pre-stress values; use case.baseline_view()")
    for row in table or ground_truth_table():
        if matches(case, row.when):
            return GroundTruth(row.label, row.deterministic, row.id)
    raise AssertionError("unreachable: table ends with a catch-all row")


# ------------------------------------------------------------------ generation

_N_UNIFORMS = 11  # risk, completeness, 5 flags, amount, jurisdiction, tenure, counterparty


def _uniforms(n: int, seed: int) -> np.ndarray:
    return np.stack([rng.stream(seed, i, "generate").random(_N_UNIFORMS) for i in range(n)])


def generate_cases(n: int, seed: int, params: GenParams | None = None) -> CaseSet:
    """Generate ``n`` baseline cases, task types assigned round-robin.

    Each case draws its uniforms from its own stream, and every distribution is
    applied by inverse CDF, so perturbing ``params`` moves values smoothly
    instead of reshuffling the sample.
    """
    if n < 1:
        raise EmptyCaseSetError("n must be at least 1")
    params = (params or GenParams()).validate()
    u = _uniforms(n, seed)
    # clip away from 0/1 so inverse CDFs stay finite
    u = np.clip(u, 1e-12, 1 - 1e-12)
    risk = sps.beta.ppf(u[:, 0], params.risk_alpha, params.risk_beta)
    comp = sps.beta.ppf(u[:, 1], params.completeness_alpha, params.completeness_beta)
    bases = np.array([params.flag_bases[f] for f in FLAG_NAMES])
    p_flag = np.clip(bases[None, :] + params.flag_risk_slope * risk[:, None], 0.0, 1.0)
    has_flag = u[:, 2:7] < p_flag
    amount = np.exp(params.amount_log_mean + params.amount_log_sd * sps.norm.ppf(u[:, 7]))
    jur_idx = np.minimum((u[:, 8] * len(params.jurisdictions)).astype(int), len(params.jurisdictions) - 1)
    tenure = -np.log1p(-u[:, 9]) / params.tenure_rate
    cp = sps.beta.ppf(u[:, 10], params.counterparty_alpha, params.counterparty_beta)

    table = ground_truth_table()
    cases = []
    for i in range(n):
        case = Case(
            id=f"C{i:05d}",
            index=i,
            task_type=TASK_TYPES[i % len(TASK_TYPES)],
            risk=float(risk[i]),
            completeness=float(comp[i]),
            flags=frozenset(f for f, on in zip(FLAG_NAMES, has_flag[i]) if on),
            amount=float(amount[i]),
            jurisdiction=params.jurisdictions[jur_idx[i]],
            tenure=float(tenure[i]),
            counterparty_risk=float(cp[i]),
        )
        cases.append(dataclasses.replace(case, ground_truth=assign_ground_truth(case, table)))
    return CaseSet(tuple(cases), seed, "S0")


# --------------------------------------------------------------------- stress


def _stressed(case: Case, tag: str, **changes: Any) -> Case:
    original = {"risk": case.risk, "completeness": case.completeness, "flags": frozenset(case.flags)}
    return dataclasses.replace(case, stress=tag, original_values=original, **changes)


def _stress_s1(case: Case, g: np.random.Generator) -> Case:
    magnitude = g.uniform(0.0, 0.15)
    sign = 1.0 if g.random() < 0.9 else -1.0
    return _stressed(case, "S1", risk=float(np.clip(case.risk + sign * magnitude, 0.0, 1.0)))


def _stress_s2(case: Case, g: np.random.Generator) -> Case:
    comp = case.completeness * g.uniform(0.3, 0.7)
    k = int(g.integers(1, 3))
    flags = sorted(case.flags)
    drop = set(g.permutation(flags)[: min(k, len(flags))].tolist()) if flags else set()
    return _stressed(case, "S2", completeness=float(comp), flags=frozenset(flags) - drop)


def _stress_s3(case: Case, g: np.random.Generator) -> Case:
    hit = g.random() < 0.60
    theta = GATE_RISK_THRESHOLDS[int(g.integers(0, len(GATE_RISK_THRESHOLDS)))]
    dr = g.uniform(-0.05, 0.05)
    dc = g.uniform(-0.10, 0.10)
    if not hit:
        return _stressed(case, "S3")
    return _stressed(
        case,
        "S3",
        risk=float(np.clip(theta + dr, 0.0, 1.0)),
        completeness=float(np.clip(0.3 + dc, 0.0, 1.0)),
    )


_TRANSFORMS = {"S1": _stress_s1, "S2": _stress_s2, "S3": _stress_s3}


def apply_stress(cases: CaseSet, cond: str, seed: int) -> CaseSet:
    """Apply one stress condition to a baseline case set (at most once)."""
    if cond not in STRESS_TAGS:
        raise ConfigError(f"unknown stress condition {cond!r}")
    if cases.stress != "S0" or any(c.stress != "S0" for c in cases):
        raise StressError("stress transforms may only be applied once, to baseline cases")
    if cond == "S0":
        return cases
    fn = _TRANSFORMS[cond]
    out = tuple(fn(c, rng.stream(seed, c.index, f"stress:{cond}")) for c in cases)
    return CaseSet(out, cases.seed, cond)


# ---------------------------------------------------------------- calibration


@dataclass(frozen=True)
class GroupStats:
    group: str
    n: int
    risk_mean: float
    risk_sd: float
    completeness_mean: float
    completeness_sd: float
    flag_mean: float
    gt_determinacy: float
    pregate_rate: float


@dataclass(frozen=True)
class DatasetStats:
    groups: tuple[GroupStats, ...]

    @property
    def pooled(self) -> GroupStats:
        return self.groups[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = [f.name for f in dataclasses.fields(GroupStats)]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        for g in self.groups:
            w.writerow([_fmt(getattr(g, k)) for k in names])
        return buf.getvalue()


def _fmt(v: Any) -> Any:
    return f"{v:.6f}" if isinstance(v, float) else v


def _group_stats(name: str, cases: Sequence[Case]) -> GroupStats:
    from .gates import evaluate_pre_gates

    risk = np.array([c.risk for c in cases])
    comp = np.array([c.completeness for c in cases])
    nflags = np.array([len(c.flags) for c in cases])
    det = [c.ground_truth.deterministic if c.ground_truth else assign_ground_truth(c.baseline_view()).deterministic for c in cases]
    gated = [evaluate_pre_gates(c) is not None for c in cases]
    return GroupStats(
        group=name,
        n=len(cases),
        risk_mean=float(risk.mean()),
        risk_sd=float(risk.std()),
        completeness_mean=float(comp.mean()),
        completeness_sd=float(comp.std()),
        flag_mean=float(nflags.mean()),
        gt_determinacy=float(np.mean(det)),
        pregate_rate=float(np.mean(gated)),
    )


def calibration_report(cases: CaseSet | Sequence[Case]) -> DatasetStats:
    """Per-task-type and pooled moments of a case set (population SDs)."""
    cases = list(cases)
    if not cases:
        raise EmptyCaseSetError("calibration report needs at least one case")
    groups = []
    for t in TASK_TYPES:
        sub = [c for c in cases if c.task_type == t]
        if sub:
            groups.append(_group_stats(t, sub))
    groups.append(_group_stats("all", cases))
    return DatasetStats(tuple(groups))
