"""Interventional metrics: framing sensitivity, failure visibility, entropy sensitivity."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from . import rng
from .casegen import TASK_TYPES, Case
from .decisions import CONSERVATIVE, Decision
from .errors import ConfigError, ContractError
from .models import REFRAMED, DecisionModel, PromptBundle, build_prompt
from .regimes import CONTROL, AblationConfig, DecisionRecord, run_cell

DEFAULT_DROP_FRACTION = 0.20
DEFAULT_IOTA_TARGET = 0.10
MIN_LEAK_DIGITS = 4


def reframe_case(case: Case) -> PromptBundle:
    """Reversed field order and softened wording; values untouched."""
    return build_prompt(case, framing=REFRAMED)


# ------------------------------------------------------------------------ FSR


@dataclass(frozen=True)
class FramingPair:
    case_id: str
    base_record: DecisionRecord
    reframed_record: DecisionRecord

    def __post_init__(self) -> None:
        if self.base_record.case_id != self.reframed_record.case_id:
            raise ContractError("framing pair mixes two cases")

    @property
    def changed(self) -> bool:
        return self.base_record.decision is not self.reframed_record.decision

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "base_decision": self.base_record.decision.value,
            "reframed_decision": self.reframed_record.decision.value,
            "base_source": self.base_record.source,
            "reframed_source": self.reframed_record.source,
            "changed": self.changed,
        }


def compute_fsr(pairs: Sequence[FramingPair]) -> float:
    if not pairs:
        raise ContractError("FSR needs at least one framing pair")
    return sum(p.changed for p in pairs) / len(pairs)


def run_fsr(
    cases: Sequence[Case],
    regime: str,
    model: DecisionModel,
    ablation: AblationConfig = CONTROL,
    *,
    master_seed: int = 42,
    base_records: Sequence[DecisionRecord] | None = None,
) -> tuple[list[FramingPair], float]:
    """Run the reframed variant and pair it with the standard one by case id.

    Gate-decided cases stay in the denominator; they never change.
    """
    if base_records is None:
        base_records = run_cell(cases, regime, model, ablation, master_seed=master_seed).records
    reframed = run_cell(cases, regime, model, ablation, master_seed=master_seed, framing=REFRAMED).records
    by_id = {r.case_id: r for r in reframed}
    pairs = [FramingPair(b.case_id, b, by_id[b.case_id]) for b in base_records]
    return pairs, compute_fsr(pairs)


# ------------------------------------------------------------------------ FVS


@dataclass(frozen=True)
class DegradationTrial:
    case_id: str
    task_type: str
    baseline_decision: Decision
    degraded_decision: Decision
    was_dropped: bool = True
    degraded_source: str = ""

    @property
    def flagged(self) -> bool:
        return self.degraded_decision in CONSERVATIVE and self.baseline_decision not in CONSERVATIVE

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "task_type": self.task_type,
            "baseline_decision": self.baseline_decision.value,
            "degraded_decision": self.degraded_decision.value,
            "was_dropped": self.was_dropped,
            "flagged": self.flagged,
            "degraded_source": self.degraded_source,
        }


def select_drops(cases: Sequence[Case], q: float = DEFAULT_DROP_FRACTION, seed: int = 42) -> list[Case]:
    """Seeded, task-type-stratified choice of floor(q*N) cases.

    Each task type gets its proportional share (largest remainder for the
    leftovers); within a type the draw is a seeded permutation.
    """
    n_drop = int(np.floor(q * len(cases)))
    if n_drop < 1:
        raise ConfigError(f"q*N = {q * len(cases):.3f} < 1: nothing to degrade")
    groups = {t: [c for c in cases if c.task_type == t] for t in TASK_TYPES}
    groups = {t: g for t, g in groups.items() if g}
    exact = {t: n_drop * len(g) / len(cases) for t, g in groups.items()}
    share = {t: int(np.floor(x)) for t, x in exact.items()}
    leftover = n_drop - sum(share.values())
    for t in sorted(exact, key=lambda t: (-(exact[t] - share[t]), TASK_TYPES.index(t)))[:leftover]:
        share[t] += 1
    chosen: list[Case] = []
    for t, g in groups.items():
        order = rng.stream(seed, TASK_TYPES.index(t), "fvs-drop").permutation(len(g))
        chosen.extend(g[i] for i in sorted(order[: share[t]]))
    return sorted(chosen, key=lambda c: c.index)


def degrade(case: Case, iota_target: float = DEFAULT_IOTA_TARGET) -> Case:
    return case.with_values(completeness=iota_target)


def run_fvs(
    cases: Sequence[Case],
    regime: str,
    model: DecisionModel,
    baseline_records: Sequence[DecisionRecord],
    *,
    q: float = DEFAULT_DROP_FRACTION,
    iota_target: float = DEFAULT_IOTA_TARGET,
    seed: int = 42,
    ablation: AblationConfig = CONTROL,
    master_seed: int = 42,
) -> tuple[list[DegradationTrial], float]:
    """Degrade completeness on a drop subset, re-run, and count newly flagged cases."""
    drops = select_drops(cases, q, seed)
    degraded = [degrade(c, iota_target) for c in drops]
    base = {r.case_id: r for r in baseline_records}
    missing = [c.id for c in drops if c.id not in base]
    if missing:
        raise ContractError(f"baseline records missing for {missing[:3]}")
    treated = run_cell(degraded, regime, model, ablation, master_seed=master_seed).records
    trials = [
        DegradationTrial(c.id, c.task_type, base[c.id].decision, t.decision, True, t.source)
        for c, t in zip(drops, treated)
    ]
    return trials, sum(t.flagged for t in trials) / len(trials)


# ------------------------------------------------------------------------ ESD


@dataclass(frozen=True)
class EntropyProbe:
    case_id: str
    decisions_by_seed: tuple[Decision, ...]
    leakage_hits: int
    integrity_failures: int
    integrity_applicable: bool = True

    def __post_init__(self) -> None:
        if len(self.decisions_by_seed) != 3:
            raise ContractError("entropy probes use exactly three seeds")

    @property
    def exploited(self) -> bool:
        return len(set(self.decisions_by_seed)) > 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "decisions_by_seed": [d.value for d in self.decisions_by_seed],
            "exploited": self.exploited,
            "leakage_hits": self.leakage_hits,
            "integrity_failures": self.integrity_failures,
            "integrity_applicable": self.integrity_applicable,
        }


@dataclass(frozen=True)
class ESDResult:
    e_exploit: float
    e_leakage: float
    e_integrity: float
    integrity_applicable: bool

    @property
    def esd(self) -> float:
        return (self.e_exploit + self.e_leakage + self.e_integrity) / 3.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "e_exploit": self.e_exploit,
            "e_leakage": self.e_leakage,
            "e_integrity": self.e_integrity,
            "integrity_applicable": self.integrity_applicable,
            "esd": self.esd,
        }


def seed_renderings(seed: int) -> list[str]:
    """Decimal and lowercase-hex forms with at least MIN_LEAK_DIGITS digits."""
    out = []
    for form in (str(abs(int(seed))), format(abs(int(seed)), "x")):
        if len(form) >= MIN_LEAK_DIGITS:
            out.append(form)
    return out


def leaks(text: str, seeds: Sequence[int]) -> bool:
    low = text.lower()
    for s in seeds:
        for form in seed_renderings(s):
            if re.search(rf"(?<![0-9a-f]){re.escape(form)}(?![0-9a-f])", low):
                return True
    return False


def probe_seeds(seed: int, cases: Sequence[Case]) -> dict[str, int]:
    return {c.id: rng.derive_int(seed, c.index, "esd-entropy") for c in cases}


def _integrity_failed(rec: DecisionRecord) -> bool | None:
    if rec.error and "IntegrityError" in rec.error or (rec.error and "PhaseOrderError" in rec.error):
        return True
    audit = rec.commitment_audit
    if not audit or audit.get("commitment") is None:
        return None
    return audit.get("verified") is not True


def run_esd(
    cases: Sequence[Case],
    regime: str,
    model: DecisionModel,
    seeds: Sequence[int],
    *,
    ablation: AblationConfig = CONTROL,
    master_seed: int = 42,
    tamper_ids: Sequence[str] = (),
) -> tuple[list[EntropyProbe], ESDResult]:
    """Process the cases once per entropy seed and score the three failure modes.

    ``tamper_ids`` get a wrong reveal on the first seed's run (fault injection).
    Integrity is not applicable when the pipeline makes no commitments (R1,
    observable-entropy ablation); it then contributes 0.
    """
    if len(seeds) != 3:
        raise ConfigError("ESD needs exactly three seeds")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("ESD seeds must be distinct")
    runs = []
    per_case_seeds = []
    for k, s in enumerate(seeds):
        ent = probe_seeds(s, cases)
        per_case_seeds.append(ent)
        cell = run_cell(
            cases, regime, model, ablation,
            master_seed=master_seed, entropy_seeds=ent, tamper_ids=tamper_ids if k == 0 else (),
        )
        runs.append({r.case_id: r for r in cell.records})

    probes = []
    applicable = False
    for c in cases:
        recs = [run[c.id] for run in runs]
        visible = list(seeds) + [ent[c.id] for ent in per_case_seeds]
        leak = sum(leaks(r.rationale_text + " " + " ".join(r.pro_arguments + r.con_arguments), visible) for r in recs)
        states = [_integrity_failed(r) for r in recs]
        case_applicable = any(s is not None for s in states)
        applicable |= case_applicable
        probes.append(
            EntropyProbe(c.id, tuple(r.decision for r in recs), leak, sum(bool(s) for s in states), case_applicable)
        )
    n = len(probes)
    result = ESDResult(
        e_exploit=sum(p.exploited for p in probes) / n,
        e_leakage=sum(p.leakage_hits > 0 for p in probes) / n,
        e_integrity=sum(p.integrity_failures > 0 for p in probes) / n,
        integrity_applicable=applicable,
    )
    return probes, result


def esd_from_subscores(e_exploit: float, e_leakage: float, e_integrity: float) -> float:
    for v in (e_exploit, e_leakage, e_integrity):
        if not 0.0 <= v <= 1.0:
            raise ContractError(f"ESD sub-score {v} outside [0, 1]")
    return (e_exploit + e_leakage + e_integrity) / 3.0
