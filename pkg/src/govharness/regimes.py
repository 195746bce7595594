"""The R1 (policy as prompt) and R2 (mechanically enforced) decision pipelines."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Any, Callable, Iterable, Mapping, Sequence

from . import rng
from .casegen import Case
from .decisions import Decision, parse_decision
from .errors import ConfigError, HarnessError, ModelOutputError
from .gates import GateDecision, audit_entry, evaluate_post_gate, evaluate_pre_gates
from .models import (
    STANDARD,
    CountingModel,
    DecisionModel,
    PromptBundle,
    SamplingControl,
    build_prompt,
    with_entropy_note,
)
from .primitives import (
    N_CANDIDATES,
    CandidateSet,
    CasePhases,
    I6QResult,
    Phase,
    StructuredRationale,
    cefl_generate,
    cefl_select,
    e3_commit,
    e3_reveal_verify,
    i6q_enforce,
)
from .scoring import score_text

log = logging.getLogger(__name__)

SOURCE_MODEL = "model"
SOURCE_I6Q = "i6q_forced"
SOURCE_K011 = "k011_override"


def gate_source(gate_id: str) -> str:
    return f"gate:{gate_id}"


@dataclass(frozen=True)
class AblationConfig:
    disable_i6q: bool = False  # A1
    agent_internal_cefl: bool = False  # A2
    observable_entropy: bool = False  # A3
    disable_defer: bool = False  # A4

    def __post_init__(self) -> None:
        if sum(self._flags()) > 1:
            raise ConfigError("ablations are applied one at a time")

    def _flags(self) -> tuple[bool, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))

    @property
    def name(self) -> str:
        for label, on in zip(("A1", "A2", "A3", "A4"), self._flags()):
            if on:
                return label
        return "control"

    @classmethod
    def from_name(cls, name: str) -> "AblationConfig":
        table = {
            "control": cls(),
            "A1": cls(disable_i6q=True),
            "A2": cls(agent_internal_cefl=True),
            "A3": cls(observable_entropy=True),
            "A4": cls(disable_defer=True),
        }
        if name not in table:
            raise ConfigError(f"unknown ablation {name!r}")
        return table[name]


CONTROL = AblationConfig()


@dataclass
class DecisionRecord:
    case_id: str
    regime: str
    decision: Decision
    rationale_text: str
    source: str
    pro_arguments: tuple[str, ...] = ()
    con_arguments: tuple[str, ...] = ()
    retries: int = 0
    model_calls: int = 0
    ground_truth: str | None = None
    gt_deterministic: bool | None = None
    stress: str = "S0"
    ablation: str = "control"
    framing: str = STANDARD
    model_decision: str | None = None  # what the model said before a K0_11 / A4 override
    i6q: dict[str, Any] | None = None
    candidate_audit: dict[str, Any] | None = None
    commitment_audit: dict[str, Any] | None = None
    gate_audit: dict[str, Any] | None = None
    error: str | None = None

    @property
    def mechanical(self) -> bool:
        return self.source.startswith("gate") or self.source == SOURCE_K011

    @property
    def pre_gated(self) -> bool:
        return self.source.startswith("gate")

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["decision"] = self.decision.value
        d["pro_arguments"] = list(self.pro_arguments)
        d["con_arguments"] = list(self.con_arguments)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DecisionRecord":
        kw = {f.name: d.get(f.name) for f in fields(cls) if f.name in d}
        kw["decision"] = parse_decision(d["decision"])
        kw["pro_arguments"] = tuple(d.get("pro_arguments", ()))
        kw["con_arguments"] = tuple(d.get("con_arguments", ()))
        return cls(**kw)


def _base(case: Case, regime: str, ablation: AblationConfig, framing: str) -> dict[str, Any]:
    gt = case.ground_truth
    return {
        "case_id": case.id,
        "regime": regime,
        "ground_truth": gt.label.value if gt else None,
        "gt_deterministic": gt.deterministic if gt else None,
        "stress": case.stress,
        "ablation": ablation.name,
        "framing": framing,
    }


def _parse_error_rationale(exc: Exception) -> StructuredRationale:
    return StructuredRationale(
        Decision.ESCALATE,
        f"Model output could not be parsed ({exc}); the case is escalated for manual handling.",
        free_text=True,
    )


# ------------------------------------------------------------------------- R1


def run_r1(
    case: Case,
    model: DecisionModel,
    *,
    framing: str = STANDARD,
    entropy_seed: int | None = None,
) -> DecisionRecord:
    """One model call with the policy as prompt. Nothing is enforced."""
    prompt = build_prompt(case, framing=framing)
    error = None
    try:
        out = model.decide(prompt, SamplingControl(seed=entropy_seed))
    except ModelOutputError as exc:
        out, error = _parse_error_rationale(exc), f"parse: {exc}"
    return DecisionRecord(
        **_base(case, "R1", CONTROL, framing),
        decision=out.decision,
        rationale_text=out.rationale_text,
        source=SOURCE_MODEL,
        pro_arguments=out.pro_arguments,
        con_arguments=out.con_arguments,
        model_calls=1,
        error=error,
    )


# ------------------------------------------------------------------------- R2


_CITED_RISK = re.compile(r"risk score(?: of| is)?\s*\(?(\d*\.\d+)")
# decision classes consistent with a cited risk level, by band upper bound
_RISK_BANDS = (
    (0.3, {Decision.APPROVE, Decision.CONDITIONAL, Decision.DEFER}),
    (0.7, {Decision.APPROVE, Decision.CONDITIONAL, Decision.DEFER, Decision.ESCALATE}),
    (0.85, {Decision.ESCALATE, Decision.DECLINE, Decision.DEFER}),
    (1.0, {Decision.DECLINE, Decision.ESCALATE}),
)


def _consistency(candidate: StructuredRationale) -> float:
    content = " ".join((candidate.rationale_text, *candidate.arguments))
    m = _CITED_RISK.search(content)
    if m is None:
        return 0.5
    r = float(m.group(1))
    for upper, allowed in _RISK_BANDS:
        if r <= upper:
            return 1.0 if candidate.decision in allowed else 0.0
    return 0.0


def candidate_score(candidate: StructuredRationale) -> float:
    """Deterministic CEFL scorer over candidate content only.

    Half decision/risk consistency (is the decision plausible for the risk
    score the candidate itself cites), half mean checklist sub-score of the
    rationale. Never reads the sampling seed or any case state.
    """
    s = score_text(candidate.rationale_text)
    return 0.5 * _consistency(candidate) + 0.5 * (s.spec + s.expl + s.bshift) / 3.0


def _coerce_no_defer(decision: Decision) -> Decision:
    return Decision.ESCALATE if decision is Decision.DEFER else decision


def _gate_record(case: Case, gd: GateDecision, base: Mapping[str, Any], ablation: AblationConfig) -> DecisionRecord:
    decision, text = gd.decision, gd.rationale_text
    if ablation.disable_defer and decision is Decision.DEFER:
        decision = Decision.ESCALATE
        text = f"Deferral disabled; escalated instead. {text}"
    return DecisionRecord(
        **base,
        decision=decision,
        rationale_text=text,
        source=gate_source(gd.gate_id),
        gate_audit=audit_entry(case, gd),
    )


def run_r2(
    case: Case,
    model: DecisionModel,
    ablation: AblationConfig = CONTROL,
    *,
    entropy_seed: int,
    nonce: int,
    framing: str = STANDARD,
    scorer: Callable[[StructuredRationale], float] = candidate_score,
    tamper_reveal: bool = False,
) -> DecisionRecord:
    """Pre-gates, E3 commit, CEFL, I6Q, K0_11, E3 reveal, in that order."""
    base = _base(case, "R2", ablation, framing)
    pre = evaluate_pre_gates(case)
    if pre is not None:
        return _gate_record(case, pre, base, ablation)

    calls = 0
    phases = CasePhases(entropy_observable=ablation.observable_entropy)
    commitment = None
    prompt: PromptBundle = build_prompt(case, framing=framing)
    if ablation.observable_entropy:
        prompt = with_entropy_note(prompt, entropy_seed)
    else:
        commitment = e3_commit(entropy_seed, nonce)
        phases.advance(Phase.COMMITTED)

    # -- candidate generation and selection
    if ablation.agent_internal_cefl:
        control = SamplingControl(seed=entropy_seed, mode="propose_rank")
        try:
            selected = model.decide(prompt, control)
        except ModelOutputError as exc:
            selected = _parse_error_rationale(exc)
        calls += 1
        for ph in (Phase.GENERATED, Phase.SCORED, Phase.SELECTED):
            phases.advance(ph)
        candidate_audit: dict[str, Any] = {"mode": "agent_internal", "candidates": None, "selected": None}
        revise_control = control
    else:

        def generate_one(i: int, s: int) -> StructuredRationale:
            try:
                return model.decide(prompt, SamplingControl(seed=s, candidate_index=i, mode="candidate"))
            except ModelOutputError as exc:
                return _parse_error_rationale(exc)

        cands: CandidateSet = cefl_generate(generate_one, commitment, entropy_seed, phases=phases)
        calls += N_CANDIDATES
        idx, scores = cefl_select(cands, scorer, phases=phases)
        selected = cands.candidates[idx]
        candidate_audit = {
            "mode": "external",
            "decisions": [c.decision.value for c in cands.candidates],
            "scores": list(scores),
            "selected": idx,
            "spread": cands.spread,
        }
        revise_control = SamplingControl(seed=cands.generation_seeds[idx], candidate_index=idx, mode="candidate")

    # -- rationale quality
    source = SOURCE_MODEL
    retries = 0
    i6q_audit = None
    if ablation.disable_i6q:
        final = selected
    else:

        def reprompt(k: int, last: I6QResult) -> StructuredRationale:
            nonlocal calls
            calls += 1
            feedback = tuple(f"argument {i}: {f.value}" for i, f in last.failures)
            ctl = SamplingControl(
                seed=revise_control.seed,
                candidate_index=revise_control.candidate_index,
                attempt=k,
                mode=revise_control.mode,
                feedback=feedback,
            )
            try:
                return model.decide(prompt, ctl)
            except ModelOutputError:
                # an unparseable revision counts as a failed check
                return StructuredRationale(Decision.ESCALATE, "unparseable revision")

        final, result, forced = i6q_enforce(lambda: selected, reprompt)
        retries = result.retry_count
        i6q_audit = result.to_dict()
        if forced:
            source = SOURCE_I6Q

    decision = final.decision
    text = final.rationale_text
    model_decision = decision.value
    gate_audit = None

    # -- post-model gate
    post = evaluate_post_gate(case, decision)
    if post is not None:
        decision, text, source = post.decision, post.rationale_text, SOURCE_K011
        gate_audit = audit_entry(case, post)
    if ablation.disable_defer and decision is Decision.DEFER:
        decision = _coerce_no_defer(decision)
        text = f"Deferral disabled; escalated instead. {text}"

    # -- reveal
    if commitment is not None:
        finalized = phases.phase is Phase.SELECTED
        reveal_seed = entropy_seed + 1 if tamper_reveal else entropy_seed
        e3_reveal_verify(commitment, reveal_seed, nonce, scores_final=finalized)
        phases.advance(Phase.REVEALED)
        commitment_audit: dict[str, Any] = commitment.to_dict()
    else:
        commitment_audit = {"commitment": None, "observable": True, "verified": None}

    return DecisionRecord(
        **base,
        decision=decision,
        rationale_text=text,
        source=source,
        pro_arguments=final.pro_arguments,
        con_arguments=final.con_arguments,
        retries=retries,
        model_calls=calls,
        model_decision=model_decision,
        i6q=i6q_audit,
        candidate_audit=candidate_audit,
        commitment_audit=commitment_audit,
        gate_audit=gate_audit,
    )


# ----------------------------------------------------------------------- cells


def entropy_for(master_seed: int, case: Case, salt: str = "") -> tuple[int, int]:
    """Per-case (entropy seed, nonce); independent of the stress condition."""
    return (
        rng.derive_int(master_seed, case.index, f"entropy{salt}"),
        rng.derive_int(master_seed, case.index, f"nonce{salt}"),
    )


@dataclass
class CellResult:
    records: list[DecisionRecord]
    errors: dict[str, str] = field(default_factory=dict)
    model_calls: dict[str, int] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return not self.errors

    @property
    def gor(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.mechanical for r in self.records) / len(self.records)

    @property
    def pregate_rate(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.pre_gated for r in self.records) / len(self.records)


def _failure_record(case: Case, regime: str, ablation: AblationConfig, framing: str, exc: Exception) -> DecisionRecord:
    return DecisionRecord(
        **_base(case, regime, ablation, framing),
        decision=Decision.ESCALATE,
        rationale_text=f"Case could not be processed: {exc}",
        source=SOURCE_MODEL,
        error=f"{type(exc).__name__}: {exc}",
    )


def run_case(
    case: Case,
    regime: str,
    model: DecisionModel,
    ablation: AblationConfig = CONTROL,
    *,
    master_seed: int = 42,
    framing: str = STANDARD,
    entropy_seed: int | None = None,
    tamper_reveal: bool = False,
) -> DecisionRecord:
    if regime == "R1":
        return run_r1(case, model, framing=framing, entropy_seed=entropy_seed)
    if regime == "R2":
        seed, nonce = entropy_for(master_seed, case)
        if entropy_seed is not None:
            seed = entropy_seed
        return run_r2(
            case, model, ablation, entropy_seed=seed, nonce=nonce, framing=framing, tamper_reveal=tamper_reveal
        )
    raise ConfigError(f"unknown regime {regime!r}")


def run_cell(
    cases: Iterable[Case],
    regime: str,
    model: DecisionModel,
    ablation: AblationConfig = CONTROL,
    *,
    master_seed: int = 42,
    framing: str = STANDARD,
    entropy_seeds: Mapping[str, int] | None = None,
    tamper_ids: Sequence[str] = (),
    max_workers: int = 1,
) -> CellResult:
    """Run every case through one regime; a failing case never aborts the cell."""
    if regime == "R1" and ablation != CONTROL:
        raise ConfigError("ablations apply to R2 only")
    cases = list(cases)
    counted = CountingModel(model)
    tampered = set(tamper_ids)
    errors: dict[str, str] = {}

    def one(case: Case) -> DecisionRecord:
        try:
            rec = run_case(
                case,
                regime,
                counted,
                ablation,
                master_seed=master_seed,
                framing=framing,
                entropy_seed=(entropy_seeds or {}).get(case.id),
                tamper_reveal=case.id in tampered,
            )
        except HarnessError as exc:
            log.warning("case %s failed in %s: %s", case.id, regime, exc)
            errors[case.id] = f"{type(exc).__name__}: {exc}"
            rec = _failure_record(case, regime, ablation, framing, exc)
        return rec

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            records = list(pool.map(one, cases))
    else:
        records = [one(c) for c in cases]
    for rec in records:
        rec.model_calls = counted.calls.get(rec.case_id, 0)
    return CellResult(records, errors, dict(counted.calls))
