"""Ordered mechanical hard gates and their threshold-citing rationales."""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from .casegen import Case
from .decisions import Decision, parse_decision
from .errors import ConfigError, ContractError
from .rules import SEVERE_FLAGS, check_conditions, matches

PRE_LLM = "pre_llm"
POST_LLM = "post_llm"
PRE_GATE_ORDER = ("K0_6", "K0_7", "K0_8", "K0_10", "K0_12", "K0_13", "K0_14")


@dataclass(frozen=True)
class GateRule:
    id: str
    stage: str
    when: Mapping[str, Any]
    outcome: Decision
    template: str
    escalate_when: Mapping[str, Any] | None = None
    escalate_outcome: Decision | None = None
    template_escalate: str | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "id": self.id,
            "stage": self.stage,
            "when": dict(self.when),
            "outcome": self.outcome.value,
            "template": self.template,
        }
        if self.escalate_when is not None:
            d["escalate_when"] = dict(self.escalate_when)
            d["escalate_outcome"] = self.escalate_outcome.value
            d["template_escalate"] = self.template_escalate
        return d


@dataclass(frozen=True)
class GateDecision:
    gate_id: str
    decision: Decision
    rationale_text: str
    cited_values: Mapping[str, float | int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "gate_id": self.gate_id,
            "decision": self.decision.value,
            "rationale_text": self.rationale_text,
            "cited_values": dict(self.cited_values),
        }


def _parse_rules(text: str) -> tuple[GateRule, ...]:
    data = yaml.safe_load(text)
    rules = []
    for g in data["gates"]:
        stage = g["stage"]
        if stage not in (PRE_LLM, POST_LLM):
            raise ConfigError(f"gate {g['id']}: unknown stage {stage!r}")
        check_conditions(g["when"])
        esc = g.get("escalate_when")
        if esc is not None:
            check_conditions(esc)
        rules.append(
            GateRule(
                id=g["id"],
                stage=stage,
                when=dict(g["when"]),
                outcome=parse_decision(g["outcome"]),
                template=" ".join(g["template"].split()),
                escalate_when=dict(esc) if esc is not None else None,
                escalate_outcome=parse_decision(g["escalate_outcome"]) if esc is not None else None,
                template_escalate=" ".join(g["template_escalate"].split()) if esc is not None else None,
            )
        )
    return tuple(rules)


@lru_cache(maxsize=None)
def _default_rules() -> tuple[GateRule, ...]:
    return _parse_rules(resources.files("govharness.data").joinpath("gates.yaml").read_text())


def load_rules(path: str | Path | None = None) -> tuple[GateRule, ...]:
    if path is None:
        return _default_rules()
    return _parse_rules(Path(path).read_text())


def dump_rules(rules: Sequence[GateRule], path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump({"version": 1, "gates": [r.to_dict() for r in rules]}, sort_keys=False))


def pre_rules(rules: Sequence[GateRule] | None = None) -> tuple[GateRule, ...]:
    return tuple(r for r in (rules or load_rules()) if r.stage == PRE_LLM)


def post_rule(rules: Sequence[GateRule] | None = None) -> GateRule:
    post = [r for r in (rules or load_rules()) if r.stage == POST_LLM]
    if len(post) != 1:
        raise ConfigError("exactly one post-LLM gate is expected")
    return post[0]


def rule_by_id(gate_id: str, rules: Sequence[GateRule] | None = None) -> GateRule:
    for r in rules or load_rules():
        if r.id == gate_id:
            return r
    raise KeyError(gate_id)


# ------------------------------------------------------------------ rendering


def _f3(x: float) -> str:
    return f"{x:.3f}"


def _cited(rule: GateRule, case: Case) -> dict[str, float | int]:
    """Case values and thresholds named by the rule's conditions."""
    cited: dict[str, float | int] = {}
    conds = dict(rule.when)
    for key, v in conds.items():
        if key.startswith("risk_"):
            cited["risk"] = case.risk
            cited["t_risk"] = float(v)
        elif key.startswith("completeness_"):
            cited["completeness"] = case.completeness
            cited["t_completeness"] = float(v)
        elif key == "amount_gt":
            cited["amount"] = case.amount
            cited["t_amount"] = float(v)
        elif key == "flags_min":
            cited["flag_count"] = len(case.flags)
            cited["t_flags"] = int(v)
        elif key == "severe_min":
            cited["severe_count"] = len(case.flags & SEVERE_FLAGS)
            cited["t_severe"] = int(v)
    if rule.escalate_when is not None:
        cited["risk"] = case.risk
        cited["t_escalate"] = float(rule.escalate_when["risk_gt"])
    if "risk" not in cited:
        cited["risk"] = case.risk
    return cited


def _fill(template: str, case: Case, cited: Mapping[str, float | int]) -> str:
    values = {k: (str(v) if isinstance(v, int) else _f3(v)) for k, v in cited.items()}
    values["flag_list"] = ", ".join(sorted(case.flags)) or "none"
    values["severe_list"] = ", ".join(sorted(case.flags & SEVERE_FLAGS)) or "none"
    return template.format(**values)


def render_gate_rationale(rule: GateRule, case: Case, *, escalate: bool | None = None) -> str:
    """Fill the rule's template with the triggering values and thresholds."""
    return _render(rule, case, escalate)[0]


def _render(rule: GateRule, case: Case, escalate: bool | None) -> tuple[str, dict[str, float | int], Decision]:
    if not matches(case, rule.when):
        raise ContractError(f"gate {rule.id} does not match case {case.id}")
    if escalate is None:
        escalate = rule.escalate_when is not None and matches(case, rule.escalate_when)
    if escalate and rule.escalate_when is None:
        raise ContractError(f"gate {rule.id} has no escalation variant")
    template = rule.template_escalate if escalate else rule.template
    outcome = rule.escalate_outcome if escalate else rule.outcome
    cited = _cited(rule, case)
    text = _fill(template, case, cited)
    # keep only what the text actually shows
    shown = {name for _, name, _, _ in string.Formatter().parse(template) if name}
    return text, {k: v for k, v in cited.items() if k in shown}, outcome


# ----------------------------------------------------------------- evaluation


def evaluate_pre_gates(case: Case, rules: Sequence[GateRule] | None = None) -> GateDecision | None:
    """First matching pre-LLM gate, or None."""
    for rule in pre_rules(rules):
        if matches(case, rule.when):
            text, cited, outcome = _render(rule, case, False)
            return GateDecision(rule.id, outcome, text, cited)
    return None


def evaluate_post_gate(
    case: Case, model_decision: Decision | str | None = None, rules: Sequence[GateRule] | None = None
) -> GateDecision | None:
    """K0_11: override the model when completeness is insufficient.

    ``model_decision`` is accepted for the audit trail only; the override does
    not depend on what the model said.
    """
    if evaluate_pre_gates(case, rules) is not None:
        raise ContractError(f"case {case.id} was pre-gated and never reaches the post-LLM gate")
    rule = post_rule(rules)
    if not matches(case, rule.when):
        return None
    text, cited, outcome = _render(rule, case, None)
    return GateDecision(rule.id, outcome, text, cited)


def audit_entry(case: Case, gd: GateDecision, regime: str = "R2") -> dict[str, Any]:
    return {
        "case_id": case.id,
        "regime": regime,
        "gate_id": gd.gate_id,
        "decision": gd.decision.value,
        "cited_values": dict(gd.cited_values),
    }
