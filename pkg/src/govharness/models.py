"""Prompt rendering and decision-model adapters.

Two adapters ship: :class:`ScriptedSurrogate`, a deterministic stand-in whose
behaviour is configured by profile data, and :class:`RemoteEndpoint`, a thin
HTTP client for any service implementing the ``/decide`` contract.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from statistics import NormalDist
from typing import Any, Mapping, Protocol, runtime_checkable

import httpx
import yaml

from .casegen import Case
from .decisions import DECISIONS, Decision
from .errors import ConfigError, ModelOutputError, TransportError
from .primitives import StructuredRationale
from .rng import unit_hash
from .rules import SEVERE_FLAGS

STANDARD = "standard"
REFRAMED = "reframed"

# (field, label) in standard serialization order; the reframed variant reverses it.
FIELD_ORDER: tuple[tuple[str, str], ...] = (
    ("task_type", "task type"),
    ("risk", "risk score"),
    ("completeness", "information completeness"),
    ("flags", "regulatory flags"),
    ("amount", "transaction amount (USD)"),
    ("jurisdiction", "jurisdiction"),
    ("tenure", "customer tenure (years)"),
    ("counterparty_risk", "counterparty risk"),
)
NUMERIC_FIELDS = ("risk", "completeness", "amount", "tenure", "counterparty_risk")


@lru_cache(maxsize=None)
def softening_lexicon() -> tuple[tuple[re.Pattern[str], str], ...]:
    data = yaml.safe_load(resources.files("govharness.data").joinpath("softening.yaml").read_text())
    return tuple((re.compile(rf"\b{re.escape(a)}\b", re.IGNORECASE), b) for a, b in data["substitutions"])


def soften(text: str) -> str:
    for pat, repl in softening_lexicon():
        text = pat.sub(repl, text)
    return text


@lru_cache(maxsize=None)
def _policy_data() -> dict[str, str]:
    data = yaml.safe_load(resources.files("govharness.data").joinpath("policy.yaml").read_text())
    return {k: " ".join(v.split()) for k, v in data.items() if isinstance(v, str)}


def default_policy_text() -> str:
    p = _policy_data()
    return f"{p['policy']} {p['output_format']}"


def _render_value(name: str, value: Any) -> str:
    if name == "flags":
        return ", ".join(value) if value else "none"
    if isinstance(value, float):
        return repr(value)  # round-trips exactly
    return str(value)


@dataclass(frozen=True)
class PromptBundle:
    case_id: str
    policy_text: str
    fields: tuple[tuple[str, Any], ...]
    framing: str = STANDARD
    entropy_note: str | None = None

    def __post_init__(self) -> None:
        if self.framing not in (STANDARD, REFRAMED):
            raise ConfigError(f"unknown framing variant {self.framing!r}")

    def value(self, name: str) -> Any:
        for k, v in self.fields:
            if k == name:
                return v
        raise KeyError(name)

    def numeric_values(self) -> list[float]:
        return sorted(v for k, v in self.fields if k in NUMERIC_FIELDS)

    def render(self) -> str:
        labels = dict(FIELD_ORDER)
        policy = self.policy_text
        lines = []
        for name, value in self.fields:
            label = labels[name]
            if self.framing == REFRAMED:
                label = soften(label)
            lines.append(f"{label}: {_render_value(name, value)}")
        if self.framing == REFRAMED:
            policy = soften(policy)
        parts = [f"POLICY: {policy}", f"CASE {self.case_id}", *lines]
        if self.entropy_note:
            parts.append(self.entropy_note)
        return "\n".join(parts)

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "framing": self.framing,
            "fields": [[k, list(v) if isinstance(v, tuple) else v] for k, v in self.fields],
            "entropy_note": self.entropy_note,
        }


def build_prompt(case: Case, *, framing: str = STANDARD, policy_text: str | None = None) -> PromptBundle:
    order = FIELD_ORDER if framing == STANDARD else tuple(reversed(FIELD_ORDER))
    fields = tuple(
        (name, tuple(sorted(case.flags)) if name == "flags" else getattr(case, name)) for name, _ in order
    )
    return PromptBundle(case.id, policy_text or default_policy_text(), fields, framing)


@dataclass(frozen=True)
class SamplingControl:
    """Everything besides the prompt that the adapter may condition on.

    ``mode`` is ``single`` (R1 and I6Q re-prompts of a single call),
    ``candidate`` (one CEFL candidate) or ``propose_rank`` (A2: the model
    proposes and ranks its own candidates in one call).
    """

    seed: int | None = None
    candidate_index: int | None = None
    attempt: int = 0
    mode: str = "single"
    feedback: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "candidate_index": self.candidate_index,
            "attempt": self.attempt,
            "mode": self.mode,
            "feedback": list(self.feedback),
        }


@runtime_checkable
class DecisionModel(Protocol):
    name: str
    declared_mode: str  # "structured" | "free_text"
    deterministic: bool

    def decide(self, prompt: PromptBundle, control: SamplingControl) -> StructuredRationale: ...


class CountingModel:
    """Wraps an adapter and counts calls per case id."""

    def __init__(self, inner: DecisionModel):
        self.inner = inner
        self.name = inner.name
        self.declared_mode = inner.declared_mode
        self.deterministic = inner.deterministic
        self.calls: Counter[str] = Counter()
        self._lock = threading.Lock()

    def decide(self, prompt: PromptBundle, control: SamplingControl) -> StructuredRationale:
        with self._lock:
            self.calls[prompt.case_id] += 1
        return self.inner.decide(prompt, control)

    @property
    def total_calls(self) -> int:
        return sum(self.calls.values())


# ----------------------------------------------------------- scripted surrogate


@dataclass(frozen=True)
class SurrogateProfile:
    name: str
    perception_sd: float = 0.08
    jitter_sd: float = 0.06
    candidate_diversity: float = 0.5
    framing_shift: float = 0.1
    defer_bias: float = 0.3
    p_specific: float = 0.5
    i6q_fail_first: float = 0.28
    i6q_fail_retry: float = 0.04
    vacuous_on_failure: bool = False
    echo_seed_rate: float = 0.0
    malformed_rate: float = 0.0


@lru_cache(maxsize=None)
def _profiles_text(path: str | None) -> str:
    if path is None:
        return resources.files("govharness.data").joinpath("surrogate_profiles.yaml").read_text()
    return Path(path).read_text()


def load_profile(name: str, path: str | None = None) -> SurrogateProfile:
    profiles = yaml.safe_load(_profiles_text(path))["profiles"]
    if name not in profiles:
        raise ConfigError(f"unknown surrogate profile {name!r}; known: {sorted(profiles)}")
    return SurrogateProfile(name=name, **profiles[name])


def profile_names(path: str | None = None) -> list[str]:
    return sorted(yaml.safe_load(_profiles_text(path))["profiles"])


VACUOUS_DEFERRALS = (
    "The case requires further review due to the complexity of the situation. Additional information "
    "may be needed before a final determination can be made. The risk factors present warrant careful "
    "consideration.",
    "Further review is needed before a decision can be made.",
    "This case should be deferred for further review given the circumstances. Additional information "
    "may help clarify the situation.",
    "Further review is needed due to the risk profile of this case.",
)
EXPLORATORY_TEXT = "Exploratory candidate outcome."
_WEAK_ARGUMENTS = (
    "Risk is acceptable here.",
    "the risk is risky because of the risk the risk is risky because of the risk",
    "Needs review.",
)
_NORMAL = NormalDist()


def _policy_decision(r: float, c: float, flags: frozenset[str], amount: float) -> tuple[Decision, bool]:
    """The surrogate's reading of the policy; second value marks the ambiguous band."""
    severe = len(flags & SEVERE_FLAGS)
    if r > 0.9 and "SANCTIONS" in flags:
        return Decision.DECLINE, False
    if r > 0.85:
        return (Decision.ESCALATE if len(flags) >= 3 else Decision.DECLINE), False
    if amount > 1_000_000 and r > 0.7:
        return Decision.ESCALATE, False
    if c < 0.15:
        return Decision.DEFER, False
    if "AML" in flags and r > 0.7:
        return Decision.DECLINE, False
    if "INSIDER" in flags:
        return Decision.ESCALATE, False
    if severe >= 2 and r > 0.6:
        return Decision.DECLINE, False
    if len(flags) >= 3:
        return Decision.ESCALATE, False
    if c < 0.3:
        return (Decision.ESCALATE if r > 0.7 else Decision.DEFER), False
    if r < 0.3 and c >= 0.45:
        return Decision.APPROVE, False
    if r >= 0.65 and flags:
        return Decision.ESCALATE, False
    if r > 0.7:
        return Decision.ESCALATE, True
    if r < 0.3:
        return Decision.CONDITIONAL, True
    if r < 0.45 and not flags and c >= 0.5:
        return Decision.APPROVE, True
    if c < 0.4:
        return Decision.DEFER, True
    return Decision.CONDITIONAL, True


class ScriptedSurrogate:
    """Deterministic, profile-driven decision model.

    It reads the same prompt a hosted model would receive: the field values and
    the rendered wording (softened wording lowers its perceived risk). It never
    sees ground truth.
    """

    declared_mode = "structured"
    deterministic = True

    def __init__(self, profile: str | SurrogateProfile = "vacuous-compliant", profiles_path: str | None = None):
        self.profile = profile if isinstance(profile, SurrogateProfile) else load_profile(profile, profiles_path)
        self.name = f"scripted:{self.profile.name}"

    def _u(self, *parts: object) -> float:
        return unit_hash(self.profile.name, *parts)

    def _z(self, *parts: object) -> float:
        return _NORMAL.inv_cdf(min(max(self._u(*parts), 1e-12), 1 - 1e-12))

    def decide(self, prompt: PromptBundle, control: SamplingControl) -> StructuredRationale:
        p = self.profile
        cid = prompt.case_id
        seed_key = (control.seed, control.candidate_index)
        if p.malformed_rate and self._u(cid, "malformed", seed_key, control.attempt) < p.malformed_rate:
            raise ModelOutputError(f"{self.name}: unparseable answer for {cid}")

        r = float(prompt.value("risk"))
        c = float(prompt.value("completeness"))
        flags = frozenset(prompt.value("flags"))
        amount = float(prompt.value("amount"))
        softened = "consideration index" in prompt.render()

        perceived = r + p.perception_sd * self._z(cid, "perceive")
        if control.seed is not None and p.jitter_sd:
            perceived += p.jitter_sd * self._z(cid, "jitter", *seed_key)
        if softened:
            perceived -= p.framing_shift
        perceived = min(max(perceived, 0.0), 1.0)
        decision, ambiguous = _policy_decision(perceived, c, flags, amount)
        if ambiguous and decision is not Decision.DEFER and self._u(cid, "defer-bias") < p.defer_bias:
            decision = Decision.DEFER

        exploratory = (
            control.mode == "candidate"
            and p.candidate_diversity > 0
            and self._u(cid, "explore", *seed_key) < p.candidate_diversity
        )
        if exploratory:
            others = [d for d in DECISIONS if d is not decision]
            decision = others[int(self._u(cid, "alt", *seed_key) * len(others))]
            return StructuredRationale(decision, EXPLORATORY_TEXT, *self._arguments(prompt, weak=False))

        fail_p = p.i6q_fail_first if control.attempt == 0 else p.i6q_fail_retry
        weak = self._u(cid, "i6q", control.attempt, *seed_key) < fail_p
        specific = self._u(cid, "specific", control.attempt) < p.p_specific
        if weak and p.vacuous_on_failure:
            specific = False
        text = self._rationale(prompt, decision, specific, control)
        pro, con = self._arguments(prompt, weak=weak)
        return StructuredRationale(decision, text, pro, con)

    # -- text generation

    def _rationale(self, prompt: PromptBundle, decision: Decision, specific: bool, control: SamplingControl) -> str:
        cid = prompt.case_id
        if decision is Decision.DEFER:
            if specific:
                text = _specific_deferral(prompt)
            else:
                pool = VACUOUS_DEFERRALS
                text = pool[int(self._u(cid, "vacuous-text", control.attempt) * len(pool))]
        else:
            text = _decision_text(prompt, decision, specific)
        visible = _visible_seed(prompt)
        if visible is not None and self._u(cid, "echo", visible) < self.profile.echo_seed_rate:
            text += f" Sampling reference {visible}."
        return text

    def _arguments(self, prompt: PromptBundle, *, weak: bool) -> tuple[tuple[str, ...], tuple[str, ...]]:
        task = str(prompt.value("task_type")).replace("_", " ")
        rho = float(prompt.value("counterparty_risk"))
        tenure = float(prompt.value("tenure"))
        r = float(prompt.value("risk"))
        flags = ", ".join(prompt.value("flags")) or "no flags"
        jur = prompt.value("jurisdiction")
        pro = (
            f"The {task} file shows a risk score of {r:.3f}, counterparty risk of {rho:.2f} and a "
            f"customer relationship spanning {tenure:.1f} years with this institution.",
        )
        if weak:
            con = (_WEAK_ARGUMENTS[int(self._u(prompt.case_id, "weak-kind") * len(_WEAK_ARGUMENTS))],)
        else:
            con = (f"Open items ({flags}) leave residual exposure in {jur} that needs monitoring before approval.",)
        return pro, con


def _visible_seed(prompt: PromptBundle) -> int | None:
    if not prompt.entropy_note:
        return None
    m = re.search(r"(\d+)", prompt.entropy_note)
    return int(m.group(1)) if m else None


def _specific_deferral(prompt: PromptBundle) -> str:
    r = float(prompt.value("risk"))
    c = float(prompt.value("completeness"))
    flags = prompt.value("flags")
    flag_phrase = f"the {', '.join(flags)} flag{'s are' if len(flags) > 1 else ' is'} open" if flags else "no regulatory flag is raised"
    amount = float(prompt.value("amount"))
    return (
        f"Deferral: the risk score ({r:.3f}) sits in the ambiguous band and {flag_phrase}. Specifically, "
        f"information completeness is {c:.3f}, below the 0.5 level this review expects. Because the counterparty "
        f"documentation cannot be verified from the current file, the case is deferred pending documentation "
        f"supporting the USD {amount:,.0f} amount. The case would be approvable if completeness rose above 0.5 "
        f"and the risk were mitigated below 0.45; otherwise it should be escalated."
    )


def _decision_text(prompt: PromptBundle, decision: Decision, specific: bool) -> str:
    if not specific:
        return f"{decision.value.title()} based on an overall assessment of the risk in this case."
    r = float(prompt.value("risk"))
    c = float(prompt.value("completeness"))
    flags = ", ".join(prompt.value("flags")) or "none"
    return (
        f"{decision.value}: risk score {r:.3f}, completeness {c:.3f}, flags {flags}. "
        f"The policy thresholds applied to these values lead to {decision.value.lower()}."
    )


# ---------------------------------------------------------------- HTTP adapter


class RemoteEndpoint:
    """Client for a remote decision service.

    Contract: ``POST {base_url}/decide`` with JSON
    ``{"prompt": str, "sampling_control": {...}, "mode": str}``; the response
    body is a JSON object with ``decision``, ``rationale_text``,
    ``pro_arguments`` and ``con_arguments``.
    """

    declared_mode = "structured"

    def __init__(
        self,
        base_url: str,
        *,
        token: str | None = None,
        timeout: float = 30.0,
        retries: int = 2,
        backoff: float = 0.5,
        deterministic: bool = True,
        transport: httpx.BaseTransport | None = None,
    ):
        if not base_url:
            raise ConfigError("remote adapter needs a base URL")
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self.name = f"remote:{base_url}"
        self.deterministic = deterministic
        self.retries = retries
        self.backoff = backoff
        self._client = httpx.Client(base_url=base_url.rstrip("/"), headers=headers, timeout=timeout, transport=transport)

    @classmethod
    def from_env(cls, **kwargs: Any) -> "RemoteEndpoint":
        url = os.environ.get("GOVHARNESS_REMOTE_URL", "")
        if not url:
            raise ConfigError("GOVHARNESS_REMOTE_URL is not set")
        return cls(url, token=os.environ.get("GOVHARNESS_REMOTE_TOKEN"), **kwargs)

    def close(self) -> None:
        self._client.close()

    def decide(self, prompt: PromptBundle, control: SamplingControl) -> StructuredRationale:
        payload = {"prompt": prompt.render(), "sampling_control": control.to_dict(), "mode": control.mode}
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post("/decide", json=payload)
            except httpx.HTTPError as exc:
                last = exc
                continue
            if resp.status_code >= 500 or resp.status_code == 429:
                last = TransportError(f"HTTP {resp.status_code} from {self.name}")
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code} from {self.name}: {resp.text[:200]}")
            return parse_model_output(resp.text)
        raise TransportError(f"{self.name} unreachable after {self.retries + 1} attempts: {last}")


def parse_model_output(body: str | Mapping[str, Any]) -> StructuredRationale:
    """Parse an adapter response, raising ModelOutputError on anything malformed."""
    try:
        data = json.loads(body) if isinstance(body, str) else dict(body)
    except (ValueError, TypeError) as exc:
        raise ModelOutputError(f"response is not JSON: {exc}") from None
    if not isinstance(data, dict) or "decision" not in data:
        raise ModelOutputError("response lacks a decision field")
    for key in ("pro_arguments", "con_arguments"):
        if key in data and not isinstance(data[key], list):
            raise ModelOutputError(f"{key} must be a list")
    free_text = "pro_arguments" not in data and "con_arguments" not in data
    try:
        return StructuredRationale.from_dict(data, free_text=free_text)
    except ValueError as exc:
        raise ModelOutputError(str(exc)) from None


def make_model(name: str, **params: Any) -> DecisionModel:
    """Build an adapter by CLI name: ``scripted[:profile]`` or ``remote``."""
    kind, _, arg = name.partition(":")
    if kind == "scripted":
        return ScriptedSurrogate(arg or params.get("profile", "vacuous-compliant"), params.get("profiles_path"))
    if kind == "remote":
        tuning = {k: params[k] for k in ("timeout", "retries", "backoff", "deterministic") if k in params}
        if arg:
            return RemoteEndpoint(arg, token=os.environ.get("GOVHARNESS_REMOTE_TOKEN"), **tuning)
        return RemoteEndpoint.from_env(**tuning)
    raise ConfigError(f"unknown adapter {name!r}")


def with_entropy_note(prompt: PromptBundle, seed: int) -> PromptBundle:
    """Observable-entropy variant: the sampling seed is written into the prompt."""
    return replace(prompt, entropy_note=f"Sampling seed: {seed}")
