"""The non-gate R2 primitives.

* I6Q checks pro/con argument length and lexical diversity, with a bounded
  re-prompt loop.
* CEFL generates a fixed-size candidate set before any scoring happens and
  selects deterministically.
* E3 commits to the candidate-sampling seed with SHA-256 before scoring and
  reveals it only once every score is final.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Sequence

from .decisions import Decision, parse_decision
from .errors import IntegrityError, PhaseOrderError

MIN_ARGUMENT_TOKENS = 10
MIN_TTR = 0.4
MAX_RETRIES = 2
N_CANDIDATES = 3

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def compute_ttr(text: str) -> float:
    tokens = tokenize(text)
    if not tokens:
        return 0.0
    return len(set(tokens)) / len(tokens)


@dataclass(frozen=True)
class StructuredRationale:
    decision: Decision
    rationale_text: str
    pro_arguments: tuple[str, ...] = ()
    con_arguments: tuple[str, ...] = ()
    free_text: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "decision", parse_decision(self.decision))
        object.__setattr__(self, "pro_arguments", tuple(self.pro_arguments))
        object.__setattr__(self, "con_arguments", tuple(self.con_arguments))

    @property
    def arguments(self) -> tuple[str, ...]:
        return self.pro_arguments + self.con_arguments

    def to_dict(self) -> dict[str, Any]:
        return {
            "decision": self.decision.value,
            "rationale_text": self.rationale_text,
            "pro_arguments": list(self.pro_arguments),
            "con_arguments": list(self.con_arguments),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any], free_text: bool = False) -> "StructuredRationale":
        return cls(
            decision=parse_decision(d["decision"]),
            rationale_text=str(d.get("rationale_text", d.get("rationale", ""))),
            pro_arguments=tuple(str(a) for a in d.get("pro_arguments", ())),
            con_arguments=tuple(str(a) for a in d.get("con_arguments", ())),
            free_text=free_text,
        )


# ------------------------------------------------------------------------ I6Q


class I6QFailure(str, Enum):
    TOO_SHORT = "too_short"
    LOW_DIVERSITY = "low_diversity"


@dataclass(frozen=True)
class I6QResult:
    passed: bool
    failures: tuple[tuple[int, I6QFailure], ...] = ()
    retry_count: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "failures": [[i, f.value] for i, f in self.failures],
            "retry_count": self.retry_count,
        }


def i6q_check(rationale: StructuredRationale, retry_count: int = 0) -> I6QResult:
    """Check every pro/con argument for length and type-token ratio.

    Arguments are indexed pro first, then con. A free-text rationale with no
    arguments passes vacuously; a structured one must carry at least one.
    """
    args = rationale.arguments
    failures: list[tuple[int, I6QFailure]] = []
    if not args and not rationale.free_text:
        failures.append((-1, I6QFailure.TOO_SHORT))
    for i, arg in enumerate(args):
        if len(tokenize(arg)) < MIN_ARGUMENT_TOKENS:
            failures.append((i, I6QFailure.TOO_SHORT))
        elif compute_ttr(arg) < MIN_TTR:
            failures.append((i, I6QFailure.LOW_DIVERSITY))
    return I6QResult(not failures, tuple(failures), retry_count)


def forced_escalation(result: I6QResult) -> StructuredRationale:
    reasons = ", ".join(f"argument {i}: {f.value}" for i, f in result.failures) or "no arguments"
    text = (
        f"I6Q enforcement: the rationale failed the quality check {result.retry_count} times "
        f"(minimum {MIN_ARGUMENT_TOKENS} tokens and type-token ratio {MIN_TTR:.3f} per argument; "
        f"last failures: {reasons}). Because an auditable rationale could not be produced, "
        "the case is escalated pending human review."
    )
    return StructuredRationale(Decision.ESCALATE, text)


def i6q_enforce(
    first: Callable[[], StructuredRationale],
    reprompt: Callable[[int, I6QResult], StructuredRationale],
    *,
    max_retries: int = MAX_RETRIES,
) -> tuple[StructuredRationale, I6QResult, bool]:
    """Run the I6Q loop.

    ``first`` produces the initial rationale; ``reprompt(k, last_result)``
    produces the k-th revision. The case is forced to ESCALATE once
    ``max_retries`` checks have failed. Returns ``(rationale, result, forced)``;
    ``result.retry_count`` is the number of failed checks (0..max_retries).
    """
    rationale = first()
    result = i6q_check(rationale)
    failures = 0
    while not result.passed:
        failures += 1
        if failures >= max_retries:
            result = I6QResult(False, result.failures, failures)
            return forced_escalation(result), result, True
        rationale = reprompt(failures, result)
        result = i6q_check(rationale, failures)
    return rationale, I6QResult(True, (), failures), False


# ------------------------------------------------------------------------- E3


def _encode(seed: int, nonce: int) -> bytes:
    # canonical, length-prefixed big-endian encoding so (seed, nonce) pairs never collide
    def enc(x: int) -> bytes:
        x = int(x)
        sign = b"-" if x < 0 else b"+"
        body = abs(x).to_bytes(max(1, (abs(x).bit_length() + 7) // 8), "big")
        return sign + len(body).to_bytes(2, "big") + body

    return b"govharness.e3.v1|" + enc(seed) + enc(nonce)


def commitment_digest(seed: int, nonce: int) -> str:
    return hashlib.sha256(_encode(seed, nonce)).hexdigest()


@dataclass
class EntropyCommitment:
    commitment: str
    revealed_seed: int | None = None
    revealed_nonce: int | None = None
    verified: bool | None = None

    @property
    def revealed(self) -> bool:
        return self.revealed_seed is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "commitment": self.commitment,
            "revealed_seed": self.revealed_seed,
            "revealed_nonce": self.revealed_nonce,
            "verified": self.verified,
        }


def e3_commit(seed: int, nonce: int) -> EntropyCommitment:
    return EntropyCommitment(commitment_digest(seed, nonce))


def e3_reveal_verify(c: EntropyCommitment, seed: int, nonce: int, *, scores_final: bool = True) -> bool:
    if not scores_final:
        raise PhaseOrderError("entropy revealed before candidate scores were finalized")
    c.revealed_seed = int(seed)
    c.revealed_nonce = int(nonce)
    c.verified = commitment_digest(seed, nonce) == c.commitment
    return c.verified


# ----------------------------------------------------------------------- CEFL


class Phase(Enum):
    INIT = 0
    COMMITTED = 1
    GENERATED = 2
    SCORED = 3
    SELECTED = 4
    REVEALED = 5


@dataclass
class CasePhases:
    """Per-case phase tracker: commit -> generate -> score -> select -> reveal."""

    phase: Phase = Phase.INIT
    entropy_observable: bool = False
    history: list[str] = field(default_factory=list)

    def advance(self, to: Phase) -> None:
        expected = Phase(self.phase.value + 1)
        if self.entropy_observable and self.phase is Phase.INIT and to is Phase.GENERATED:
            expected = Phase.GENERATED
        if to is not expected:
            raise PhaseOrderError(f"cannot enter {to.name} from {self.phase.name}")
        self.phase = to
        self.history.append(to.name)


def candidate_seed(entropy_seed: int, index: int) -> int:
    h = hashlib.sha256(f"cefl|{int(entropy_seed)}|{index}".encode()).digest()
    return int.from_bytes(h[:6], "big")


@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple[StructuredRationale, ...]
    generation_seeds: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.candidates) != len(self.generation_seeds):
            raise IntegrityError("one generation seed per candidate is required")

    @property
    def spread(self) -> float:
        k = len(self.candidates)
        if k < 2:
            return 0.0
        return (len({c.decision for c in self.candidates}) - 1) / (k - 1)


def cefl_generate(
    generate_one: Callable[[int, int], StructuredRationale],
    commitment: EntropyCommitment | None,
    entropy_seed: int,
    *,
    k: int = N_CANDIDATES,
    phases: CasePhases | None = None,
) -> CandidateSet:
    """Build all ``k`` candidates before scoring.

    ``generate_one(index, candidate_seed)`` makes one model call. The committed
    seed must still be hidden; ``commitment=None`` is only allowed when the
    phase tracker marks entropy as observable (the A3 ablation).
    """
    if commitment is None:
        if phases is None or not phases.entropy_observable:
            raise IntegrityError("candidate generation requires an unrevealed entropy commitment")
    elif commitment.revealed:
        raise IntegrityError("entropy was revealed before candidate generation")
    seeds = tuple(candidate_seed(entropy_seed, i) for i in range(k))
    cands = tuple(generate_one(i, s) for i, s in enumerate(seeds))
    if phases is not None:
        phases.advance(Phase.GENERATED)
    return CandidateSet(cands, seeds)


def cefl_select(
    candidates: CandidateSet,
    scorer: Callable[[StructuredRationale], float],
    *,
    phases: CasePhases | None = None,
) -> tuple[int, tuple[float, ...]]:
    """Score every candidate, then pick the argmax (lowest index on ties)."""
    if len(candidates.candidates) != N_CANDIDATES:
        raise IntegrityError(f"expected {N_CANDIDATES} candidates, got {len(candidates.candidates)}")
    scores = tuple(float(scorer(c)) for c in candidates.candidates)
    if phases is not None:
        phases.advance(Phase.SCORED)
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    if phases is not None:
        phases.advance(Phase.SELECTED)
    return best, scores


def spread_of(decisions: Sequence[Decision]) -> float:
    k = len(decisions)
    return 0.0 if k < 2 else (len(set(decisions)) - 1) / (k - 1)
