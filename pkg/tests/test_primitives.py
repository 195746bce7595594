from __future__ import annotations

import hashlib
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from govharness.decisions import Decision
from govharness.errors import IntegrityError, PhaseOrderError
from govharness.primitives import (
    CandidateSet,
    CasePhases,
    I6QFailure,
    Phase,
    StructuredRationale,
    candidate_seed,
    cefl_generate,
    cefl_select,
    commitment_digest,
    compute_ttr,
    e3_commit,
    e3_reveal_verify,
    i6q_check,
    i6q_enforce,
    spread_of,
    tokenize,
)

DIVERSE = "the applicant has stable income documented across three consecutive audited annual statements"
SHORT = "income is stable and documented well"


def rationale(decision="APPROVE", pro=(DIVERSE,), con=(DIVERSE,)):
    return StructuredRationale(Decision(decision), "text", tuple(pro), tuple(con))


@pytest.mark.parametrize(
    "text,expected",
    [("", 0.0), ("risk risk risk risk", 0.25), ("the risk is risky because of the risk", 0.75), ("Risk, RISK; risk!", 1 / 3)],
)
def test_ttr(text, expected):
    assert compute_ttr(text) == pytest.approx(expected)


def test_tokenizer_lowercases_and_splits():
    assert tokenize("K0_10: Risk-score 0.91!") == ["k0", "10", "risk", "score", "0", "91"]


def test_i6q_passes_diverse_arguments():
    assert len(tokenize(DIVERSE)) >= 10
    res = i6q_check(rationale())
    assert res.passed and res.failures == ()


def test_i6q_too_short_at_index():
    assert len(tokenize(SHORT)) == 6
    res = i6q_check(rationale(pro=(DIVERSE,), con=(SHORT,)))
    assert not res.passed
    assert res.failures == ((1, I6QFailure.TOO_SHORT),)


def test_i6q_low_diversity():
    text = "risk flag gate case " * 3
    assert len(tokenize(text)) == 12 and compute_ttr(text) == pytest.approx(1 / 3)
    res = i6q_check(rationale(pro=(text,), con=()))
    assert res.failures == ((0, I6QFailure.LOW_DIVERSITY),)


def test_structured_rationale_needs_arguments():
    assert not i6q_check(rationale(pro=(), con=())).passed
    free = StructuredRationale(Decision.DEFER, "text", free_text=True)
    assert i6q_check(free).passed


def test_enforce_first_try():
    out, res, forced = i6q_enforce(lambda: rationale(), lambda k, r: pytest.fail("no reprompt expected"))
    assert not forced and res.passed and res.retry_count == 0 and out.decision is Decision.APPROVE


def test_enforce_retry_then_pass():
    out, res, forced = i6q_enforce(lambda: rationale(con=(SHORT,)), lambda k, r: rationale("DEFER"))
    assert not forced and res.retry_count == 1 and out.decision is Decision.DEFER


def test_enforce_forces_escalation_after_two_failures():
    calls = []

    def reprompt(k, last):
        calls.append(k)
        return rationale(con=(SHORT,))

    out, res, forced = i6q_enforce(lambda: rationale(con=(SHORT,)), reprompt)
    assert forced and out.decision is Decision.ESCALATE
    assert res.retry_count == 2 and not res.passed
    assert calls == [1]
    assert "I6Q" in out.rationale_text


def test_transport_error_surfaces_distinctly():
    from govharness.errors import TransportError

    def boom():
        raise TransportError("down")

    with pytest.raises(TransportError):
        i6q_enforce(boom, lambda k, r: rationale())


def test_commit_round_trip():
    c = e3_commit(12345, 99)
    assert len(c.commitment) == 64 and c.commitment == c.commitment.lower()
    assert "12345" not in c.commitment
    assert e3_reveal_verify(c, 12345, 99) is True
    assert c.verified and c.revealed_seed == 12345


def test_commit_detects_wrong_seed():
    c = e3_commit(12345, 99)
    assert e3_reveal_verify(c, 12346, 99) is False
    assert c.verified is False


def test_reveal_before_scores_final():
    with pytest.raises(PhaseOrderError):
        e3_reveal_verify(e3_commit(1, 2), 1, 2, scores_final=False)


def test_commitment_encoding_is_injective():
    # naive concatenation would collide: "12" + "3" == "1" + "23"
    assert commitment_digest(12, 3) != commitment_digest(1, 23)
    assert commitment_digest(-5, 3) != commitment_digest(5, 3)


def test_digest_is_sha256():
    d = commitment_digest(7, 8)
    assert len(bytes.fromhex(d)) == hashlib.sha256().digest_size


def test_phase_order():
    p = CasePhases()
    for ph in (Phase.COMMITTED, Phase.GENERATED, Phase.SCORED, Phase.SELECTED, Phase.REVEALED):
        p.advance(ph)
    assert p.history == ["COMMITTED", "GENERATED", "SCORED", "SELECTED", "REVEALED"]
    q = CasePhases()
    q.advance(Phase.COMMITTED)
    with pytest.raises(PhaseOrderError):
        q.advance(Phase.REVEALED)


def test_observable_entropy_skips_commit():
    p = CasePhases(entropy_observable=True)
    p.advance(Phase.GENERATED)
    assert p.phase is Phase.GENERATED
    with pytest.raises(PhaseOrderError):
        CasePhases().advance(Phase.GENERATED)


def _gen(decisions):
    return lambda i, s: StructuredRationale(decisions[i], f"candidate {i}", (DIVERSE,), (DIVERSE,))


def test_generate_requires_hidden_commitment():
    with pytest.raises(IntegrityError):
        cefl_generate(_gen([Decision.APPROVE] * 3), None, 1)
    c = e3_commit(1, 2)
    e3_reveal_verify(c, 1, 2)
    with pytest.raises(IntegrityError):
        cefl_generate(_gen([Decision.APPROVE] * 3), c, 1)


def test_generate_uses_candidate_seeds():
    seen = []

    def gen(i, s):
        seen.append((i, s))
        return StructuredRationale(Decision.APPROVE, "x", (DIVERSE,))

    cs = cefl_generate(gen, e3_commit(5, 6), 5)
    assert seen == [(i, candidate_seed(5, i)) for i in range(3)]
    assert cs.generation_seeds == tuple(s for _, s in seen)
    assert len(set(cs.generation_seeds)) == 3


def test_spread_values():
    D = Decision
    assert spread_of([D.APPROVE, D.DEFER, D.DECLINE]) == 1.0
    assert spread_of([D.APPROVE, D.APPROVE, D.DECLINE]) == 0.5
    assert spread_of([D.APPROVE] * 3) == 0.0
    cs = CandidateSet(tuple(StructuredRationale(d, "x") for d in (D.APPROVE, D.DEFER, D.DECLINE)), (1, 2, 3))
    assert cs.spread == 1.0


def _set():
    return CandidateSet(tuple(StructuredRationale(Decision.APPROVE, str(i)) for i in range(3)), (1, 2, 3))


@pytest.mark.parametrize("scores,expected", [((0.2, 0.9, 0.5), 1), ((0.5, 0.5, 0.1), 0), ((0.1, 0.1, 0.1), 0)])
def test_select_argmax_lowest_index(scores, expected):
    best, seen = cefl_select(_set(), lambda c: scores[int(c.rationale_text)])
    assert best == expected and seen == scores


def test_select_is_deterministic():
    scorer = lambda c: len(c.rationale_text) + int(c.rationale_text) * 0.1
    assert cefl_select(_set(), scorer) == cefl_select(_set(), scorer)


def test_select_rejects_wrong_count():
    two = CandidateSet(_set().candidates[:2], (1, 2))
    with pytest.raises(IntegrityError):
        cefl_select(two, lambda c: 0.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(list(Decision)), min_size=3, max_size=3), st.integers(0, 2**40))
def test_every_candidate_scored(decisions, seed):
    phases = CasePhases()
    phases.advance(Phase.COMMITTED)
    cs = cefl_generate(_gen(decisions), e3_commit(seed, 1), seed, phases=phases)
    scored = []
    best, scores = cefl_select(cs, lambda c: scored.append(c) or 0.5, phases=phases)
    assert scored == list(cs.candidates)
    assert len(scores) == 3 and best == 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.text(alphabet="abcdefg ", min_size=1, max_size=12), min_size=1, max_size=30), st.integers())
def test_ttr_invariant_under_shuffle(words, seed):
    text = " ".join(words)
    toks = tokenize(text)
    random.Random(seed).shuffle(toks)
    assert compute_ttr(" ".join(toks)) == pytest.approx(compute_ttr(text))


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=80), st.text(alphabet="abcdefghij ", max_size=80))
def test_appending_never_makes_argument_too_short(arg, extra):
    before = i6q_check(rationale(pro=(arg,), con=()))
    after = i6q_check(rationale(pro=(arg + " " + extra,), con=()))
    short_before = (0, I6QFailure.TOO_SHORT) in before.failures
    short_after = (0, I6QFailure.TOO_SHORT) in after.failures
    assert not (not short_before and short_after)


@settings(max_examples=300, deadline=None)
@given(st.integers(-(2**63), 2**63), st.integers(0, 2**63), st.integers(-(2**63), 2**63))
def test_commit_reveal_property(seed, nonce, other):
    c = e3_commit(seed, nonce)
    assert e3_reveal_verify(c, other, nonce) is (other == seed)
