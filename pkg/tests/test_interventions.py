from __future__ import annotations

from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from govharness.casegen import TASK_TYPES
from govharness.decisions import CONSERVATIVE, Decision
from govharness.errors import ConfigError, ContractError
from govharness.interventions import (
    DegradationTrial,
    EntropyProbe,
    FramingPair,
    compute_fsr,
    esd_from_subscores,
    leaks,
    probe_seeds,
    run_esd,
    run_fsr,
    run_fvs,
    seed_renderings,
    select_drops,
)
from govharness.models import ScriptedSurrogate
from govharness.regimes import DecisionRecord, run_cell

SEEDS = (104729, 224737, 350377)


def rec(case_id, decision, source="model"):
    return DecisionRecord(case_id, "R2", Decision(decision), "text", source)


def test_fsr_one_of_four():
    pairs = [
        FramingPair("a", rec("a", "APPROVE"), rec("a", "APPROVE")),
        FramingPair("b", rec("b", "DEFER"), rec("b", "DEFER")),
        FramingPair("c", rec("c", "APPROVE"), rec("c", "CONDITIONAL")),
        FramingPair("d", rec("d", "DECLINE", "gate:K0_6"), rec("d", "DECLINE", "gate:K0_6")),
    ]
    assert compute_fsr(pairs) == 0.25


def test_fsr_contract():
    with pytest.raises(ContractError):
        compute_fsr([])
    with pytest.raises(ContractError):
        FramingPair("a", rec("a", "DEFER"), rec("b", "DEFER"))


def test_fsr_gated_pairs_never_change(baseline_cases):
    pairs, fsr = run_fsr(baseline_cases, "R2", ScriptedSurrogate("framing-sensitive-mixer"))
    gated = [p for p in pairs if p.base_record.pre_gated]
    assert gated and not any(p.changed for p in gated)
    assert len(pairs) == len(baseline_cases)
    assert fsr == sum(p.changed for p in pairs) / len(pairs)


def test_mixer_is_framing_sensitive(baseline_cases):
    _, fsr = run_fsr(baseline_cases, "R1", ScriptedSurrogate("framing-sensitive-mixer"))
    assert fsr > 0


def test_trial_flag_definition():
    D = Decision
    assert DegradationTrial("a", "credit", D.APPROVE, D.DEFER).flagged
    assert not DegradationTrial("a", "credit", D.DEFER, D.DEFER).flagged
    assert not DegradationTrial("a", "credit", D.APPROVE, D.DECLINE).flagged
    assert DegradationTrial("a", "credit", D.CONDITIONAL, D.ESCALATE).flagged


def test_select_drops_count_and_strata(baseline_cases):
    drops = select_drops(baseline_cases, 0.2, 42)
    assert len(drops) == 60 and len({c.id for c in drops}) == 60
    have = Counter(c.task_type for c in baseline_cases)
    got = Counter(c.task_type for c in drops)
    for t in have:
        assert abs(got[t] - 60 * have[t] / 300) < 1
    assert select_drops(baseline_cases, 0.2, 42) == drops
    assert select_drops(baseline_cases, 0.2, 43) != drops


def test_select_drops_too_few():
    from govharness.casegen import generate_cases

    with pytest.raises(ConfigError):
        select_drops(generate_cases(4, 1), 0.2)


@settings(max_examples=40, deadline=None)
@given(st.integers(5, 120), st.floats(0.05, 0.9), st.integers(0, 1000))
def test_select_drops_properties(n, q, seed):
    from govharness.casegen import generate_cases

    cases = generate_cases(n, seed)
    k = int(q * n)
    if k < 1:
        with pytest.raises(ConfigError):
            select_drops(cases, q, seed)
        return
    drops = select_drops(cases, q, seed)
    assert len(drops) == k
    assert {c.task_type for c in drops} <= set(TASK_TYPES)
    ids = {c.id for c in cases}
    assert all(c.id in ids for c in drops)


def test_fvs_r2_flags_every_non_conservative_drop(baseline_cases):
    m = ScriptedSurrogate()
    base = run_cell(baseline_cases, "R2", m).records
    trials, fvs = run_fvs(baseline_cases, "R2", m, base)
    assert len(trials) == 60 and fvs == sum(t.flagged for t in trials) / 60
    eligible = [t for t in trials if t.baseline_decision not in CONSERVATIVE]
    assert eligible
    for t in eligible:
        if t.degraded_source == "gate:K0_6":
            continue
        assert t.flagged and t.degraded_source in ("gate:K0_7", "gate:K0_8", "gate:K0_10")


def test_fvs_needs_baseline(baseline_cases):
    with pytest.raises(ContractError):
        run_fvs(baseline_cases, "R2", ScriptedSurrogate(), [])


def test_seed_renderings():
    assert seed_renderings(104729) == ["104729", "19919"]
    assert seed_renderings(123) == []
    assert seed_renderings(4096) == ["4096", "1000"]


def test_leak_detection_respects_token_boundaries():
    assert leaks("sampling seed was 104729.", [104729])
    assert leaks("hex 19919 appeared", [104729])
    assert not leaks("account 1104729 is unrelated", [104729])
    assert not leaks("values 0.500 and 12", [104729])


def test_esd_subscore_average():
    assert esd_from_subscores(0.21, 0.0, 0.0) == pytest.approx(0.07)
    with pytest.raises(ContractError):
        esd_from_subscores(1.2, 0, 0)


def test_probe_needs_three_seeds():
    with pytest.raises(ContractError):
        EntropyProbe("a", (Decision.DEFER,), 0, 0)


def test_esd_seed_validation(small_cases):
    m = ScriptedSurrogate()
    with pytest.raises(ConfigError):
        run_esd(small_cases, "R2", m, (1, 1, 2))
    with pytest.raises(ConfigError):
        run_esd(small_cases, "R2", m, (1, 2))


def test_probe_seeds_are_per_case(small_cases):
    ps = probe_seeds(SEEDS[0], small_cases)
    assert len(set(ps.values())) == len(small_cases)
    assert probe_seeds(SEEDS[0], small_cases) == ps


def test_esd_deterministic_profile_has_no_exploit(small_cases):
    _, res = run_esd(small_cases, "R2", ScriptedSurrogate("deterministic"), SEEDS)
    assert res.e_exploit == 0 and res.e_leakage == 0 and res.e_integrity == 0
    assert res.integrity_applicable and res.esd == 0


def test_esd_r1_integrity_not_applicable(small_cases):
    probes, res = run_esd(small_cases, "R1", ScriptedSurrogate(), SEEDS)
    assert not res.integrity_applicable and res.e_integrity == 0
    assert not any(p.integrity_applicable for p in probes)


def test_esd_tampering_detected(baseline_cases):
    m = ScriptedSurrogate("deterministic")
    base = run_cell(baseline_cases, "R2", m).records
    ids = [r.case_id for r in base if not r.pre_gated][:3]
    probes, res = run_esd(baseline_cases, "R2", m, SEEDS, tamper_ids=ids)
    assert res.e_integrity == pytest.approx(3 / 300)
    assert {p.case_id for p in probes if p.integrity_failures} == set(ids)
    assert all(p.integrity_failures == 1 for p in probes if p.case_id in ids)
