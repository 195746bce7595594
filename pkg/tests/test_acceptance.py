"""Acceptance criteria, one test each. A PASS/FAIL line per criterion is printed
in the terminal summary (see conftest.py)."""

from __future__ import annotations

import math
import random
import time

import numpy as np
import pytest

from govharness.casegen import calibration_report, generate_cases
from govharness.decisions import Decision
from govharness.errors import PhaseOrderError
from govharness.gates import PRE_GATE_ORDER, evaluate_post_gate, evaluate_pre_gates, pre_rules, rule_by_id
from govharness.interventions import run_esd, run_fsr, run_fvs
from govharness.models import CountingModel, ScriptedSurrogate
from govharness.primitives import e3_commit, e3_reveal_verify
from govharness.regimes import AblationConfig, run_cell
from govharness.rules import matches
from govharness.runner import ExperimentConfig, run_experiment, run_sensitivity
from govharness.scoring import TAU_GRID, RationaleScore, compute_cdl, compute_diu, model_only, score_deferral, score_text
from govharness.stats import PairedSample, RatioData, bootstrap_delta, holm_bonferroni, mcc_multiclass

from helpers import GENERIC_DEFERRAL, K010_DEFERRAL, make_case

FLAGS = ("AML", "KYC", "SANCTIONS", "INSIDER", "CONCENTRATION")


class _Rec:
    def __init__(self, text, source):
        self.decision, self.source, self.rationale_text, self.case_id = Decision.DEFER, source, text, "X"


def test_ac01_golden_checklist_scores():
    t0 = time.perf_counter()
    ex1 = score_text(GENERIC_DEFERRAL)
    ex2 = score_deferral(_Rec(K010_DEFERRAL, "gate:K0_10"))
    elapsed = time.perf_counter() - t0
    assert (ex1.spec, ex1.expl, ex1.bshift) == (0.25, 0.45, 0.20)
    assert (ex2.spec, ex2.expl, ex2.bshift) == (1.0, 1.0, 1.0)
    assert ex1.geometric_mean == pytest.approx(0.283, abs=1e-3)
    assert elapsed < 1.0


def test_ac02_aggregation_identity():
    gms = [0.26, 0.31, 0.42, 0.18, 0.55, 0.29, 0.38]
    model = []
    for i, g in enumerate(gms):
        if i in (0, 3, 5):
            rest = math.sqrt(g**3 / 0.1)
            model.append(RationaleScore(0.1, rest, rest))
        else:
            x = max(0.3, g)
            model.append(RationaleScore(x, x, g**3 / x**2))
    scores = [RationaleScore(1.0, 1.0, 1.0, True)] * 8 + model
    assert compute_cdl(scores) == pytest.approx(0.200, abs=1e-3)
    assert compute_diu(scores) == pytest.approx(0.693, abs=1e-3)
    assert compute_cdl(model_only(scores)) == pytest.approx(0.429, abs=1e-3)
    assert compute_diu(model_only(scores)) == pytest.approx(0.341, abs=1e-3)


def test_ac03_gate_engine():
    t0 = time.perf_counter()
    rnd = random.Random(2024)
    rules = pre_rules()
    fired = dict.fromkeys(PRE_GATE_ORDER, 0)
    for _ in range(100_000):
        c = make_case(
            risk=rnd.random(),
            completeness=rnd.random(),
            flags=tuple(f for f in FLAGS if rnd.random() < 0.25),
            amount=rnd.choice((1e3, 2e5, 1.5e6)),
        )
        gd = evaluate_pre_gates(c, rules)
        hits = [r.id for r in rules if matches(c, r.when)]
        if gd is None:
            assert not hits
            post = evaluate_post_gate(c)
            if c.completeness < 0.3:
                assert post.decision is (Decision.ESCALATE if c.risk > 0.7 else Decision.DEFER)
            else:
                assert post is None
        else:
            assert gd.gate_id == hits[0]
            fired[gd.gate_id] += 1
    elapsed = time.perf_counter() - t0
    assert all(fired.values())

    # multi-match witnesses resolved by order
    w = make_case(risk=0.95, flags=("SANCTIONS", "AML"))
    assert evaluate_pre_gates(w).gate_id == "K0_6"
    assert evaluate_pre_gates(w, [rule_by_id("K0_12"), rule_by_id("K0_6")]).gate_id == "K0_12"

    # zero model calls for pre-gated cases
    counted = CountingModel(ScriptedSurrogate())
    cell = run_cell(generate_cases(300, 42), "R2", counted)
    gated = [r.case_id for r in cell.records if r.pre_gated]
    assert gated and all(counted.calls.get(cid, 0) == 0 for cid in gated)
    assert elapsed < 10.0


def test_ac04_calibration(baseline_cases):
    p = calibration_report(baseline_cases).pooled
    assert p.risk_mean == pytest.approx(0.50, abs=0.03)
    assert p.completeness_mean == pytest.approx(0.52, abs=0.03)
    assert p.flag_mean == pytest.approx(1.08, abs=0.15)
    assert p.gt_determinacy == pytest.approx(0.480, abs=0.05)
    cell = run_cell(baseline_cases, "R2", ScriptedSurrogate())
    assert cell.gor == pytest.approx(0.327, abs=0.05)
    assert cell.pregate_rate == pytest.approx(0.23, abs=0.05)


def test_ac05_directional_cdl_diu(baseline_cases):
    t0 = time.perf_counter()
    m = ScriptedSurrogate("vacuous-compliant")
    scored = {}
    for regime in ("R1", "R2"):
        recs = run_cell(baseline_cases, regime, m).records
        cases = {c.id: c for c in baseline_cases}
        scored[regime] = [score_deferral(r, case=cases[r.case_id]) for r in recs if r.decision is Decision.DEFER]
    for tau in TAU_GRID:
        assert compute_cdl(scored["R2"], tau) < compute_cdl(scored["R1"], tau), tau
    assert compute_diu(scored["R2"]) > compute_diu(scored["R1"])
    assert time.perf_counter() - t0 < 120


def test_ac06_fvs_floor_and_gated_fsr(baseline_cases):
    m = ScriptedSurrogate()
    base = run_cell(baseline_cases, "R2", m).records
    trials, _ = run_fvs(baseline_cases, "R2", m, base, q=0.2, iota_target=0.10)
    eligible = [t for t in trials if t.baseline_decision not in (Decision.DEFER, Decision.ESCALATE)]
    # K0_6 is the only earlier gate that can pre-empt K0_10 with a non-conservative outcome
    eligible = [t for t in eligible if t.degraded_source != "gate:K0_6"]
    assert eligible and all(t.flagged for t in eligible)
    pairs, _ = run_fsr(baseline_cases, "R2", ScriptedSurrogate("framing-sensitive-mixer"))
    gated = [p for p in pairs if p.base_record.pre_gated]
    assert gated and sum(p.changed for p in gated) == 0


def test_ac07_e3_integrity(baseline_cases):
    rnd = random.Random(7)
    for _ in range(10_000):
        seed, nonce = rnd.getrandbits(63), rnd.getrandbits(63)
        assert e3_reveal_verify(e3_commit(seed, nonce), seed, nonce)
    m = ScriptedSurrogate("deterministic")
    reached = [r.case_id for r in run_cell(baseline_cases, "R2", m).records if not r.pre_gated]
    for k in (1, 4):
        tampered = reached[:k]
        probes, _ = run_esd(baseline_cases, "R2", m, (104729, 224737, 350377), tamper_ids=tampered)
        assert sorted(p.case_id for p in probes if p.integrity_failures) == sorted(tampered)
    with pytest.raises(PhaseOrderError):
        e3_reveal_verify(e3_commit(1, 2), 1, 2, scores_final=False)


def test_ac08_statistics_oracles():
    m = np.zeros((5, 5), dtype=int)
    m[0, 0], m[1, 1], m[0, 1], m[1, 0] = 2, 2, 1, 1
    assert abs(mcc_multiclass(m) - 1 / 3) < 1e-9
    assert holm_bonferroni([0.01, 0.04, 0.03]) == pytest.approx([0.03, 0.06, 0.06], abs=1e-12)
    rnd = np.random.default_rng(0)
    base = rnd.normal(0, 1, 300)
    ids = tuple(map(str, range(300)))
    sample = PairedSample(ids, RatioData.mean_of(base), RatioData.mean_of(base + rnd.normal(0.5, 0.1, 300)))
    a = bootstrap_delta(sample, b=10_000, seed=42)
    b = bootstrap_delta(sample, b=10_000, seed=42)
    assert a.lower <= 0.5 <= a.upper
    assert a.upper - a.lower == pytest.approx(4 * 0.1 / math.sqrt(300), rel=0.25)
    assert (a.lower, a.upper) == (b.lower, b.upper)


def test_ac09_ablation_semantics(baseline_cases, tmp_path):
    a4 = run_cell(baseline_cases, "R2", ScriptedSurrogate(), AblationConfig(disable_defer=True)).records
    assert not any(r.decision is Decision.DEFER for r in a4)
    from govharness.runner import cell_report

    rep = cell_report(a4, {c.id: c for c in baseline_cases}, condition="S0")
    assert rep.cdl is None and rep.diu is None

    degraded = ScriptedSurrogate("degraded")
    cases = {c.id: c for c in baseline_cases}
    cdl = {}
    for name, abl in (("control", AblationConfig()), ("A1", AblationConfig(disable_i6q=True))):
        recs = run_cell(baseline_cases, "R2", degraded, abl).records
        cdl[name] = compute_cdl([score_deferral(r, case=cases[r.case_id]) for r in recs if r.decision is Decision.DEFER])
    assert cdl["A1"] > cdl["control"]


def test_ac10_sensitivity_smoothness(tmp_path):
    target = [-0.017, -0.007, 0.0, 0.010, 0.017]
    rows = run_sensitivity(ExperimentConfig(out_dir=str(tmp_path)))
    deltas = [r["delta_gt_determinacy"] for r in rows]
    for got, want in zip(deltas, target):
        assert abs(got - want) <= 0.02
    dets = [r["gt_determinacy"] for r in rows]
    assert all(abs(b - a) <= 0.02 for a, b in zip(dets, dets[1:]))


@pytest.mark.slow
def test_ac11_end_to_end_determinism(tmp_path):
    first = run_experiment(ExperimentConfig(out_dir=str(tmp_path / "a")))
    second = run_experiment(ExperimentConfig(out_dir=str(tmp_path / "b")))
    assert len(first.cells) == 8 and first.complete
    records = sorted(k for k in first.manifest["files"] if k.startswith("records/"))
    assert len(records) == 8
    for rel in records:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    assert first.manifest["files"] == second.manifest["files"]
    assert first.manifest["bundle_digest"] == second.manifest["bundle_digest"]
