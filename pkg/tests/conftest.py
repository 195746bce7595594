from __future__ import annotations

import pytest

from govharness.casegen import generate_cases


@pytest.fixture(scope="session")
def baseline_cases():
    return generate_cases(300, 42)


@pytest.fixture(scope="session")
def small_cases():
    return generate_cases(60, 7)


ACCEPTANCE = {
    "test_ac01_golden_checklist_scores": "1 golden checklist scores",
    "test_ac02_aggregation_identity": "2 aggregation identity",
    "test_ac03_gate_engine": "3 gate engine over 1e5 cases",
    "test_ac04_calibration": "4 calibration moments and GOR",
    "test_ac05_directional_cdl_diu": "5 CDL/DIU direction at every tau",
    "test_ac06_fvs_floor_and_gated_fsr": "6 mechanical FVS floor, gated FSR = 0",
    "test_ac07_e3_integrity": "7 commit-reveal integrity",
    "test_ac08_statistics_oracles": "8 statistics oracles",
    "test_ac09_ablation_semantics": "9 ablation semantics",
    "test_ac10_sensitivity_smoothness": "10 sensitivity smoothness",
    "test_ac11_end_to_end_determinism": "11 end-to-end determinism",
}


def pytest_terminal_summary(terminalreporter):
    outcomes = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            name = getattr(rep, "nodeid", "").rsplit("::", 1)[-1]
            if name not in ACCEPTANCE:
                continue
            if rep.when == "call" or key == "error":
                outcomes[name] = "PASS" if key == "passed" else "FAIL"
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name, label in ACCEPTANCE.items():
        if name in outcomes:
            terminalreporter.write_line(f"{outcomes[name]}  criterion {label}")
