"""Fixtures shared by several test modules."""

from __future__ import annotations

from govharness.casegen import Case, GroundTruth
from govharness.decisions import Decision

GENERIC_DEFERRAL = (
    "The case requires further review due to the complexity of the situation. Additional information "
    "may be needed before a final determination can be made. The risk factors present warrant careful "
    "consideration."
)

K010_DEFERRAL = (
    "Hard gate K0_10 triggered: because the information completeness (0.112) falls below the minimum "
    "threshold of 0.15, the system is unable to confirm the legitimacy of the transaction. Due to this "
    "critical information gap, the case cannot be assessed and requires deferral pending verification of "
    "missing data. Specifically, additional information is needed to reduce the completeness risk and meet "
    "the minimum threshold criteria. A favorable resolution would be possible if the completeness score "
    "were raised above 0.15 through further documentation."
)


def make_case(
    *,
    risk: float = 0.5,
    completeness: float = 0.6,
    flags: tuple[str, ...] = (),
    amount: float = 10_000.0,
    task_type: str = "credit_approval",
    jurisdiction: str = "UK",
    case_id: str = "T-0001",
    index: int = 0,
    ground_truth: GroundTruth | None = None,
) -> Case:
    return Case(
        id=case_id,
        index=index,
        task_type=task_type,
        risk=risk,
        completeness=completeness,
        flags=frozenset(flags),
        amount=amount,
        jurisdiction=jurisdiction,
        tenure=3.0,
        counterparty_risk=0.2,
        ground_truth=ground_truth or GroundTruth(Decision.CONDITIONAL, False, "test"),
    )
