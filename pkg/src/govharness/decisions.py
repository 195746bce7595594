from __future__ import annotations

from enum import Enum


class Decision(str, Enum):
    APPROVE = "APPROVE"
    CONDITIONAL = "CONDITIONAL"
    ESCALATE = "ESCALATE"
    DEFER = "DEFER"
    DECLINE = "DECLINE"

    def __str__(self) -> str:
        return self.value


# Fixed class order for confusion matrices and reports.
DECISIONS: tuple[Decision, ...] = tuple(Decision)
CONSERVATIVE = frozenset({Decision.DEFER, Decision.ESCALATE})


def parse_decision(value: str | Decision) -> Decision:
    if isinstance(value, Decision):
        return value
    try:
        return Decision(str(value).strip().upper())
    except ValueError:
        raise ValueError(f"unknown decision class: {value!r}") from None
