"""Declarative predicates over case fields.

Ground-truth rows and gate rules are stored as YAML mappings of condition keys
to thresholds. All comparisons are strict unless the key says otherwise
(``*_ge`` / ``*_le``).
"""

from __future__ import annotations

from typing import Any, Callable, Mapping

SEVERE_FLAGS = frozenset({"AML", "SANCTIONS", "INSIDER"})


def _flags(case: Any) -> frozenset[str]:
    return frozenset(case.flags)


_PREDICATES: dict[str, Callable[[Any, Any], bool]] = {
    "risk_gt": lambda c, v: c.risk > v,
    "risk_lt": lambda c, v: c.risk < v,
    "risk_ge": lambda c, v: c.risk >= v,
    "risk_le": lambda c, v: c.risk <= v,
    "completeness_lt": lambda c, v: c.completeness < v,
    "completeness_ge": lambda c, v: c.completeness >= v,
    "amount_gt": lambda c, v: c.amount > v,
    "flags_min": lambda c, v: len(_flags(c)) >= v,
    "flags_max": lambda c, v: len(_flags(c)) <= v,
    "severe_min": lambda c, v: len(_flags(c) & SEVERE_FLAGS) >= v,
    "severe_max": lambda c, v: len(_flags(c) & SEVERE_FLAGS) <= v,
    "has_flag": lambda c, v: v in _flags(c),
    "any_flag": lambda c, v: bool(_flags(c) & set(v)),
    "no_flag": lambda c, v: not (_flags(c) & set(v)),
}

CONDITION_KEYS = frozenset(_PREDICATES)


def check_conditions(conditions: Mapping[str, Any]) -> None:
    unknown = set(conditions) - CONDITION_KEYS
    if unknown:
        raise ValueError(f"unknown condition keys: {sorted(unknown)}")


def matches(case: Any, conditions: Mapping[str, Any]) -> bool:
    """True iff every condition holds. An empty mapping always matches."""
    return all(_PREDICATES[k](case, v) for k, v in conditions.items())
