"""Governance-enforcement evaluation harness.

Generates seeded synthetic banking decision cases, runs them through a
text-only regime (R1) and a mechanically enforced regime (R2) over a pluggable
decision model, and computes governance metrics (CDL, DIU, GOR, FSR, FVS, ESD)
alongside task metrics and bootstrap statistics.
"""

__version__ = "0.1.0"
