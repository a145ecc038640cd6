"""CVSS v3.1 base metrics and the exploitability / impact subscores.

Only the two subscores are needed downstream: exploitability drives
transition probabilities and impact drives rewards. The full base score is
provided for completeness and for cross-checking against public calculators.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from decimal import ROUND_CEILING, Decimal
from typing import Iterator

METRICS = ("AV", "AC", "PR", "UI", "S", "C", "I", "A")

ALLOWED = {
    "AV": ("N", "A", "L", "P"),
    "AC": ("L", "H"),
    "PR": ("N", "L", "H"),
    "UI": ("N", "R"),
    "S": ("U", "C"),
    "C": ("N", "L", "H"),
    "I": ("N", "L", "H"),
    "A": ("N", "L", "H"),
}

AV_WEIGHT = {"N": 0.85, "A": 0.62, "L": 0.55, "P": 0.2}
AC_WEIGHT = {"L": 0.77, "H": 0.44}
UI_WEIGHT = {"N": 0.85, "R": 0.62}
CIA_WEIGHT = {"N": 0.0, "L": 0.22, "H": 0.56}
# Privileges Required is the only weight that depends on scope.
PR_WEIGHT = {
    "U": {"N": 0.85, "L": 0.62, "H": 0.27},
    "C": {"N": 0.85, "L": 0.68, "H": 0.5},
}

VECTOR_NAMES = {"N": "network", "A": "adjacent", "L": "local", "P": "physical"}

EXPLOITABILITY_MAX = 3.9
IMPACT_MAX = 6.1


@dataclass(frozen=True, order=True)
class CvssVector:
    attack_vector: str = "N"
    attack_complexity: str = "L"
    privileges_required: str = "N"
    user_interaction: str = "N"
    scope: str = "U"
    confidentiality: str = "H"
    integrity: str = "H"
    availability: str = "H"

    def __post_init__(self):
        for metric, value in zip(METRICS, self.codes()):
            if value not in ALLOWED[metric]:
                raise ValueError(
                    f"invalid CVSS {metric} value {value!r}; allowed: {', '.join(ALLOWED[metric])}"
                )

    def codes(self) -> tuple[str, ...]:
        return (
            self.attack_vector,
            self.attack_complexity,
            self.privileges_required,
            self.user_interaction,
            self.scope,
            self.confidentiality,
            self.integrity,
            self.availability,
        )

    @classmethod
    def parse(cls, text: str) -> CvssVector:
        """Parse ``AV:N/AC:L/...``; a leading ``CVSS:3.x/`` prefix is accepted."""
        parts = [p for p in text.strip().split("/") if p]
        if parts and parts[0].upper().startswith("CVSS:"):
            parts = parts[1:]
        found: dict[str, str] = {}
        for part in parts:
            key, sep, value = part.partition(":")
            key = key.strip().upper()
            if not sep or key not in ALLOWED:
                raise ValueError(f"malformed CVSS component {part!r}")
            if key in found:
                raise ValueError(f"duplicate CVSS metric {key}")
            found[key] = value.strip().upper()
        missing = [m for m in METRICS if m not in found]
        if missing:
            raise ValueError(f"CVSS vector missing metrics: {', '.join(missing)}")
        return cls(*(found[m] for m in METRICS))

    def __str__(self) -> str:
        return "/".join(f"{m}:{v}" for m, v in zip(METRICS, self.codes()))

    @property
    def is_local(self) -> bool:
        """Local and physical vectors need a foothold on the target itself."""
        return self.attack_vector in ("L", "P")

    @property
    def vector_name(self) -> str:
        return VECTOR_NAMES[self.attack_vector]


def exploitability_score(v: CvssVector) -> float:
    """8.22 x AV x AC x PR x UI, unrounded."""
    return (
        8.22
        * AV_WEIGHT[v.attack_vector]
        * AC_WEIGHT[v.attack_complexity]
        * PR_WEIGHT[v.scope][v.privileges_required]
        * UI_WEIGHT[v.user_interaction]
    )


def impact_subscore_iss(v: CvssVector) -> float:
    return 1.0 - (
        (1.0 - CIA_WEIGHT[v.confidentiality])
        * (1.0 - CIA_WEIGHT[v.integrity])
        * (1.0 - CIA_WEIGHT[v.availability])
    )


def impact_score(v: CvssVector) -> float:
    """Scope-dependent impact subscore, floored at zero, unrounded."""
    iss = impact_subscore_iss(v)
    if v.scope == "U":
        impact = 6.42 * iss
    else:
        impact = 7.52 * (iss - 0.029) - 3.25 * math.pow(iss - 0.02, 15)
    return max(impact, 0.0)


def roundup(value: float) -> float:
    """CVSS v3.1 Roundup: smallest one-decimal number >= value."""
    return float(Decimal(repr(value)).quantize(Decimal("0.1"), rounding=ROUND_CEILING))


def base_score(v: CvssVector) -> float:
    impact = impact_score(v)
    if impact <= 0:
        return 0.0
    exploitability = exploitability_score(v)
    if v.scope == "U":
        return roundup(min(impact + exploitability, 10.0))
    return roundup(min(1.08 * (impact + exploitability), 10.0))


def all_vectors() -> Iterator[CvssVector]:
    """Every one of the 4*2*3*2*2*3*3*3 = 2592 distinct base vectors."""
    for codes in itertools.product(*(ALLOWED[m] for m in METRICS)):
        yield CvssVector(*codes)
