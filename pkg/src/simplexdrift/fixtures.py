"""The three-point effort-share example (feature, reliability, toil).

``X0`` is the known-good baseline with F/R = 1.  ``XC`` shrinks toil so F
and R both grow by closure with their ratio unchanged; ``XB`` pushes F/R to
about 1.96, past the F/R <= 1.5 policy, while staying Euclidean-close.
"""

from __future__ import annotations

import math

from .lineage import OTHER

PARTS = ("F", "R", "O")
X0 = (0.33, 0.33, 0.34)
XC = (0.44, 0.44, 0.12)
XB = (0.45, 0.23, 0.32)
FR_CAP = 1.5
EUCLIDEAN_THRESHOLD = 0.2

SCENARIOS = {"A": XC, "B": XB}


def pitfall_config() -> dict:
    """Monitor config over F, R, O plus the reserved "other" group.

    The reference is taken from the first sample so the second sample is
    judged against the baseline directly.
    """
    return {
        "groups": ["F", "R", "O", OTHER],
        "basis": {
            "sbp": [[1, -1, 0, 0], [1, 1, -1, 0], [1, 1, 1, -1]],
            "names": ["F vs R", "F,R vs O", "F,R,O vs other"],
        },
        "lineage": {"F": "F", "R": "R", "O": "O"},
        "constraints": [{"name": "F/R<=1.5", "coeffs": {"F": 1.0, "R": -1.0}, "threshold": math.log(FR_CAP)}],
        "reference": {"warmup": 1, "baseline_window": 2},
        "thresholds": {"trend_window": 8},
    }


def pitfall_observations(scenario: str) -> list[dict]:
    target = SCENARIOS[scenario]
    return [
        {"t": 0, "parts": dict(zip(PARTS, X0)), "confidence": 1.0, "freeze": False},
        {"t": 1, "parts": dict(zip(PARTS, target)), "confidence": 1.0, "freeze": False},
    ]
