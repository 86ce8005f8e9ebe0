"""Eigenmode classification of an estimated one-step operator.

Each eigenvalue is classified by magnitude and argument: modes that barely
move (magnitude near one, argument near zero) are *static*; modes that decay
or oscillate are *dynamic*; numerically null modes are *degenerate* and are
excluded from the dynamic set.

Two classification rules are provided.  The default ``complement`` rule labels
a mode static when ``|lambda| >= sigma and |Arg(lambda)| <= omega`` and dynamic
otherwise.  The ``conjunction`` rule labels a mode dynamic only when
``|lambda| < sigma and |Arg(lambda)| > omega``.  Both apply the argument test
to ``|Arg|`` so complex-conjugate pairs always classify identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .koopman import KoopmanEstimate
from .linalg import eig, polar

KIND_STATIC = "static"
KIND_DYNAMIC = "dynamic"
KIND_DEGENERATE = "degenerate"

DEGENERATE_MAGNITUDE = 1e-8

RULES = ("complement", "conjunction")


@dataclass(frozen=True)
class EigenMode:
    value: complex
    vector: np.ndarray
    magnitude: float
    argument: float
    kind: str


@dataclass(frozen=True)
class ModeSpectrum:
    """All eigenmodes of one operator, in the deterministic ``linalg.eig`` order."""

    modes: list[EigenMode]
    source_condition: float

    def __len__(self) -> int:
        return len(self.modes)

    def kinds(self) -> list[str]:
        return [m.kind for m in self.modes]


def classify_eigenvalue(
    magnitude: float, argument: float, sigma: float, omega: float, rule: str = "complement"
) -> str:
    """Apply the static/dynamic/degenerate rule to one eigenvalue's polar form."""
    if rule not in RULES:
        raise InvalidInputError(f"unknown stratify rule {rule!r}; expected one of {RULES}")
    if magnitude <= DEGENERATE_MAGNITUDE:
        return KIND_DEGENERATE
    if rule == "complement":
        is_static = magnitude >= sigma and abs(argument) <= omega
    else:
        is_static = not (magnitude < sigma and abs(argument) > omega)
    return KIND_STATIC if is_static else KIND_DYNAMIC


def stratify(
    estimate: KoopmanEstimate,
    sigma: float = 0.9,
    omega: float = 0.1,
    rule: str = "complement",
) -> ModeSpectrum:
    """Eigendecompose an operator estimate and label every mode."""
    if not (math.isfinite(sigma) and math.isfinite(omega)):
        raise InvalidInputError("thresholds must be finite")
    result = eig(estimate.matrix)
    modes = []
    for k, lam in enumerate(result.values):
        magnitude, argument = polar(lam)
        modes.append(
            EigenMode(
                value=complex(lam),
                vector=result.vectors[:, k].copy(),
                magnitude=magnitude,
                argument=argument,
                kind=classify_eigenvalue(magnitude, argument, sigma, omega, rule),
            )
        )
    return ModeSpectrum(modes=modes, source_condition=result.phi_condition)


def dynamic_modes(spectrum: ModeSpectrum) -> list[np.ndarray]:
    """Eigenvectors of all dynamic modes, preserving spectrum order."""
    return [m.vector for m in spectrum.modes if m.kind == KIND_DYNAMIC]
