"""Reliability judgment for pairwise results.

A result is accepted when its trimmed MSE satisfies
``tmse <= max(2 * d_o, 1.5 * m_tmse)``, where ``d_o`` is the model
resolution and ``m_tmse`` the running mean of previously accepted TMSEs
(zero before the first acceptance, which reduces the test to
``tmse <= 2 * d_o``). Note the rule compares a squared distance with a
distance, so its selectivity depends on the units of the scans.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .spatial import estimate_resolution


@dataclass(frozen=True)
class ReliabilityState:
    d_o: float
    m_tmse: float = 0.0
    reliable_count: int = 0

    def __post_init__(self):
        if self.d_o <= 0:
            raise ValueError("model resolution must be positive")
        if self.reliable_count < 0 or self.m_tmse < 0:
            raise ValueError("counts and means must be non-negative")
        if self.reliable_count == 0 and self.m_tmse != 0:
            raise ValueError("m_tmse must be zero before any reliable registration")

    @property
    def threshold(self) -> float:
        return max(2.0 * self.d_o, 1.5 * self.m_tmse)


def is_reliable(tmse: float, state: ReliabilityState) -> bool:
    if tmse < 0:
        raise ValueError("tmse must be non-negative")
    return tmse <= state.threshold


def record_reliable(state: ReliabilityState, tmse: float) -> ReliabilityState:
    k = state.reliable_count
    return replace(state, m_tmse=(state.m_tmse * k + tmse) / (k + 1), reliable_count=k + 1)


def update_resolution(state: ReliabilityState, model) -> ReliabilityState:
    return replace(state, d_o=estimate_resolution(model))
