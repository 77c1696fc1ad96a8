"""Linear per-bit battery model."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional


class Radio(Enum):
    TX = "tx"
    RX = "rx"


@dataclass
class EnergyState:
    initial_j: float
    residual_j: float
    tx_cost_j_per_bit: float
    rx_cost_j_per_bit: float
    dead_at_ms: Optional[float] = None

    @classmethod
    def full(cls, initial_j: float, tx_cost_j_per_bit: float, rx_cost_j_per_bit: float) -> "EnergyState":
        return cls(initial_j, initial_j, tx_cost_j_per_bit, rx_cost_j_per_bit)

    @property
    def dead(self) -> bool:
        return self.dead_at_ms is not None

    def drain(self, kind: Radio, size_bits: int, now: float) -> float:
        """Charge one transmission or reception; returns the joules removed."""
        if size_bits <= 0:
            raise ValueError(f"size_bits must be positive: {size_bits}")
        if self.dead_at_ms is not None:
            return 0.0
        per_bit = self.tx_cost_j_per_bit if kind is Radio.TX else self.rx_cost_j_per_bit
        cost = per_bit * size_bits
        if cost >= self.residual_j:
            taken = self.residual_j
            self.residual_j = 0.0
            self.dead_at_ms = now
            return taken
        self.residual_j -= cost
        return cost


def drain(state: EnergyState, kind: Radio, size_bits: int, now: float) -> EnergyState:
    state.drain(kind, size_bits, now)
    return state


def residual_fraction(state: EnergyState) -> float:
    if state.initial_j <= 0:
        raise ValueError("initial_j must be positive")
    return state.residual_j / state.initial_j
