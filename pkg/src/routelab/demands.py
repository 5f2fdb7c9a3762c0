"""Synthetic demand matrices and cyclical demand sequences."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class DemandError(ValueError):
    pass


@dataclass(frozen=True)
class BimodalParams:
    """Two-mode entry distribution: occasional heavy flows among a light background.

    Per off-diagonal entry, draw s ~ U(0,1); the entry is N(low_mean, low_std)
    when s > high_prob_threshold, else N(high_mean, high_std). Negative draws
    are clamped to 0.
    """

    low_mean: float = 400.0
    low_std: float = 100.0
    high_mean: float = 800.0
    high_std: float = 100.0
    high_prob_threshold: float = 0.8

    def __post_init__(self):
        if self.low_mean < 0 or self.high_mean < 0:
            raise DemandError("means must be nonnegative")
        if self.low_std < 0 or self.high_std < 0:
            raise DemandError("stds must be nonnegative")
        if not (0 <= self.high_prob_threshold <= 1):
            raise DemandError("high_prob_threshold must be in [0,1]")


@dataclass(frozen=True)
class DemandSequence:
    """Ordered demand matrices repeating with a fixed cycle length."""

    matrices: tuple[np.ndarray, ...]
    cycle_length: int

    def __post_init__(self):
        if self.cycle_length < 1:
            raise DemandError("cycle_length must be positive")

    def __len__(self) -> int:
        return len(self.matrices)

    @property
    def v_count(self) -> int:
        return self.matrices[0].shape[0]


def validate_demand_matrix(dm: np.ndarray) -> np.ndarray:
    dm = np.asarray(dm, dtype=float)
    if dm.ndim != 2 or dm.shape[0] != dm.shape[1]:
        raise DemandError("demand matrix must be square")
    if np.any(dm < 0):
        raise DemandError("demand entries must be nonnegative")
    if np.any(np.diag(dm) != 0):
        raise DemandError("demand matrix diagonal must be zero")
    return dm


def gen_bimodal_dm(v_count: int, params: BimodalParams, rng: np.random.Generator) -> np.ndarray:
    """One bimodal demand matrix with zero diagonal."""
    if v_count < 2:
        raise DemandError("v_count must be at least 2")
    selector = rng.uniform(0.0, 1.0, size=(v_count, v_count))
    low = rng.normal(params.low_mean, params.low_std, size=(v_count, v_count))
    high = rng.normal(params.high_mean, params.high_std, size=(v_count, v_count))
    dm = np.where(selector > params.high_prob_threshold, low, high)
    np.clip(dm, 0.0, None, out=dm)
    np.fill_diagonal(dm, 0.0)
    return dm


def gen_cyclical_sequence(v_count: int, params: BimodalParams, cycle_length: int,
                          total_length: int, rng: np.random.Generator) -> DemandSequence:
    """Sequence where matrix i is bit-exactly matrix (i mod cycle_length)."""
    if cycle_length < 1 or total_length < 1:
        raise DemandError("cycle_length and total_length must be positive")
    cycle = [gen_bimodal_dm(v_count, params, rng) for _ in range(cycle_length)]
    mats = tuple(cycle[i % cycle_length] for i in range(total_length))
    return DemandSequence(matrices=mats, cycle_length=cycle_length)


def sequence_to_json(seq: DemandSequence) -> str:
    payload = {
        "v_count": seq.v_count,
        "cycle_length": seq.cycle_length,
        "matrices": [m.reshape(-1).tolist() for m in seq.matrices],
    }
    return json.dumps(payload)


def sequence_from_json(text: str) -> DemandSequence:
    payload = json.loads(text)
    v = payload["v_count"]
    mats = tuple(
        validate_demand_matrix(np.array(row, dtype=float).reshape(v, v))
        for row in payload["matrices"]
    )
    return DemandSequence(matrices=mats, cycle_length=payload["cycle_length"])
