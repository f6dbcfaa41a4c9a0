"""Discretized antagonistic pressure policies.

Twelve chambers form six antagonistic pairs ``(2k, 2k+1)``.  The even chamber
of each pair is free and the odd one is its complement ``rho_max - rho``, so an
action is fixed by six free-chamber levels.  Chambers ``4c..4c+3`` drive
continuum joint ``c``: the first pair bends about x, the second about y.

Actions are ordered lexicographically over the six free-chamber level indices,
free chamber 0 (chamber 0) being the most significant digit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

N_CHAMBERS = 12
N_FREE = 6


@dataclass(frozen=True)
class ActionSet:
    """All P**6 discretized actions, computed on demand from an index."""

    P: int
    rho_max: float

    def __post_init__(self):
        if int(self.P) != self.P or self.P < 2:
            raise ValueError(f"P must be an integer >= 2, got {self.P}")
        if not self.rho_max > 0:
            raise ValueError("rho_max must be positive")

    @property
    def levels(self) -> np.ndarray:
        return np.linspace(0.0, self.rho_max, self.P)

    def __len__(self) -> int:
        return self.P ** N_FREE

    @property
    def size(self) -> int:
        return len(self)

    def digits(self, index: int) -> np.ndarray:
        """Free-chamber level indices, most significant first."""
        index = int(index)
        if not 0 <= index < len(self):
            raise IndexError(f"action index {index} outside [0, {len(self)})")
        out = np.empty(N_FREE, dtype=int)
        for k in range(N_FREE - 1, -1, -1):
            index, out[k] = divmod(index, self.P)
        return out

    def free_pressures(self, index: int) -> np.ndarray:
        return self.levels[self.digits(index)]

    def __getitem__(self, index: int) -> np.ndarray:
        return paired_command(self.free_pressures(index), self.rho_max)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


def build_action_set(P: int, rho_max: float) -> ActionSet:
    return ActionSet(P, float(rho_max))


def paired_command(free, rho_max: float) -> np.ndarray:
    """Full 12-chamber command from the six free-chamber pressures."""
    free = np.asarray(free, float)
    cmd = np.empty(N_CHAMBERS)
    cmd[0::2] = free
    cmd[1::2] = rho_max - free
    return cmd


def nominal_command(rho_max: float) -> np.ndarray:
    return np.full(N_CHAMBERS, 0.5 * rho_max)


def check_pairing(cmd, rho_max: float) -> bool:
    cmd = np.asarray(cmd, float)
    return bool(np.all(cmd[1::2] == rho_max - cmd[0::2])
                and np.all(cmd >= 0) and np.all(cmd <= rho_max))


@dataclass(frozen=True)
class PolicyParams:
    theta: np.ndarray
    H: int
    includes_release: bool = False

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).ravel()
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if theta.size != self.dims:
            raise ValueError(f"theta has {theta.size} entries, expected {self.dims} "
                             f"(H={self.H}, includes_release={self.includes_release})")

    @property
    def dims(self) -> int:
        return self.H + int(self.includes_release)


def decode(params: PolicyParams, action_set: ActionSet) -> tuple[list[int], int | None]:
    """Scale-and-floor each theta_t to an action index; optional release step."""
    theta = params.theta
    if not (np.all(np.isfinite(theta)) and np.all((theta >= 0) & (theta <= 1))):
        raise ValueError("theta must lie in [0, 1]")
    M = len(action_set)
    idx = [min(int(math.floor(t * M)), M - 1) for t in theta[: params.H]]
    release = None
    if params.includes_release:
        H = params.H
        release = min(int(math.floor(theta[H] * H)), H - 1) + 1
    return idx, release


def encode_midpoint(index: int, M: int) -> float:
    return (index + 0.5) / M


def sequence_count(P: int, H: int) -> int:
    """Number of distinct decodable action sequences, (P**6)**H."""
    return (P ** N_FREE) ** H


def to_command_sequence(indices, action_set: ActionSet, step_limit: float | None = None,
                        nominal=None) -> np.ndarray:
    """(H, 12) commands; optionally rate-limit each free chamber from the nominal."""
    rho = action_set.rho_max
    targets = np.array([action_set.free_pressures(i) for i in indices]).reshape(-1, N_FREE)
    if step_limit is None:
        return np.array([paired_command(f, rho) for f in targets]).reshape(-1, N_CHAMBERS)
    if step_limit < 0:
        raise ValueError("step_limit must be non-negative")
    prev = nominal_command(rho) if nominal is None else np.asarray(nominal, float)
    prev_free = prev[0::2].copy()
    out = []
    for f in targets:
        free = np.clip(prev_free + np.clip(f - prev_free, -step_limit, step_limit), 0.0, rho)
        out.append(paired_command(free, rho))
        prev_free = free
    return np.array(out).reshape(-1, N_CHAMBERS)


def write_commands_csv(path, commands) -> None:
    commands = np.asarray(commands, float)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"chamber_{i}" for i in range(N_CHAMBERS)])
        for row in commands:
            w.writerow([f"{v:.3f}" for v in row])


def read_commands_csv(path) -> np.ndarray:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, N_CHAMBERS)
