"""First-order and zero-order-hold discrete state-space forms of a reduced
structural model, plus sensor output/feedforward matrices.

Discrete convention: ``x_k = A x_{k-1} + G p_k`` -- the input sample that
enters step k carries the same index as the state it produces.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as la

from .structural import ReducedModel

QUANTITIES = ("displacement", "velocity", "acceleration")
_ALIASES = {"disp": "displacement", "d": "displacement", "u": "displacement",
            "vel": "velocity", "v": "velocity",
            "acc": "acceleration", "a": "acceleration"}


@dataclass(frozen=True)
class ContinuousStateSpace:
    system_matrix: np.ndarray  # Psi, n x n
    input_matrix: np.ndarray   # Xi, n x m


@dataclass(frozen=True)
class SensorConfig:
    """Ordered sensor list. DOF indices are 1-based full-model coordinates."""

    entries: tuple[tuple[str, int], ...]

    def __init__(self, entries: Iterable[tuple[str, int]]):
        norm = []
        for quantity, dof in entries:
            q = _ALIASES.get(str(quantity).lower(), str(quantity).lower())
            if q not in QUANTITIES:
                raise ValueError(f"unknown sensor quantity {quantity!r}")
            if int(dof) != dof or dof < 1:
                raise ValueError(f"sensor DOF index must be a positive integer, got {dof}")
            norm.append((q, int(dof)))
        if not norm:
            raise ValueError("sensor configuration is empty")
        object.__setattr__(self, "entries", tuple(norm))

    @property
    def count(self) -> int:
        return len(self.entries)

    def labels(self) -> list[str]:
        short = {"displacement": "disp", "velocity": "vel", "acceleration": "acc"}
        return [f"{short[q]}_F{dof}" for q, dof in self.entries]


@dataclass(frozen=True)
class DiscreteStateSpace:
    """Time-invariant discrete model with noise covariances.

    ``matrices_at(k)`` returns the per-step matrices ``(A_k, G_k, C_k, H_k)``;
    for this time-invariant form they are the same at every k.
    """

    A: np.ndarray
    G: np.ndarray
    C: np.ndarray
    H: np.ndarray
    dt: float
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        n, m, d = self.A.shape[0], self.G.shape[1], self.C.shape[0]
        shapes = {"A": (n, n), "G": (n, m), "C": (d, n), "H": (d, m),
                  "Q": (n, n), "R": (d, d)}
        for name, shp in shapes.items():
            if getattr(self, name).shape != shp:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shp}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.G.shape[1]

    @property
    def d(self) -> int:
        return self.C.shape[0]

    def matrices_at(self, k: int):
        return self.A, self.G, self.C, self.H

    def with_noise(self, Q=None, R=None) -> "DiscreteStateSpace":
        return DiscreteStateSpace(self.A, self.G, self.C, self.H, self.dt,
                                  self.Q if Q is None else np.asarray(Q, dtype=float),
                                  self.R if R is None else np.asarray(R, dtype=float))


def to_continuous(reduced: ReducedModel) -> ContinuousStateSpace:
    """State ``[q; q']`` with ``Psi = [[0, I], [-M^-1 K, -M^-1 C]]``."""
    r, m = reduced.mode_count, reduced.input_count
    Mr = reduced.mass
    try:
        lu = la.lu_factor(Mr, check_finite=True)
    except (la.LinAlgError, ValueError) as exc:
        raise ValueError(f"reduced mass matrix is singular: {exc}") from exc
    if np.any(np.abs(np.diag(lu[0])) <= np.finfo(float).eps * np.abs(Mr).max()):
        raise ValueError("reduced mass matrix is singular")
    Psi = np.zeros((2 * r, 2 * r))
    Psi[:r, r:] = np.eye(r)
    Psi[r:, :r] = -la.lu_solve(lu, reduced.stiffness)
    Psi[r:, r:] = -la.lu_solve(lu, reduced.damping)
    Xi = np.zeros((2 * r, m))
    Xi[r:] = la.lu_solve(lu, reduced.input_matrix)
    return ContinuousStateSpace(Psi, Xi)


def discretize_zoh(cont: ContinuousStateSpace, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """``A = exp(Psi dt)`` and the zero-order-hold input matrix ``G``.

    ``G = (A - I) Psi^-1 Xi`` is evaluated through the block exponential
    ``exp([[Psi, Xi], [0, 0]] dt)``, which also covers singular ``Psi``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    Psi, Xi = np.asarray(cont.system_matrix, float), np.asarray(cont.input_matrix, float)
    if not (np.all(np.isfinite(Psi)) and np.all(np.isfinite(Xi))):
        raise ValueError("continuous-time matrices have non-finite entries")
    n, m = Xi.shape
    block = np.zeros((n + m, n + m))
    block[:n, :n] = Psi
    block[:n, n:] = Xi
    E = la.expm(block * dt)
    return E[:n, :n].copy(), E[:n, n:].copy()


def build_output_matrices(reduced: ReducedModel, sensors: SensorConfig
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Output matrix C (d x 2r) and feedforward H (d x m) for the sensors."""
    Z = reduced.basis.mode_shapes
    f, r = Z.shape
    m = reduced.input_count
    Minv = np.linalg.inv(reduced.mass)
    accel_state = np.hstack([-Minv @ reduced.stiffness, -Minv @ reduced.damping])
    accel_input = Minv @ reduced.input_matrix
    C = np.zeros((sensors.count, 2 * r))
    H = np.zeros((sensors.count, m))
    for row, (quantity, dof) in enumerate(sensors.entries):
        if dof > f:
            raise ValueError(f"sensor DOF {dof} outside 1..{f}")
        z = Z[dof - 1]
        if quantity == "displacement":
            C[row, :r] = z
        elif quantity == "velocity":
            C[row, r:] = z
        else:
            C[row] = z @ accel_state
            H[row] = z @ accel_input
    return C, H


def physical_output_matrix(reduced: ReducedModel, quantity: str,
                           dofs: Sequence[int] | None = None) -> np.ndarray:
    """Map modal state to physical displacement or velocity of given DOFs."""
    Z = reduced.basis.mode_shapes
    f, r = Z.shape
    idx = np.arange(f) if dofs is None else np.asarray(dofs) - 1
    out = np.zeros((len(idx), 2 * r))
    if quantity == "displacement":
        out[:, :r] = Z[idx]
    elif quantity == "velocity":
        out[:, r:] = Z[idx]
    else:
        raise ValueError(f"unsupported quantity {quantity!r}")
    return out


def build_discrete_system(reduced: ReducedModel, sensors: SensorConfig, dt: float,
                          Q=None, R=None) -> DiscreteStateSpace:
    """Discretize, attach sensor matrices and noise covariances (default zero)."""
    A, G = discretize_zoh(to_continuous(reduced), dt)
    C, H = build_output_matrices(reduced, sensors)
    n, d = A.shape[0], C.shape[0]
    Q = np.zeros((n, n)) if Q is None else np.asarray(Q, dtype=float)
    R = np.zeros((d, d)) if R is None else np.asarray(R, dtype=float)
    return DiscreteStateSpace(A, G, C, H, float(dt), Q, R)
