"""Second-order structural models: shear frames, ground motion loading and
modal order reduction.

All quantities are SI: kg, N/m, N*s/m, s, rad/s.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg as la


class ModelError(ValueError):
    """Invalid structural model definition."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SecondOrderModel:
    """``M u'' + C u' + K u = B p`` for an f-DOF structure with m inputs."""

    mass_matrix: np.ndarray
    damping_matrix: np.ndarray
    stiffness_matrix: np.ndarray
    input_distribution: np.ndarray
    # Rayleigh coefficients when assembled via build_shear_frame
    rayleigh: tuple[float, float] | None = None

    def __post_init__(self):
        M = _frozen(self.mass_matrix)
        C = _frozen(self.damping_matrix)
        K = _frozen(self.stiffness_matrix)
        B = _frozen(self.input_distribution)
        if B.ndim == 1:
            B = _frozen(B[:, None])
        f = M.shape[0]
        for name, mat in (("mass", M), ("damping", C), ("stiffness", K)):
            if mat.shape != (f, f):
                raise ModelError(f"{name} matrix has shape {mat.shape}, expected {(f, f)}")
            if not np.all(np.isfinite(mat)):
                raise ModelError(f"{name} matrix has non-finite entries")
            if not np.allclose(mat, mat.T, rtol=1e-12, atol=0.0):
                raise ModelError(f"{name} matrix is not symmetric")
        if B.shape[0] != f:
            raise ModelError(f"input distribution has {B.shape[0]} rows, expected {f}")
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            raise ModelError("mass matrix is not positive definite") from None
        object.__setattr__(self, "mass_matrix", M)
        object.__setattr__(self, "damping_matrix", C)
        object.__setattr__(self, "stiffness_matrix", K)
        object.__setattr__(self, "input_distribution", B)

    @property
    def dof_count(self) -> int:
        return self.mass_matrix.shape[0]

    @property
    def input_count(self) -> int:
        return self.input_distribution.shape[1]


@dataclass(frozen=True)
class ModalBasis:
    mode_shapes: np.ndarray  # f x r, mass-normalized columns
    frequencies: np.ndarray  # rad/s, ascending

    @property
    def mode_count(self) -> int:
        return self.mode_shapes.shape[1]


@dataclass(frozen=True)
class ReducedModel:
    """Modal-coordinate model ``M_R q'' + C_R q' + K_R q = B_R p``."""

    mass: np.ndarray
    damping: np.ndarray
    stiffness: np.ndarray
    input_matrix: np.ndarray
    basis: ModalBasis
    source: SecondOrderModel = field(repr=False)

    @property
    def mode_count(self) -> int:
        return self.mass.shape[0]

    @property
    def input_count(self) -> int:
        return self.input_matrix.shape[1]


def build_shear_frame(
    floor_count: int,
    floor_masses: Sequence[float] | float,
    storey_stiffnesses: Sequence[float] | float,
    rayleigh_alpha: float = 0.0,
    rayleigh_beta: float = 0.0,
    input_floors: Sequence[int] = (1,),
) -> SecondOrderModel:
    """Lumped-mass shear building fixed at the base.

    Floors are numbered 1..floor_count from the ground up; storey ``i``
    connects floor ``i`` to the floor below (the ground for ``i = 1``).
    Scalars for masses/stiffnesses are broadcast to every floor. The input
    distribution is a Boolean selection: column ``j`` loads
    ``input_floors[j]``.
    """
    if floor_count < 1:
        raise ModelError("floor_count must be a positive integer")
    masses = np.broadcast_to(np.asarray(floor_masses, dtype=float), (floor_count,)) \
        if np.ndim(floor_masses) == 0 else np.asarray(floor_masses, dtype=float)
    ks = np.broadcast_to(np.asarray(storey_stiffnesses, dtype=float), (floor_count,)) \
        if np.ndim(storey_stiffnesses) == 0 else np.asarray(storey_stiffnesses, dtype=float)
    if masses.shape != (floor_count,) or ks.shape != (floor_count,):
        raise ModelError(
            f"expected {floor_count} masses and stiffnesses, got {masses.size} and {ks.size}"
        )
    if np.any(masses <= 0) or np.any(ks <= 0):
        raise ModelError("floor masses and storey stiffnesses must be positive")
    floors = list(input_floors)
    if len(set(floors)) != len(floors):
        raise ModelError(f"duplicate input floor in {floors}")
    if not floors or any(not 1 <= fl <= floor_count for fl in floors):
        raise ModelError(f"input floors {floors} outside 1..{floor_count}")

    M = np.diag(masses)
    K = np.zeros((floor_count, floor_count))
    for i in range(floor_count):
        # storey i sits below floor i
        K[i, i] += ks[i]
        if i > 0:
            K[i - 1, i - 1] += ks[i]
            K[i, i - 1] -= ks[i]
            K[i - 1, i] -= ks[i]
    C = rayleigh_alpha * M + rayleigh_beta * K
    B = np.zeros((floor_count, len(floors)))
    for j, fl in enumerate(floors):
        B[fl - 1, j] = 1.0
    return SecondOrderModel(M, C, K, B, rayleigh=(rayleigh_alpha, rayleigh_beta))


def ground_motion_model(model: SecondOrderModel) -> SecondOrderModel:
    """Replace the load path with ``-M i`` so the single input is the
    ground acceleration in m/s^2 (relative-coordinate formulation)."""
    influence = np.ones(model.dof_count)
    return replace(model, input_distribution=-(model.mass_matrix @ influence)[:, None])


def modal_basis(model: SecondOrderModel) -> ModalBasis:
    """All undamped modes, mass-normalized, ascending in frequency."""
    try:
        lam, Z = la.eigh(model.stiffness_matrix, model.mass_matrix)
    except la.LinAlgError as exc:
        raise ModelError(f"generalized eigen-solve failed: {exc}") from exc
    order = np.argsort(lam, kind="stable")
    lam, Z = lam[order], Z[:, order]
    if np.any(lam < -1e-9 * max(1.0, abs(lam).max())):
        raise ModelError("stiffness matrix has negative eigenvalues")
    lam = np.clip(lam, 0.0, None)
    # eigh normalizes to Z^T M Z = I; fix the sign so the largest entry is positive
    signs = np.sign(Z[np.argmax(np.abs(Z), axis=0), np.arange(Z.shape[1])])
    Z = Z * np.where(signs == 0, 1.0, signs)
    return ModalBasis(_frozen(Z), _frozen(np.sqrt(lam)))


def modal_reduce(model: SecondOrderModel, mode_count: int) -> ReducedModel:
    """Project onto the ``mode_count`` lowest mass-normalized modes."""
    f = model.dof_count
    if not 1 <= mode_count <= f:
        raise ModelError(f"mode_count must be in 1..{f}, got {mode_count}")
    full = modal_basis(model)
    Z = full.mode_shapes[:, :mode_count]
    basis = ModalBasis(_frozen(Z), _frozen(full.frequencies[:mode_count]))
    M, C, K, B = (model.mass_matrix, model.damping_matrix,
                  model.stiffness_matrix, model.input_distribution)
    sym = lambda X: _frozen(0.5 * (X + X.T))  # noqa: E731
    return ReducedModel(
        mass=sym(Z.T @ M @ Z),
        damping=sym(Z.T @ C @ Z),
        stiffness=sym(Z.T @ K @ Z),
        input_matrix=_frozen(Z.T @ B),
        basis=basis,
        source=model,
    )
