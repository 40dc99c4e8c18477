"""Window-N extended observation operators and stacked noise covariances.

For a window starting at step k the stacked vectors are

    y-window: y_k .. y_{k+N}          p-window: p_k .. p_{k+N}
    w-window: w_{k-1} .. w_{k+N-1}    v-window: v_k .. v_{k+N}

and ``y_window = Cx x_k + Hx p_window + Dx w_window + v_window``.
All operators are stored dense; ``Hx`` and ``Dx`` are block lower
triangular, which a sparse implementation could exploit for large N.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .discretization import DiscreteStateSpace


@dataclass(frozen=True)
class ExtendedSystem:
    window: int
    ext_output: np.ndarray           # (N+1)d x n
    ext_feedforward: np.ndarray      # (N+1)d x (N+1)m
    ext_model_error_map: np.ndarray  # (N+1)d x (N+1)n


@dataclass(frozen=True, eq=False)
class StackedNoise:
    """Covariances of the stacked noise windows (k = same window, shift =
    window k against window k+1)."""

    window: int
    Q_same: np.ndarray
    Q_shift: np.ndarray
    R_same: np.ndarray
    R_shift: np.ndarray
    cross_wv: np.ndarray        # E[w_win(k) v_win(k)^T]
    cross_wv_shift: np.ndarray  # E[w_win(k) v_win(k+1)^T]
    cross_vw_shift: np.ndarray  # E[v_win(k) w_win(k+1)^T]

    @cached_property
    def has_cross(self) -> bool:
        return bool(np.any(self.cross_wv) or np.any(self.cross_wv_shift)
                    or np.any(self.cross_vw_shift))

    @cached_property
    def has_model_error(self) -> bool:
        return bool(np.any(self.Q_same))


@dataclass(frozen=True)
class SelectionOperators:
    eps_m: np.ndarray
    eps_n: np.ndarray
    shift_n: np.ndarray
    shift_d: np.ndarray
    tail_n: np.ndarray
    tail_d: np.ndarray


def _steps(system, N):
    if isinstance(system, DiscreteStateSpace):
        return [system.matrices_at(j) for j in range(N + 1)]
    steps = [tuple(np.asarray(M, dtype=float) for M in s) for s in system]
    if len(steps) < N + 1:
        raise ValueError(f"need per-step matrices for {N + 1} steps, got {len(steps)}")
    n, m = steps[0][1].shape
    d = steps[0][2].shape[0]
    for j, (A, G, C, H) in enumerate(steps[:N + 1]):
        if A.shape != (n, n) or G.shape != (n, m) or C.shape != (d, n) or H.shape != (d, m):
            raise ValueError(f"dimension mismatch in per-step matrices at offset {j}")
    return steps[:N + 1]


def build_extended_system(system: DiscreteStateSpace | Sequence, N: int) -> ExtendedSystem:
    """Stack the observation equation over steps k..k+N.

    ``system`` is either a time-invariant :class:`DiscreteStateSpace` or a
    sequence of per-step ``(A_j, G_j, C_j, H_j)`` for j = k..k+N.
    """
    if N < 0:
        raise ValueError("window N must be >= 0")
    steps = _steps(system, N)
    n, m = steps[0][1].shape
    d = steps[0][2].shape[0]
    A = [s[0] for s in steps]
    G = [s[1] for s in steps]
    C = [s[2] for s in steps]
    H = [s[3] for s in steps]

    def transition(i, j):
        # A_{k+i-1} ... A_{k+j}, identity when i == j
        out = np.eye(n)
        for l in range(j, i):
            out = A[l] @ out
        return out

    Cx = np.zeros(((N + 1) * d, n))
    Hx = np.zeros(((N + 1) * d, (N + 1) * m))
    Dx = np.zeros(((N + 1) * d, (N + 1) * n))
    for i in range(N + 1):
        rows = slice(i * d, (i + 1) * d)
        Cx[rows] = C[i] @ transition(i, 0)
        Hx[rows, i * m:(i + 1) * m] = H[i]
        for j in range(1, i + 1):
            CPhi = C[i] @ transition(i, j)
            Hx[rows, j * m:(j + 1) * m] += CPhi @ G[j - 1]
            Dx[rows, j * n:(j + 1) * n] = CPhi
    return ExtendedSystem(N, Cx, Hx, Dx)


def _check_cov(X, name, tol=1e-12):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] != X.shape[1]:
        raise ValueError(f"{name} must be square")
    scale = max(np.abs(X).max(), np.finfo(float).tiny)
    if np.abs(X - X.T).max() > tol * scale:
        raise ValueError(f"{name} is not symmetric")
    X = 0.5 * (X + X.T)
    if X.size and np.linalg.eigvalsh(X).min() < -1e-10 * scale:
        raise ValueError(f"{name} is not positive semi-definite")
    return X


def _window_cov(S, rows_per, cols_per, N, offset):
    """Block (i, j) = S when i - j == offset, else 0."""
    out = np.zeros(((N + 1) * rows_per, (N + 1) * cols_per))
    for i in range(N + 1):
        j = i - offset
        if 0 <= j <= N:
            out[i * rows_per:(i + 1) * rows_per, j * cols_per:(j + 1) * cols_per] = S
    return out


def stack_noise_covariances(Q, R, N: int, cross_wv=None) -> StackedNoise:
    """White, stationary noise stacked over the window.

    ``cross_wv`` is the per-sample ``E[w_j v_j^T]`` (n x d); default zero.
    Block offsets follow from the windows' index ranges: the w-window of
    step k starts at ``w_{k-1}`` while the v-window starts at ``v_k``.
    """
    if N < 0:
        raise ValueError("window N must be >= 0")
    Q = _check_cov(Q, "Q")
    R = _check_cov(R, "R")
    n, d = Q.shape[0], R.shape[0]
    S = np.zeros((n, d)) if cross_wv is None else np.asarray(cross_wv, dtype=float)
    if S.shape != (n, d):
        raise ValueError(f"cross_wv has shape {S.shape}, expected {(n, d)}")
    return StackedNoise(
        window=N,
        Q_same=_window_cov(Q, n, n, N, 0),
        Q_shift=_window_cov(Q, n, n, N, 1),   # w_{k-1+i} vs w_{k+j}: i = j+1
        R_same=_window_cov(R, d, d, N, 0),
        R_shift=_window_cov(R, d, d, N, 1),   # v_{k+i} vs v_{k+1+j}: i = j+1
        cross_wv=_window_cov(S, n, d, N, 1),        # w_{k-1+i} vs v_{k+j}
        cross_wv_shift=_window_cov(S, n, d, N, 2),  # w_{k-1+i} vs v_{k+1+j}
        cross_vw_shift=_window_cov(S.T, d, n, N, 0),  # v_{k+i} vs w_{k+j}
    )


def shift_operator(i: int, N: int) -> np.ndarray:
    """Drop the first block of a window and shift up, zero-filling the last."""
    return np.eye((N + 1) * i, k=i)


def tail_operator(i: int, N: int) -> np.ndarray:
    """Keep only the last block of a window."""
    out = np.zeros(((N + 1) * i, (N + 1) * i))
    out[N * i:, N * i:] = np.eye(i)
    return out


def head_operator(i: int, N: int) -> np.ndarray:
    """``[I_i 0]``: first block of a window."""
    return np.eye(i, (N + 1) * i)


def selection_operators(n: int, m: int, d: int, N: int) -> SelectionOperators:
    if min(n, m, d) < 1 or N < 0:
        raise ValueError("dimensions must be positive and N >= 0")
    return SelectionOperators(
        eps_m=head_operator(m, N),
        eps_n=head_operator(n, N),
        shift_n=shift_operator(n, N),
        shift_d=shift_operator(d, N),
        tail_n=tail_operator(n, N),
        tail_d=tail_operator(d, N),
    )


def stack_window(series: np.ndarray, start: int, N: int) -> np.ndarray:
    """Flatten rows ``start .. start+N`` of a T x c series."""
    return np.asarray(series[start:start + N + 1]).reshape(-1)
