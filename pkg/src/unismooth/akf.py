"""Augmented Kalman filter baseline with a random-walk input model.

The unknown input is appended to the state, ``z_k = [x_k; p_k]``, and
evolves as ``p_k = p_{k-1} + eta_k`` with ``eta_k ~ N(0, Qp I)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .discretization import DiscreteStateSpace
from .smoother import EstimateTrace, SmootherError


@dataclass(frozen=True)
class AugmentedModel:
    Aa: np.ndarray  # [[A, G], [0, I]]
    Ca: np.ndarray  # [C, H]
    Qa: np.ndarray
    R: np.ndarray
    n: int
    m: int
    dt: float


def augment(system: DiscreteStateSpace, Qx: float, Qp: float,
            input_coupling: bool = True) -> AugmentedModel:
    """Build the augmented model with ``Q = Qx I_n`` and input noise ``Qp I_m``.

    The discrete model lets ``p_k`` drive ``x_k``, so a random-walk step
    ``eta_k`` reaches the state through ``G`` in the same step. With
    ``input_coupling`` (default) the process noise covariance carries that
    correlation, ``blockdiag(Qx I, 0) + [G; I] Qp [G; I]^T``; without it the
    textbook block-diagonal ``blockdiag(Qx I, Qp I)`` is used.
    """
    if Qx < 0 or Qp < 0:
        raise ValueError("Qx and Qp must be non-negative")
    n, m = system.n, system.m
    Aa = np.block([[system.A, system.G], [np.zeros((m, n)), np.eye(m)]])
    Ca = np.hstack([system.C, system.H])
    Qa = np.zeros((n + m, n + m))
    Qa[:n, :n] = Qx * np.eye(n)
    if input_coupling:
        L = np.vstack([system.G, np.eye(m)])
        Qa += Qp * (L @ L.T)
    else:
        Qa[n:, n:] = Qp * np.eye(m)
    return AugmentedModel(Aa, Ca, 0.5 * (Qa + Qa.T), system.R.copy(), n, m, system.dt)


def akf_run(aug: AugmentedModel, observations, x0=None, P0=None,
            p0=None) -> EstimateTrace:
    """Predict/update over all T samples; emits estimates for k = 1..T.

    ``P0`` may be the n x n state covariance (input block starts at zero)
    or the full augmented covariance.
    """
    Y = np.asarray(observations, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, m = aug.n, aug.m
    na = n + m
    if Y.shape[1] != aug.Ca.shape[0]:
        raise ValueError(f"observations have {Y.shape[1]} channels, model has {aug.Ca.shape[0]}")
    if not np.all(np.isfinite(Y)):
        raise ValueError("observation series contains non-finite values")
    z = np.zeros(na)
    if x0 is not None:
        z[:n] = np.asarray(x0, float).reshape(-1)
    if p0 is not None:
        z[n:] = np.asarray(p0, float).reshape(-1)
    P = np.zeros((na, na))
    if P0 is not None:
        P0 = np.atleast_2d(np.asarray(P0, float))
        if P0.shape == (n, n):
            P[:n, :n] = P0
        elif P0.shape == (na, na):
            P = P0.copy()
        else:
            raise ValueError(f"P0 has shape {P0.shape}, expected {(n, n)} or {(na, na)}")

    A, C, Q, R = aug.Aa, aug.Ca, aug.Qa, aug.R
    T = Y.shape[0]
    x_hat = np.empty((T, n))
    p_hat = np.empty((T, m))
    x_var = np.empty((T, n))
    p_cov = np.empty((T, m, m))
    cond = np.empty(T)
    for i in range(T):
        z = A @ z
        P = A @ P @ A.T + Q
        S = C @ P @ C.T + R
        S = 0.5 * (S + S.T)
        try:
            cho = la.cho_factor(S, lower=True)
        except la.LinAlgError:
            raise SmootherError("AKF innovation covariance is singular; "
                                "increase R, Qx or Qp", i + 1) from None
        d = np.diag(cho[0])
        cond[i] = (d.max() / d.min()) ** 2
        Kt = la.cho_solve(cho, C @ P)  # K^T
        z = z + Kt.T @ (Y[i] - C @ z)
        # Joseph form keeps P symmetric PSD
        IKC = np.eye(na) - Kt.T @ C
        P = IKC @ P @ IKC.T + Kt.T @ R @ Kt
        P = 0.5 * (P + P.T)
        if not np.all(np.isfinite(z)):
            raise SmootherError("non-finite AKF estimate", i + 1)
        x_hat[i], p_hat[i] = z[:n], z[n:]
        x_var[i] = np.diag(P)[:n]
        p_cov[i] = P[n:, n:]
    return EstimateTrace(
        steps=np.arange(1, T + 1), dt=aug.dt, p_hat=p_hat, x_hat=x_hat,
        p_var=np.einsum("kii->ki", p_cov), x_var=x_var, p_cov=p_cov,
        diagnostics={"cond_S": cond}, total_steps=T, method="akf",
    )
