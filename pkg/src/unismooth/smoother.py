"""Universal smoothing: joint minimum-variance unbiased input and state
estimation over an observation window of N future steps.

One recursion step k consumes ``y_k .. y_{k+N}`` and produces ``p_k`` and
``x_k``:

input step
    innovation weight ``Rt = Sigma Lambda Sigma^T``; generalized least
    squares for the whole input window, ``M = (Hb^T Rt^-1 Hb)^-1 Hb^T Rt^-1``.
state step
    optimal gain ``K`` minimizing ``tr(P)`` with a rank-revealing
    restriction ``U`` of the residual covariance, then the recursive
    cross-covariances of the state error with the next noise windows.

``Lambda`` is the joint covariance of ``[x_err(k-1); w_window(k); v_window(k)]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.linalg import lapack

from .discretization import DiscreteStateSpace
from .extended import (ExtendedSystem, StackedNoise, build_extended_system,
                       head_operator, stack_noise_covariances)


class SmootherError(RuntimeError):
    """Numerical failure inside the recursion; ``step`` is the 1-based k."""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        if step is not None:
            message = f"step k={step}: {message}"
        super().__init__(message)


class ConditioningError(SmootherError):
    """A matrix that must be inverted is numerically singular."""


@dataclass(frozen=True)
class SmootherConfig:
    window: int = 0
    pinv_enabled: bool = False
    pinv_tolerance: float = 1e-10     # relative to the largest singular value
    gain_truncation_tolerance: float = 1e-12
    # exact-inverse path gives up beyond this condition number
    max_condition: float = 1e14

    def __post_init__(self):
        if self.window < 0 or int(self.window) != self.window:
            raise ValueError("window must be a non-negative integer")
        for name in ("pinv_tolerance", "gain_truncation_tolerance"):
            tol = getattr(self, name)
            if not 0.0 < tol < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {tol}")
        if not self.max_condition > 1.0:
            raise ValueError("max_condition must exceed 1")


@dataclass(frozen=True)
class SmootherState:
    """Carrier between steps: posterior ``x_{k-1}`` and its covariances."""

    x_hat: np.ndarray
    P: np.ndarray
    P_xw: np.ndarray  # E[x_err(k-1) w_window(k)^T]
    P_xv: np.ndarray  # E[x_err(k-1) v_window(k)^T]
    k: int = 1


@dataclass(frozen=True)
class InputEstimate:
    p_hat: np.ndarray
    ext_input: np.ndarray
    gain: np.ndarray          # M_k
    ext_input_cov: np.ndarray  # P^p over the whole window
    p_cov: np.ndarray
    chi_hat: np.ndarray       # A x_{k-1}
    innovation_cov: np.ndarray  # Rt_k
    lam: "LambdaBlock" = field(repr=False)
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class StepEstimate:
    k: int
    p_hat: np.ndarray
    p_cov: np.ndarray
    x_hat: np.ndarray
    x_cov: np.ndarray
    ext_input: np.ndarray
    ext_input_cov: np.ndarray
    diagnostics: dict
    x_prior_cov: np.ndarray | None = field(default=None, repr=False)  # P^x before the gain
    # (A, W, V) of x_err(k) = A x_err(k-1) + W w_window(k) + V v_window(k)
    propagation: tuple | None = field(default=None, repr=False)


def _sym(X):
    return 0.5 * (X + X.T)


# marker for an identity v-block in LambdaBlock.sandwich operands
IDENTITY = object()


def truncated_pinv(Mx, rel_tol: float) -> np.ndarray:
    """SVD pseudo-inverse dropping singular values below ``rel_tol * s_max``."""
    Mx = np.asarray(Mx, dtype=float)
    if not np.all(np.isfinite(Mx)):
        raise ValueError("truncated_pinv: non-finite entries")
    u, s, vt = np.linalg.svd(Mx, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(Mx.T.shape)
    keep = s >= rel_tol * s[0]
    return (vt[keep].T / s[keep]) @ u[:, keep].T


def _pinv_rank(Mx, rel_tol):
    u, s, vt = np.linalg.svd(Mx, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(Mx.T.shape), 0
    keep = s >= rel_tol * s[0]
    return (vt[keep].T / s[keep]) @ u[:, keep].T, int(keep.sum())


class LambdaBlock:
    """Joint covariance of ``[x_err(k-1); w_window; v_window]`` held in blocks.

    ``sandwich(L, R)`` evaluates ``L Lambda R^T`` for operators given as
    column-block triples ``(L_x, L_w, L_v)`` without forming the dense
    matrix. When every w-related block is zero (no modelling error, no
    cross-covariance) ``w_active`` is False and ``L_w`` may be None. An
    ``L_v`` of ``IDENTITY`` skips the product with an identity block.
    """

    def __init__(self, P, P_xw, P_xv, noise: StackedNoise, sample_Q=None, sample_R=None):
        self.P, self.P_xw, self.P_xv = P, P_xw, P_xv
        self.Q_same, self.R_same, self.P_wv = noise.Q_same, noise.R_same, noise.cross_wv
        self._has_q = noise.has_model_error
        self._has_cross = noise.has_cross
        self._has_xw = bool(np.any(P_xw))
        self.w_active = self._has_q or self._has_cross or self._has_xw
        self._sample_Q = sample_Q
        self._sample_R = sample_R

    @staticmethod
    def _blockdiag_apply(L, S):
        b = S.shape[0]
        rows = L.shape[0]
        return (L.reshape(rows, -1, b) @ S).reshape(rows, -1)

    def sandwich(self, L, R=None) -> np.ndarray:
        L1, L2, L3 = L
        R1, R2, R3 = L if R is None else R
        l_eye, r_eye = L3 is IDENTITY, R3 is IDENTITY
        Pxv_R3 = self.P_xv if r_eye else self.P_xv @ R3.T
        out = L1 @ (self.P @ R1.T + Pxv_R3)
        out += (self.P_xv.T if l_eye else L3 @ self.P_xv.T) @ R1.T
        if self._sample_R is not None and not l_eye:
            LR = self._blockdiag_apply(L3, self._sample_R)
        else:
            LR = self.R_same if l_eye else L3 @ self.R_same
        out += LR if r_eye else LR @ R3.T
        if not self.w_active:
            return out
        if self._has_xw:
            out += L1 @ (self.P_xw @ R2.T) + L2 @ (self.P_xw.T @ R1.T)
        if self._has_q:
            LQ = (self._blockdiag_apply(L2, self._sample_Q) if self._sample_Q is not None
                  else L2 @ self.Q_same)
            out += LQ @ R2.T
        if self._has_cross:
            Lwv = L2 @ self.P_wv
            out += Lwv if r_eye else Lwv @ R3.T
            Lvw = self.P_wv.T if l_eye else L3 @ self.P_wv.T
            out += Lvw @ R2.T
        return out

    def dense(self) -> np.ndarray:
        return np.block([
            [self.P, self.P_xw, self.P_xv],
            [self.P_xw.T, self.Q_same, self.P_wv],
            [self.P_xv.T, self.P_wv.T, self.R_same],
        ])


@dataclass(frozen=True)
class StepOperators:
    """Step-invariant matrices for one (A, G, extended system, noise) set.

    ``sample_Q``/``sample_R`` are the per-sample covariances when the
    stacked ones are block diagonal copies of them (enables a cheaper
    block-diagonal product).
    """

    A: np.ndarray
    G: np.ndarray
    ext: ExtendedSystem
    noise: StackedNoise
    Gamma: np.ndarray  # Cx A
    H_breve: np.ndarray  # Hx + Cx G [I 0]
    D_breve: np.ndarray  # Dx + [Cx 0]
    sample_Q: np.ndarray | None = None
    sample_R: np.ndarray | None = None

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.G.shape[1]

    @property
    def d(self):
        return self.dN // (self.ext.window + 1)

    @property
    def dN(self):
        return self.ext.ext_output.shape[0]


def build_operators(ext: ExtendedSystem, A, G, noise: StackedNoise,
                    sample_Q=None, sample_R=None) -> StepOperators:
    A, G = np.asarray(A, float), np.asarray(G, float)
    N = ext.window
    n, m = G.shape
    Cx, Hx, Dx = ext.ext_output, ext.ext_feedforward, ext.ext_model_error_map
    if Cx.shape[1] != n or Hx.shape[1] != (N + 1) * m or Dx.shape[1] != (N + 1) * n:
        raise ValueError("extended system dimensions do not match A/G")
    if noise.window != N:
        raise ValueError(f"noise stacked for N={noise.window}, extended system has N={N}")
    Gamma = Cx @ A
    H_breve = Hx + Cx @ G @ head_operator(m, N)
    D_breve = Dx.copy()
    D_breve[:, :n] += Cx
    return StepOperators(A, G, ext, noise, Gamma, H_breve, D_breve, sample_Q, sample_R)


def init(x0, P0, N: int, noise: StackedNoise | None = None, d: int | None = None
         ) -> SmootherState:
    """Initial carrier with zero cross-covariances."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    P0 = np.atleast_2d(np.asarray(P0, dtype=float))
    n = x0.size
    if P0.shape != (n, n):
        raise ValueError(f"x0 has {n} entries but P0 has shape {P0.shape}")
    if noise is not None:
        nw, nv = noise.Q_same.shape[0], noise.R_same.shape[0]
        if nw != (N + 1) * n:
            raise ValueError(f"noise window is stacked for {nw // (N + 1)} states, x0 has {n}")
    elif d is None:
        raise ValueError("either noise or d must be given")
    else:
        nw, nv = (N + 1) * n, (N + 1) * d
    scale = max(np.abs(P0).max(initial=0.0), np.finfo(float).tiny)
    if np.abs(P0 - P0.T).max(initial=0.0) > 1e-12 * scale:
        raise ValueError("P0 is not symmetric")
    if n and np.linalg.eigvalsh(_sym(P0)).min() < -1e-10 * scale:
        raise ValueError("P0 is not positive semi-definite")
    return SmootherState(x0.copy(), _sym(P0), np.zeros((n, nw)), np.zeros((n, nv)), 1)


def input_step(state: SmootherState, y_window, ops: StepOperators,
               cfg: SmootherConfig) -> InputEstimate:
    """Weighted least-squares estimate of the input window at step k."""
    k = state.k
    m = ops.m
    lam = LambdaBlock(state.P, state.P_xw, state.P_xv, ops.noise, ops.sample_Q, ops.sample_R)
    Sigma = (ops.Gamma, ops.D_breve if lam.w_active else None, IDENTITY)
    Rt = _sym(lam.sandwich(Sigma))
    Hb = ops.H_breve
    diag = {}

    if cfg.pinv_enabled:
        u, s, vt = np.linalg.svd(Rt, hermitian=True)
        keep = s >= cfg.pinv_tolerance * s[0] if s[0] > 0 else np.zeros(s.size, bool)
        Rt_pinv = (vt[keep].T / s[keep]) @ u[:, keep].T
        F = _sym(Hb.T @ Rt_pinv @ Hb)
        Pp, rank_f = _pinv_rank(F, cfg.pinv_tolerance)
        Pp = _sym(Pp)
        M = Pp @ (Hb.T @ Rt_pinv)
        diag["rank_Rt"], diag["rank_F"] = int(keep.sum()), rank_f
        diag["cond_Rt"] = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
    else:
        try:
            cho = la.cho_factor(Rt, lower=True, check_finite=True)
        except (la.LinAlgError, ValueError):
            raise ConditioningError(
                "innovation weight Rt is numerically singular or indefinite; "
                "enable pinv or revise Q/R", k) from None
        anorm = np.abs(Rt).sum(axis=0).max()
        rcond, _ = lapack.dpocon(cho[0], anorm, uplo="L")
        if rcond <= 1.0 / cfg.max_condition:
            raise ConditioningError(
                f"innovation weight Rt is numerically singular (condition ~{1 / max(rcond, 1e-300):.3g}); "
                "enable pinv or revise Q/R", k)
        # QR of the whitened feedforward: M Hb = I to roundoff times cond(Hb),
        # not the squared condition of the normal matrix
        B = la.solve_triangular(cho[0], Hb, lower=True)
        Qb, Rb = np.linalg.qr(B)
        sv = np.linalg.svd(Rb, compute_uv=False)
        if B.shape[0] < B.shape[1]:  # more unknowns than observations
            sv = np.zeros(1)
        if sv[0] <= 0 or sv[-1] ** 2 <= sv[0] ** 2 / cfg.max_condition:
            cond = np.inf if sv[-1] <= 0 else (sv[0] / sv[-1]) ** 2
            raise ConditioningError(
                f"input normal matrix Hb^T Rt^-1 Hb is singular (condition {cond:.3g}); "
                "the feedforward path is rank deficient, enable pinv", k)
        Rinv = la.solve_triangular(Rb, np.eye(Rb.shape[0]))
        Pp = _sym(Rinv @ Rinv.T)
        M = Rinv @ la.solve_triangular(cho[0], Qb, lower=True, trans="T").T
        diag["rank_Rt"], diag["rank_F"] = Rt.shape[0], Hb.shape[1]
        diag["cond_Rt"] = float(1.0 / rcond)

    chi = ops.A @ state.x_hat
    innov = np.asarray(y_window, dtype=float) - ops.ext.ext_output @ chi
    ext_p = M @ innov
    MH = M @ Hb
    MH[np.diag_indices_from(MH)] -= 1.0
    diag["unbiasedness"] = float(np.abs(MH).max())
    return InputEstimate(
        p_hat=ext_p[:m].copy(), ext_input=ext_p, gain=M, ext_input_cov=Pp,
        p_cov=_sym(Pp[:m, :m]), chi_hat=chi, innovation_cov=Rt, lam=lam,
        diagnostics=diag,
    )


def _shift_cols(X, block):
    """``X @ shift^T``: move column blocks one to the left, zero the last."""
    out = np.zeros_like(X)
    out[:, :-block] = X[:, block:]
    return out


def state_step(state: SmootherState, inp: InputEstimate, y_window, ops: StepOperators,
               cfg: SmootherConfig) -> tuple[StepEstimate, SmootherState]:
    """Optimal-gain state update and cross-covariance recursion."""
    k = state.k
    n, m = ops.n, ops.m
    A, G, noise = ops.A, ops.G, ops.noise
    Cx, Hx, Dx = ops.ext.ext_output, ops.ext.ext_feedforward, ops.ext.ext_model_error_map
    Gamma, Db = ops.Gamma, ops.D_breve
    lam, M = inp.lam, inp.gain
    dN = ops.dN
    w_active = lam.w_active

    x_prior = inp.chi_hat + G @ inp.p_hat
    V = G @ M[:m]
    A_b = A - V @ Gamma
    Theta = Hx @ M
    if w_active:
        W = -V @ Db
        W[:, :n] += np.eye(n)
    else:
        W = None
    Pi = (A_b, W, -V)
    # Omega = (I - Hb M) Sigma exactly, so Phi and Upsilon reuse Rt and the
    # Sigma-Pi cross term instead of a third full sandwich
    Omega_v = -(ops.H_breve @ M)
    Omega_v[np.diag_indices(dN)] += 1.0
    Sigma = (Gamma, Db if w_active else None, IDENTITY)
    P_prior = _sym(lam.sandwich(Pi))
    Ups = -Omega_v @ lam.sandwich(Sigma, Pi)
    Phi = _sym(Omega_v @ inp.innovation_cov @ Omega_v.T)

    # singular values of the symmetric Phi are |eigenvalues|
    s, vecs = np.linalg.eigh(Phi)
    s = np.abs(s)
    order = np.argsort(-s, kind="stable")
    s, vecs = s[order], vecs[:, order]
    # I - Hb M is a projector of rank dN - rank(Hb M), so Phi can be exactly
    # zero (d = m); the cutoff is scaled by Rt so roundoff is never retained
    scale = max(s[0] if s.size else 0.0, float(np.abs(np.diag(inp.innovation_cov)).max()))
    keep = s >= cfg.gain_truncation_tolerance * scale if scale > 0 else np.zeros(s.size, bool)
    keep[max(dN - int(inp.diagnostics["rank_F"]), 0):] = False
    if keep.any():
        U = vecs[:, keep].T
        UPU = _sym(U @ Phi @ U.T)
        try:
            cho = la.cho_factor(UPU, lower=True)
        except la.LinAlgError:
            raise ConditioningError(
                "restricted residual covariance U Phi U^T is not invertible; "
                "raise gain_truncation_tolerance", k) from None
        K = -la.cho_solve(cho, U @ Ups).T @ U
    else:
        K = np.zeros((n, dN))

    resid = np.asarray(y_window, float) - Cx @ x_prior - Hx @ inp.ext_input
    x_post = x_prior + K @ resid
    KU = K @ Ups
    P = _sym(P_prior + KU + KU.T + K @ Phi @ K.T)

    T = -K @ Cx
    T[np.diag_indices(n)] += 1.0
    KTheta = K @ Theta
    V_rec = -T @ V + KTheta - K
    A_rec = T @ A_b + KTheta @ Gamma
    P_xv = A_rec @ _shift_cols(state.P_xv, ops.d) + V_rec @ noise.R_shift
    if w_active or noise.has_model_error:
        if W is None:
            W = -V @ Db
            W[:, :n] += np.eye(n)
        W_rec = T @ W + KTheta @ Db - K @ Dx
        P_xw = A_rec @ _shift_cols(state.P_xw, n) + W_rec @ noise.Q_shift
        if noise.has_cross:
            P_xw += V_rec @ noise.cross_vw_shift
            P_xv += W_rec @ noise.cross_wv_shift
    else:
        W_rec = None
        P_xw = np.zeros_like(state.P_xw)

    if not (np.all(np.isfinite(x_post)) and np.all(np.isfinite(P))):
        raise SmootherError("non-finite state estimate", k)
    diag = dict(inp.diagnostics)
    diag["rank_U"] = int(keep.sum())
    est = StepEstimate(k=k, p_hat=inp.p_hat, p_cov=inp.p_cov, x_hat=x_post, x_cov=P,
                       ext_input=inp.ext_input, ext_input_cov=inp.ext_input_cov,
                       diagnostics=diag, x_prior_cov=P_prior,
                       propagation=(A_rec, W_rec, V_rec))
    return est, SmootherState(x_post, P, P_xw, P_xv, k + 1)


@dataclass
class EstimateTrace:
    """Per-step estimates; row i corresponds to step ``steps[i]`` (1-based)."""

    steps: np.ndarray
    dt: float
    p_hat: np.ndarray
    x_hat: np.ndarray
    p_var: np.ndarray
    x_var: np.ndarray
    p_cov: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    total_steps: int | None = None
    method: str = "us"

    @property
    def times(self) -> np.ndarray:
        return self.steps * self.dt

    def __len__(self):
        return len(self.steps)


class UniversalSmoother:
    """Time-invariant smoother; operators are built once at construction."""

    def __init__(self, system: DiscreteStateSpace, cfg: SmootherConfig,
                 noise: StackedNoise | None = None):
        self.system = system
        self.cfg = cfg
        N = cfg.window
        self.noise = noise if noise is not None else stack_noise_covariances(system.Q, system.R, N)
        self.ext = build_extended_system(system, N)
        if noise is None:
            sample_Q, sample_R = system.Q, system.R
        else:
            sample_Q = sample_R = None
        self.ops = build_operators(self.ext, system.A, system.G, self.noise, sample_Q, sample_R)

    def initial_state(self, x0=None, P0=None) -> SmootherState:
        n = self.system.n
        x0 = np.zeros(n) if x0 is None else x0
        P0 = np.zeros((n, n)) if P0 is None else P0
        return init(x0, P0, self.cfg.window, self.noise)

    def step(self, state: SmootherState, y_window) -> tuple[StepEstimate, SmootherState]:
        inp = input_step(state, y_window, self.ops, self.cfg)
        return state_step(state, inp, y_window, self.ops, self.cfg)

    def run(self, observations, x0=None, P0=None, keep_steps: bool = False) -> EstimateTrace:
        Y = np.asarray(observations, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        N = self.cfg.window
        T = Y.shape[0]
        if Y.shape[1] != self.system.d:
            raise ValueError(f"observations have {Y.shape[1]} channels, system has d={self.system.d}")
        if T <= N:
            raise ValueError(f"insufficient observations: T={T} must exceed window N={N}")
        if not np.all(np.isfinite(Y)):
            raise ValueError("observation series contains non-finite values")
        state = self.initial_state(x0, P0)
        count = T - N
        n, m = self.system.n, self.system.m
        p_hat = np.empty((count, m))
        p_cov = np.empty((count, m, m))
        x_hat = np.empty((count, n))
        x_var = np.empty((count, n))
        diag_keys = ("cond_Rt", "unbiasedness", "rank_Rt", "rank_F", "rank_U")
        diags = {key: np.empty(count) for key in diag_keys}
        kept = [] if keep_steps else None
        for i in range(count):
            y_win = Y[i:i + N + 1].reshape(-1)
            est, state = self.step(state, y_win)
            p_hat[i], p_cov[i], x_hat[i] = est.p_hat, est.p_cov, est.x_hat
            x_var[i] = np.diag(est.x_cov)
            for key in diag_keys:
                diags[key][i] = est.diagnostics[key]
            if kept is not None:
                kept.append(est)
        trace = EstimateTrace(
            steps=np.arange(1, count + 1), dt=self.system.dt, p_hat=p_hat, x_hat=x_hat,
            p_var=np.einsum("kii->ki", p_cov), x_var=x_var, p_cov=p_cov,
            diagnostics=diags, total_steps=T, method="us",
        )
        if kept is not None:
            trace.diagnostics["steps"] = kept
        return trace


def run(system: DiscreteStateSpace, observations, cfg: SmootherConfig,
        noise: StackedNoise | None = None, x0=None, P0=None,
        keep_steps: bool = False) -> EstimateTrace:
    """Smooth a T x d observation series; emits estimates for k = 1..T-N."""
    return UniversalSmoother(system, cfg, noise).run(observations, x0, P0, keep_steps)
