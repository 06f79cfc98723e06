"""Closed-loop LTI generator fleet: Kalman filter, LQG control, replay attacks.

Every state array may carry leading batch axes, so the same code path drives
one region, a fleet of regions, or thousands of Monte Carlo replicas.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, RiccatiDivergenceError

RICCATI_TOL = 1e-12
RICCATI_MAX_ITER = 100_000


def _is_symmetric(M, tol=1e-10):
    return np.allclose(M, M.T, atol=tol * max(1.0, np.abs(M).max()))


def _min_eig(M):
    return float(np.linalg.eigvalsh((M + M.T) / 2).min())


def _pbh_ok(A, B):
    """PBH rank test on the eigenvalues outside the open unit disc."""
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) >= 1.0 - 1e-12:
            M = np.hstack([A - lam * np.eye(n), B.astype(complex)])
            if np.linalg.matrix_rank(M, tol=1e-9) < n:
                return False
    return True


@dataclass(frozen=True, eq=False)
class LtiPlantModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q_v: np.ndarray
    R_w: np.ndarray
    W_cost: np.ndarray
    U_cost: np.ndarray
    m: int = 2
    p: int = 1
    name: str = "region-model"

    def __post_init__(self):
        for key in ("A", "B", "C", "Q_v", "R_w", "W_cost", "U_cost"):
            object.__setattr__(self, key, np.atleast_2d(np.asarray(getattr(self, key), dtype=float)))
        n, q = self.n_states, self.n_inputs
        shapes = {
            "A": (n, n), "B": (n, q), "Q_v": (n, n), "W_cost": (n, n), "U_cost": (q, q),
        }
        for key, shape in shapes.items():
            if getattr(self, key).shape != shape:
                raise ConfigurationError(f"{self.name}: {key} has shape {getattr(self, key).shape}, expected {shape}")
        ny = self.C.shape[0]
        if self.C.shape[1] != n or self.R_w.shape != (ny, ny):
            raise ConfigurationError(f"{self.name}: C/R_w dimensions inconsistent with {n} states")
        for key in ("Q_v", "W_cost"):
            M = getattr(self, key)
            if not _is_symmetric(M) or _min_eig(M) < -1e-12:
                raise ConfigurationError(f"{self.name}: {key} must be symmetric positive semidefinite")
        for key in ("R_w", "U_cost"):
            M = getattr(self, key)
            if not _is_symmetric(M) or _min_eig(M) <= 0:
                raise ConfigurationError(f"{self.name}: {key} must be symmetric positive definite")
        schur = np.abs(np.linalg.eigvals(self.A)).max() < 1.0
        if not schur and not (_pbh_ok(self.A, self.B) and _pbh_ok(self.A.T, self.C.T)):
            raise ConfigurationError(f"{self.name}: A is unstable and (A,B,C) is not stabilizable/detectable")

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]

    @property
    def n_outputs(self):
        return self.C.shape[0]


def synthetic_region_model(
    generators=4,
    coupling=0.05,
    dt=0.1,
    stiffness=1.0,
    damping=0.5,
    process_noise=0.01,
    measurement_noise=0.01,
    state_cost=1.0,
    control_cost=1.0,
    name="synthetic-region",
):
    """Angle/frequency pairs for each generator, diffusively coupled on a ring.

    Control acts on each generator's frequency state; all states are measured.
    """
    p = int(generators)
    if p < 1:
        raise ConfigurationError("generators must be >= 1")
    n = 2 * p
    A = np.zeros((n, n))
    B = np.zeros((n, p))
    for j in range(p):
        A[2 * j : 2 * j + 2, 2 * j : 2 * j + 2] = [[1.0, dt], [-stiffness * dt, 1.0 - damping * dt]]
        B[2 * j + 1, j] = dt
    if p > 1 and coupling:
        lap = 2.0 * np.eye(p) - np.roll(np.eye(p), 1, axis=1) - np.roll(np.eye(p), -1, axis=1)
        if p == 2:
            lap = np.array([[1.0, -1.0], [-1.0, 1.0]])
        for j in range(p):
            for k in range(p):
                A[2 * j + 1, 2 * k] -= coupling * dt * lap[j, k]
    return LtiPlantModel(
        A=A,
        B=B,
        C=np.eye(n),
        Q_v=process_noise * np.eye(n),
        R_w=measurement_noise * np.eye(n),
        W_cost=state_cost * np.eye(n),
        U_cost=control_cost * np.eye(p),
        m=2,
        p=p,
        name=name,
    )


def riccati_map(S, A, B, W, U):
    """One application of S -> A'SA + W - A'SB (B'SB + U)^-1 B'SA."""
    BtSA = B.T @ S @ A
    G = B.T @ S @ B + U
    return A.T @ S @ A + W - BtSA.T @ np.linalg.solve(G, BtSA)


def _riccati_fixed_point(A, B, W, U, S0=None, name="model", tol=RICCATI_TOL, max_iter=RICCATI_MAX_ITER):
    S = np.array(W, dtype=float) if S0 is None else np.array(S0, dtype=float)
    for _ in range(max_iter):
        S_new = riccati_map(S, A, B, W, U)
        S_new = 0.5 * (S_new + S_new.T)
        scale = np.linalg.norm(S_new)
        if np.linalg.norm(S_new - S) <= tol * scale or scale == 0.0:
            return S_new
        if not np.isfinite(scale):
            break
        S = S_new
    raise RiccatiDivergenceError(f"riccati divergence: value iteration did not converge for {name!r}")


def solve_lqg_riccati(model, S0=None):
    """Control Riccati solution S and feedback gain L (u = L x)."""
    A, B = model.A, model.B
    S = _riccati_fixed_point(A, B, model.W_cost, model.U_cost, S0=S0, name=model.name)
    L = -np.linalg.solve(B.T @ S @ B + model.U_cost, B.T @ S @ A)
    return S, L


def solve_kalman_gain(model, P0=None):
    """Steady-state predictor covariance P, filter gain K and innovation covariance."""
    A, C = model.A, model.C
    P = _riccati_fixed_point(A.T, C.T, model.Q_v, model.R_w, S0=P0, name=model.name)
    Sigma_r = C @ P @ C.T + model.R_w
    Sigma_r = 0.5 * (Sigma_r + Sigma_r.T)
    K = np.linalg.solve(Sigma_r, C @ P).T
    return K, P, Sigma_r


def psd_sqrt(M):
    """Symmetric factor F with F F' = M; tolerates singular M."""
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True, eq=False)
class ClosedLoopGains:
    K: np.ndarray
    L: np.ndarray
    S: np.ndarray
    P: np.ndarray
    Sigma_r: np.ndarray
    process_factor: np.ndarray
    measurement_factor: np.ndarray


def design(model):
    S, L = solve_lqg_riccati(model)
    K, P, Sigma_r = solve_kalman_gain(model)
    return ClosedLoopGains(K, L, S, P, Sigma_r, psd_sqrt(model.Q_v), psd_sqrt(model.R_w))


@dataclass(eq=False)
class KalmanLqgState:
    """Gains plus the mutable loop variables.

    ``x_hat`` holds the posterior estimate from the previous step and ``u`` the
    control that was actually applied, so the next prediction uses it.
    """

    gains: ClosedLoopGains
    x_hat: np.ndarray
    x_true: np.ndarray
    u: np.ndarray
    r: np.ndarray
    t: int = 0

    @property
    def K(self):
        return self.gains.K

    @property
    def L(self):
        return self.gains.L

    @property
    def S(self):
        return self.gains.S

    @property
    def P(self):
        return self.gains.P

    @property
    def Sigma_r(self):
        return self.gains.Sigma_r

    @classmethod
    def initial(cls, model, gains=None, batch=(), rng=None):
        """Zero estimate; the true state is drawn from N(0, P) when ``rng`` is
        given, which makes the innovation sequence stationary from step 0."""
        gains = design(model) if gains is None else gains
        batch = tuple(np.atleast_1d(batch)) if batch != () else ()
        n, q, ny = model.n_states, model.n_inputs, model.n_outputs
        x_true = np.zeros(batch + (n,))
        if rng is not None:
            x_true = rng.standard_normal(batch + (n,)) @ psd_sqrt(gains.P).T
        return cls(gains, np.zeros(batch + (n,)), x_true, np.zeros(batch + (q,)), np.zeros(batch + (ny,)))


def advance(model, state, v, w, replayed=None, replay_mask=None, bias=None):
    """One closed-loop step with explicit noise; returns (y, r, u_applied).

    ``replayed`` substitutes the emitted measurement (rows selected by
    ``replay_mask`` when batched); ``bias`` is added to the applied control.
    """
    A, B, C = model.A, model.B, model.C
    g = state.gains
    x_pred = state.x_hat @ A.T + state.u @ B.T
    y = state.x_true @ C.T + w
    if replayed is not None:
        if replay_mask is None:
            y = np.broadcast_to(np.asarray(replayed, dtype=float), y.shape).copy()
        else:
            y = np.where(np.asarray(replay_mask)[..., None], replayed, y)
    r = y - x_pred @ C.T
    x_hat = x_pred + r @ g.K.T
    u = x_hat @ g.L.T
    if bias is not None:
        u = u + bias
    state.x_true = state.x_true @ A.T + u @ B.T + v
    state.x_hat, state.u, state.r = x_hat, u, r
    state.t += 1
    return y, r, u


def draw_noise(model, gains, rng, shape=()):
    """Process and measurement noise blocks with leading ``shape``."""
    shape = tuple(np.atleast_1d(shape)) if shape != () else ()
    v = rng.standard_normal(shape + (model.n_states,)) @ gains.process_factor.T
    w = rng.standard_normal(shape + (model.n_outputs,)) @ gains.measurement_factor.T
    return v, w


def attack_bias(model, magnitude):
    """Uniform control bias normalised by the spectral norm of B."""
    return float(magnitude) * np.ones(model.n_inputs) / np.linalg.norm(model.B, 2)


@dataclass(eq=False)
class ReplayAttack:
    """Record-then-replay attacker for one region (or one batch of replicas).

    While inactive, emitted measurements are recorded into a window holding at
    most ``record_len`` samples. Once active, the window is replayed from its
    start, cyclically if the attack outlasts it, and ``bias`` is added to the
    applied control.
    """

    start_epoch: int
    end_epoch: int
    bias: np.ndarray
    magnitude: float
    record_len: int
    active: bool = False
    _buffer: deque = field(default=None, repr=False)
    record_window: np.ndarray | None = field(default=None, repr=False)
    _cursor: int = 0

    def __post_init__(self):
        if self.end_epoch <= self.start_epoch:
            raise ConfigurationError("attack end_epoch must exceed start_epoch")
        if self.record_len < 1:
            raise ConfigurationError("record_len must be >= 1")
        self._buffer = deque(maxlen=int(self.record_len))

    @classmethod
    def for_model(cls, model, start_epoch, end_epoch, magnitude, steps_per_epoch):
        record_len = (end_epoch - start_epoch) * steps_per_epoch
        return cls(start_epoch, end_epoch, attack_bias(model, magnitude), float(magnitude), record_len)

    def in_window(self, epoch):
        return self.start_epoch <= epoch < self.end_epoch

    def set_epoch(self, epoch):
        self.set_active(self.in_window(epoch))

    def set_active(self, flag):
        if flag and not self.active:
            if not self._buffer:
                raise ConfigurationError("replay attack activated before any attack-free measurement was recorded")
            self.record_window = np.array(self._buffer)
            self._cursor = 0
        self.active = bool(flag)

    def observe(self, y):
        if not self.active:
            self._buffer.append(np.array(y, dtype=float, copy=True))

    def replay(self):
        y = self.record_window[self._cursor % len(self.record_window)]
        self._cursor += 1
        return y


def step(model, state, rng=None, attack=None, v=None, w=None):
    """Advance one region by one sample.

    Noise comes from ``rng`` unless ``v``/``w`` are given. Returns the emitted
    measurement, the residual and the applied control.
    """
    if v is None or w is None:
        if rng is None:
            raise ConfigurationError("step needs either an rng stream or explicit noise")
        v_draw, w_draw = draw_noise(model, state.gains, rng, state.x_true.shape[:-1])
        v = v_draw if v is None else v
        w = w_draw if w is None else w
    if np.shape(v) != state.x_true.shape or np.shape(w)[-1] != model.n_outputs:
        raise ConfigurationError("noise dimensions do not match the plant state")
    if attack is not None and attack.active:
        y, r, u = advance(model, state, v, w, replayed=attack.replay(), bias=attack.bias)
    else:
        y, r, u = advance(model, state, v, w)
        if attack is not None:
            attack.observe(y)
    return y, r, u
