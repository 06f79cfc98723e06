"""Broadcast gossip benchmark over the region connectivity graph.

The product of the x_i is gossiped as the average of u_i = ln x_i and the sum
of the y_i as their average; node j then reads x ~ exp(n z_u[j]) and
y ~ n z_y[j]. A round activates one uniformly random node, whose neighbours
move a fraction (1 - gamma) of the way towards its value. The broadcaster
keeps its value, so the network average drifts and is only preserved in
expectation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ConnectivityError, InvalidStatisticsError

log = logging.getLogger(__name__)

CONNECTIVITY_TOL = 1e-9
EXP_CLIP = 700.0
ALWAYS_COMPETITIVE = math.inf


def laplacian(adjacency):
    A = np.asarray(adjacency, dtype=float)
    return np.diag(A.sum(axis=1)) - A


def _check_adjacency(adjacency):
    A = np.asarray(adjacency)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigurationError("adjacency must be a square matrix")
    if not np.array_equal(A, A.T):
        raise ConfigurationError("adjacency must be symmetric")
    if np.any(np.diag(A)):
        raise ConfigurationError("adjacency must have a zero diagonal")
    return A.astype(bool)


def laplacian_spectrum(adjacency):
    """(second smallest, largest) Laplacian eigenvalue."""
    A = _check_adjacency(adjacency)
    if A.shape[0] < 2:
        raise ConnectivityError("a gossip graph needs at least two nodes")
    lam = np.linalg.eigvalsh(laplacian(A))
    if lam[1] <= CONNECTIVITY_TOL:
        raise ConnectivityError(f"graph is disconnected (algebraic connectivity {lam[1]:.3g})")
    return float(lam[1]), float(lam[-1])


def mixing_rate(lambda_second_smallest, lambda_largest, n, gamma):
    ratio = lambda_second_smallest / lambda_largest
    return gamma * ratio / (1.0 - (1.0 - gamma) / (2.0 * n) * lambda_largest)


@dataclass(frozen=True, eq=False)
class GossipGraph:
    n: int
    adjacency: np.ndarray
    laplacian: np.ndarray
    lambda_second_smallest: float
    lambda_largest: float
    gamma: float
    r: float

    @classmethod
    def from_adjacency(cls, adjacency, gamma=0.5):
        if not 0.0 < gamma <= 1.0:
            raise ConfigurationError("gamma must lie in (0, 1]")
        A = _check_adjacency(adjacency)
        l2, l1 = laplacian_spectrum(A)
        n = A.shape[0]
        r = mixing_rate(l2, l1, n, gamma)
        if not 0.0 < r <= 1.0 + 1e-12:
            raise ConfigurationError(f"mixing rate r={r:.4g} outside (0, 1]")
        r = min(r, 1.0)
        return cls(n, A, laplacian(A), l2, l1, float(gamma), r)

    @property
    def eigen_ratio(self):
        return self.lambda_second_smallest / self.lambda_largest


def ring_adjacency(n):
    A = np.zeros((n, n), dtype=bool)
    for i in range(n):
        A[i, (i + 1) % n] = A[(i + 1) % n, i] = True
    np.fill_diagonal(A, False)
    return A


def path_adjacency(n):
    A = np.zeros((n, n), dtype=bool)
    for i in range(n - 1):
        A[i, i + 1] = A[i + 1, i] = True
    return A


def complete_adjacency(n):
    return ~np.eye(n, dtype=bool)


def grid_adjacency(rows, cols):
    n = rows * cols
    A = np.zeros((n, n), dtype=bool)
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                A[i, i + 1] = A[i + 1, i] = True
            if r + 1 < rows:
                A[i, i + cols] = A[i + cols, i] = True
    return A


def geometric_adjacency(points, radius):
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    A = d <= radius
    np.fill_diagonal(A, False)
    return A


def is_connected(adjacency):
    A = np.asarray(adjacency, dtype=bool)
    seen = np.zeros(len(A), dtype=bool)
    seen[0] = True
    frontier = seen.copy()
    while frontier.any():
        frontier = A[frontier].any(axis=0) & ~seen
        seen |= frontier
    return bool(seen.all())


def connected_geometric_adjacency(n, rng, radius=None, growth=1.1):
    """Random geometric graph on the unit square, widening the radius until connected."""
    points = rng.random((n, 2))
    radius = math.sqrt(2.0 * math.log(max(n, 2)) / (math.pi * n)) if radius is None else float(radius)
    A = geometric_adjacency(points, radius)
    while not is_connected(A):
        radius *= growth
        log.info("geometric graph disconnected; radius -> %.4f", radius)
        A = geometric_adjacency(points, radius)
    return A, radius


@dataclass(eq=False)
class GossipState:
    """Per-node estimates; arrays may be (n,) or (trials, n)."""

    z_u: np.ndarray
    z_y: np.ndarray
    round_count: int = 0

    @property
    def n(self):
        return self.z_u.shape[-1]


def init_state(xs, ys, trials=None):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if np.any(~(xs > 0.0)):
        raise InvalidStatisticsError("gossip needs x_i > 0 to take logarithms")
    z_u, z_y = np.log(xs), ys.copy()
    if trials is not None:
        z_u = np.tile(z_u, (trials, 1))
        z_y = np.tile(z_y, (trials, 1))
    return GossipState(z_u, z_y)


def broadcast_round(state, graph, rng=None, broadcaster=None):
    """One activation on a single-trial state."""
    i = int(rng.integers(graph.n)) if broadcaster is None else int(broadcaster)
    nbr = graph.adjacency[i]
    g = graph.gamma
    # z + (1 - g)(z_i - z) equals g z + (1 - g) z_i but is exact at consensus
    state.z_u[nbr] += (1.0 - g) * (state.z_u[i] - state.z_u[nbr])
    state.z_y[nbr] += (1.0 - g) * (state.z_y[i] - state.z_y[nbr])
    state.round_count += 1
    return i


def run_rounds(state, graph, schedule):
    """Apply a broadcaster schedule of shape (rounds,) or (rounds, trials)."""
    schedule = np.asarray(schedule, dtype=np.intp)
    if state.z_u.ndim == 1:
        for i in schedule:
            broadcast_round(state, graph, broadcaster=i)
        return state
    g = graph.gamma
    rows = np.arange(state.z_u.shape[0])
    z = np.stack([state.z_u, state.z_y], axis=-1)
    for b in schedule:
        mask = graph.adjacency[b][..., None]
        src = z[rows, b][:, None, :]
        z = np.where(mask, z + (1.0 - g) * (src - z), z)
    state.z_u, state.z_y = z[..., 0].copy(), z[..., 1].copy()
    state.round_count += len(schedule)
    return state


def estimate_global(state):
    """Per-node (x_est, y_est, clipped) with x_est = exp(n z_u)."""
    n = state.n
    expo = n * state.z_u
    clipped = expo > EXP_CLIP
    x_est = np.exp(np.minimum(expo, EXP_CLIP))
    return x_est, n * state.z_y, clipped


def node_no_attack_prob(state):
    """Each node's plug-in no-attack probability, evaluated in log space."""
    n = state.n
    y_est = np.maximum(n * state.z_y, 0.0)
    logp = n * state.z_u + np.log1p(y_est)
    return np.exp(np.minimum(logp, 0.0))


def mean_square_deviation(values, centre=None):
    values = np.asarray(values, dtype=float)
    centre = values.mean(axis=-1, keepdims=True) if centre is None else centre
    return np.mean((values - centre) ** 2, axis=-1)


def bg_error_bound(delta_z0_sq, graph):
    """Limiting mean-square deviation bound (dz0)^2 (1 - r)."""
    return float(delta_z0_sq) * (1.0 - graph.r)


def initial_errors(xs, ys):
    """Initial gossip disagreement terms entering the precision threshold:
    mean-square spread of ln x_i, and of y_i relative to 1 + sum(y)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    du = float(mean_square_deviation(np.log(xs)))
    dy = float(mean_square_deviation(ys)) / (1.0 + float(ys.sum())) ** 2
    return du, dy


def precision_threshold(beta, n, r, dx0_over_x_sq, dy0_over_1py_sq):
    """Largest precision factor at which gossip stays competitive with the ledger.

    Returns ``ALWAYS_COMPETITIVE`` (inf) when the bracket or 1 - r vanishes.
    """
    if beta <= 0 or n < 1:
        raise ConfigurationError("beta and n must be positive")
    if not 0.0 < r <= 1.0:
        raise ConfigurationError("r must lie in (0, 1]")
    denom = n * (1.0 - r) * (dx0_over_x_sq + dy0_over_1py_sq)
    if denom <= 0.0:
        return ALWAYS_COMPETITIVE
    return 1.0 / (beta * math.sqrt(denom))
