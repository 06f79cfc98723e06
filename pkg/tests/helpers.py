"""Shared builders and independent oracles for the test-suite."""
import numpy as np

from gridsentinel.plant import LtiPlantModel


def random_model(rng, n, q=None, rho=1.2, name="random"):
    """Generic (hence stabilizable and detectable) model with spectral radius ``rho``."""
    q = max(1, n // 2) if q is None else q
    A = rng.standard_normal((n, n))
    A *= rho / np.abs(np.linalg.eigvals(A)).max()
    G = rng.standard_normal((n, n))
    H = rng.standard_normal((q, q))
    return LtiPlantModel(
        A=A,
        B=rng.standard_normal((n, q)),
        C=np.eye(n) + 0.3 * rng.standard_normal((n, n)),
        Q_v=0.1 * G @ G.T / n + 0.01 * np.eye(n),
        R_w=0.05 * np.eye(n),
        W_cost=np.eye(n),
        U_cost=H @ H.T / q + 0.5 * np.eye(q),
        m=1,
        p=n,
        name=name,
    )


def scalar_model(a, b=1.0, c=1.0, q=1.0, r=1.0, w=1.0, u=1.0):
    return LtiPlantModel(A=[[a]], B=[[b]], C=[[c]], Q_v=[[q]], R_w=[[r]], W_cost=[[w]], U_cost=[[u]], m=1, p=1)


def value_iteration(A, B, W, U, iters=20000):
    """Plain Riccati recursion, written out independently of the library."""
    S = W.copy()
    for _ in range(iters):
        S = A.T @ S @ A + W - A.T @ S @ B @ np.linalg.inv(B.T @ S @ B + U) @ B.T @ S @ A
    return S


def riccati_residual(S, A, B, W, U):
    R = A.T @ S @ A + W - A.T @ S @ B @ np.linalg.inv(B.T @ S @ B + U) @ B.T @ S @ A
    return np.linalg.norm(S - R) / np.linalg.norm(S)


def posterior_enumeration(a, b, chunk_elems=1 << 20):
    """Pr(at most one attacked | alarms) by enumerating all 2**n attack patterns.

    ``a``/``b`` have shape (draws, n) or (n,). For every pattern the joint
    weight is the product of b_i over attacked and a_i over clean regions; the
    table is grown one region at a time, so no factorised identity is used. The
    evidence is the sum over the whole table and the answer the share of the
    patterns with popcount <= 1. Returns (probability, evidence).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    draws, n = a.shape
    keep = np.array([0] + [1 << k for k in range(n)])
    rows = max(1, chunk_elems >> n)
    num, evidence = np.empty(draws), np.empty(draws)
    ones = np.ones(1 << n)
    bufs = [np.empty(rows << n), np.empty(rows << n)]
    for s in range(0, draws, rows):
        ac, bc = a[s : s + rows], b[s : s + rows]
        r = len(ac)
        joint = np.ones((r, 1))
        for i in range(n):
            k = joint.shape[1]
            nxt = bufs[i % 2][: 2 * r * k].reshape(r, 2, k)
            np.multiply(joint, ac[:, i : i + 1], out=nxt[:, 0])
            np.multiply(joint, bc[:, i : i + 1], out=nxt[:, 1])
            joint = nxt.reshape(r, 2 * k)
        num[s : s + r] = joint[:, keep].sum(axis=1)
        evidence[s : s + r] = joint @ ones
    return num / evidence, evidence


def random_round(rng, n, beta, alpha=0.005, p_alarm=0.5):
    """Published (x, y) of n regions as the detector would produce them.

    Alarms are fair coins and priors log-uniform over the clamp range; a region
    is redrawn until x_i >= beta, the regime the precision bound covers.
    """
    from gridsentinel.detector import local_stats

    xs, ys = np.empty(n), np.empty(n)
    for i in range(n):
        while True:
            p1 = float(np.exp(rng.uniform(np.log(1e-6), np.log(1 - 1e-6))))
            s = local_stats(int(rng.random() < p_alarm), alpha, beta, 1 - p1, p1)
            if s.x >= beta:
                xs[i], ys[i] = s.x, s.y
                break
    return xs, ys
