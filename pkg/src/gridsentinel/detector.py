"""Local replay detection and the per-region Bayesian bookkeeping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import CalibrationError, ConfigurationError, DegenerateStatisticsError
from .plant import KalmanLqgState, ReplayAttack, advance, attack_bias, design, draw_noise

PRIOR_EPS = 1e-6
DEFAULT_PRIOR1 = 0.01
MIN_ALARM_EVENTS = 20


@dataclass(frozen=True)
class DetectorConfig:
    window_len: int = 50
    alpha_target: float = 0.005
    calibration_runs: int = 100_000
    threshold: float | None = None
    center: float | None = None
    betas: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.alpha_target < 1.0:
            raise ConfigurationError("alpha_target must lie in (0, 1)")
        if self.window_len < 2:
            raise ConfigurationError("window_len must be >= 2")
        for mag, beta in self.betas.items():
            if not 0.0 < beta < 1.0:
                raise ConfigurationError(f"beta@{mag} = {beta} is outside (0, 1)")

    @property
    def calibrated(self):
        return self.threshold is not None and self.center is not None

    def beta(self, magnitude):
        try:
            return self.betas[float(magnitude)]
        except KeyError:
            raise CalibrationError(f"no beta calibrated for magnitude {magnitude:g}") from None


@dataclass(frozen=True)
class RegionBelief:
    sigma: int
    prior0: float
    prior1: float
    a: float
    b: float
    pr_sigma: float
    x: float
    y: float


def residual_statistic(residual_window, Sigma_r):
    """trace(Sigma_hat Sigma_r^-1) with Sigma_hat the uncentered sample covariance.

    Works on a single (W, ny) window or any stack of them.
    """
    try:
        chol = np.linalg.cholesky(np.asarray(Sigma_r, dtype=float))
    except np.linalg.LinAlgError:
        raise ConfigurationError("residual covariance is singular or not positive definite") from None
    z = np.asarray(residual_window, dtype=float) @ np.linalg.inv(chol).T
    return np.mean(np.sum(z * z, axis=-1), axis=-1)


def decide_alarm(statistic, tau, center):
    """Two-sided rule: alarm iff |t - center| > tau."""
    out = np.abs(np.asarray(statistic) - center) > tau
    return int(out) if out.ndim == 0 else out.astype(int)


def local_stats(sigma, alpha, beta, prior0, prior1):
    """Joint probabilities a = Pr(sigma, no attack), b = Pr(sigma, attack) and
    the published ratios x = a / Pr(sigma), y = b / a."""
    if sigma not in (0, 1):
        raise ValueError("sigma must be 0 or 1")
    if sigma:
        a = alpha * prior0
        b = (1.0 - beta) * prior1
    else:
        a = (1.0 - alpha) * prior0
        b = beta * prior1
    if a <= 0.0:
        raise DegenerateStatisticsError(
            f"a = 0 for sigma={sigma}, alpha={alpha}, prior0={prior0}; clamp the priors or alpha"
        )
    pr_sigma = a + b
    return RegionBelief(int(sigma), prior0, prior1, a, b, pr_sigma, a / pr_sigma, b / a)


def update_prior(a, b, eps=PRIOR_EPS):
    """Posterior of the attack state becomes next epoch's prior."""
    s = a + b
    if s <= 0.0:
        raise DegenerateStatisticsError("a + b must be positive")
    prior0, prior1 = a / s, b / s
    # clamp the small side exactly so a prior parked on the floor stays there
    if prior1 < eps:
        prior0, prior1 = 1.0 - eps, eps
    elif prior0 < eps:
        prior0, prior1 = eps, 1.0 - eps
    return prior0, prior1


def initial_priors(prior1=DEFAULT_PRIOR1, eps=PRIOR_EPS):
    prior1 = float(prior1)
    if prior1 < eps:
        return 1.0 - eps, eps
    if prior1 > 1.0 - eps:
        return eps, 1.0 - eps
    return 1.0 - prior1, prior1


def _clamped_rate(events, total):
    # keep estimates strictly inside (0, 1); 1/(2N) is the usual continuity correction
    lo = 0.5 / total
    return min(max(events / total, lo), 1.0 - lo)


def _simulate_windows(model, gains, rng, batch, n_windows, W, attack=None, record_windows=0):
    """Residual windows of ``batch`` independent replicas, shape (n_windows * batch, W, ny).

    With ``attack``, the replicas first run ``record_windows`` attack-free
    windows (recorded, discarded) and then ``n_windows`` attacked windows.
    """
    state = KalmanLqgState.initial(model, gains, batch=batch, rng=rng)
    out = np.empty((n_windows, W, batch, model.n_outputs))
    for k in range(record_windows + n_windows):
        if attack is not None and k == record_windows:
            attack.set_active(True)
        v, w = draw_noise(model, gains, rng, (W, batch))
        for s in range(W):
            if attack is not None and attack.active:
                _, r, _ = advance(model, state, v[s], w[s], replayed=attack.replay(), bias=attack.bias)
            else:
                y, r, _ = advance(model, state, v[s], w[s])
                if attack is not None:
                    attack.observe(y)
            if k >= record_windows:
                out[k - record_windows, s] = r
    return np.swapaxes(out, 1, 2).reshape(n_windows * batch, W, model.n_outputs)


def null_statistics(model, config, rng, n_windows, gains=None, batch=2000):
    gains = design(model) if gains is None else gains
    batch = min(batch, n_windows)
    reps = -(-n_windows // batch)
    windows = _simulate_windows(model, gains, rng, batch, reps, config.window_len)
    return residual_statistic(windows, gains.Sigma_r)[:n_windows]


def attacked_statistics(model, config, magnitude, rng, n_windows, gains=None, batch=2000, attack_windows=5):
    """Statistics of windows emitted under replay with the given bias magnitude."""
    gains = design(model) if gains is None else gains
    W = config.window_len
    batch = max(1, min(batch, -(-n_windows // attack_windows)))
    reps = -(-n_windows // (batch * attack_windows))
    stats = []
    for _ in range(reps):
        attack = ReplayAttack(0, attack_windows, attack_bias(model, magnitude), float(magnitude), attack_windows * W)
        windows = _simulate_windows(
            model, gains, rng, batch, attack_windows, W, attack=attack, record_windows=attack_windows
        )
        stats.append(residual_statistic(windows, gains.Sigma_r))
    return np.concatenate(stats)[:n_windows]


def calibrate(model, config, magnitudes=(), rng=None, gains=None, beta_runs=None):
    """Empirical two-sided threshold at level alpha_target, plus the miss rate
    under replay for each magnitude. Returns a calibrated copy of ``config``."""
    rng = np.random.default_rng(0) if rng is None else rng
    runs = int(config.calibration_runs)
    if runs * config.alpha_target < MIN_ALARM_EVENTS:
        raise CalibrationError(
            f"calibration_runs={runs} cannot resolve alpha={config.alpha_target}: "
            f"need runs * alpha >= {MIN_ALARM_EVENTS}"
        )
    if config.window_len < model.n_outputs + 1:
        raise ConfigurationError(
            f"window_len={config.window_len} too short for {model.n_outputs} outputs (need >= {model.n_outputs + 1})"
        )
    gains = design(model) if gains is None else gains
    t0 = null_statistics(model, config, rng, runs, gains=gains)
    center = float(np.median(t0))
    tau = float(np.quantile(np.abs(t0 - center), 1.0 - config.alpha_target))
    beta_runs = runs if beta_runs is None else int(beta_runs)
    betas = dict(config.betas)
    for mag in magnitudes:
        t1 = attacked_statistics(model, config, mag, rng, beta_runs, gains=gains)
        misses = int(np.sum(decide_alarm(t1, tau, center) == 0))
        betas[float(mag)] = _clamped_rate(misses, len(t1))
    return replace(config, threshold=tau, center=center, betas=betas)


def save_calibration(config, path):
    lines = [
        f"alpha = {config.alpha_target!r}",
        f"window_len = {config.window_len}",
        f"median = {config.center!r}",
        f"tau = {config.threshold!r}",
    ]
    lines += [f"beta@{mag:g} = {beta!r}" for mag, beta in sorted(config.betas.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def load_calibration(path, config=None):
    """Read a key = value calibration file; merges into ``config`` if given."""
    values, betas = {}, {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = key.strip(), value.strip()
        if key.startswith("beta@"):
            betas[float(key[5:])] = float(value)
        elif key in ("alpha", "median", "tau"):
            values[key] = float(value)
        elif key == "window_len":
            values[key] = int(value)
        else:
            raise ConfigurationError(f"{path}:{lineno}: unknown calibration key {key!r}")
    missing = {"alpha", "window_len", "median", "tau"} - values.keys()
    if missing:
        raise ConfigurationError(f"{path}: missing keys {sorted(missing)}")
    base = config if config is not None else DetectorConfig(values["window_len"], values["alpha"])
    if not math.isclose(base.alpha_target, values["alpha"]) or base.window_len != values["window_len"]:
        raise CalibrationError(f"{path}: calibrated for alpha={values['alpha']}, W={values['window_len']}")
    return replace(base, threshold=values["tau"], center=values["median"], betas={**base.betas, **betas})
