"""Scenario driver: regions, ledger and broadcast-gossip benchmark, epoch by epoch."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gossip, ledger
from .aggregator import no_attack_prob
from .config import ScenarioConfig
from .detector import (
    PRIOR_EPS,
    DetectorConfig,
    calibrate,
    decide_alarm,
    initial_priors,
    load_calibration,
    local_stats,
    residual_statistic,
    update_prior,
)
from .errors import CalibrationError, GridSentinelError
from .plant import KalmanLqgState, ReplayAttack, advance, design, draw_noise, psd_sqrt, synthetic_region_model

log = logging.getLogger(__name__)

METRICS_HEADER = (
    "epoch", "region", "alarm", "p_attack_chain", "p_attack_bg_min", "p_attack_bg_med", "p_attack_bg_max",
)
BOX_HEADER = ("epoch", "p_attack_chain", "min", "whisker_lo", "q1", "median", "q3", "whisker_hi", "max", "mean")
NOT_DETECTED = "not detected"


class ScenarioError(GridSentinelError):
    def __init__(self, epoch, cause):
        self.epoch, self.cause = epoch, cause
        super().__init__(f"epoch {epoch}: {cause}")


def region_model(config):
    return synthetic_region_model(
        generators=config.generators,
        coupling=config.coupling,
        dt=config.dt,
        stiffness=config.stiffness,
        damping=config.damping,
        process_noise=config.process_noise,
        measurement_noise=config.measurement_noise,
        state_cost=config.state_cost,
        control_cost=config.control_cost,
    )


def detector_config(config):
    return DetectorConfig(
        window_len=config.window_len, alpha_target=config.alpha_target, calibration_runs=config.calibration_runs
    )


def _streams(config):
    root = np.random.SeedSequence(int(config.seed))
    cal, topo, bg, plant = root.spawn(4)
    return cal, topo, bg, plant


def _grid_shape(n, rows=0):
    if rows:
        if n % rows:
            raise GridSentinelError(f"grid_rows={rows} does not divide n_regions={n}")
        return rows, n // rows
    rows = max(d for d in range(1, int(math.isqrt(n)) + 1) if n % d == 0)
    return rows, n // rows


def build_region_graph(config, rng=None):
    """Connectivity graph of the configured topology (None for one region)."""
    n = config.n_regions
    if n == 1:
        return None
    if config.topology == "ring":
        A = gossip.ring_adjacency(n)
    elif config.topology == "complete":
        A = gossip.complete_adjacency(n)
    elif config.topology == "grid":
        A = gossip.grid_adjacency(*_grid_shape(n, config.grid_rows))
    else:
        rng = np.random.default_rng(_streams(config)[1]) if rng is None else rng
        A, _ = gossip.connected_geometric_adjacency(n, rng, radius=config.geometric_radius or None)
    return gossip.GossipGraph.from_adjacency(A, config.gamma)


def ensure_calibrated(config, detector=None, model=None, gains=None):
    """Detector config carrying tau and beta at the scenario magnitude."""
    detector = detector_config(config) if detector is None else detector
    if config.calibration_file and Path(config.calibration_file).exists() and not detector.calibrated:
        try:
            detector = load_calibration(config.calibration_file, detector)
        except CalibrationError as exc:
            log.warning("ignoring cached calibration: %s", exc)
    if detector.calibrated and float(config.magnitude) in detector.betas:
        return detector
    model = region_model(config) if model is None else model
    rng = np.random.default_rng(_streams(config)[0])
    return calibrate(model, detector, magnitudes=[config.magnitude], rng=rng, gains=gains, beta_runs=config.beta_runs)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    alarms: tuple
    p_attack_chain: float
    p_attack_float: float
    bg_min: float | None = None
    bg_median: float | None = None
    bg_max: float | None = None
    bg_node_min: tuple | None = None
    bg_node_median: tuple | None = None
    bg_node_max: tuple | None = None
    chain_detected: bool = False
    bg_detected: bool | None = None


@dataclass(eq=False)
class ScenarioResult:
    config: ScenarioConfig
    detector: DetectorConfig
    beta: float
    graph: object
    alarms: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    truth: np.ndarray
    p_no_attack_chain: np.ndarray
    p_no_attack_float: np.ndarray
    bg_attack: np.ndarray | None
    contract: ledger.ContractState
    statistics: np.ndarray = field(repr=False, default=None)

    @property
    def p_attack_chain(self):
        return 1.0 - self.p_no_attack_chain

    @property
    def p_attack_float(self):
        return np.clip(1.0 - self.p_no_attack_float, 0.0, 1.0)

    @property
    def records(self):
        thr = self.config.detection_threshold
        out = []
        for e in range(self.config.epochs):
            extra = {}
            if self.bg_attack is not None:
                s = self.bg_attack[e]
                med = float(np.median(s))
                extra = dict(
                    bg_min=float(s.min()), bg_median=med, bg_max=float(s.max()),
                    bg_node_min=tuple(s.min(axis=0).tolist()),
                    bg_node_median=tuple(np.median(s, axis=0).tolist()),
                    bg_node_max=tuple(s.max(axis=0).tolist()),
                    bg_detected=med >= thr,
                )
            pc = float(self.p_attack_chain[e])
            out.append(EpochRecord(
                e, tuple(int(a) for a in self.alarms[e]), pc, float(self.p_attack_float[e]),
                chain_detected=pc >= thr, **extra,
            ))
        return out

    def compare(self, threshold=None):
        thr = self.config.detection_threshold if threshold is None else threshold
        return compare_protocols(self.p_attack_chain, self.bg_attack, thr)


def run_scenario(config, detector=None, with_bg=True, bg_trials=None):
    """Simulate ``config.epochs`` epochs; deterministic given the config seed."""
    model = region_model(config)
    gains = design(model)
    detector = ensure_calibrated(config, detector, model, gains)
    beta = detector.beta(config.magnitude)
    alpha = config.alpha_target
    n, E, W, D = config.n_regions, config.epochs, config.window_len, config.D
    trials = config.trials_bg if bg_trials is None else int(bg_trials)
    _, topo_ss, bg_ss, plant_ss = _streams(config)
    graph = build_region_graph(config, np.random.default_rng(topo_ss)) if with_bg else None
    region_rngs = [np.random.default_rng(s) for s in plant_ss.spawn(n)]
    trial_rngs = [np.random.default_rng(s) for s in bg_ss.spawn(trials)] if with_bg else []

    state = KalmanLqgState.initial(model, gains, batch=n)
    root_p = psd_sqrt(gains.P)
    for i, rng in enumerate(region_rngs):
        state.x_true[i] = root_p @ rng.standard_normal(model.n_states)
    attacks = {
        i - 1: ReplayAttack.for_model(model, config.attack_start, config.attack_end, config.magnitude, W)
        for i in config.attacked_regions
    }
    contract = ledger.deploy(D, n, config.block_interval)
    prior0, prior1 = (np.full(n, v) for v in initial_priors(config.prior1))

    alarms = np.zeros((E, n), dtype=np.int8)
    truth = np.zeros((E, n), dtype=np.int8)
    stats_t = np.zeros((E, n))
    xs_hist, ys_hist = np.zeros((E, n)), np.zeros((E, n))
    p_chain, p_float = np.zeros(E), np.zeros(E)
    bg_attack = np.zeros((E, trials, n)) if with_bg else None
    residuals = np.empty((W, n, model.n_outputs))

    for e in range(E):
        try:
            for i, atk in attacks.items():
                atk.set_epoch(e)
                truth[e, i] = atk.active
            active = [i for i, atk in attacks.items() if atk.active]
            recording = [i for i, atk in attacks.items() if not atk.active]
            bias = np.zeros((n, model.n_inputs))
            mask = np.zeros(n, dtype=bool)
            for i in active:
                bias[i] = attacks[i].bias
                mask[i] = True
            noise = [draw_noise(model, gains, rng, (W,)) for rng in region_rngs]
            V = np.stack([v for v, _ in noise], axis=1)
            Wn = np.stack([w for _, w in noise], axis=1)
            replayed = np.zeros((n, model.n_outputs))
            for s in range(W):
                for i in active:
                    replayed[i] = attacks[i].replay()
                if active:
                    y, r, _ = advance(model, state, V[s], Wn[s], replayed=replayed, replay_mask=mask, bias=bias)
                else:
                    y, r, _ = advance(model, state, V[s], Wn[s])
                for i in recording:
                    attacks[i].observe(y[i])
                residuals[s] = r

            t = residual_statistic(np.swapaxes(residuals, 0, 1), gains.Sigma_r)
            sigma = decide_alarm(t, detector.threshold, detector.center)
            stats_t[e], alarms[e] = t, sigma

            beliefs = [local_stats(int(sigma[i]), alpha, beta, prior0[i], prior1[i]) for i in range(n)]
            xs = np.array([b.x for b in beliefs])
            ys = np.array([b.y for b in beliefs])
            xs_hist[e], ys_hist[e] = xs, ys

            for i in range(n):
                ledger.update_data(contract, i + 1, ledger.to_fixed(xs[i], D), ledger.to_fixed(ys[i], D), epoch=e)
            ledger.seal_block(contract)
            x_b, y_b = ledger.aggregate_values(contract)
            if n == 1:
                # a single region can never host a coordinated attack
                p_chain[e] = p_float[e] = 1.0
            else:
                p_chain[e] = ledger.final_probability(x_b, y_b, D, n)
                p_float[e] = no_attack_prob(xs, ys)

            if with_bg:
                bg_attack[e] = _gossip_epoch(xs, ys, graph, trial_rngs, config.gossip_rounds_per_epoch)

            for i, b in enumerate(beliefs):
                prior0[i], prior1[i] = update_prior(b.a, b.b, PRIOR_EPS)
        except GridSentinelError as exc:
            raise ScenarioError(e, exc) from exc

    return ScenarioResult(
        config, detector, beta, graph, alarms, xs_hist, ys_hist, truth, p_chain, p_float, bg_attack, contract,
        statistics=stats_t,
    )


def _gossip_epoch(xs, ys, graph, trial_rngs, rounds):
    """Attack probability seen by every node in every trial after ``rounds``
    activations started from this epoch's local snapshot."""
    st = gossip.init_state(xs, ys, trials=len(trial_rngs))
    if graph is not None and rounds:
        schedule = np.stack([rng.integers(graph.n, size=rounds) for rng in trial_rngs], axis=1)
        gossip.run_rounds(st, graph, schedule)
    return 1.0 - gossip.node_no_attack_prob(st)


def first_crossing(trace, threshold):
    idx = np.flatnonzero(np.asarray(trace) >= threshold)
    return int(idx[0]) if idx.size else None


def box_stats(samples):
    """Box-plot statistics per epoch over all remaining axes (1.5 IQR whiskers)."""
    s = np.asarray(samples, dtype=float).reshape(len(samples), -1)
    q1, med, q3 = np.quantile(s, [0.25, 0.5, 0.75], axis=1)
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    whisker_lo = np.array([row[row >= f].min() for row, f in zip(s, lo_fence)])
    whisker_hi = np.array([row[row <= f].max() for row, f in zip(s, hi_fence)])
    return {
        "min": s.min(axis=1), "whisker_lo": whisker_lo, "q1": q1, "median": med, "q3": q3,
        "whisker_hi": whisker_hi, "max": s.max(axis=1), "mean": s.mean(axis=1),
    }


@dataclass(frozen=True)
class ProtocolComparison:
    threshold: float
    chain_cross: int | None
    bg_median_cross: int | None
    box: dict | None
    chain_trace: np.ndarray

    @property
    def lead(self):
        """BG median crossing minus ledger crossing; None when either never crosses."""
        if self.chain_cross is None or self.bg_median_cross is None:
            return None
        return self.bg_median_cross - self.chain_cross

    @property
    def chain_not_later(self):
        """Ledger crossed no later than BG (a BG that never crosses counts as later)."""
        if self.chain_cross is None:
            return self.bg_median_cross is None
        return self.bg_median_cross is None or self.chain_cross <= self.bg_median_cross


def compare_protocols(chain_trace, bg_samples, threshold=0.9):
    """Crossing epochs of the ledger trace and of the per-epoch BG median."""
    chain_trace = np.asarray(chain_trace, dtype=float)
    chain_cross = first_crossing(chain_trace, threshold)
    if bg_samples is None:
        return ProtocolComparison(threshold, chain_cross, None, None, chain_trace)
    box = box_stats(bg_samples)
    return ProtocolComparison(threshold, chain_cross, first_crossing(box["median"], threshold), box, chain_trace)


def _fmt(v):
    if v is None:
        return ""
    return format(float(v), ".12g")


def emit_metrics(records, path):
    """One CSV row per (epoch, region); BG columns summarise that node across trials."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for rec in records:
            for i, alarm in enumerate(rec.alarms):
                bg = (None, None, None)
                if rec.bg_node_median is not None:
                    bg = (rec.bg_node_min[i], rec.bg_node_median[i], rec.bg_node_max[i])
                w.writerow((rec.epoch, i + 1, alarm, _fmt(rec.p_attack_chain), *(_fmt(v) for v in bg)))


def emit_summary(comparison, config, path, beta=None):
    def cross(v):
        return NOT_DETECTED if v is None else v

    rows = [
        ("threshold", _fmt(comparison.threshold)),
        ("n_regions", config.n_regions),
        ("attacked_regions", " ".join(str(i) for i in config.attacked_regions)),
        ("attack_start", config.attack_start),
        ("gossip_rounds_per_epoch", config.gossip_rounds_per_epoch),
        ("chain_cross_epoch", cross(comparison.chain_cross)),
        ("bg_median_cross_epoch", cross(comparison.bg_median_cross)),
        ("lead_epochs", "" if comparison.lead is None else comparison.lead),
        ("chain_not_later", int(comparison.chain_not_later)),
    ]
    if beta is not None:
        rows.append(("beta", _fmt(beta)))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("key", "value"))
        w.writerows(rows)


def emit_box(comparison, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BOX_HEADER)
        if comparison.box is None:
            return
        for e in range(len(comparison.chain_trace)):
            w.writerow((e, _fmt(comparison.chain_trace[e]), *(_fmt(comparison.box[k][e]) for k in BOX_HEADER[2:])))


def saturated_snapshot(config, beta):
    """Published (x, y) once every attacked region's posterior has saturated
    and every other region sits at the prior floor."""
    xs, ys = [], []
    attacked = set(config.attacked_regions)
    for i in range(1, config.n_regions + 1):
        hit = i in attacked
        p1 = 1.0 - PRIOR_EPS if hit else PRIOR_EPS
        b = local_stats(int(hit), config.alpha_target, beta, 1.0 - p1, p1)
        xs.append(b.x)
        ys.append(b.y)
    return np.array(xs), np.array(ys)


def write_outputs(result, out_dir, figures=True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    comparison = result.compare()
    emit_metrics(result.records, out / "metrics.csv")
    emit_summary(comparison, result.config, out / "summary.csv", beta=result.beta)
    emit_box(comparison, out / "bg_box.csv")
    ledger.write_tx_log(result.contract, out / "transactions.csv")
    written = [out / n for n in ("metrics.csv", "summary.csv", "bg_box.csv", "transactions.csv")]
    if figures:
        from .plotting import plot_scenario

        written += plot_scenario(result, comparison, out)
    return comparison, written
