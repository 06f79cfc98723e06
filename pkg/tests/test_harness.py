import csv
import math

import numpy as np
import pytest

from gridsentinel import harness
from gridsentinel.config import ScenarioConfig
from gridsentinel.errors import GridSentinelError
from gridsentinel.harness import (
    BOX_HEADER,
    METRICS_HEADER,
    NOT_DETECTED,
    box_stats,
    build_region_graph,
    compare_protocols,
    emit_metrics,
    emit_summary,
    run_scenario,
    saturated_snapshot,
    write_outputs,
)


def cfg(**kw):
    base = dict(seed=7, n_regions=16, epochs=200, attacked_regions=(1, 9), attack_start=50, magnitude=20.0,
                trials_bg=20)
    base.update(kw)
    return ScenarioConfig(**base)


@pytest.mark.parametrize(
    "topology, n, expected",
    [("ring", 4, (2.0, 4.0)), ("complete", 4, (4.0, 4.0)), ("grid", 4, (2.0, 4.0))],
)
def test_region_graph_examples(topology, n, expected):
    g = build_region_graph(cfg(n_regions=n, topology=topology, attacked_regions=()))
    assert (g.lambda_second_smallest, g.lambda_largest) == pytest.approx(expected, abs=1e-12)


def test_grid_shape_and_geometric_graph():
    assert harness._grid_shape(16) == (4, 4)
    assert harness._grid_shape(40) == (5, 8)
    assert harness._grid_shape(7) == (1, 7)
    with pytest.raises(GridSentinelError):
        build_region_graph(cfg(n_regions=16, topology="grid", grid_rows=3))
    g = build_region_graph(cfg(n_regions=30, topology="geometric", attacked_regions=()))
    assert g.n == 30 and g.lambda_second_smallest > 0
    assert build_region_graph(cfg(n_regions=1, attacked_regions=())) is None


def test_quiet_network_stays_quiet(detector):
    res = run_scenario(cfg(attacked_regions=()), detector=detector, with_bg=False)
    assert np.mean(res.p_attack_chain < 0.5) >= 0.95
    assert res.truth.sum() == 0


def test_coordinated_attack_is_flagged(detector):
    res = run_scenario(cfg(), detector=detector, with_bg=False)
    p = res.p_attack_chain
    assert np.all(p[:50] < 0.5)
    assert np.all(p[55:] > 0.9)
    assert res.truth[:50].sum() == 0 and res.truth[50:, [0, 8]].all()
    assert res.compare().chain_cross >= 50


def test_single_region_never_reports_global_attack(detector):
    res = run_scenario(cfg(n_regions=1, attacked_regions=(1,), epochs=30, attack_start=10), detector=detector)
    assert np.all(res.p_attack_chain == 0.0)
    assert res.alarms[12:].any()


@pytest.fixture(scope="module")
def ledger_runs(detector):
    return {
        (mag, n): run_scenario(cfg(magnitude=mag, n_regions=n), detector=detector, with_bg=False)
        for mag, n in [(20.0, 16), (0.08, 16), (0.08, 40)]
    }


@pytest.mark.parametrize("magnitude, n", [(20.0, 16), (0.08, 16), (0.08, 40)])
def test_ledger_within_truncation_interval(ledger_runs, magnitude, n):
    """Floor conversion only lowers stored values, so the ledger result lies
    between the float result and the product of the worst-case floors."""
    res = ledger_runs[(magnitude, n)]
    D = res.config.D
    for e in range(res.config.epochs):
        xs, ys = res.xs[e], res.ys[e]
        chain, exact = res.p_no_attack_chain[e], res.p_no_attack_float[e]
        lower = np.prod(np.maximum(xs - 1.0 / D, 0.0)) * (1.0 + ys.sum() - n / D)
        assert lower * (1 - 1e-12) <= chain <= exact * (1 + 1e-12)


@pytest.mark.parametrize(
    "magnitude, n",
    [
        (20.0, 16),
        (0.08, 16),
        pytest.param(
            0.08, 40,
            marks=pytest.mark.xfail(
                strict=True,
                reason="floor errors are one-signed and add linearly (up to ~2n/D); the root-n bound is "
                "exceeded on quiet epochs once beta is close to 1/sqrt(n)",
            ),
        ),
    ],
)
def test_ledger_precision_bound_every_epoch(ledger_runs, magnitude, n):
    res = ledger_runs[(magnitude, n)]
    D, beta = res.config.D, res.beta
    bound = (n / D) / (math.sqrt(n) * beta)
    checked = 0
    for e in range(res.config.epochs):
        xs = res.xs[e]
        if xs.min() < beta:
            continue  # saturated alarms sit below the bound's domain x >= beta
        chain, exact = res.p_no_attack_chain[e], res.p_no_attack_float[e]
        checked += 1
        assert abs(chain - exact) / exact <= bound
    assert checked >= 45


def test_bg_summaries_are_ordered(detector):
    res = run_scenario(cfg(epochs=70), detector=detector)
    recs = res.records
    assert len(recs) == 70
    for rec in recs:
        assert 0.0 <= rec.bg_min <= rec.bg_median <= rec.bg_max <= 1.0
        assert all(lo <= md <= hi for lo, md, hi in zip(rec.bg_node_min, rec.bg_node_median, rec.bg_node_max))
        assert 0.0 <= rec.p_attack_chain <= 1.0
        assert rec.chain_detected == (rec.p_attack_chain >= 0.9)


def test_failures_carry_the_epoch(detector, monkeypatch):
    calls = {"n": 0}
    real = harness.local_stats

    def flaky(*args):
        calls["n"] += 1
        if calls["n"] > 16 * 3:
            raise GridSentinelError("boom")
        return real(*args)

    monkeypatch.setattr(harness, "local_stats", flaky)
    with pytest.raises(harness.ScenarioError, match="epoch 3: boom") as exc:
        run_scenario(cfg(epochs=10, attacked_regions=()), detector=detector, with_bg=False)
    assert exc.value.epoch == 3


def test_compare_protocols_examples():
    trace = np.r_[np.zeros(55), np.ones(45)]
    same = compare_protocols(trace, trace[:, None, None], 0.9)
    assert same.lead == 0 and same.chain_not_later
    bg = np.r_[np.zeros(85), np.ones(15)][:, None, None] * np.ones((1, 4, 3))
    cmp_ = compare_protocols(trace, bg, 0.9)
    assert (cmp_.chain_cross, cmp_.bg_median_cross, cmp_.lead) == (55, 85, 30)
    never = compare_protocols(trace, np.zeros((100, 4, 3)), 0.9)
    assert never.bg_median_cross is None and never.lead is None and never.chain_not_later
    late = compare_protocols(np.zeros(100), bg, 0.9)
    assert not late.chain_not_later


def test_box_stats_against_numpy():
    rng = np.random.default_rng(0)
    s = rng.random((6, 10, 5))
    box = box_stats(s)
    flat = s.reshape(6, -1)
    np.testing.assert_allclose(box["median"], np.median(flat, axis=1))
    np.testing.assert_allclose(box["q1"], np.percentile(flat, 25, axis=1))
    assert np.all(box["min"] <= box["whisker_lo"]) and np.all(box["whisker_hi"] <= box["max"])
    assert np.all(box["whisker_lo"] <= box["q1"]) and np.all(box["q3"] <= box["whisker_hi"])


def test_metrics_file_shape(tmp_path, detector):
    emit_metrics([], tmp_path / "empty.csv")
    assert (tmp_path / "empty.csv").read_text() == ",".join(METRICS_HEADER) + "\n"
    res = run_scenario(cfg(n_regions=1, attacked_regions=(), epochs=200), detector=detector)
    emit_metrics(res.records, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert len(lines) == 201
    assert lines[0] == "epoch,region,alarm,p_attack_chain,p_attack_bg_min,p_attack_bg_med,p_attack_bg_max"


def test_metrics_without_bg(tmp_path, detector):
    res = run_scenario(cfg(epochs=5, attacked_regions=()), detector=detector, with_bg=False)
    emit_metrics(res.records, tmp_path / "m.csv")
    with open(tmp_path / "m.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5 * 16
    assert rows[0]["p_attack_bg_med"] == "" and rows[0]["region"] == "1"


def test_outputs_written(tmp_path, detector):
    res = run_scenario(cfg(epochs=60), detector=detector)
    comparison, written = write_outputs(res, tmp_path, figures=True)
    names = {p.name for p in written}
    assert names == {"metrics.csv", "summary.csv", "bg_box.csv", "transactions.csv", "probability.png", "alarms.png"}
    summary = dict(line.split(",", 1) for line in (tmp_path / "summary.csv").read_text().splitlines()[1:])
    assert summary["chain_cross_epoch"] == str(comparison.chain_cross)
    box = (tmp_path / "bg_box.csv").read_text().splitlines()
    assert box[0] == ",".join(BOX_HEADER) and len(box) == 61
    tx = (tmp_path / "transactions.csv").read_text().splitlines()
    assert len(tx) == 1 + 60 * 16
    assert (tmp_path / "probability.png").stat().st_size > 0


def test_summary_sentinel(tmp_path):
    config = cfg()
    emit_summary(compare_protocols(np.zeros(10), np.zeros((10, 2, 2))), config, tmp_path / "s.csv")
    text = (tmp_path / "s.csv").read_text()
    assert f"chain_cross_epoch,{NOT_DETECTED}" in text and f"bg_median_cross_epoch,{NOT_DETECTED}" in text


def test_saturated_snapshot():
    xs, ys = saturated_snapshot(cfg(), 0.1)
    assert xs.shape == ys.shape == (16,)
    assert xs[0] < 1e-3 and xs[1] > 0.999
    assert ys[0] > 1e3 and ys[1] < 1e-6
