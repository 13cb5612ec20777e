"""Acceptance criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` (lines print even without ``-s``).
"""

import math
import time

import numpy as np
import pytest

from pathlora import cli, studies
from pathlora.alloc import PruneSchedule, budget_at
from pathlora.config import load_config
from pathlora.experiments import compare, run_seed
from pathlora.ig import ScoreField, completeness
from pathlora.linalg import Prng, canonicalize, svd_product, svd_thin
from pathlora.model import AdapterLayer, Batch, Network
from pathlora.score import ImportanceState, SnrSimConfig, snr_simulate, update
from pathlora.tasks import PlantedSpec, gen_planted, probe_problem, student_network
from pathlora.trainer import TrainConfig, train


@pytest.fixture
def verdict(capsys):
    def emit(number, name, ok, detail, elapsed=None, limit=None):
        if limit is not None:
            ok = ok and elapsed < limit
            detail += f"; {elapsed:.1f}s (limit {limit:g}s)"
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {number:2d} {name}: {detail}")
        assert ok, detail
    return emit


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def comparison(planted_cfg_path):
    cfg = load_config(planted_cfg_path)
    (rows, summary), elapsed = timed(compare, cfg, list(range(5)))
    return rows, summary, elapsed


def test_01_gradient_oracle(verdict):
    res, dt = timed(studies.gradient_suite, 0, 100, 1e-5)
    verdict(1, "gradient oracle", res.configs == 100 and res.passed(1e-5),
            f"max rel error {res.worst:.2e} over {res.configs} configs (tol 1e-5)", dt, 30)


def test_02_discretization_slope(verdict, default_path):
    (rows, slope), dt = timed(studies.discretization, default_path, (2, 4, 8, 16, 32, 64), 4096)
    verdict(2, "trapezoid error slope", -2.4 <= slope <= -1.6,
            f"slope {slope:.4f} in [-2.4, -1.6]", dt, 60)


def test_03_sampling_scaling(verdict, default_path):
    (rows, ratios), dt = timed(studies.sampling, default_path, 20, (4, 16, 64), 200)
    pairs = [ratios[4], ratios[16]]
    verdict(3, "sampling std ratio", all(1.6 <= r <= 2.4 for r in pairs),
            f"std(4)/std(16)={pairs[0]:.3f}, std(16)/std(64)={pairs[1]:.3f} in [1.6, 2.4]", dt, 120)


def test_04_bound_coverage(verdict, default_path):
    res, dt = timed(studies.coverage, default_path, 20, 16, 200, 0.05, 1.0)
    verdict(4, "bound coverage", res["coverage"] >= 0.95,
            f"coverage {res['coverage']:.4f} >= 0.95 over 200 trials", dt, 120)


def test_05_completeness(verdict):
    t0 = time.perf_counter()
    net, batch = probe_problem()
    views = [canonicalize(svd_product(l.a, l.b)) for l in net.layers]
    gap_default = completeness(net, views, batch, 1024).gap
    g = Prng(21)
    w0 = g.normal(20).reshape(5, 4)
    a, b = g.normal(10).reshape(5, 2), g.normal(8).reshape(2, 4)
    lq = Network([AdapterLayer(w0, a, b)], loss_kind="mse")
    lq_batch = Batch(g.normal(35).reshape(7, 5), g.normal(28).reshape(7, 4))
    gap_lq = completeness(lq, [canonicalize(svd_product(a, b))], lq_batch, 1024).gap
    verdict(5, "completeness", gap_default <= 1e-3 and gap_lq <= 1e-10,
            f"default net {gap_default:.2e} (<= 1e-3), linear/quadratic {gap_lq:.2e} (<= 1e-10)",
            time.perf_counter() - t0, 10)


def test_06_svd_contract(verdict):
    t0 = time.perf_counter()
    rng = Prng(2024, "svd-acceptance")
    worst = 0.0
    canon_ok = True
    for i in range(1000):
        m, n = (int(x) for x in rng.integers(1, 65, 2))
        mat = rng.normal(m * n).reshape(m, n)
        if i % 4 == 0:
            k = int(rng.integers(1, min(m, n) + 1, 1)[0])
            mat = rng.normal(m * k).reshape(m, k) @ rng.normal(k * n).reshape(k, n)
        view = svd_thin(mat)
        worst = max(worst, *view.residuals(mat))
        once = canonicalize(view)
        twice = canonicalize(once)
        canon_ok &= (np.array_equal(once.p, twice.p) and np.array_equal(once.q, twice.q)
                     and np.array_equal(once.lam, twice.lam))
        worst = max(worst, once.residuals(mat)[0])
    verdict(6, "svd contract", worst <= 1e-10 and canon_ok,
            f"worst residual {worst:.2e} (<= 1e-10), canonicalize idempotent={canon_ok}",
            time.perf_counter() - t0, 30)


def test_07_snr_stability(verdict):
    cfg = SnrSimConfig(mu=1.0, sigma=0.2, betas=(0.5, 0.85, 0.97), replications=200, delta=0.05)
    (_, summary), dt = timed(snr_simulate, cfg, 0)
    meds = [p["median_deviation"] for p in summary["per_beta"]]
    verdict(7, "snr stability",
            summary["monotone_non_increasing"] and summary["min_coverage"] >= 0.95,
            f"medians {[f'{m:.4f}' for m in meds]} non-increasing; "
            f"min coverage {summary['min_coverage']:.3f} >= 0.95", dt, 60)


def _scalar(v):
    return ScoreField([np.array([[v]])], [np.zeros((1, 0))])


def test_08_ema_exactness(verdict):
    worst = 0.0
    st = update(ImportanceState(), _scalar(3.0))
    for _ in range(50):
        st = update(st, _scalar(3.0))
        worst = max(worst, abs(st.s_bar.p[0][0, 0] - 3.0), abs(st.u_bar.p[0][0, 0]))
    st = update(ImportanceState(), _scalar(0.0))
    for t in range(1, 60):
        st = update(st, _scalar(1.0))
        worst = max(worst, abs(abs(st.s_bar.p[0][0, 0] - 1.0) - 0.85 ** t))
    st = update(update(ImportanceState(), _scalar(1.0)), _scalar(2.0))
    worst = max(worst, abs(st.s_bar.p[0][0, 0] - 1.15), abs(st.u_bar.p[0][0, 0] - 0.1275))
    verdict(8, "ema exactness", worst <= 1e-12, f"worst deviation {worst:.1e} (<= 1e-12)")


def test_09_pruning(verdict, planted_cfg_path):
    cfg = load_config(planted_cfg_path)
    report = run_seed(cfg, 0)
    steps_per_epoch = math.ceil(cfg["n_train"] / cfg["batch_size"])
    sched = PruneSchedule(r0=cfg["r0"], b_final=cfg["b_final"], n_layers=2,
                          start_epoch=cfg["start_epoch"], end_epoch=cfg["end_epoch"],
                          interval=cfg["interval"])
    drift_ok = all(d <= m + 1e-10 for ev in report.prune_events
                   for d, m in zip(ev["drift"], ev["dropped_mass"]))
    budget_ok = all(sum(ev["ranks"]) == ev["budget"] == budget_at(sched, ev["step"], steps_per_epoch)
                    for ev in report.prune_events)
    spec = PlantedSpec(n_train=512, n_val=128, n_test=128)
    data, _ = gen_planted(spec)
    full = PruneSchedule(r0=4, b_final=8, start_epoch=1.0, end_epoch=2.0, interval=0.25)
    noop, _ = train(student_network(spec, 4, 0), data, TrainConfig(epochs=3, schedule=full))
    noop_drift = max(max(ev["drift"]) for ev in noop.prune_events)
    verdict(9, "pruning", bool(report.prune_events) and drift_ok and budget_ok
            and noop_drift <= 1e-12,
            f"{len(report.prune_events)} events, drift within bound={drift_ok}, "
            f"budget matches schedule={budget_ok}, full-budget drift {noop_drift:.1e}")


def test_10_allocation(verdict, comparison):
    rows, summary, elapsed = comparison
    med = summary["median_final_ranks"]["adaptive"]
    verdict(10, "allocation", med[0] > med[1],
            f"median final ranks {med} (layer 1 > layer 2)", elapsed, 180)


def test_11_comparison(verdict, comparison):
    rows, summary, elapsed = comparison
    a, f = summary["median_test_loss"]["adaptive"], summary["median_test_loss"]["fixed-lora"]
    verdict(11, "adaptive vs fixed", a <= f,
            f"median test loss {a:.3e} <= fixed {f:.3e} at equal triplet budget", elapsed, 300)


def test_12_determinism(verdict, planted_cfg_path, tmp_path):
    outs = []
    for name in ("a", "b"):
        assert cli.main(["train", str(planted_cfg_path), "--out", str(tmp_path / name)]) == 0
        files = {}
        for f in ("report.json", "ranks.csv", "scores.csv"):
            lines = (tmp_path / name / f).read_text().splitlines()
            files[f] = [l for l in lines if '"wall_clock_seconds"' not in l]
        outs.append(files)
    verdict(12, "determinism", outs[0] == outs[1],
            "report.json, ranks.csv and scores.csv identical apart from wall clock")
