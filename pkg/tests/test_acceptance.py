"""Acceptance checks at the reference experiment scale.

One test per shipped claim, each printing a single PASS/FAIL line with the
measured numbers before asserting, so the verdict is visible either way.
The assertions state the intended behavior as-is: checks the current
implementation does not meet stay red rather than being loosened.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from test_exact import _grid_scan_index

from whittleq._rng import STREAM_GAP, STREAM_LIPSCHITZ, derive_seed
from whittleq.arms import circulant_instance, one_hot_features, random_arm
from whittleq.cli import main
from whittleq.diagnostics import (c0_estimate, linearization_gap,
                                  lipschitz_probe, measure_run,
                                  reference_solution)
from whittleq.exact import whittle_index_exact, whittle_table
from whittleq.learners import TrainConfig, train_index
from whittleq.nets import f_table, grad, init_net, with_theta

MASTER_SEED = 11
NUM_TRIALS = 20
BUDGET = 50_000
WIDTH = 200
CHECKPOINT = 100
BAND = 0.2
ORACLE = (-0.5, 0.5, 1.0, -1.0)


def _verdict(num: int, ok: bool, detail: str) -> bool:
    print(f"acceptance criterion {num}: {'PASS' if ok else 'FAIL'} "
          f"({detail})")
    return ok


def _train_config(**overrides) -> TrainConfig:
    base = dict(iterations=BUDGET, epsilon=0.5, alpha0=0.5, eta0=0.1,
                seed=MASTER_SEED, checkpoint_every=CHECKPOINT, width=WIDTH)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def arm():
    return circulant_instance()


@pytest.fixture(scope="module")
def fmap():
    return one_hot_features(4)


@pytest.fixture(scope="module")
def trial_curves(arm):
    """Seed-averaged subsidy trajectories: {algorithm: (ks, mean (4, K))}."""
    cfg = _train_config()
    out = {}
    for algorithm in ("tabular", "neural"):
        means = []
        ks = None
        for state in range(4):
            stack = []
            for trial in range(NUM_TRIALS):
                res = train_index(arm, state, algorithm, cfg, trial=trial)
                stack.append(res.lam)
                ks = res.steps
            means.append(np.vstack(stack).mean(axis=0))
        out[algorithm] = (ks, np.vstack(means))
    return out


def _band_entry(ks, mean, lam_star):
    inside = np.flatnonzero(np.abs(mean - lam_star) <= BAND)
    return int(ks[inside[0]]) if inside.size else None


def test_criterion_1_oracle_exactness(arm):
    t0 = time.perf_counter()
    table = whittle_table(arm)
    elapsed = time.perf_counter() - t0
    dev = float(np.max(np.abs(table.indices - np.asarray(ORACLE))))
    ok = dev <= 1e-6 and elapsed < 1.0
    assert _verdict(1, ok,
                    f"indices {np.round(table.indices, 8).tolist()}, "
                    f"max deviation {dev:.2e} vs 1e-6, "
                    f"runtime {elapsed:.3f}s vs 1s")


def test_criterion_2_oracle_self_consistency():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        arm2 = random_arm(2, np.random.default_rng(seed))
        for state in range(2):
            grid = _grid_scan_index(arm2, state)
            assert grid is not None, f"no zero crossing, seed {seed}"
            worst = max(worst,
                        abs(grid - whittle_index_exact(arm2, state)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-3 and elapsed < 30.0
    assert _verdict(2, ok,
                    f"20 random 2-state arms, max |bisection - grid| "
                    f"{worst:.2e} vs 1e-3, runtime {elapsed:.1f}s vs 30s")


def test_criterion_3_neural_convergence_band_and_ranking(trial_curves):
    ks, means = trial_curves["neural"]
    finals = means[:, -1]
    devs = np.abs(finals - np.asarray(ORACLE))
    learned_order = sorted(range(4), key=lambda s: (-finals[s], s))
    oracle_order = sorted(range(4), key=lambda s: (-ORACLE[s], s))
    in_band = bool(np.all(devs <= BAND))
    ranking_ok = learned_order == oracle_order
    ok = in_band and ranking_ok
    assert _verdict(
        3, ok,
        f"neural finals {np.round(finals, 3).tolist()} vs oracle "
        f"{list(ORACLE)}, max |dev| {devs.max():.3f} vs band {BAND}, "
        f"ranking {[s + 1 for s in learned_order]} vs "
        f"{[s + 1 for s in oracle_order]}, "
        f"{NUM_TRIALS} trials @ {BUDGET} steps")


def test_criterion_4_neural_enters_band_earlier(trial_curves):
    ks_n, neural = trial_curves["neural"]
    ks_t, tabular = trial_curves["tabular"]
    wins = 0
    entries = []
    for state in range(4):
        ne = _band_entry(ks_n, neural[state], ORACLE[state])
        te = _band_entry(ks_t, tabular[state], ORACLE[state])
        entries.append((ne, te))
        if ne is not None and (te is None or ne < te):
            wins += 1
    ok = wins >= 3
    assert _verdict(
        4, ok,
        f"band-entry iterations (neural, tabular) per state: {entries}; "
        f"neural earlier for {wins}/4 states vs required 3")


def test_criterion_5_lyapunov_decay(arm, fmap):
    run_cfg = _train_config()
    ref_cfg = _train_config(iterations=200_000)
    curves = []
    ks = None
    for trial in range(NUM_TRIALS):
        ref = reference_solution(arm, fmap, 3, ref_cfg, trial=trial)
        records = measure_run(arm, 3, run_cfg, ref, fmap=fmap, trial=trial)
        ks = np.asarray([r.k for r in records])
        curves.append([r.lyapunov_m for r in records])
    e_m = np.mean(curves, axis=0)
    at_100 = float(e_m[np.searchsorted(ks, 100)])
    final = float(e_m[-1])
    ratio = final / at_100
    tail = ks >= 1000
    slope = float(np.polyfit(np.log(ks[tail]), np.log(e_m[tail]), 1)[0])
    ok = ratio <= 0.1 and -1.5 <= slope <= -0.3
    assert _verdict(
        5, ok,
        f"E[M] at k=100: {at_100:.4f}, final: {final:.4f}, ratio "
        f"{ratio:.4f} vs 0.1; log-log slope past k=1e3: {slope:+.4f} vs "
        f"[-1.5, -0.3]; {NUM_TRIALS} trials, references at 2e5 steps")


def test_criterion_6_c0_nonincreasing_in_width(arm, fmap):
    cfg = _train_config(iterations=200_000)
    estimates = c0_estimate(arm, fmap, (50, 100, 200), 200_000, (0, 1, 2),
                            target_state=3, config=cfg)
    means = [e.value for e in estimates]
    defined = all(v is not None for v in means)
    monotone = defined and all(b <= 1.2 * a
                               for a, b in zip(means, means[1:]))
    ok = defined and monotone
    shown = [None if v is None else round(v, 3) for v in means]
    assert _verdict(
        6, ok,
        f"c0 means over widths (50, 100, 200): {shown}; required "
        f"nonincreasing up to 20% relative noise")


def test_criterion_7_linearization_gap_shrinks(arm, fmap):
    means = {}
    for m in (50, 400):
        vals = []
        for i in range(5):
            rng = np.random.default_rng(
                derive_seed(MASTER_SEED, STREAM_GAP, m, i))
            net = init_net(m, fmap.dim, rng)
            vals.append(linearization_gap(net, fmap, 1.0, 64, rng))
        means[m] = float(np.mean(vals))
    ok = means[400] < means[50]
    assert _verdict(
        7, ok,
        f"mean gap at radius 1.0, 64 probes, 5 seeds: m=50 -> "
        f"{means[50]:.4f}, m=400 -> {means[400]:.4f}; required strictly "
        f"smaller at m=400")


def test_criterion_8_lipschitz_suite(arm, fmap):
    rng = np.random.default_rng(derive_seed(MASTER_SEED, STREAM_LIPSCHITZ))
    net = init_net(WIDTH, fmap.dim, rng)
    report = lipschitz_probe(arm, fmap, net, 10_000, rng)

    # gradient versus central finite differences, away from ReLU kinks
    fd_rng = np.random.default_rng(derive_seed(MASTER_SEED, 7))
    worst_fd = 0.0
    checked = 0
    eps = 1e-6
    for _ in range(20):
        theta = fd_rng.standard_normal(WIDTH * fmap.dim)
        probe = with_theta(net, theta)
        pair = int(fd_rng.integers(8))
        x = fmap.table[pair % 4, pair // 4]  # f_table index is a*S + s
        flat = grad(probe, x)  # already flattened, shape (m*d,)
        pre = probe.weights @ x
        for _ in range(5):
            j = int(fd_rng.integers(flat.size))
            if abs(pre[j // fmap.dim]) < 1e-3:
                continue  # too close to a kink for a two-sided difference
            e = np.zeros(WIDTH * fmap.dim)
            e[j] = eps
            up = f_table(with_theta(net, theta + e), fmap)
            dn = f_table(with_theta(net, theta - e), fmap)
            fd = (up[pair] - dn[pair]) / (2 * eps)
            denom = max(abs(flat[j]), 1e-12)
            worst_fd = max(worst_fd, abs(fd - flat[j]) / denom)
            checked += 1

    # exact agreement between the network and its linearization at the
    # initial weights
    init_equal = bool(np.array_equal(f_table(net, fmap),
                                     f_table(net, fmap, linearized=True)))

    ok = (report.violations == 0 and checked >= 20 and worst_fd <= 1e-5
          and init_equal)
    assert _verdict(
        8, ok,
        f"probe pairs {report.num_pairs}, violations {report.violations} "
        f"(max ratios h/g/y {report.max_ratio_h:.3f}/"
        f"{report.max_ratio_g:.3f}/{report.max_ratio_y:.3f}); grad-vs-FD "
        f"rel err {worst_fd:.2e} over {checked} coordinates vs 1e-5; "
        f"f == f0 at theta0: {init_equal}")


def test_criterion_9_reproduce_determinism(tmp_path):
    sets = [
        "target_states=[2,4]",
        "num_trials=2",
        "params.tabular.iterations=2000",
        "params.neural.iterations=2000",
        "diagnostics.reference_iterations=60000",
        "diagnostics.c0_widths=[8,16]",
        "diagnostics.c0_seeds=[0,1]",
        "diagnostics.c0_budget=60000",
        "diagnostics.gap_widths=[8,64]",
        "diagnostics.gap_probes=16",
        "diagnostics.gap_seeds=2",
        "diagnostics.lipschitz_pairs=200",
    ]

    def reproduce(out: Path, workers: int) -> dict:
        argv = ["reproduce", "--quiet", "--no-plots", "--out", str(out),
                "--workers", str(workers)]
        for item in sets:
            argv += ["--set", item]
        assert main(argv) == 0
        return {str(p.relative_to(out)): p.read_bytes()
                for p in sorted(out.rglob("*"))
                if p.is_file() and (p.suffix == ".csv"
                                    or p.name == "summary.json")}

    first = reproduce(tmp_path / "a", workers=0)
    second = reproduce(tmp_path / "b", workers=0)
    third = reproduce(tmp_path / "c", workers=4)
    rerun_equal = first == second
    parallel_equal = first == third
    ok = rerun_equal and parallel_equal and len(first) > 0
    assert _verdict(
        9, ok,
        f"{len(first)} CSV/JSON artifacts; rerun byte-identical: "
        f"{rerun_equal}; parallel(4) == serial: {parallel_equal}")
