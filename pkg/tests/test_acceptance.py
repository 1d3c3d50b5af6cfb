"""Acceptance criteria 1-8.

Each test records one ``criterion N: PASS|FAIL ...`` line. The lines are
printed at the end of a pytest run (see ``conftest.py``) and when this file
is run as a script. Measured values are reported whether or not a
threshold is met.

Run with ``pytest tests/test_acceptance.py``.
"""

import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from influx.cli.bench import loglog_slope, run_bench
from influx.fpe import (RateProfile, build_generator, initial_distribution, predict, rates_dist,
                        solve_closed_form, solve_expm, solve_rk4)
from influx.gen import GeneratorSpec, generate, make_rng, sample_rates
from influx.graph import (PropagationNetwork, ascending_activation_order,
                          shortest_activation_distances)
from influx.oracle import exact_density, exact_rates, lemma_threshold, verify_bounds
from influx.sim import empirical_density, run_ensemble, wilson_interval

from conftest import best_source, lumped_error, random_net

pytestmark = pytest.mark.acceptance

RESULTS = {}


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    return ok


def small_nets():
    """The 20 random nets shared by criteria 1 and 2: five each at K = 4, 6, 8, 10."""
    out = []
    for i, K in enumerate(np.repeat([4, 6, 8, 10], 5)):
        net = random_net(int(K), 100 + i, avg_degree=2.5)
        if i % 5 == 4:
            # one net per size also carries self-activation
            net = net.with_rates(self_rates=make_rng(100 + i, 9).uniform(0, 0.2, int(K)))
        out.append((net, [best_source(net)]))
    return out


def relative_gap(sigma_hat, sigma_ref, floor):
    mask = sigma_ref >= floor
    return float(np.max(np.abs(sigma_hat[mask] - sigma_ref[mask]) / sigma_ref[mask]))


def test_criterion_1_exact_lumping():
    t0 = time.perf_counter()
    errs = [lumped_error(net, S, t_max=5.0, points=100) for net, S in small_nets()]
    secs = time.perf_counter() - t0
    worst = max(errs)
    ok = report(1, worst <= 1e-6 and secs < 60,
                f"worst L-inf {worst:.2e} (<= 1e-6) over {len(errs)} nets, {secs:.1f} s (< 60 s)")
    assert ok


def test_criterion_2_mcmc_wilson():
    t0 = time.perf_counter()
    n = 100_000
    grid = np.linspace(0, 5, 21)
    inside = total = 0
    per_net = []
    for i, (net, S) in enumerate(small_nets()):
        emp = empirical_density(run_ensemble(net, S, 5.0, n, seed=i), grid)
        ex = exact_density(net, S, grid)
        lo, hi = wilson_interval(emp.counts, n)
        # t = 0 is deterministic, so only later cells count
        defined = (ex.rho > 1e-12) & (grid[:, None] > 0)
        hit = (ex.rho >= lo - 1e-12) & (ex.rho <= hi + 1e-12)
        inside += int(hit[defined].sum())
        total += int(defined.sum())
        per_net.append(hit[defined].mean())
    secs = time.perf_counter() - t0
    frac = inside / total
    ok = report(2, frac >= 0.95 and secs < 300,
                f"{frac:.3f} of {total} defined cells inside 99% Wilson bands (>= 0.95), "
                f"worst net {min(per_net):.3f}, {secs:.1f} s (< 300 s)")
    assert ok


def test_criterion_3_solver_consistency():
    gaps, ratios = [], []
    t = np.linspace(0, 6, 31)
    for seed in range(5):
        net = random_net(16, 200 + seed, avg_degree=3)
        S = [best_source(net)]
        prof = rates_dist(net, S)
        rho0 = initial_distribution(16, len(S))
        a = solve_rk4(prof, rho0, t).rho
        b = solve_expm(prof, rho0, t).rho
        c = solve_closed_form(prof, rho0, t).rho
        gaps.append(max(np.abs(a - b).max(), np.abs(a - c).max(), np.abs(b - c).max()))
        # h must divide the output spacing, else rounding spoils the exact halving
        dt = t[1] - t[0]
        h = dt / np.ceil(dt * prof.max_rate / 0.5)
        e1 = np.abs(solve_rk4(prof, rho0, t, step=h).rho - b).max()
        e2 = np.abs(solve_rk4(prof, rho0, t, step=h / 2).rho - b).max()
        ratios.append(e1 / e2)
    ok = report(3, max(gaps) <= 1e-5 and min(ratios) >= 12,
                f"worst pairwise L-inf {max(gaps):.2e} (<= 1e-5), "
                f"min halving ratio {min(ratios):.1f} (>= 12)")
    assert ok


def figure1_nets():
    ws = GeneratorSpec("small_world", 32, seed=0, ring_degree=4)
    return [
        ("ER16", sample_rates(generate(GeneratorSpec("er", 16, seed=0, avg_degree=4)), 0)),
        ("ER32", sample_rates(generate(GeneratorSpec("er", 32, seed=0, avg_degree=4)), 0)),
        ("SW32", sample_rates(generate(ws), 0)),
    ]


def test_criterion_4_figure1():
    t0 = time.perf_counter()
    grid = np.linspace(0, 10, 201)
    parts, ok = [], True
    for name, net in figure1_nets():
        S = [best_source(net)]
        mc = empirical_density(run_ensemble(net, S, 10.0, 5000, seed=0), grid)
        sigma_mc = mc.totals / mc.n
        tree = relative_gap(predict(net, S, grid, method="tree", m=256).sigma, sigma_mc, len(S))
        dist = relative_gap(predict(net, S, grid, method="dist").sigma, sigma_mc, len(S))
        ok &= tree <= 0.05 and dist <= 0.15
        parts.append(f"{name} tree {tree:.3f} dist {dist:.3f}")
    secs = time.perf_counter() - t0
    ok &= secs < 600
    report(4, ok, "; ".join(parts) + f" (tree <= 0.05, dist <= 0.15), {secs:.1f} s")
    assert ok


def figure23_nets():
    K = 1024
    specs = [
        ("ER8", GeneratorSpec("er", K, seed=0, avg_degree=8)),
        ("SW6", GeneratorSpec("small_world", K, seed=0, ring_degree=6)),
        ("SF6", GeneratorSpec("scale_free", K, seed=0, attach=6)),
        ("ER32", GeneratorSpec("er", K, seed=0, avg_degree=32)),
        ("ER64", GeneratorSpec("er", K, seed=0, avg_degree=64)),
        ("ER128", GeneratorSpec("er", K, seed=0, avg_degree=128)),
    ]
    return [(name, sample_rates(generate(spec), 0)) for name, spec in specs]


def test_criterion_5_figure23():
    t0 = time.perf_counter()
    grid = np.linspace(0, 10, 101)
    K = 1024
    S = sorted(make_rng(0, 3).choice(K, 10, replace=False).tolist())
    parts, worst = [], 0.0
    for name, net in figure23_nets():
        mc = empirical_density(run_ensemble(net, S, 10.0, 5000, seed=0), grid)
        gap = relative_gap(predict(net, S, grid).sigma, mc.totals / mc.n, len(S))
        worst = max(worst, gap)
        parts.append(f"{name} {gap:.3f}")
    secs = time.perf_counter() - t0
    ok = report(5, worst <= 0.2 and secs < 1800,
                "dist " + ", ".join(parts) + f" (<= 0.2), {secs:.1f} s on one worker")
    assert ok


def bound_trial(i, narrow):
    """One randomized (net, eps, delta) trial at K = 6.

    The estimate is ``q_k(t) (1 + u_k thr_k(T))`` with ``|u_k| < 1``; the
    threshold shrinks with t, so the hypothesis holds on the whole grid.
    """
    K = 6
    rng = make_rng(500 + i, 0)
    lo, hi = (0.8, 1.0) if narrow else (0.0, 1.0)
    T = rng.uniform(40, 80) if narrow else rng.uniform(2, 8)
    net = sample_rates(generate(GeneratorSpec("er", K, seed=500 + i, avg_degree=2.5)), 500 + i,
                       lo=lo, hi=hi)
    S = [best_source(net)]
    eps = rng.uniform(0.01, 0.2)
    grid = np.linspace(0, T, 201)
    dens = exact_density(net, S, grid)
    ex = exact_rates(net, S, grid, density=dens)
    thr = np.array([lemma_threshold(eps, T, k, K, net.max_rate, net.max_out_degree)
                    for k in range(K)])
    u = rng.uniform(-1, 1, K)
    q_hat = RateProfile(ex.filled().q * (1 + u * thr), times=grid)
    rep = verify_bounds(net, S, q_hat, eps, grid, exact=ex, density=dens,
                        step=min(0.01, T / 2000))
    fac = rep.params["envelope_factor"]
    first = bool(rep.hypothesis.all() and np.all(rep.rel_error <= fac + 1e-12))
    engaged = rep.envelope < fac
    refined = int(np.sum(engaged & (rep.rel_error > rep.envelope + 1e-9)))
    return first, int(engaged.sum()), refined


def test_criterion_6_error_bound():
    t0 = time.perf_counter()
    trials = [bound_trial(i, narrow=i >= 25) for i in range(50)]
    secs = time.perf_counter() - t0
    first = sum(t[0] for t in trials)
    engaged = sum(t[1] for t in trials)
    refined = sum(t[2] for t in trials)
    ok = report(6, first == 50 and refined == 0 and secs < 120,
                f"first bound {first}/50, refined envelope engaged at {engaged} points with "
                f"{refined} violations, {secs:.1f} s (< 120 s)")
    assert ok


def test_criterion_7_scalability():
    sizes = [10 ** 5, 10 ** 6, 10 ** 7]
    rows, aborted = run_bench(sizes, family="profile", steps=200)
    assert aborted is None, aborted
    secs = {r["nodes"]: r["solve_s"] for r in rows}
    # the small size is cheap, so take the best of three runs
    for _ in range(2):
        r, _ = run_bench(sizes[:1], family="profile", steps=200)
        secs[sizes[0]] = min(secs[sizes[0]], r[0]["solve_s"])
    slope = loglog_slope(sizes, [secs[K] for K in sizes])
    ok = report(7, secs[sizes[0]] < 1 and secs[sizes[-1]] < 20 and 0.8 <= slope <= 1.3,
                f"K=1e5 {secs[sizes[0]]:.2f} s (< 1), K=1e6 {secs[sizes[1]]:.2f} s, "
                f"K=1e7 {secs[sizes[-1]]:.2f} s (< 20), slope {slope:.2f} (0.8-1.3)")
    assert ok


PROP = settings(max_examples=40, deadline=None)


def _invariants():
    failures = []

    def check(name, prop):
        try:
            prop()
        except Exception as exc:
            failures.append(f"{name}: {type(exc).__name__}")

    @PROP
    @given(st.integers(2, 40), st.integers(0, 10 ** 6), st.floats(0.1, 5))
    def conservation(K, seed, t):
        rng = np.random.default_rng(seed)
        prof = RateProfile(rng.uniform(0, 3, K), rng.uniform(0, 1, K) * (seed % 2))
        tr = solve_rk4(prof, initial_distribution(K, 1), np.linspace(0, t, 5))
        assert np.all(np.abs(tr.rho.sum(axis=1) - 1) <= 1e-9)

    @PROP
    @given(st.integers(2, 40), st.integers(0, 10 ** 6))
    def si_tail(K, seed):
        prof = RateProfile(np.random.default_rng(seed).uniform(0, 3, K))
        tr = solve_rk4(prof, initial_distribution(K, 1), np.linspace(0, 4, 21))
        tail = np.cumsum(tr.rho[:, ::-1], axis=1)[:, ::-1]
        assert np.all(np.diff(tail, axis=0) >= -1e-9)

    @PROP
    @given(st.integers(1, 40), st.integers(0, 10 ** 6))
    def zero_rows(K, seed):
        rng = np.random.default_rng(seed)
        A = build_generator(RateProfile(rng.uniform(0, 3, K), rng.uniform(0, 3, K)))
        assert np.abs(A.row_sums()).max() <= 1e-12

    @settings(max_examples=10, deadline=None)
    @given(st.integers(3, 25), st.integers(0, 10 ** 6), st.integers(2, 4))
    def determinism(K, seed, workers):
        net = random_net(K, seed % 1000, gamma=np.full(K, 0.3))
        a = run_ensemble(net, [0], 3.0, 50, seed=seed, workers=1)
        b = run_ensemble(net, [0], 3.0, 50, seed=seed, workers=workers, batch_size=7)
        for x, y in zip(a, b):
            assert np.array_equal(x.times, y.times) and np.array_equal(x.nodes, y.nodes)

    @PROP
    @given(st.integers(2, 30), st.integers(0, 10 ** 6))
    def relaxation(K, seed):
        net = random_net(K, seed % 10 ** 4, avg_degree=min(3, K - 1))
        d = shortest_activation_distances(net, [0])
        src, dst, rate = net.edges()
        fin = np.isfinite(d[src])
        assert np.all(d[dst][fin] <= d[src][fin] + 1 / rate[fin] + 1e-12)
        # unreachable nodes come last at distance inf
        ds = d[ascending_activation_order(net, [0], d)]
        reach = int(np.isfinite(ds).sum())
        assert np.all(np.isfinite(ds[:reach])) and np.all(np.diff(ds[:reach]) >= 0)

    for name, prop in [("conservation", conservation), ("SI tail monotone", si_tail),
                       ("generator zero row sums", zero_rows),
                       ("worker determinism", determinism), ("Dijkstra relaxation", relaxation)]:
        check(name, prop)
    return failures


def test_criterion_8_invariants():
    failures = _invariants()
    ok = report(8, not failures, "all 5 property suites green" if not failures
                else "failing: " + ", ".join(failures))
    assert ok


if __name__ == "__main__":
    import sys

    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
