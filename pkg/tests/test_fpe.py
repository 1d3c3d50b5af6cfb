import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from influx.errors import InvariantError, PreconditionError, SpecError, StabilityError, UnsupportedError
from influx.fpe import (RateProfile, build_generator, influence, initial_distribution, predict,
                        rates_dist, rates_tree, read_rates, run_prediction, solve_closed_form,
                        solve_expm, solve_rk4, write_rates)
from influx.gen import GeneratorSpec, generate, make_rng, sample_rates
from influx.graph import PropagationNetwork, frontier_rate, shortest_activation_distances
from influx.sim import empirical_density, run_ensemble

from conftest import best_source, path_net, random_net


def random_profile(K, seed, lo=0.2, hi=3.0, recovery=False):
    rng = np.random.default_rng(seed)
    q = rng.uniform(lo, hi, K)
    r = rng.uniform(0, 1, K) if recovery else None
    return RateProfile(q, r)


# -- rate estimators -----------------------------------------------------

def test_dist_path():
    prof = rates_dist(path_net(), [0])
    np.testing.assert_allclose(prof.q[1:], [0.5, 0.5])
    assert prof.kind == "constant"


def test_dist_all_sources():
    net = random_net(8, 0, avg_degree=3)
    assert np.all(rates_dist(net, range(8)).q == 0)


def test_dist_matches_brute_force_prefix():
    for seed in range(4):
        net = random_net(8, seed, avg_degree=3)
        d = shortest_activation_distances(net, [0])
        q = rates_dist(net, [0]).q
        reach = int(np.isfinite(d).sum())
        for k in range(1, reach):
            # lexicographically smallest set with the smallest distances
            best = min(itertools.combinations(range(8), k), key=lambda c: (sorted(d[list(c)]), c))
            assert q[k] == pytest.approx(frontier_rate(net, best), abs=1e-12)


def test_dist_self_activation_and_recovery():
    beta = np.full(6, 0.1)
    gamma = np.full(6, 0.5)
    net = random_net(6, 3, beta=beta, gamma=gamma)
    prof = rates_dist(net, [0])
    d = shortest_activation_distances(net, [0])
    order = np.lexsort((np.arange(6), d))
    for k in range(6):
        U = order[:k]
        assert prof.q[k] == pytest.approx(frontier_rate(net, U) + 0.1 * (6 - k))
    np.testing.assert_allclose(prof.r, 0.5 * np.arange(1, 7))


def exact_jump_chain_rates(net, S):
    """q_k as the expected frontier rate of the embedded jump chain, by enumerating orders."""
    K = net.node_count
    q = np.zeros(K)
    mass = np.zeros(K + 1)

    def walk(U, p):
        k = len(U)
        a = frontier_rate(net, sorted(U))
        if k < K:
            q[k] += p * a
        mass[k] += p
        if k == K or a == 0:
            return
        for j in range(K):
            if j in U:
                continue
            aj = sum(r for i, t, r in zip(*net.edges()) if t == j and i in U)
            if aj > 0:
                walk(U | {j}, p * aj / a)

    walk(set(S), 1.0)
    ok = mass[:K] > 0
    q[ok] /= mass[:K][ok]
    return q


def test_tree_exhaustive_complete_digraph():
    K = 6
    rng = np.random.default_rng(4)
    src, dst = zip(*[(i, j) for i in range(K) for j in range(K) if i != j])
    net = PropagationNetwork.from_edges(K, src, dst, rng.uniform(0, 1, len(src)))
    prof = rates_tree(net, [0], m=2 ** K)
    oracle = exact_jump_chain_rates(net, {0})
    np.testing.assert_allclose(prof.q[1:], oracle[1:], rtol=1e-10)
    rm = [x for x in prof.meta["retained_mass"] if x is not None]
    np.testing.assert_allclose(rm, 1.0)


def test_tree_width_one_on_path_equals_dist():
    net = path_net(5, 0.3)
    np.testing.assert_allclose(rates_tree(net, [0], m=1).q, rates_dist(net, [0]).q)


def test_tree_errors_and_schedules():
    net = random_net(8, 1, avg_degree=3)
    with pytest.raises(SpecError):
        rates_tree(net, [0], m=0)
    with pytest.raises(PreconditionError):
        rates_tree(net, [], m=4)
    a = rates_tree(net, [0], m=[4] * 8)
    b = rates_tree(net, [0], m=lambda k: 4)
    np.testing.assert_array_equal(a.q, b.q)
    np.testing.assert_array_equal(a.q, rates_tree(net, [0], m=4).q)


def test_tree_beats_dist_on_er16():
    net = sample_rates(generate(GeneratorSpec("er", 16, seed=0, avg_degree=4)), 0)
    s = best_source(net)
    grid = np.linspace(0, 10, 201)
    ens = run_ensemble(net, [s], 10.0, 5000, seed=0)
    mc = empirical_density(ens, grid).rho @ np.arange(17)
    err = {m: np.max(np.abs(predict(net, [s], grid, method=m, m=256).sigma - mc) / mc)
           for m in ("dist", "tree")}
    assert err["tree"] < err["dist"]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), K=st.integers(3, 12))
def test_tree_retained_mass_monotone_in_width(seed, K):
    net = random_net(K, seed, avg_degree=min(3.0, K - 1))
    prev = None
    for m in (1, 2, 4, 16, 64):
        rm = np.array([np.nan if x is None else x for x in rates_tree(net, [0], m).meta["retained_mass"]])
        if prev is not None:
            assert np.all((rm >= prev - 1e-12) | np.isnan(rm))
        prev = rm


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), K=st.integers(2, 20), method=st.sampled_from(["dist", "tree"]))
def test_rate_bound(seed, K, method):
    beta = np.random.default_rng(seed).uniform(0, 0.2, K)
    net = random_net(K, seed, avg_degree=min(3.0, K - 1), beta=beta)
    prof = rates_dist(net, [0]) if method == "dist" else rates_tree(net, [0], 8)
    k = np.arange(K)
    a_hi = net.max_rate if net.edge_count else 0.0
    bound = a_hi * k * np.minimum(net.max_out_degree, K - k) + beta.sum()
    assert np.all(prof.q <= bound + 1e-12)


# -- generator -----------------------------------------------------------

def test_generator_examples():
    A = build_generator((np.array([2.0, 3.0]), np.zeros(2))).toarray()
    np.testing.assert_array_equal(A, [[-2, 2, 0], [0, -3, 3], [0, 0, 0]])
    assert not build_generator((np.zeros(4), np.zeros(4))).toarray().any()
    with pytest.raises(InvariantError):
        build_generator((np.array([-1.0]), np.zeros(1)))
    with pytest.raises(InvariantError):
        RateProfile([1.0, -0.5])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), K=st.integers(1, 40), rec=st.booleans())
def test_generator_zero_row_sums(seed, K, rec):
    G = build_generator(random_profile(K, seed, recovery=rec))
    scale = np.abs(G.main).max() + 1
    assert np.all(np.abs(G.row_sums()) <= 1e-14 * scale)
    A = G.toarray()
    off = A - np.diag(np.diag(A))
    assert np.all(off >= 0)


# -- solvers -------------------------------------------------------------

def test_rk4_zero_rates_and_single_state():
    prof = RateProfile(np.zeros(5))
    rho0 = initial_distribution(5, 2)
    tr = solve_rk4(prof, rho0, np.linspace(0, 3, 7))
    assert np.all(tr.rho == rho0)
    a = 1.7
    t = np.linspace(0, 2, 21)
    tr = solve_rk4(RateProfile([a]), [1.0, 0.0], t, step=1e-3 / a)
    np.testing.assert_allclose(tr.rho[:, 0], np.exp(-a * t), atol=1e-8, rtol=0)


def test_rk4_matches_expm_k64():
    prof = random_profile(64, 1)
    t = np.linspace(0, 8, 41)
    rho0 = initial_distribution(64, 1)
    np.testing.assert_allclose(solve_rk4(prof, rho0, t).rho, solve_expm(prof, rho0, t).rho, atol=1e-6)


def test_rk4_birth_death_matches_expm():
    prof = random_profile(20, 2, recovery=True)
    t = np.linspace(0, 5, 26)
    rho0 = initial_distribution(20, 3)
    np.testing.assert_allclose(solve_rk4(prof, rho0, t).rho, solve_expm(prof, rho0, t).rho, atol=1e-6)


def test_rk4_sampled_profile_constant_in_time():
    prof = random_profile(10, 3, recovery=True)
    t = np.linspace(0, 4, 9)
    sampled = RateProfile(np.tile(prof.q, (9, 1)), np.tile(prof.r, (9, 1)), times=t)
    rho0 = initial_distribution(10, 1)
    np.testing.assert_allclose(solve_rk4(sampled, rho0, t).rho, solve_rk4(prof, rho0, t).rho,
                               atol=1e-12)


def test_rk4_stability_error():
    prof = RateProfile(np.full(10, 50.0))
    with pytest.raises(StabilityError) as exc:
        solve_rk4(prof, initial_distribution(10, 0), [0.0, 1.0], step=1.0, max_halvings=1)
    assert exc.value.suggested_step < 1.0


def test_rk4_halving_recovers():
    prof = RateProfile(np.full(10, 50.0))
    tr = solve_rk4(prof, initial_distribution(10, 0), [0.0, 1.0], step=1.0)
    assert tr.meta["halvings"] > 0
    assert tr.meta["min_raw"] >= -1e-9


def test_rk4_order_four():
    prof = random_profile(16, 5)
    t = np.linspace(0, 3, 7)
    rho0 = initial_distribution(16, 1)
    ref = solve_expm(prof, rho0, t).rho
    errs = [np.abs(solve_rk4(prof, rho0, t, step=h).rho - ref).max() for h in (0.05, 0.025)]
    assert errs[0] / errs[1] >= 12


def test_expm_examples():
    prof = random_profile(32, 6)
    rho0 = initial_distribution(32, 2)
    assert np.array_equal(solve_expm(prof, rho0, 0.0).rho, rho0)
    a = 0.8
    assert solve_expm(RateProfile([a]), [1.0, 0.0], 2.0).rho[0] == pytest.approx(np.exp(-1.6), abs=1e-12)
    t = np.linspace(0, 4, 9)
    np.testing.assert_allclose(solve_expm(prof, rho0, t).rho,
                               solve_rk4(prof, rho0, t, step=1e-3).rho, atol=1e-6)
    sampled = RateProfile(np.ones((2, 3)), times=[0.0, 1.0])
    with pytest.raises(UnsupportedError):
        solve_expm(sampled, initial_distribution(3, 0), 1.0)


def test_closed_form_examples():
    t = np.linspace(0, 3, 31)
    tr = solve_closed_form(RateProfile([1.2]), [1.0, 0.0], t)
    np.testing.assert_allclose(tr.rho[:, 0], np.exp(-1.2 * t), atol=1e-9)
    q0, q1 = 0.7, 1.9
    tr = solve_closed_form(RateProfile([q0, q1]), [1.0, 0.0, 0.0], t)
    exact = q0 * (np.exp(-q0 * t) - np.exp(-q1 * t)) / (q1 - q0)
    np.testing.assert_allclose(tr.rho[:, 1], exact, atol=1e-8)
    with pytest.raises(UnsupportedError):
        solve_closed_form(random_profile(3, 0, recovery=True), initial_distribution(3, 0), t)


def test_closed_form_matches_rk4_k16():
    prof = random_profile(16, 7)
    t = np.linspace(0, 6, 61)
    rho0 = initial_distribution(16, 1)
    assert np.abs(solve_closed_form(prof, rho0, t).rho - solve_rk4(prof, rho0, t).rho).max() <= 1e-5


def test_solver_input_checks():
    prof = random_profile(4, 0)
    with pytest.raises(SpecError):
        solve_rk4(prof, [1, 0, 0], [0, 1])
    with pytest.raises(SpecError):
        solve_rk4(prof, [0.5, 0, 0, 0, 0], [0, 1])
    with pytest.raises(SpecError):
        solve_rk4(prof, initial_distribution(4, 0), [0, 1, 1])


def test_influence_examples():
    assert influence(initial_distribution(6, 3)) == 3
    assert influence(initial_distribution(6, 6)) == 6
    assert influence(np.full(7, 1 / 7)) == pytest.approx(3.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), K=st.integers(1, 30), rec=st.booleans(),
       solver=st.sampled_from(["rk4", "expm"]))
def test_conservation(seed, K, rec, solver):
    prof = random_profile(K, seed, recovery=rec)
    rho0 = initial_distribution(K, seed % (K + 1))
    t = np.linspace(0, 5, 11)
    tr = (solve_rk4 if solver == "rk4" else solve_expm)(prof, rho0, t)
    np.testing.assert_allclose(tr.rho.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(tr.rho >= 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), K=st.integers(1, 30))
def test_si_tail_mass_monotone(seed, K):
    prof = random_profile(K, seed, lo=0.0)
    t = np.linspace(0, 6, 25)
    tr = solve_rk4(prof, initial_distribution(K, 0), t)
    tail = np.cumsum(tr.rho[:, ::-1], axis=1)[:, ::-1]
    assert np.all(np.diff(tail, axis=0) >= -1e-12)
    assert np.all(np.diff(tr.sigma) >= -1e-12)


def test_rates_file_roundtrip(tmp_path):
    prof = random_profile(5, 1, recovery=True)
    p = tmp_path / "r.csv"
    write_rates(p, prof)
    back = read_rates(p)
    np.testing.assert_array_equal(back.q, prof.q)
    np.testing.assert_array_equal(back.r, prof.r)
    t = np.array([0.0, 0.5])
    q = np.array([[1.0, np.nan], [1.5, 2.0]])
    sampled = RateProfile(q, np.zeros_like(q), times=t, defined=~np.isnan(q))
    write_rates(p, sampled)
    back = read_rates(p)
    np.testing.assert_array_equal(back.defined, sampled.defined)
    np.testing.assert_array_equal(back.times, t)


# -- pipeline ------------------------------------------------------------

def test_predict_all_sources():
    net = random_net(7, 2)
    c = predict(net, range(7), np.linspace(0, 3, 5))
    np.testing.assert_allclose(c.sigma, 7.0)


def test_predict_path_closed_form():
    net = path_net(3, 0.5)
    t = np.linspace(0, 10, 51)
    c = predict(net, [0], t, solver="expm")
    a = 0.5
    # two equal-rate exponential stages: rho_1 = e^{-at}, rho_2 = a t e^{-at}
    sigma = 1 * np.exp(-a * t) + 2 * a * t * np.exp(-a * t) + 3 * (1 - np.exp(-a * t) - a * t * np.exp(-a * t))
    np.testing.assert_allclose(c.sigma, sigma, atol=1e-10)


def test_predict_provenance_and_grid():
    net = random_net(10, 1, avg_degree=3)
    pr = run_prediction(net, [0], [1.0, 2.0], method="tree", m=8)
    assert pr.curve.times.tolist() == [1.0, 2.0]
    prov = pr.curve.provenance
    assert prov["method"] == "tree" and prov["tree_width"] == 8 and "solver" in prov
    with pytest.raises(SpecError):
        predict(net, [0], [1.0, 0.5])
    with pytest.raises(SpecError):
        predict(net, [0], [1.0], method="magic")


def test_predict_within_mcmc_spread_k1024():
    K = 1024
    net = sample_rates(generate(GeneratorSpec("er", K, seed=0, avg_degree=8)), 0)
    src = sorted(make_rng(0, 3).choice(K, 10, replace=False).tolist())
    grid = np.linspace(0, 10, 101)
    dens = empirical_density(run_ensemble(net, src, 10.0, 5000, seed=0), grid)
    k = np.arange(K + 1)
    mean = dens.rho @ k
    spread = np.sqrt(np.maximum(dens.rho @ k ** 2 - mean ** 2, 0))
    c = predict(net, src, grid)
    assert np.mean(np.abs(c.sigma - mean) <= 3 * spread + 1e-9) >= 0.9
