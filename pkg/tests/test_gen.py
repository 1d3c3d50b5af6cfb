import numpy as np
import pytest

from influx.errors import SpecError
from influx.gen import GeneratorSpec, generate, kronecker_probabilities, sample_rates
from influx.graph import write_edge_list


def test_er_mean_degree():
    means = []
    for seed in range(100):
        net = generate(GeneratorSpec("er", 16, seed=seed, avg_degree=4))
        assert net.node_count == 16
        means.append(net.edge_count / 16)
    assert 3 <= np.mean(means) <= 5
    counts = np.array(means) * 16
    # binomial edge count: K(K-1) trials, p = 4/(K-1)
    sd = np.sqrt(16 * 15 * (4 / 15) * (1 - 4 / 15))
    assert np.all(np.abs(counts - 64) <= 4 * sd)


def test_er_zero_probability():
    assert generate(GeneratorSpec("er", 10, seed=1, avg_degree=0)).edge_count == 0


def test_er_large_sparse_path():
    net = generate(GeneratorSpec("er", 5000, seed=2, avg_degree=6))
    assert abs(net.edge_count / 5000 - 6) < 0.3
    src, dst, _ = net.edges()
    assert np.all(src != dst)


def test_kronecker_edge_frequencies():
    P = [[0.9, 0.5], [0.5, 0.3]]
    probs = kronecker_probabilities(P, 3)
    assert probs.shape == (8, 8)
    n = 10_000
    freq = np.zeros((8, 8))
    for seed in range(n):
        net = generate(GeneratorSpec("kronecker", seed=seed, seed_matrix=P, power=3))
        src, dst, _ = net.edges()
        freq[src, dst] += 1
    freq /= n
    off = ~np.eye(8, dtype=bool)
    sd = np.sqrt(probs * (1 - probs) / n)
    # 56 cells at 3 sigma: a couple of excursions are expected by chance
    assert np.sum(np.abs(freq - probs)[off] > 3 * sd[off]) <= 2
    assert np.all(np.diag(freq) == 0)


def test_small_world_and_scale_free_degrees():
    sw = generate(GeneratorSpec("sw", 32, seed=0, ring_degree=4))
    assert sw.edge_count == 32 * 4
    sf = generate(GeneratorSpec("sf", 64, seed=0, attach=3))
    src, dst, _ = sf.edges()
    assert np.all(src > dst)
    assert sf.edge_count == (64 - 3) * 3


@pytest.mark.parametrize("kw", [
    dict(family="er", nodes=10, avg_degree=10),
    dict(family="er", nodes=0, avg_degree=1),
    dict(family="sw", nodes=10, ring_degree=3),
    dict(family="sw", nodes=10, ring_degree=4, rewire_prob=1.5),
    dict(family="sf", nodes=10, attach=0),
    dict(family="kronecker", seed_matrix=[[0.5, 1.2], [0, 0]], power=2),
    dict(family="kronecker", seed_matrix=[[0.5, 0.5]], power=2),
    dict(family="kronecker", nodes=5, seed_matrix=[[0.5, 0.5], [0.5, 0.5]], power=2),
    dict(family="nope", nodes=4),
])
def test_invalid_specs(kw):
    with pytest.raises(SpecError):
        generate(GeneratorSpec(**kw))


def test_rates_band_and_mean():
    net = generate(GeneratorSpec("er", 2000, seed=3, avg_degree=50))
    assert net.edge_count > 90_000
    w = sample_rates(net, 5)
    _, _, r = w.edges()
    assert np.all((r > 0) & (r < 1))
    assert abs(r.mean() - 0.5) < 0.01
    narrow = sample_rates(net, 5, lo=0.7 - 1e-9, hi=0.7)
    assert np.allclose(narrow.edges()[2], 0.7)
    with pytest.raises(SpecError):
        sample_rates(net, 0, lo=-1, hi=1)
    with pytest.raises(SpecError):
        sample_rates(net, 0, lo=1, hi=1)


def test_determinism_bytes(tmp_path):
    paths = []
    for n in range(2):
        net = sample_rates(generate(GeneratorSpec("sw", 50, seed=9, ring_degree=4)), 11)
        p = tmp_path / f"n{n}.csv"
        write_edge_list(net, p)
        paths.append(p.read_bytes())
    assert paths[0] == paths[1]
    other = sample_rates(generate(GeneratorSpec("sw", 50, seed=9, ring_degree=4)), 12)
    assert not np.array_equal(other.edges()[2], net.edges()[2])
    same_topology = np.array_equal(other.edges()[0], net.edges()[0])
    assert same_topology
