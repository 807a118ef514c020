import math

import numpy as np
import pytest

from dpsubspace import linalg, synth
from dpsubspace.approx import (
    ApproxConfig,
    OffsetLattice,
    block_bases,
    cell_key,
    check_count_margin,
    derive_params,
    dpase,
    dpase_trace,
    dpaseb,
    dpaseb_trace,
    min_blocks,
    num_boost_runs,
    select_agreeing,
    stacked_projections,
)
from dpsubspace.errors import ConfigError, InsufficientData
from dpsubspace.mechanisms import PrivacyParams

PP = PrivacyParams(1.0, 0.01)


def acfg(**kw):
    base = dict(pp=PP, alpha=0.1, gamma=1e-4, k=2)
    base.update(kw)
    return ApproxConfig(**base)


def test_derive_params_example():
    p = derive_params(6600, 16, acfg(gamma=1e-3, c0=8, c1=2, c2=20))
    assert (p.t, p.m, p.q) == (37, 178, 4)
    expected = 20 * 1e-3 * math.sqrt(32) * (math.sqrt(2) + math.sqrt(math.log(74))) / math.sqrt(178)
    assert p.cell_side == pytest.approx(expected, rel=1e-12)
    assert p.cell_side == pytest.approx(0.0296, abs=5e-5)


def test_derive_params_half_delta():
    p = derive_params(100, 4, acfg(pp=PrivacyParams(1.0, 0.5)))
    assert p.t == 6


def test_derive_params_insufficient():
    with pytest.raises(InsufficientData):
        derive_params(36, 16, acfg())


def test_config_validation():
    with pytest.raises(ValueError):
        acfg(alpha=0)
    with pytest.raises(ValueError):
        acfg(gamma=1.5)
    with pytest.raises(ValueError):
        acfg(c2=0)
    with pytest.raises(ValueError):
        acfg(representative="median")


def test_count_margin():
    assert min_blocks(PP) == pytest.approx(2 * 10.3046 + 4, abs=1e-3)
    check_count_margin(37, PP)
    with pytest.raises(ConfigError):
        check_count_margin(24, PP)
    with pytest.raises(ConfigError):
        dpase(np.ones((4, 200)), acfg(c0=4), np.random.default_rng(0))


@pytest.mark.parametrize("side, offset, x, key", [
    (1.0, 0.25, (0.3, -0.1), (0, -1)),
    (0.5, 0.0, (0.49, 0.5), (0, 1)),
])
def test_cell_key_examples(side, offset, x, key):
    assert cell_key(x, OffsetLattice(side, offset, 2)) == key


def test_cell_key_dimension_check():
    with pytest.raises(ValueError):
        cell_key((0.0, 1.0, 2.0), OffsetLattice(1.0, 0.0, 2))


def test_lattice_center_and_uniform_inside_cell(rng):
    lat = OffsetLattice(0.3, 0.7, 5)
    for _ in range(50):
        x = rng.standard_normal(5)
        key = cell_key(x, lat)
        assert cell_key(lat.center(key), lat) == key
        assert cell_key(lat.uniform_point(np.array(key), rng), lat) == key


def test_split_probability_over_offset(rng):
    side, r = 1.0, 0.1
    offsets = rng.random(20000)
    split = np.mean([cell_key((0.37,), OffsetLattice(side, o, 1))
                     != cell_key((0.37 + r,), OffsetLattice(side, o, 1)) for o in offsets])
    assert split == pytest.approx(r / side, abs=0.01)
    # distance below side * 0.9 keeps both in one cell with probability >= 0.9 in 1-d
    assert 1 - split >= 0.9


def test_stacked_projection_layout(rng):
    U = linalg.orthonormalize(rng.standard_normal((3, 2)))
    refs = rng.standard_normal((3, 4))
    row = stacked_projections([U], refs)[0]
    P = U @ U.T
    for i in range(4):
        np.testing.assert_allclose(row[3 * i:3 * (i + 1)], P @ refs[:, i], atol=1e-15)


@pytest.mark.parametrize("representative", ["center", "uniform"])
def test_exact_rank_data_recovered(representative, rng):
    cfg = acfg(gamma=1e-12, representative=representative)
    for _ in range(5):
        X, truth = synth.make_low_rank_instance(16, 2, 6600, rng)
        trace = dpase_trace(X, cfg, rng)
        assert trace.all_in_one_cell
        assert trace.raw[trace.keys[0]] == trace.params.t
        assert trace.result is not None
        assert linalg.projector_distance(trace.result, truth) <= 1e-8


def test_orthogonal_blocks_give_bot(rng):
    # t = 37 blocks, each lying in its own coordinate plane of R^80
    cfg = acfg(gamma=1e-6)
    t, m, d = 37, 5, 80
    X = np.zeros((d, t * m))
    for j in range(t):
        X[2 * j:2 * j + 2, j * m:(j + 1) * m] = rng.standard_normal((2, m))
    for _ in range(20):
        trace = dpase_trace(X, cfg, rng)
        assert trace.params.t == t
        assert len(trace.raw) == t
        assert trace.result is None


@pytest.mark.filterwarnings("ignore::dpsubspace.errors.DegenerateSpectrumWarning")
def test_bot_whenever_no_cell_clears_half(rng):
    cfg = acfg(gamma=0.05)
    for _ in range(20):
        X, _ = synth.make_approx_instance(6, 2, 400, 0.5, rng)
        trace = dpase_trace(X, cfg, rng)
        counts = trace.histogram.cells.values()
        if not any(c >= trace.params.t / 2 for c in counts):
            assert trace.result is None
        else:
            assert trace.result is not None


def test_dpase_reproducible():
    X, _ = synth.make_approx_instance(16, 2, 6600, 1e-4, np.random.default_rng(3))
    released = 0
    for seed in range(5):
        a = dpase(X, acfg(), np.random.default_rng(seed))
        b = dpase(X, acfg(), np.random.default_rng(seed))
        assert (a is None) == (b is None)
        if a is not None:
            released += 1
            np.testing.assert_array_equal(a.matrix, b.matrix)
    assert released >= 1


def test_subsample_closeness(rng):
    d, k, n, gamma = 16, 2, 6600, 1e-4
    t, m = 37, 178
    ratios = []
    for _ in range(40):
        X, truth = synth.make_approx_instance(d, k, n, gamma, rng)
        P = truth.matrix
        worst = max(linalg.projector_distance(linalg.projector_of(U), P)
                    for U in block_bases(X, k, t, m))
        ratios.append(worst / (gamma * math.sqrt(d / m)))
    assert np.quantile(ratios, 0.95) <= 10


def test_reference_projection_chain(rng):
    d, k, t, m = 16, 2, 37, 178
    for _ in range(10):
        X, truth = synth.make_approx_instance(d, k, t * m, 1e-4, rng)
        U = linalg.top_k_subspace(truth.matrix, k)
        refs = rng.standard_normal((d, 4))
        for Uj in block_bases(X, k, t, m):
            Pj = Uj @ Uj.T
            D = truth.matrix - Pj
            # projector onto the union of the block subspace and the true one
            H = linalg.projector_of(linalg.orthonormalize(np.column_stack([Uj, U]))).matrix
            for i in range(refs.shape[1]):
                p = refs[:, i]
                np.testing.assert_allclose(D @ p, D @ H @ p, atol=1e-12)
                assert np.linalg.norm(D @ p) <= np.linalg.norm(D, 2) * np.linalg.norm(H @ p) + 1e-12


def test_select_agreeing_all_same():
    P = np.diag([1.0, 1, 0])
    chosen, counts = select_agreeing([P] * 5, 0.1)
    assert chosen == 0
    assert counts == [4] * 5


def test_select_agreeing_skips_garbage(rng):
    P = linalg.projector_of(np.eye(6)[:, :2]).matrix
    good = []
    for _ in range(7):
        U = linalg.orthonormalize(np.eye(6)[:, :2] + 0.02 * rng.standard_normal((6, 2)))
        good.append(linalg.projector_of(U).matrix)
    garbage = [linalg.projector_of(np.eye(6)[:, [2 + i % 4, (3 + i) % 4 + 2]]).matrix
               for i in range(3)]
    outputs = garbage + good
    chosen, _ = select_agreeing(outputs, 0.1)
    assert chosen == 3
    assert linalg.projector_distance(outputs[chosen], P) <= 0.1


def test_select_agreeing_all_bot():
    assert select_agreeing([None] * 4, 0.1) == (None, [0, 0, 0, 0])


def test_dpaseb_rejects_bad_beta(rng):
    with pytest.raises(ValueError):
        dpaseb(np.ones((4, 10)), acfg(), 1.0, rng)


def test_dpaseb_insufficient(rng):
    with pytest.raises(InsufficientData):
        dpaseb(np.ones((4, 100)), acfg(), 0.1, rng)


def test_num_boost_runs():
    assert num_boost_runs(acfg(), 0.1) == math.ceil(18 * math.log(10))


def test_dpaseb_on_exact_rank_data(rng):
    cfg = acfg(gamma=1e-12, c3=2.0)
    r = num_boost_runs(cfg, 0.1)
    X, truth = synth.make_low_rank_instance(8, 2, r * 200, rng)
    trace = dpaseb_trace(X, cfg, 0.1, rng)
    assert trace.runs == r
    assert trace.chosen == 0
    assert linalg.projector_distance(trace.result, truth) <= 1e-8
