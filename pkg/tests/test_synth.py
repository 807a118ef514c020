import math

import numpy as np
import pytest
from scipy import stats

from dpsubspace import linalg, synth
from dpsubspace.errors import SelfTestFailed, VerificationFailed


def test_spectrum_spec_validation():
    with pytest.raises(ValueError):
        synth.SpectrumSpec((1.0, 2.0), 1, 0.5)
    with pytest.raises(ValueError):
        synth.SpectrumSpec((2.0, 1.0), 1, 0.5)
    with pytest.raises(ValueError):
        synth.SpectrumSpec((1.0, 0.5), 1, 0.1)
    spec = synth.SpectrumSpec.gapped(5, 2, 0.1)
    assert spec.eigenvalues == pytest.approx((1.0, 1.0, 0.01, 0.01, 0.01))
    assert spec.d == 5


def test_random_orthogonal_is_orthogonal(rng):
    R = synth.random_orthogonal(7, rng)
    np.testing.assert_allclose(R.T @ R, np.eye(7), atol=1e-12)


def test_random_orthogonal_is_haar(rng):
    # the (0, 0) entry of a Haar matrix in O(d) has E[x^2] = 1/d
    d = 4
    vals = np.array([synth.random_orthogonal(d, rng)[0, 0] for _ in range(4000)])
    assert abs(vals.mean()) < 0.05
    assert np.mean(vals**2) == pytest.approx(1 / d, abs=0.02)


def test_covariance_rank_one(rng):
    Sigma, truth = synth.make_covariance(synth.SpectrumSpec((1.0, 0.0), 1, 0.5), rng)
    assert np.linalg.matrix_rank(Sigma, tol=1e-12) == 1
    v = np.linalg.eigh(Sigma)[1][:, -1]
    np.testing.assert_allclose(truth.matrix, np.outer(v, v), atol=1e-12)


def test_covariance_spectrum_matches(rng):
    spec = synth.SpectrumSpec.gapped(16, 2, 1e-3)
    Sigma, truth = synth.make_covariance(spec, rng)
    w = np.sort(np.linalg.eigvalsh(Sigma))[::-1]
    np.testing.assert_allclose(w, spec.eigenvalues, atol=1e-8)
    np.testing.assert_allclose(truth.matrix @ Sigma @ truth.matrix,
                               truth.matrix, atol=1e-8)


def test_covariance_identity(rng):
    Sigma, _ = synth.make_covariance(synth.SpectrumSpec((1.0,) * 4, 4, 0.5), rng)
    np.testing.assert_allclose(Sigma, np.eye(4), atol=1e-12)


def test_sample_zero_covariance(rng):
    assert np.all(synth.sample_gaussian(np.zeros((3, 3)), 10, rng) == 0)


def test_sample_identity_covariance(rng):
    X = synth.sample_gaussian(np.eye(2), 10**5, rng)
    np.testing.assert_allclose(X @ X.T / X.shape[1], np.eye(2), atol=0.02)


def test_sample_rank_k_in_truth(rng):
    Sigma, truth = synth.make_covariance(synth.SpectrumSpec((1.0, 1.0, 0, 0, 0), 2, 0.1), rng)
    X = synth.sample_gaussian(Sigma, 500, rng)
    assert linalg.membership(linalg.top_k_subspace(truth.matrix, 2), X, tol=1e-6).all()


def test_approx_instance_pca_close(rng):
    for gamma in (1e-3, 1e-4):
        X, truth = synth.make_approx_instance(16, 2, 10**4, gamma, rng)
        P = linalg.projector_of(linalg.top_k_subspace(X, 2))
        assert linalg.projector_distance(P, truth) <= 0.05


def test_low_rank_instance(rng):
    X, truth = synth.make_low_rank_instance(8, 3, 50, rng)
    assert linalg.membership(linalg.top_k_subspace(truth.matrix, 3), X).all()


def test_gen_exact_instance_default(rng):
    inst = synth.gen_exact_instance(6, 2, 45, 1, rng)
    inside = linalg.membership(inst.truth, inst.data)
    assert inside.sum() == 44
    assert inst.adversarial_count == 1
    assert not inside[inst.adversarial_index].any()
    assert synth.max_low_dim_count(inst.data, 2) <= 1


def test_gen_exact_instance_no_outliers(rng):
    inst = synth.gen_exact_instance(3, 1, 20, 0, rng)
    assert linalg.membership(inst.truth, inst.data).all()


def test_gen_exact_instance_minimal(rng):
    inst = synth.gen_exact_instance(5, 3, 3, 2, rng)
    assert inst.adversarial_count == 0
    U = linalg.orthonormalize(inst.data)
    assert U.shape[1] == 3
    assert linalg.projector_distance(linalg.projector_of(U), linalg.projector_of(inst.truth)) <= 1e-9


def test_gen_exact_instance_rejects_bad_args(rng):
    with pytest.raises(ValueError):
        synth.gen_exact_instance(2, 2, 10, 1, rng)
    with pytest.raises(ValueError):
        synth.gen_exact_instance(6, 2, 10, 1, rng, adversarial=2)


def test_verify_catches_collinear_points(rng):
    inst = synth.gen_exact_instance(4, 2, 10, 1, rng)
    inst.data[:, 1] = 3 * inst.data[:, 0]
    inst.data[:, 2] = -inst.data[:, 0]
    with pytest.raises(VerificationFailed):
        synth.verify_exact_instance(inst, 1)


def test_generation_reproducible():
    a = synth.gen_exact_instance(6, 2, 30, 1, np.random.default_rng(11))
    b = synth.gen_exact_instance(6, 2, 30, 1, np.random.default_rng(11))
    np.testing.assert_array_equal(a.data, b.data)
    Xa, _ = synth.make_approx_instance(5, 2, 20, 0.1, np.random.default_rng(4))
    Xb, _ = synth.make_approx_instance(5, 2, 20, 0.1, np.random.default_rng(4))
    np.testing.assert_array_equal(Xa, Xb)


def test_csv_round_trip(tmp_path, rng):
    inst = synth.gen_exact_instance(4, 2, 7, 1, rng)
    path = tmp_path / "inst.csv"
    synth.save_matrix_csv(path, inst.data, k=2, seed=123, truth=inst.truth)
    X, meta, truth = synth.load_matrix_csv(path)
    np.testing.assert_array_equal(X, inst.data)
    assert meta == {"d": 4, "n": 7, "k": 2, "seed": 123}
    np.testing.assert_allclose(truth, linalg.projector_of(inst.truth).matrix, atol=0)
    synth.save_matrix_csv(tmp_path / "bare.csv", inst.data, k=2, seed=1)
    assert synth.load_matrix_csv(tmp_path / "bare.csv")[2] is None


def test_chi2_threshold_examples():
    assert synth.chi2_threshold(2, 3) == pytest.approx(12.899, abs=5e-4)
    assert synth.chi2_threshold(1, 0) == 1.0
    # the threshold is conservative: the chi-square tail sits below e^{-t}
    assert stats.chi2.sf(synth.chi2_threshold(2, 3), 2) <= math.exp(-3)


def test_self_test_passes_and_reports(rng):
    rep = synth.sampler_self_test(2, 3.0, 10**5, rng)
    assert rep.chi2_threshold == pytest.approx(12.899, abs=5e-4)
    assert rep.chi2_exceedance <= rep.chi2_bound
    assert rep.band_coverage >= 0.99
    # sqrt(200) - 3 (sqrt(8) + 2) is slightly negative, so the band alone
    # does not keep the smallest singular value away from 0; check it directly
    assert rep.min_singular_q01 >= math.sqrt(200) - 3 * (math.sqrt(8) + 2)
    assert rep.min_singular_q01 > 0


def test_self_test_vacuous_case(rng):
    rep = synth.sampler_self_test(1, 0.0, 10**4, rng, matrix_trials=50)
    assert rep.chi2_threshold == 1.0
    assert rep.chi2_bound == 1.0


def test_self_test_reproducible():
    a = synth.sampler_self_test(2, 3.0, 10**4, np.random.default_rng(8), matrix_trials=50)
    b = synth.sampler_self_test(2, 3.0, 10**4, np.random.default_rng(8), matrix_trials=50)
    assert a == b


def test_self_test_rejects_small_trials(rng):
    with pytest.raises(ValueError):
        synth.sampler_self_test(2, 3.0, 100, rng)


def test_self_test_detects_band_failure(rng):
    with pytest.raises(SelfTestFailed) as info:
        synth.sampler_self_test(2, 3.0, 10**4, rng, matrix_trials=50, max_constant=0.1)
    assert info.value.statistic == "band_coverage"
