"""Seeded problem instances and sampler self-tests.

Two instance families are produced: points lying exactly in a random
k-subspace plus a few off-subspace points, and Gaussian samples whose
covariance has a multiplicative gap gamma^2 after the k-th eigenvalue.
"""

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dpsubspace import linalg
from dpsubspace.errors import SelfTestFailed, VerificationFailed

GENERAL_POSITION_MAX_N = 200
GENERAL_POSITION_MAX_K = 3


@dataclass(frozen=True)
class SpectrumSpec:
    eigenvalues: tuple
    k: int
    gamma: float

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        object.__setattr__(self, "eigenvalues", tuple(float(v) for v in lam))
        if lam.ndim != 1 or lam.size < 1:
            raise ValueError("eigenvalues must be a non-empty 1-D sequence")
        if not 1 <= self.k <= lam.size:
            raise ValueError(f"k must be in [1, {lam.size}]")
        if np.any(np.diff(lam) > 0) or lam[-1] < 0:
            raise ValueError("eigenvalues must be non-negative and descending")
        if not math.isclose(lam[self.k - 1], 1.0, rel_tol=1e-12):
            raise ValueError("eigenvalues must be scaled so that the k-th equals 1")
        if self.k < lam.size and lam[self.k] > self.gamma**2 * lam[self.k - 1] * (1 + 1e-12):
            raise ValueError("spectrum violates lambda_{k+1} <= gamma^2 * lambda_k")

    @property
    def d(self):
        return len(self.eigenvalues)

    @classmethod
    def gapped(cls, d, k, gamma):
        """k unit eigenvalues followed by d - k copies of gamma^2."""
        return cls((1.0,) * k + (gamma**2,) * (d - k), k, gamma)


def random_orthogonal(d, rng):
    """Haar-distributed d x d orthogonal matrix (QR with sign correction)."""
    Z = rng.standard_normal((d, d))
    Q, R = np.linalg.qr(Z)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def random_subspace(d, k, rng):
    return random_orthogonal(d, rng)[:, :k]


def make_covariance(spec, rng):
    """Return ``(Sigma, truth)`` with Sigma = R diag(lambda) R^T for Haar R.

    ``truth`` is the ProjectionMatrix onto the first k columns of R.
    """
    R = random_orthogonal(spec.d, rng)
    lam = np.asarray(spec.eigenvalues)
    Sigma = (R * lam) @ R.T
    Sigma = 0.5 * (Sigma + Sigma.T)
    return Sigma, linalg.projector_of(R[:, : spec.k])


def sqrt_psd(Sigma):
    w, V = np.linalg.eigh(0.5 * (Sigma + Sigma.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def sample_gaussian(Sigma, n, rng):
    """d x n matrix of i.i.d. N(0, Sigma) columns."""
    Sigma = np.asarray(Sigma, dtype=float)
    root = sqrt_psd(Sigma)
    return root @ rng.standard_normal((Sigma.shape[0], n))


def make_approx_instance(d, k, n, gamma, rng):
    """Gaussian samples with a gamma-gapped spectrum; returns ``(X, truth)``."""
    Sigma, truth = make_covariance(SpectrumSpec.gapped(d, k, gamma), rng)
    return sample_gaussian(Sigma, n, rng), truth


def make_low_rank_instance(d, k, n, rng):
    """Samples lying exactly in a random k-subspace (gamma = 0)."""
    U = random_subspace(d, k, rng)
    return U @ rng.standard_normal((k, n)), linalg.projector_of(U)


@dataclass
class ExactInstance:
    data: np.ndarray
    truth: np.ndarray
    adversarial_count: int
    adversarial_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def d(self):
        return self.data.shape[0]

    @property
    def n(self):
        return self.data.shape[1]

    @property
    def k(self):
        return self.truth.shape[1]


def max_low_dim_count(X, k, tol=linalg.DEFAULT_TOL):
    """Most columns of ``X`` inside one subspace of dimension < k, by brute force."""
    X = np.asarray(X, dtype=float)
    n = X.shape[1]
    best = 0
    for size in range(1, min(k - 1, n) + 1):
        for subset in itertools.combinations(range(n), size):
            U = linalg.orthonormalize(X[:, list(subset)], tol)
            best = max(best, int(linalg.membership(U, X, tol).sum()))
    return best


def verify_exact_instance(inst, ell, tol=linalg.DEFAULT_TOL):
    """Check both assumptions of the exact problem; raises VerificationFailed."""
    inside = linalg.membership(inst.truth, inst.data, tol)
    if inside.sum() < inst.n - ell:
        raise VerificationFailed(f"only {int(inside.sum())} of {inst.n} points lie in s*")
    if inst.n <= GENERAL_POSITION_MAX_N and inst.k <= GENERAL_POSITION_MAX_K:
        worst = max_low_dim_count(inst.data, inst.k, tol)
        if worst > ell:
            raise VerificationFailed(f"a subspace of dimension < k holds {worst} > {ell} points")


def gen_exact_instance(d, k, n, ell, rng, adversarial=None, max_tries=20):
    """Draw and verify an instance of the exact problem.

    ``adversarial`` points (default ``min(ell, n - k)``) are N(0, I_d) draws
    placed at random column positions; the rest are Gaussian inside a random
    k-subspace s*.
    """
    if not (n >= k and ell >= k - 1 and d > k):
        raise ValueError("need n >= k, ell >= k - 1 and d > k")
    a = min(ell, n - k) if adversarial is None else adversarial
    if not 0 <= a <= min(ell, n - k):
        raise ValueError(f"adversarial count must be in [0, {min(ell, n - k)}]")
    for _ in range(max_tries):
        U = random_subspace(d, k, rng)
        inliers = U @ rng.standard_normal((k, n - a))
        outliers = rng.standard_normal((d, a))
        order = rng.permutation(n)
        data = np.empty((d, n))
        data[:, order[: n - a]] = inliers
        data[:, order[n - a :]] = outliers
        inst = ExactInstance(data, U, a, np.sort(order[n - a :]))
        try:
            verify_exact_instance(inst, ell)
        except VerificationFailed:
            continue
        return inst
    raise VerificationFailed(f"no valid instance after {max_tries} draws")


def save_matrix_csv(path, X, *, k, seed, truth=None):
    """Write ``X`` row-major with a ``# d=..,n=..,k=..,seed=..`` header.

    When ``truth`` is given its projector goes to ``<stem>.truth.csv``.
    """
    path = Path(path)
    X = np.asarray(X, dtype=float)
    header = f"d={X.shape[0]},n={X.shape[1]},k={k},seed={seed}"
    np.savetxt(path, X, delimiter=",", header=header, fmt="%.17g")
    if truth is not None:
        P = np.asarray(truth, dtype=float)
        if P.shape[0] != P.shape[1]:
            P = linalg.projector_of(P).matrix
        np.savetxt(path.with_suffix(".truth.csv"), P, delimiter=",", fmt="%.17g")


def load_matrix_csv(path):
    """Inverse of :func:`save_matrix_csv`; returns ``(X, meta, truth_or_None)``."""
    path = Path(path)
    with open(path) as fh:
        first = fh.readline().lstrip("#").strip()
    meta = {key: int(val) for key, val in (item.split("=") for item in first.split(","))}
    X = np.loadtxt(path, delimiter=",", ndmin=2)
    truth_path = path.with_suffix(".truth.csv")
    truth = np.loadtxt(truth_path, delimiter=",", ndmin=2) if truth_path.exists() else None
    return X, meta, truth


def chi2_threshold(k, t_param):
    """k + 2 sqrt(k t) + 2 t."""
    return k + 2.0 * math.sqrt(k * t_param) + 2.0 * t_param


@dataclass
class SelfTestReport:
    k: int
    t_param: float
    trials: int
    chi2_threshold: float
    chi2_exceedance: float
    chi2_bound: float
    d: int
    m: int
    u: float
    band_constant_q99: float
    band_constant_max: float
    band_coverage: float
    min_singular_q01: float
    passed: bool = True


def sampler_self_test(k, t_param, trials, rng, *, d=8, m=200, u=2.0,
                      matrix_trials=500, max_constant=3.0, coverage=0.99):
    """Statistical checks of the Gaussian sampler.

    1. Norms of rank-k projections of N(0, I_d) draws exceed
       ``k + 2 sqrt(k t) + 2 t`` with frequency at most ``e^{-t}`` plus three
       binomial standard errors.
    2. For d x m standard Gaussian matrices the fitted constant
       ``C = max_i |s_i - sqrt(m)| / (sqrt(d) + u)`` is at most
       ``max_constant`` in a ``coverage`` fraction of draws.

    Raises SelfTestFailed naming the offending statistic.
    """
    if trials < 10**4:
        raise ValueError("trials must be >= 10^4")
    dim = max(d, k)
    Pi = linalg.projector_of(random_subspace(dim, k, rng)).matrix
    G = rng.standard_normal((dim, trials))
    sq = np.sum((Pi @ G) ** 2, axis=0)
    thresh = chi2_threshold(k, t_param)
    exceed = float(np.mean(sq > thresh))
    p = math.exp(-t_param)
    bound = p + 3.0 * math.sqrt(p * (1 - p) / trials)

    consts = np.empty(matrix_trials)
    smins = np.empty(matrix_trials)
    for i in range(matrix_trials):
        s = linalg.singular_values(rng.standard_normal((d, m)))
        consts[i] = np.max(np.abs(s - math.sqrt(m))) / (math.sqrt(d) + u)
        smins[i] = s[-1]
    q = float(np.quantile(consts, coverage))
    report = SelfTestReport(
        k=k, t_param=t_param, trials=trials, chi2_threshold=thresh,
        chi2_exceedance=exceed, chi2_bound=bound, d=d, m=m, u=u,
        band_constant_q99=q, band_constant_max=float(consts.max()),
        band_coverage=float(np.mean(consts <= max_constant)),
        min_singular_q01=float(np.quantile(smins, 1 - coverage)),
    )
    if exceed > bound:
        raise SelfTestFailed("chi2_exceedance", exceed, bound)
    if report.band_coverage < coverage:
        raise SelfTestFailed("band_coverage", report.band_coverage, coverage)
    return report
