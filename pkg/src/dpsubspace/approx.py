"""Private subspace estimation for data that is only close to a subspace.

Subsample-and-aggregate: the data is split into t blocks, each block's top-k
projector is applied to q public Gaussian reference points, and the t
stacked projections (vectors in R^{qd}) are aggregated with a stability
histogram over a randomly offset cubic lattice.  A majority cell yields q
points whose top-k span is the output.  ``dpaseb`` boosts the success
probability by running the estimator on disjoint chunks and keeping an
output that agrees with most of the others.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from dpsubspace import linalg
from dpsubspace.errors import ConfigError, InsufficientData
from dpsubspace.mechanisms import (
    PrivacyParams,
    raw_counts,
    stable_histogram,
    tlap_bound,
)

REPRESENTATIVES = ("center", "uniform")


@dataclass(frozen=True)
class ApproxConfig:
    """Parameters of the approximate estimator.

    ``c0``..``c3`` are the unspecified universal constants; the defaults come
    from the ``calibrate`` sweep at d=16, k=2, n=6600.
    """

    pp: PrivacyParams
    alpha: float
    gamma: float
    k: int
    c0: float = 8.0
    c1: float = 2.0
    c2: float = 150.0
    c3: float = 18.0
    representative: str = "center"

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if min(self.c0, self.c1, self.c2, self.c3) <= 0:
            raise ValueError("constants c0..c3 must be positive")
        if self.representative not in REPRESENTATIVES:
            raise ValueError(f"representative must be one of {REPRESENTATIVES}")


@dataclass(frozen=True)
class ApproxParams:
    t: int
    m: int
    q: int
    cell_side: float


def num_blocks(cfg):
    return max(1, math.ceil(cfg.c0 * math.log(1.0 / cfg.pp.delta) / cfg.pp.eps))


def derive_params(n, d, cfg):
    """Compute t, m, q and the lattice cell side for n samples in R^d."""
    t = num_blocks(cfg)
    m = n // t
    if m < 1:
        raise InsufficientData(f"n={n} samples cannot fill t={t} blocks")
    q = math.ceil(cfg.c1 * cfg.k)
    k = cfg.k
    side = (cfg.c2 * cfg.gamma * math.sqrt(d * k)
            * (math.sqrt(k) + math.sqrt(math.log(k * t))) / math.sqrt(m))
    return ApproxParams(t, m, q, side)


def min_blocks(pp):
    """Smallest t for which bounded histogram noise cannot sink a full cell below t/2."""
    return 2.0 * tlap_bound(2.0, pp.eps, pp.delta / 2.0) + 4.0


def check_count_margin(t, pp):
    if t < min_blocks(pp):
        raise ConfigError(
            f"t={t} blocks is below 2*A(2, eps, delta/2) + 4 = {min_blocks(pp):.3f}; raise c0")


@dataclass(frozen=True)
class OffsetLattice:
    """Cubic lattice in R^dim with cells [offset*side + i*side, offset*side + (i+1)*side)."""

    side: float
    offset: float
    dim: int

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError("cell side must be positive")
        if not 0 <= self.offset < 1:
            raise ValueError("offset must lie in [0, 1)")

    def keys(self, V):
        """Integer cell indices of the rows of ``V`` (shape (..., dim))."""
        V = np.asarray(V, dtype=float)
        return np.floor((V - self.offset * self.side) / self.side).astype(np.int64)

    def center(self, key):
        return self.offset * self.side + (np.asarray(key, dtype=float) + 0.5) * self.side

    def uniform_point(self, key, rng):
        lo = self.offset * self.side + np.asarray(key, dtype=float) * self.side
        return lo + rng.random(lo.shape) * self.side


def cell_key(x, lat):
    """Cell index tuple of a single point ``x`` of length ``lat.dim``."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != lat.dim:
        raise ValueError(f"point has {x.size} coordinates, lattice has {lat.dim}")
    return tuple(int(i) for i in lat.keys(x))


def draw_references(d, q, rng):
    """q public reference points from N(0, I_d), as columns of a d x q array."""
    return rng.standard_normal((d, q))


def split_blocks(X, t, m):
    """The t consecutive d x m blocks of ``X``; trailing columns are dropped."""
    return [X[:, j * m:(j + 1) * m] for j in range(t)]


def block_bases(X, k, t, m):
    return [linalg.top_k_subspace(B, k) for B in split_blocks(X, t, m)]


def stacked_projections(bases, refs):
    """Row j is (P_j p_1, ..., P_j p_q) flattened to length q*d."""
    rows = [(U @ (U.T @ refs)).T.ravel() for U in bases]
    return np.vstack(rows)


@dataclass
class DpaseTrace:
    """Intermediate quantities of one run of :func:`dpase`.

    Everything except ``result`` (and ``histogram``, which is already
    private) is a function of the raw data and is exposed for audits only.
    """

    params: ApproxParams
    refs: np.ndarray
    bases: list
    stacked: np.ndarray
    lattice: OffsetLattice
    keys: list
    histogram: object
    cell: tuple = None
    point: np.ndarray = None
    result: linalg.ProjectionMatrix = None

    @property
    def raw(self):
        return raw_counts(self.keys)

    @property
    def all_in_one_cell(self):
        return len(self.raw) == 1


def dpase_trace(X, cfg, rng):
    """Run the approximate estimator and keep every intermediate value.

    Random draws happen in a fixed order: reference points, lattice offset,
    histogram noise, then (``representative="uniform"`` only) the point
    inside the selected cell.
    """
    X = linalg.as_data_matrix(X)
    d, n = X.shape
    params = derive_params(n, d, cfg)
    check_count_margin(params.t, cfg.pp)
    if not cfg.k <= min(d, params.m, params.q):
        raise InsufficientData(f"k={cfg.k} exceeds min(d, m, q) = {min(d, params.m, params.q)}")

    refs = draw_references(d, params.q, rng)
    bases = block_bases(X, cfg.k, params.t, params.m)
    stacked = stacked_projections(bases, refs)
    lattice = OffsetLattice(params.cell_side, float(rng.random()), params.q * d)
    keys = [tuple(int(i) for i in row) for row in lattice.keys(stacked)]
    hist = stable_histogram(keys, cfg.pp, rng)
    trace = DpaseTrace(params, refs, bases, stacked, lattice, keys, hist)

    best = hist.argmax()
    if best is None or hist.cells[best] < params.t / 2:
        return trace
    if cfg.representative == "center":
        point = lattice.center(best)
    else:
        point = lattice.uniform_point(best, rng)
    P_hat = point.reshape(params.q, d).T
    trace.cell = best
    trace.point = point
    trace.result = linalg.projector_of(linalg.top_k_subspace(P_hat, cfg.k))
    return trace


def dpase(X, cfg, rng):
    """(eps, delta)-DP estimate of the top-k subspace projector, or ``None`` (BOT)."""
    return dpase_trace(X, cfg, rng).result


def num_boost_runs(cfg, beta):
    return max(1, math.ceil(cfg.c3 * math.log(1.0 / beta)))


@dataclass
class BoostTrace:
    runs: int
    outputs: list
    agreement: list = field(default_factory=list)
    chosen: int = None

    @property
    def result(self):
        return None if self.chosen is None else self.outputs[self.chosen]


def select_agreeing(outputs, alpha):
    """Index of the first output within 2*alpha of at least 0.6*r - 1 others.

    ``None`` entries (BOT) are never selected and agree with nothing.
    Returns ``(index_or_None, agreement_counts)``.
    """
    r = len(outputs)
    mats = [None if o is None else np.asarray(o) for o in outputs]
    counts = []
    chosen = None
    for i, Pi in enumerate(mats):
        if Pi is None:
            counts.append(0)
            continue
        c = sum(1 for j, Pj in enumerate(mats)
                if j != i and Pj is not None and linalg.projector_distance(Pi, Pj) <= 2 * alpha)
        counts.append(c)
        if chosen is None and c >= 0.6 * r - 1:
            chosen = i
    return chosen, counts


def dpaseb_trace(X, cfg, beta, rng):
    if not 0 < beta < 1:
        raise ValueError(f"beta must be in (0, 1), got {beta}")
    X = linalg.as_data_matrix(X)
    r = num_boost_runs(cfg, beta)
    size = X.shape[1] // r
    if size < 1:
        raise InsufficientData(f"n={X.shape[1]} cannot fill r={r} boosting blocks")
    # fail before spending any randomness if a block is too small
    derive_params(size, X.shape[0], cfg)
    children = rng.spawn(r)
    outputs = [dpase(B, cfg, child) for B, child in zip(split_blocks(X, r, size), children)]
    chosen, counts = select_agreeing(outputs, cfg.alpha)
    return BoostTrace(r, outputs, counts, chosen)


def dpaseb(X, cfg, beta, rng):
    """Boosted estimator: ``None`` (BOT) when no sub-run output gathers agreement.

    The r = ceil(c3 ln(1/beta)) sub-runs see disjoint data, so the whole run
    has the same (eps, delta) guarantee as one sub-run.
    """
    return dpaseb_trace(X, cfg, beta, rng).result
