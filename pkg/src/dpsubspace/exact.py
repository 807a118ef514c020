"""Private recovery of a subspace that contains all but a few input points.

The score of a subspace s is the number of points it contains minus the
largest number of points contained in any proper subspace of s.  Candidates
are the spans of k-subsets of the data; GAP-MAX picks among them and a NULL
option whose score is high enough to absorb malformed inputs.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from dpsubspace import linalg
from dpsubspace.errors import TooManyCandidates, ZeroPoint
from dpsubspace.mechanisms import NULL, PrivacyParams, ScoredCandidate, gap_max

DEDUP_TOL = 1e-7
MAX_SUBSETS = 10**6


@dataclass(frozen=True)
class ExactConfig:
    k: int
    ell: int
    pp: PrivacyParams
    tol: float = linalg.DEFAULT_TOL
    max_subsets: int = MAX_SUBSETS

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.ell < self.k - 1:
            raise ValueError(f"ell must be >= k - 1 = {self.k - 1}, got {self.ell}")
        if self.tol <= 0:
            raise ValueError("tol must be positive")

    @property
    def null_score(self):
        return self.ell + 4.0 * math.log(1.0 / self.pp.delta) / self.pp.eps + 1.0

    def min_samples(self):
        """Sample size above which DPESE returns the true subspace surely."""
        return 3 * self.ell + 8.0 * math.log(1.0 / self.pp.delta) / self.pp.eps + 2


@dataclass(eq=False)
class Candidate:
    """A deduplicated candidate span with its column-membership mask."""

    basis: np.ndarray
    members: np.ndarray

    @property
    def projector(self):
        return linalg.projector_of(self.basis).matrix


def enumerate_candidates(X, cfg, *, allow_zero=False):
    """Distinct k-dimensional spans of k-subsets of the columns of ``X``.

    Subsets of lower rank are skipped.  A subset whose points all lie in an
    already stored candidate spans that candidate and is skipped without an
    SVD; any genuinely new span is still compared to the stored ones by
    projector distance (<= 1e-7 counts as the same).

    Zero columns raise :class:`ZeroPoint` unless ``allow_zero`` is set, in
    which case they are never part of a candidate.
    """
    X = linalg.as_data_matrix(X)
    d, n = X.shape
    k = cfg.k
    nonzero = np.linalg.norm(X, axis=0) > 0
    if not allow_zero and not nonzero.all():
        raise ZeroPoint(f"column {int(np.argmin(nonzero))} is the zero vector")
    if n < k or k > d:
        return []
    if math.comb(n, k) > cfg.max_subsets:
        raise TooManyCandidates(f"C({n}, {k}) = {math.comb(n, k)} exceeds {cfg.max_subsets}")

    candidates = []
    masks = np.zeros((0, n), dtype=bool)
    usable = np.flatnonzero(nonzero)
    for subset in itertools.combinations(usable, k):
        idx = list(subset)
        if masks.shape[0] and masks[:, idx].all(axis=1).any():
            continue
        try:
            U = linalg.orthonormalize(X[:, idx], cfg.tol)
        except ValueError:
            continue
        if U.shape[1] != k:
            continue
        P = U @ U.T
        if any(linalg.projector_distance(P, c.projector) <= DEDUP_TOL for c in candidates):
            continue
        members = linalg.membership(U, X, cfg.tol)
        candidates.append(Candidate(U, members))
        masks = np.vstack([masks, members])
    return candidates


def max_proper_subspace_count(points, dim_s, tol=linalg.DEFAULT_TOL):
    """Largest number of ``points`` inside one proper subspace of their host.

    The host subspace has dimension ``dim_s`` and contains every point.  An
    optimal proper subspace is spanned by the points it contains, so it is
    enough to try the spans of all subsets of at most ``dim_s - 1`` points
    (the zero subspace contributes 0).  Zero vectors are not counted.
    """
    P = np.asarray(points, dtype=float)
    if P.size == 0:
        return 0
    if P.ndim == 1:
        P = P[:, None]
    P = P[:, np.linalg.norm(P, axis=0) > 0]
    n = P.shape[1]
    if n == 0 or dim_s <= 1:
        return 0
    best = 0
    seen = []
    for size in range(1, min(dim_s - 1, n) + 1):
        for subset in itertools.combinations(range(n), size):
            idx = list(subset)
            # a subset already covered by a counted span cannot do better than it
            if any(m[idx].all() for m in seen):
                continue
            U = linalg.orthonormalize(P[:, idx], tol)
            m = linalg.membership(U, P, tol)
            seen.append(m)
            best = max(best, int(m.sum()))
            if best == n:
                return best
    return best


def exact_score(X, s, cfg, members=None):
    """Score of subspace ``s`` (orthonormal basis) on data ``X``.

    ``members`` may pass a precomputed membership mask of the columns.
    """
    X = np.asarray(X, dtype=float)
    U = np.asarray(s, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if members is None:
        members = linalg.membership(U, X, cfg.tol)
    inside = X[:, members]
    return int(members.sum()) - max_proper_subspace_count(inside, U.shape[1], cfg.tol)


def score_candidates(X, cfg, candidates=None):
    """Return ``(candidates, scores)`` for every candidate span of ``X``."""
    if candidates is None:
        candidates = enumerate_candidates(X, cfg, allow_zero=True)
    scores = [exact_score(X, c.basis, cfg, members=c.members) for c in candidates]
    return candidates, scores


def dpese(X, cfg, rng):
    """(eps, delta)-DP exact subspace estimator.

    Returns a d x k orthonormal basis of the selected span, or ``None`` when
    the NULL candidate wins (malformed input, too few points).  Zero columns
    are tolerated and simply belong to no candidate.
    """
    X = linalg.as_data_matrix(X)
    candidates, scores = score_candidates(X, cfg)
    scored = [ScoredCandidate(NULL, cfg.null_score)]
    scored += [ScoredCandidate(i, s) for i, s in enumerate(scores)]
    winner = gap_max(scored, cfg.pp, rng)
    if winner is NULL:
        return None
    return candidates[winner].basis
