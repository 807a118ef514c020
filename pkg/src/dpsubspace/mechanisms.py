"""Privacy primitives: truncated Laplace noise, a stability-based histogram
over an unbounded cell domain, and GAP-MAX selection with a NULL fallback.

Every sampler takes an explicit ``numpy.random.Generator``.
"""

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from dpsubspace.errors import InvalidBudget, MissingNull


@dataclass(frozen=True)
class PrivacyParams:
    """(eps, delta) budget of a single mechanism invocation."""

    eps: float
    delta: float

    def __post_init__(self):
        if not (math.isfinite(self.eps) and self.eps > 0):
            raise InvalidBudget(f"eps must be > 0, got {self.eps}")
        if not 0 < self.delta < 1:
            raise InvalidBudget(f"delta must be in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class TLapDist:
    """Laplace density with scale ``lam`` restricted to [-bound_a, bound_a].

    The density on the support is ``norm_b * exp(-|x| / lam)``.
    """

    delta_sens: float
    eps: float
    lam: float
    bound_a: float
    norm_b: float

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) <= self.bound_a
        return np.where(inside, self.norm_b * np.exp(-np.abs(x) / self.lam), 0.0)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), -self.bound_a, self.bound_a)
        # mass of [0, |x|] is 1/2 * (1 - e^{-|x|/lam}) / (1 - e^{-A/lam})
        half = 0.5 * np.expm1(-np.abs(x) / self.lam) / np.expm1(-self.bound_a / self.lam)
        return 0.5 + np.sign(x) * half


def tlap_bound(delta_sens, eps, delta):
    """Support half-width A = (Delta/eps) * ln(1 + (e^eps - 1) / (2 delta))."""
    return delta_sens / eps * math.log1p(math.expm1(eps) / (2.0 * delta))


def tlap_params(delta_sens, pp):
    """Parameters of TLap(delta_sens, eps, delta) for budget ``pp``."""
    if not isinstance(pp, PrivacyParams):
        pp = PrivacyParams(*pp)
    if not delta_sens > 0:
        raise ValueError(f"sensitivity must be positive, got {delta_sens}")
    lam = delta_sens / pp.eps
    bound_a = tlap_bound(delta_sens, pp.eps, pp.delta)
    norm_b = 1.0 / (2.0 * lam * -math.expm1(-bound_a / lam))
    return TLapDist(delta_sens, pp.eps, lam, bound_a, norm_b)


def tlap_sample(dist, rng, size=None):
    """Draw from ``dist`` by inverting the CDF of |X| and attaching a random sign."""
    u = rng.random(size)
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    mag = -dist.lam * np.log1p(u * np.expm1(-dist.bound_a / dist.lam))
    # guard the endpoint against rounding past A
    x = sign * np.minimum(mag, dist.bound_a)
    return float(x) if size is None else x


@dataclass
class NoisyHistogram:
    """Released cells of a stability histogram.

    ``cells`` maps a cell key to its noisy count; only cells that were
    occupied in the input and whose noisy count cleared ``threshold`` appear.
    """

    cells: dict
    threshold: float
    total_points: int
    noise_bound: float = field(default=0.0)

    def argmax(self):
        """Key with the largest noisy count, or None when nothing was released."""
        if not self.cells:
            return None
        return max(self.cells, key=self.cells.__getitem__)


def raw_counts(keys):
    """Exact per-cell counts of ``keys`` (each key a hashable tuple)."""
    return Counter(tuple(k) for k in keys)


def histogram_threshold(pp):
    """Release threshold ``1 + A(2, eps, delta/2)`` used by :func:`stable_histogram`."""
    return 1.0 + tlap_bound(2.0, pp.eps, pp.delta / 2.0)


def stable_histogram(keys, pp, rng):
    """(eps, delta)-DP histogram over an unbounded domain of cell keys.

    Each occupied cell gets an independent TLap(2, eps, delta/2) draw added to
    its raw count and is released only if the noisy count reaches
    ``1 + A(2, eps, delta/2)``.  Cells are noised in first-occurrence order.

    Args:
      keys: non-empty list of equal-length integer tuples.
      pp: privacy budget.
      rng: numpy Generator.

    Returns:
      NoisyHistogram; its ``cells`` may be empty.
    """
    keys = [tuple(int(i) for i in k) for k in keys]
    if not keys:
        raise ValueError("stable_histogram needs at least one key")
    if len({len(k) for k in keys}) != 1:
        raise ValueError("all cell keys must have the same length")
    counts = raw_counts(keys)
    dist = tlap_params(2.0, PrivacyParams(pp.eps, pp.delta / 2.0))
    thresh = 1.0 + dist.bound_a
    noise = tlap_sample(dist, rng, size=len(counts))
    released = {}
    for (key, c), z in zip(counts.items(), noise):
        noisy = c + float(z)
        if noisy >= thresh:
            released[key] = noisy
    return NoisyHistogram(released, thresh, len(keys), dist.bound_a)


class _Null:
    __slots__ = ()

    def __repr__(self):
        return "NULL"

    def __reduce__(self):
        return "NULL"


NULL = _Null()


@dataclass(frozen=True)
class ScoredCandidate:
    id: object
    score: float


def gap_max(candidates, pp, rng):
    """GAP-MAX selection.

    With s2 the candidate holding the second-largest exact score, returns the
    argmax over candidates of ``max(0, score - score(s2) - 1) + xi`` where the
    xi are i.i.d. TLap(2, eps, delta), drawn in list order.  Exact ties of the
    noisy objective go to the lowest list index.

    Raises:
      MissingNull: if no candidate has id ``NULL``.
    """
    candidates = list(candidates)
    if sum(c.id is NULL for c in candidates) != 1:
        raise MissingNull("exactly one NULL candidate is required")
    scores = np.array([c.score for c in candidates], dtype=float)
    if scores.size == 1:
        second = -math.inf
    else:
        second = np.partition(scores, -2)[-2]
    gaps = np.maximum(0.0, scores - second - 1.0)
    xi = tlap_sample(tlap_params(2.0, pp), rng, size=scores.size)
    return candidates[int(np.argmax(gaps + xi))].id
