"""Experiment runner: seeded trials, sensitivity audits and constant sweeps.

Trial ``i`` of a run with base seed ``s`` uses ``child_seed(s, i)``, a
SplitMix64 hash of ``(s + i) mod 2**64``; the instance is drawn first and
the estimator then continues on the same generator.
"""

import csv
import dataclasses
import io
import itertools
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
from scipy import stats

from dpsubspace import approx, exact, linalg, synth
from dpsubspace.errors import ConfigError, NoFeasiblePoint, SubspaceError
from dpsubspace.mechanisms import PrivacyParams, raw_counts

log = logging.getLogger(__name__)

ALGORITHMS = ("exact", "approx", "boosted")
SUCCESS, WRONG, NULL_OR_BOT = "SUCCESS", "WRONG", "NULL_OR_BOT"
OUTCOMES = (SUCCESS, WRONG, NULL_OR_BOT)
EXACT_MATCH_TOL = 1e-7
DEFAULT_MIN_SUCCESS = {"exact": 1.0, "approx": 0.65, "boosted": 0.9}

_MASK64 = (1 << 64) - 1


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def child_seed(base_seed, index):
    return splitmix64((int(base_seed) + int(index)) & _MASK64)


_DEFAULTS = {
    "exact": dict(d=6, k=2, n=45, ell=1, trials=100),
    "approx": dict(d=16, k=2, n=6600, gamma=1e-4, trials=40),
    "boosted": dict(d=16, k=2, n=42 * 6600, gamma=1e-4, trials=20),
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "algorithm": {"enum": list(ALGORITHMS)},
        "d": {"type": "integer", "minimum": 1},
        "k": {"type": "integer", "minimum": 1},
        "n": {"type": "integer", "minimum": 1},
        "ell": {"type": "integer", "minimum": 0},
        "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "data_gamma": {"type": ["number", "null"], "minimum": 0, "exclusiveMaximum": 1},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "beta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "c0": {"type": "number", "exclusiveMinimum": 0},
        "c1": {"type": "number", "exclusiveMinimum": 0},
        "c2": {"type": "number", "exclusiveMinimum": 0},
        "c3": {"type": "number", "exclusiveMinimum": 0},
        "representative": {"enum": list(approx.REPRESENTATIVES)},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "trials": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": ["string", "null"]},
        "threads": {"type": "integer", "minimum": 1},
        "record_timing": {"type": "boolean"},
        "min_success_rate": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
    },
}


@dataclass
class ExperimentConfig:
    algorithm: str = "exact"
    d: int = 6
    k: int = 2
    n: int = 45
    ell: int = 1
    gamma: float = 1e-4
    data_gamma: float = None
    eps: float = 1.0
    delta: float = 0.01
    alpha: float = 0.1
    beta: float = 0.1
    c0: float = 8.0
    c1: float = 2.0
    c2: float = 150.0
    c3: float = 18.0
    representative: str = "center"
    tol: float = linalg.DEFAULT_TOL
    trials: int = 100
    seed: int = 0
    out: str = None
    threads: int = 1
    record_timing: bool = False
    min_success_rate: float = None

    @classmethod
    def from_dict(cls, raw, algorithm=None):
        """Validate ``raw`` against the JSON schema and fill per-algorithm defaults."""
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid config: {exc.message}") from exc
        algo = algorithm or raw.get("algorithm", "exact")
        values = dict(_DEFAULTS[algo])
        values.update(raw)
        values["algorithm"] = algo
        cfg = cls(**values)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path, algorithm=None):
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw, algorithm)

    def to_dict(self):
        return dataclasses.asdict(self)

    def validate(self):
        try:
            jsonschema.validate(self.to_dict(), CONFIG_SCHEMA)
            self.privacy()
            if self.algorithm == "exact":
                self.exact_config()
            else:
                acfg = self.approx_config()
                approx.check_count_margin(approx.num_blocks(acfg), acfg.pp)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid config: {exc.message}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.algorithm == "exact" and self.k >= self.d:
            raise ConfigError("exact instances need d > k")

    def privacy(self):
        return PrivacyParams(self.eps, self.delta)

    def exact_config(self):
        return exact.ExactConfig(self.k, self.ell, self.privacy(), tol=self.tol)

    def approx_config(self):
        return approx.ApproxConfig(self.privacy(), self.alpha, self.gamma, self.k,
                                   c0=self.c0, c1=self.c1, c2=self.c2, c3=self.c3,
                                   representative=self.representative)

    @property
    def success_threshold(self):
        if self.min_success_rate is not None:
            return self.min_success_rate
        return DEFAULT_MIN_SUCCESS[self.algorithm]


@dataclass
class TrialRecord:
    trial_id: int
    seed: int
    algorithm: str
    d: int
    k: int
    n: int
    ell: int
    gamma: float
    eps: float
    delta: float
    alpha: float
    beta: float
    c0: float
    c1: float
    c2: float
    c3: float
    measured_error: float
    outcome: str
    wall_time_ms: float

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {self.outcome!r}")
        if (self.measured_error is None) != (self.outcome == NULL_OR_BOT):
            raise ValueError("measured_error must be present iff outcome != NULL_OR_BOT")


TRIAL_FIELDS = [f.name for f in dataclasses.fields(TrialRecord)]
_INT_FIELDS = {"trial_id", "seed", "d", "k", "n", "ell"}
_STR_FIELDS = {"algorithm", "outcome"}


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_trials_csv(records):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRIAL_FIELDS)
    for rec in records:
        writer.writerow([_fmt(getattr(rec, name)) for name in TRIAL_FIELDS])
    return buf.getvalue()


def parse_trials_csv(text):
    """Parse CSV text written by :func:`format_trials_csv` back into records."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != TRIAL_FIELDS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    records = []
    for row in reader:
        values = {}
        for name in TRIAL_FIELDS:
            raw = row[name]
            if name in _STR_FIELDS:
                values[name] = raw
            elif raw == "":
                values[name] = None
            elif name in _INT_FIELDS:
                values[name] = int(raw)
            else:
                values[name] = float(raw)
        records.append(TrialRecord(**values))
    return records


@dataclass
class Summary:
    algorithm: str
    trials: int
    successes: int
    wrong: int
    null_or_bot: int
    success_rate: float
    empty: bool

    @classmethod
    def of(cls, algorithm, records):
        n = len(records)
        succ = sum(r.outcome == SUCCESS for r in records)
        rate = succ / n if n else math.nan
        return cls(algorithm, n, succ, sum(r.outcome == WRONG for r in records),
                   sum(r.outcome == NULL_OR_BOT for r in records), rate, n == 0)

    def line(self):
        return "summary " + json.dumps(dataclasses.asdict(self))


def make_instance(cfg, rng):
    """Draw one instance for ``cfg``; returns ``(X, truth_projector)``."""
    if cfg.algorithm == "exact":
        inst = synth.gen_exact_instance(cfg.d, cfg.k, cfg.n, cfg.ell, rng)
        return inst.data, linalg.projector_of(inst.truth)
    g = cfg.gamma if cfg.data_gamma is None else cfg.data_gamma
    if g == 0:
        return synth.make_low_rank_instance(cfg.d, cfg.k, cfg.n, rng)
    return synth.make_approx_instance(cfg.d, cfg.k, cfg.n, g, rng)


def estimate(cfg, X, rng):
    """Run the configured estimator; returns a projector array or None.

    Only ``X`` reaches the estimator, never the ground truth.
    """
    if cfg.algorithm == "exact":
        U = exact.dpese(X, cfg.exact_config(), rng)
        return None if U is None else linalg.projector_of(U).matrix
    if cfg.algorithm == "approx":
        P = approx.dpase(X, cfg.approx_config(), rng)
    else:
        P = approx.dpaseb(X, cfg.approx_config(), cfg.beta, rng)
    return None if P is None else P.matrix


def run_trial(cfg, trial_id):
    seed = child_seed(cfg.seed, trial_id)
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    try:
        X, truth = make_instance(cfg, rng)
        est = estimate(cfg, X, rng)
    except SubspaceError as exc:
        # a failed trial is data; the batch carries on
        log.warning("trial %d failed: %s", trial_id, exc)
        est = None
    elapsed = (time.perf_counter() - start) * 1000.0
    if est is None:
        err, outcome = None, NULL_OR_BOT
    else:
        err = linalg.projector_distance(est, truth)
        tol = EXACT_MATCH_TOL if cfg.algorithm == "exact" else cfg.alpha
        outcome = SUCCESS if err <= tol else WRONG
    return TrialRecord(
        trial_id, seed, cfg.algorithm, cfg.d, cfg.k, cfg.n, cfg.ell, cfg.gamma,
        cfg.eps, cfg.delta, cfg.alpha, cfg.beta, cfg.c0, cfg.c1, cfg.c2, cfg.c3,
        err, outcome, round(elapsed, 3) if cfg.record_timing else None,
    )


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_trials(cfg):
    """Run ``cfg.trials`` independent trials; returns ``(records, summary)``.

    Records are ordered by trial id.  When ``cfg.out`` is set the CSV table is
    written there and the summary next to it as ``<out>.summary.json``.
    """
    cfg.validate()
    records = _map(lambda i: run_trial(cfg, i), range(cfg.trials), cfg.threads)
    summary = Summary.of(cfg.algorithm, records)
    if cfg.out:
        out = Path(cfg.out)
        out.write_text(format_trials_csv(records))
        Path(str(out) + ".summary.json").write_text(json.dumps(dataclasses.asdict(summary)) + "\n")
    return records, summary


# -- sensitivity audits ------------------------------------------------------

EXACT_REPLACEMENTS = ("inlier", "outlier", "duplicate", "rescaled", "pair_span", "zero")
APPROX_REPLACEMENTS = ("sample", "outlier", "huge", "duplicate", "zero")


@dataclass
class AuditReport:
    algorithm: str
    pairs: int
    bound: float
    max_deviation: float
    max_cells_changed: int
    passed: bool
    records: list = field(default_factory=list)

    def jsonl(self):
        lines = [json.dumps(r) for r in self.records]
        head = {k: v for k, v in dataclasses.asdict(self).items() if k != "records"}
        lines.append(json.dumps({"summary": True, **head}))
        return "\n".join(lines) + "\n"


def _exact_neighbor(X, truth, rng):
    d, n = X.shape
    j = int(rng.integers(n))
    kind = EXACT_REPLACEMENTS[int(rng.integers(len(EXACT_REPLACEMENTS)))]
    other = X[:, int(rng.integers(n))]
    if kind == "inlier":
        x = truth @ rng.standard_normal(truth.shape[1])
    elif kind == "outlier":
        x = rng.standard_normal(d)
    elif kind == "duplicate":
        x = other.copy()
    elif kind == "rescaled":
        x = rng.uniform(-3, 3) * other
    elif kind == "pair_span":
        x = rng.standard_normal() * other + rng.standard_normal() * X[:, int(rng.integers(n))]
    else:
        x = np.zeros(d)
    Y = X.copy()
    Y[:, j] = x
    return Y, kind, j


def _union_candidates(X, Y, ecfg):
    cands = exact.enumerate_candidates(X, ecfg, allow_zero=True)
    for c in exact.enumerate_candidates(Y, ecfg, allow_zero=True):
        P = c.projector
        if all(linalg.projector_distance(P, o.projector) > exact.DEDUP_TOL for o in cands):
            cands.append(c)
    return [c.basis for c in cands]


def audit_exact_pair(X, Y, ecfg):
    """Largest |u(X, s) - u(Y, s)| over every candidate span of either input.

    That is a superset of the spans present in both runs.
    """
    devs = [abs(exact.exact_score(X, U, ecfg) - exact.exact_score(Y, U, ecfg))
            for U in _union_candidates(X, Y, ecfg)]
    return max(devs, default=0)


def approx_raw_counts(X, acfg, rng):
    """Raw histogram cell counts of one approximate-estimator run (audit only)."""
    d, n = X.shape
    params = approx.derive_params(n, d, acfg)
    refs = approx.draw_references(d, params.q, rng)
    lat = approx.OffsetLattice(params.cell_side, float(rng.random()), params.q * d)
    bases = approx.block_bases(X, acfg.k, params.t, params.m)
    keys = lat.keys(approx.stacked_projections(bases, refs))
    return raw_counts(map(tuple, keys.tolist()))


def count_deviation(a, b):
    """``(L1 distance, number of cells that differ)`` between two Counters."""
    cells = set(a) | set(b)
    diffs = [abs(a.get(c, 0) - b.get(c, 0)) for c in cells]
    return sum(diffs), sum(1 for x in diffs if x)


def _approx_neighbor(X, rng):
    d, n = X.shape
    j = int(rng.integers(n))
    kind = APPROX_REPLACEMENTS[int(rng.integers(len(APPROX_REPLACEMENTS)))]
    if kind == "sample":
        x = X[:, int(rng.integers(n))] + 0.1 * rng.standard_normal(d)
    elif kind == "outlier":
        x = rng.standard_normal(d)
    elif kind == "huge":
        x = 1e6 * rng.standard_normal(d)
    elif kind == "duplicate":
        x = X[:, int(rng.integers(n))].copy()
    else:
        x = np.zeros(d)
    Y = X.copy()
    Y[:, j] = x
    return Y, kind, j


def sensitivity_audit(cfg, pairs=300, identical=False):
    """Score (exact) or raw histogram-count (approx/boosted) deviations on neighbours.

    With ``identical=True`` each pair is a dataset and an unmodified copy.
    PASS for the exact path iff every score moves by at most 1; for the
    histogram path iff the L1 count change is at most 2 across at most 2 cells.
    """
    cfg.validate()
    records = []
    for i in range(pairs):
        seed = child_seed(cfg.seed, i)
        rng = np.random.default_rng(seed)
        X, truth = make_instance(cfg, rng)
        if cfg.algorithm == "exact":
            U = linalg.top_k_subspace(truth.matrix, cfg.k)
            Y, kind, j = _exact_neighbor(X, U, rng)
            if identical:
                Y, kind = X.copy(), "identical"
            dev = audit_exact_pair(X, Y, cfg.exact_config())
            records.append(dict(pair=i, seed=seed, kind=kind, column=j, deviation=dev))
        else:
            Y, kind, j = _approx_neighbor(X, rng)
            if identical:
                Y, kind = X.copy(), "identical"
            acfg = cfg.approx_config()
            state = int(rng.integers(2**63))
            a = approx_raw_counts(X, acfg, np.random.default_rng(state))
            b = approx_raw_counts(Y, acfg, np.random.default_rng(state))
            l1, changed = count_deviation(a, b)
            records.append(dict(pair=i, seed=seed, kind=kind, column=j,
                                deviation=l1, cells_changed=changed))
    if cfg.algorithm == "exact":
        bound = 1
        max_dev = max((r["deviation"] for r in records), default=0)
        max_cells = 0
        passed = max_dev <= bound
    else:
        bound = 2
        max_dev = max((r["deviation"] for r in records), default=0)
        max_cells = max((r["cells_changed"] for r in records), default=0)
        passed = max_dev <= bound and max_cells <= 2
    return AuditReport(cfg.algorithm, pairs, bound, max_dev, max_cells, passed, records)


# -- calibration -------------------------------------------------------------

DEFAULT_GRID = {
    "c0": [6.0, 8.0],
    "c1": [1.0, 2.0, 3.0],
    "c2": [20.0, 50.0, 100.0, 150.0, 200.0, 300.0],
    "c3": [6.0, 12.0, 18.0],
}


@dataclass
class CalibrationResult:
    best: dict
    table: list


def boost_guarantee(p, r):
    """P(at least 0.6 r of r independent runs succeed) when each succeeds w.p. p."""
    need = math.ceil(0.6 * r)
    return float(stats.binom.sf(need - 1, r, p))


def calibrate_constants(cfg, grid=None, *, success_threshold=0.7, capture_threshold=0.8):
    """Sweep (c0, c1, c2, c3) at the configuration's instance size.

    Each (c0, c1, c2) point runs ``cfg.trials`` approximate-estimator trials on
    common seeds and records the success rate at ``cfg.alpha`` and the
    fraction of runs whose t stacked projections share one cell.  A c3 value
    is admissible when ``boost_guarantee(success, r) >= 1 - beta``.  Points
    are ranked by (t, q, c2, r) and the first meeting every threshold wins.

    Raises NoFeasiblePoint when nothing qualifies.
    """
    grid = {**DEFAULT_GRID, **(grid or {})}
    if any(len(v) == 0 for v in grid.values()):
        raise ValueError("every grid axis needs at least one value")
    base = dataclasses.replace(cfg, algorithm="approx")
    base.validate()
    table = []
    for c0, c1, c2 in itertools.product(grid["c0"], grid["c1"], grid["c2"]):
        point = dataclasses.replace(base, c0=c0, c1=c1, c2=c2)
        acfg = point.approx_config()
        t = approx.num_blocks(acfg)
        q = math.ceil(c1 * cfg.k)
        row = dict(c0=c0, c1=c1, c2=c2, t=t, q=q, success=math.nan, capture=math.nan)
        if t < approx.min_blocks(acfg.pp) or cfg.n // t < cfg.k or q < cfg.k:
            for c3 in grid["c3"]:
                table.append(dict(row, c3=c3, r=approx.num_boost_runs(acfg, cfg.beta),
                                  boost=math.nan, feasible=False))
            continue
        succ = cap = 0
        for i in range(cfg.trials):
            rng = np.random.default_rng(child_seed(cfg.seed, i))
            X, truth = make_instance(point, rng)
            tr = approx.dpase_trace(X, acfg, rng)
            cap += tr.all_in_one_cell
            if tr.result is not None and linalg.projector_distance(tr.result, truth) <= cfg.alpha:
                succ += 1
        row["success"] = succ / max(cfg.trials, 1)
        row["capture"] = cap / max(cfg.trials, 1)
        for c3 in grid["c3"]:
            r = approx.num_boost_runs(dataclasses.replace(acfg, c3=c3), cfg.beta)
            boost = boost_guarantee(row["success"], r)
            ok = (row["success"] >= success_threshold and row["capture"] >= capture_threshold
                  and boost >= 1 - cfg.beta)
            table.append(dict(row, c3=c3, r=r, boost=boost, feasible=ok))
    feasible = [r for r in table if r["feasible"]]
    if not feasible:
        raise NoFeasiblePoint("no grid point meets the calibration thresholds")
    best = min(feasible, key=lambda r: (r["t"], r["q"], r["c2"], r["r"]))
    return CalibrationResult({k: best[k] for k in ("c0", "c1", "c2", "c3")}, table)
