"""Experiment orchestration: specs, replica fan-out, result records, plot tables.

A spec is a small JSON document.  Replica ``i`` of a spec draws all its
randomness from keys derived from ``(seed, i)``, so a record does not
depend on the number of workers or on scheduling.  Records are written
to ``<results dir>/<spec hash>.json``; rerunning a spec overwrites its
record with identical content.
"""

from __future__ import annotations

import dataclasses
import datetime as _dt
import hashlib
import json
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import stats

from . import _kernels as K
from .exceptions import NumericalError, UsageError
from .gw_env import EnvTree, OffspringLaw
from .halfline import (HalflineEnv, expected_exit_time, green_function, hit_prob,
                       one_step_margin, oracle_exit_time, oracle_green, oracle_hit_prob,
                       s_lambda_bound_check)
from .moments import IgParams, MomentEngine
from .rwre import Trajectory, WalkConfig, estimate_exponent, estimate_speed, run_walk
from .vrjp import FixedTree, mixture_equivalence_test

SCHEMA_VERSION = 1
TABLE_FORMAT = "vrjptree-table/1"
BUILD_ID = "vrjptree-0.1.0"
KINDS = ("classify", "rwre-speed", "exponent", "vrjp-equivalence", "halfline-oracle",
         "phase-scan")
REPLICA_KINDS = ("rwre-speed", "exponent", "vrjp-equivalence", "halfline-oracle")
BOUNDARY_TOL = 1e-9
WORKERS_ENV = "VRJPTREE_WORKERS"


# -- classification ------------------------------------------------------


@dataclass(frozen=True)
class RegimeReport:
    c: float
    b: float
    mu: float
    b_mu: float
    q1: float
    xi_half: float
    q1_xi_half: float
    t_star: float
    lam: float
    exponent: float | None
    regime: str
    boundary: str | None
    speed_assumptions: bool
    criteria_agree: bool

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def classify(law: OffspringLaw, c: float, tol: float = BOUNDARY_TOL) -> RegimeReport:
    """Predicted regime of the walk for offspring law ``law`` and parameter ``c``.

    Recurrence is decided by b mu(c) against 1, the speed by q1 xi_{1/2}
    against 1.  Values within ``tol`` of a threshold are flagged as
    boundary and no regime is asserted.  ``criteria_agree`` records that
    Lambda > 1 gives the same verdict as q1 xi_{1/2} < 1.
    """
    engine = MomentEngine.for_c(c)
    mu = engine.mu()
    b = law.b
    q1 = law.q1
    xi_half = engine.xi(0.5)
    t_star = engine.t_star(q1)
    lam = engine.lambda_measure(q1)
    qx = q1 * xi_half
    boundary = None
    if abs(b * mu - 1.0) <= tol:
        regime, boundary = "boundary", "recurrence"
    elif b * mu < 1.0:
        regime = "recurrent"
    elif abs(qx - 1.0) <= tol:
        regime, boundary = "boundary", "speed"
    elif qx < 1.0:
        regime = "transient-ballistic"
    else:
        regime = "transient-null"
    exponent = t_star - 0.5 if regime == "transient-null" else None
    agree = boundary == "speed" or (qx < 1.0) == (lam > 1.0)
    return RegimeReport(float(c), b, mu, b * mu, q1, xi_half, qx, t_star, lam, exponent,
                        regime, boundary, law.q0 == 0, bool(agree))


def critical_c(law: OffspringLaw, lo: float = 1e-3, hi: float = 50.0, tol: float = 1e-13) -> float:
    """The c at which b mu(c) = 1, by bisection (mu increases with c)."""
    b = law.b

    def f(c):
        return b * MomentEngine.for_c(c).mu() - 1.0

    if f(lo) > 0 or f(hi) < 0:
        raise NumericalError("b mu(c) = 1 is not bracketed", lo=lo, hi=hi, b=b)
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# -- specs ---------------------------------------------------------------

_TREE_RE = re.compile(r"^(path|star|binary)(\d+)$")


def fixed_tree(name: str) -> FixedTree:
    """``path<n>``, ``star<leaves>`` or ``binary<depth>``."""
    m = _TREE_RE.match(name)
    if not m:
        raise UsageError(f"unknown tree {name!r}; expected path<n>, star<k> or binary<d>")
    kind, n = m.group(1), int(m.group(2))
    return getattr(FixedTree, kind)(n)


@dataclass(frozen=True)
class ExperimentSpec:
    """Declarative description of one experiment.

    ``steps`` is the walk length for walk experiments; ``replicas`` the
    number of independent replicas (test repetitions for
    ``vrjp-equivalence``); ``samples`` the skeletons per side of one
    equivalence test; ``sites`` the largest half-line segment.
    """

    kind: str
    law: tuple = (0.0, 0.0, 1.0)
    c: float = 1.0
    c_grid: tuple = ()
    q1_grid: tuple = ()
    steps: int = 100_000
    replicas: int = 1
    horizon: int = 2000
    samples: int = 100_000
    skeleton: int = 4
    sites: int = 50
    tree: str = "path4"
    corrupt: bool = False
    seed: int = 0
    output: str | None = None
    schema: int = SCHEMA_VERSION

    def __post_init__(self):
        law = self.law
        if isinstance(law, dict):
            law = OffspringLaw.from_dict(law).probabilities
        object.__setattr__(self, "law", tuple(float(x) for x in law))
        object.__setattr__(self, "c_grid", tuple(float(x) for x in self.c_grid))
        object.__setattr__(self, "q1_grid", tuple(float(x) for x in self.q1_grid))
        object.__setattr__(self, "c", float(self.c))
        self._validate()

    def _validate(self):
        if self.schema != SCHEMA_VERSION:
            raise UsageError(f"unsupported spec schema {self.schema}")
        if self.kind not in KINDS:
            raise UsageError(f"unknown experiment kind {self.kind!r}")
        if not self.c > 0 or any(not x > 0 for x in self.c_grid):
            raise UsageError("c values must be positive")
        if self.seed < 0 or self.steps < 1 or self.replicas < 0 or self.horizon < 1:
            raise UsageError("seed, steps, replicas and horizon must be nonnegative counts")
        try:
            law = self.offspring_law()
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        if self.kind in REPLICA_KINDS and self.replicas < 1:
            raise UsageError(f"{self.kind} needs at least one replica")
        if self.kind in ("rwre-speed", "exponent"):
            if not law.b > 1:
                raise UsageError("walk experiments need a supercritical offspring law")
            if self.steps < 1000:
                raise UsageError("walk experiments need at least 1000 steps")
        if self.kind == "exponent":
            if law.q0 != 0:
                raise UsageError("exponent experiments require q0 = 0")
            engine = MomentEngine.for_c(self.c)
            if not law.q1 * engine.xi(0.5) > 1:
                raise UsageError("exponent experiments require q1 xi_1/2 > 1")
            if not law.b * engine.mu() > 1:
                raise UsageError("exponent experiments require a transient configuration")
        if self.kind == "vrjp-equivalence":
            fixed_tree(self.tree)
            if not 1 <= self.skeleton <= 8 or self.samples < 20:
                raise UsageError("equivalence needs 1 <= skeleton <= 8 and samples >= 20")
        if self.kind == "halfline-oracle" and not 3 <= self.sites <= 500:
            raise UsageError("sites must lie in [3, 500]")
        if self.kind == "phase-scan":
            if not self.c_grid:
                raise UsageError("phase-scan needs a c grid")
            if any(not 0 <= q < 1 for q in self.q1_grid):
                raise UsageError("q1 grid values must lie in [0, 1)")
            if self.q1_grid and sum(law.probabilities[2:]) <= 0:
                raise UsageError("q1 scans need offspring mass on k >= 2")

    def offspring_law(self) -> OffspringLaw:
        return OffspringLaw(self.law)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise UsageError(f"unknown spec fields: {sorted(unknown)}")
        if "kind" not in data:
            raise UsageError("spec needs a kind")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"spec is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_json(Path(path).read_text())

    def spec_hash(self) -> str:
        """Content hash; the output location does not enter it."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:20]

    def replace(self, **changes) -> "ExperimentSpec":
        return dataclasses.replace(self, **changes)


def fixture_names() -> list:
    return sorted(p.name[:-5] for p in resources.files("vrjptree.fixtures").iterdir()
                  if p.name.endswith(".json"))


def load_fixture(name: str) -> ExperimentSpec:
    """One of the shipped experiment specs (see :func:`fixture_names`)."""
    res = resources.files("vrjptree.fixtures") / f"{name}.json"
    if not res.is_file():
        raise UsageError(f"no fixture named {name!r}")
    return ExperimentSpec.from_json(res.read_text())


# -- replicas ------------------------------------------------------------


def replica_seeds(seed: int, i: int) -> tuple:
    """(tree seed, walk seed) of replica ``i``; a function of (seed, i) only."""
    return int(K.derive_key(seed, 0x7EE, i)), int(K.derive_key(seed, 0x3A1, i))


def _checkpoints(steps: int) -> list:
    pts = [10**k for k in range(3, 19) if 10**k < steps]
    return pts + [steps]


def _walk(spec: ExperimentSpec, i: int) -> Trajectory:
    tree_seed, walk_seed = replica_seeds(spec.seed, i)
    tree = EnvTree(spec.offspring_law(), IgParams(spec.c), seed=tree_seed)
    return run_walk(tree, WalkConfig(spec.steps, seed=walk_seed))


def _speed_replica(spec: ExperimentSpec, i: int) -> dict:
    tr = _walk(spec, i)
    g = tr.generations
    report = estimate_speed(tr)
    regs = tr.regenerations(spec.steps // 5)
    out = {
        "max_generation": int(g.max()),
        "final_generation": int(g[-1]),
        "endpoint": {str(n): float(g[n] / n) for n in _checkpoints(spec.steps)},
        "endpoint_se": report.endpoint.se,
        "regen_count": int(regs.size),
        "regen_steps": int(regs[-1] - regs[0]) if regs.size >= 2 else 0,
        "regen_gain": int(g[regs[-1]] - g[regs[0]]) if regs.size >= 2 else 0,
        "truncated": bool(tr.truncated),
    }
    return out


def _exponent_replica(spec: ExperimentSpec, i: int) -> dict:
    tr = _walk(spec, i)
    g = tr.generations
    fit = estimate_exponent(tr)
    prefix = spec.steps // 10
    short = estimate_exponent(Trajectory.from_generations(g[: prefix + 1])) if prefix >= 100 else None
    ns = np.unique(np.geomspace(1, spec.steps, 61).astype(np.int64))
    return {
        "slope": fit.slope,
        "residual": fit.residual,
        "slope_prefix": None if short is None else short.slope,
        "prefix_steps": prefix,
        "endpoint": {str(n): float(g[n] / n) for n in _checkpoints(spec.steps)},
        "trace_n": ns.tolist(),
        "trace_eta": g[ns].tolist(),
        "truncated": bool(tr.truncated),
    }


def _equivalence_replica(spec: ExperimentSpec, i: int) -> dict:
    seed = int(K.derive_key(spec.seed, 0xE0, i))
    rep = mixture_equivalence_test(fixed_tree(spec.tree), spec.c, spec.skeleton,
                                   spec.samples, seed=seed, corrupt=spec.corrupt)
    return {"statistic": rep.statistic, "dof": rep.dof, "p_value": rep.p_value,
            "tree_hash": rep.tree_hash}


def _scaled_err(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def _halfline_replica(spec: ExperimentSpec, i: int) -> dict:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([spec.seed, 0x4A1F, i])))
    n = int(rng.integers(3, spec.sites + 1))
    env = HalflineEnv.sample(n, IgParams(spec.c), rng)
    ph = oracle_hit_prob(env, -1, n)
    gr = np.diag(oracle_green(env, -1, n))
    ex = oracle_exit_time(env, -1, n)
    hit = [hit_prob(env, j, n) for j in range(n)]
    green = [green_function(env, j, -1, n) for j in range(n)]
    exit_ = [expected_exit_time(env, j, -1, n) for j in range(n)]
    y1, y2, y3 = (int(x) for x in np.sort(rng.choice(n + 1, size=3, replace=False)))
    margins = [s_lambda_bound_check(env, lam, y1, y2, y3) for lam in (0.3, 0.7)]
    step = min(one_step_margin(env, p, n) for p in range(n))
    return {
        "n": n,
        "hit_error": float(np.max(np.abs(np.array(hit) - ph))),
        "green_error": _scaled_err(green, gr),
        "exit_error": _scaled_err(exit_, ex),
        "hit_monotone": bool(np.all(np.diff(hit) > 0)),
        "one_step_margin": float(step),
        "green_margin": min(m.green_margin for m in margins),
        "chain_margin": min(m.chain_margin for m in margins),
        "points": [y1, y2, y3],
    }


_RUNNERS = {
    "rwre-speed": _speed_replica,
    "exponent": _exponent_replica,
    "vrjp-equivalence": _equivalence_replica,
    "halfline-oracle": _halfline_replica,
}


def run_replica(spec: ExperimentSpec, i: int) -> dict:
    """Summary of replica ``i``; raises on failure."""
    summary = _RUNNERS[spec.kind](spec, i)
    summary["replica"] = i
    return summary


def _run_chunk(spec_json: str, indices) -> "ReplicaSet":
    spec = ExperimentSpec.from_json(spec_json)
    out = ReplicaSet()
    for i in indices:
        try:
            out.summaries[i] = run_replica(spec, i)
        except Exception as exc:  # recorded per replica, never fatal
            out.errors[i] = f"{type(exc).__name__}: {exc}"
    return out


@dataclass
class ReplicaSet:
    """Replica summaries keyed by index; merging is a disjoint union."""

    summaries: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    def merge(self, other: "ReplicaSet") -> "ReplicaSet":
        clash = (set(self.summaries) | set(self.errors)) & (set(other.summaries) | set(other.errors))
        if clash:
            raise ValueError(f"replicas merged twice: {sorted(clash)[:5]}")
        return ReplicaSet({**self.summaries, **other.summaries}, {**self.errors, **other.errors})

    def ordered(self) -> list:
        return [self.summaries[i] for i in sorted(self.summaries)]


# -- aggregation -----------------------------------------------------------


def _mean_se(values) -> dict:
    v = [float(x) for x in values]
    n = len(v)
    if n == 0:
        return {"n": 0, "mean": None, "se": None, "ci_low": None, "ci_high": None}
    mean = math.fsum(v) / n
    se = math.sqrt(math.fsum((x - mean) ** 2 for x in v) / (n - 1) / n) if n > 1 else math.inf
    return {"n": n, "mean": mean, "se": se, "ci_low": mean - 1.96 * se, "ci_high": mean + 1.96 * se}


def _aggregate_speed(rows: list) -> dict:
    if not rows:
        return {}
    keys = sorted(rows[0]["endpoint"], key=int)
    endpoint = {k: _mean_se(r["endpoint"][k] for r in rows) for k in keys}
    with_regen = [r for r in rows if r["regen_steps"] > 0]
    regen = None
    if len(with_regen) >= 2:
        s = [r["regen_steps"] for r in with_regen]
        g = [r["regen_gain"] for r in with_regen]
        m = len(s)
        ratio = math.fsum(g) / math.fsum(s)
        s_bar = math.fsum(s) / m
        var = math.fsum((gi - ratio * si) ** 2 for gi, si in zip(g, s)) / (m - 1) / m / s_bar**2
        se = math.sqrt(var)
        regen = {"n": m, "mean": ratio, "se": se, "ci_low": ratio - 1.96 * se,
                 "ci_high": ratio + 1.96 * se}
    final = endpoint[keys[-1]]
    mg = sorted(r["max_generation"] for r in rows)
    agg = {
        "endpoint": endpoint,
        "regeneration": regen,
        "max_generation": {"min": mg[0], "median": float(np.median(mg)), "max": mg[-1],
                           "values": mg},
        "truncated": sum(r["truncated"] for r in rows),
    }
    if regen is not None:
        diff = final["mean"] - regen["mean"]
        agg["consistency"] = {"difference": diff, "joint_se": math.hypot(final["se"], regen["se"])}
    return agg


def _aggregate_exponent(rows: list) -> dict:
    if not rows:
        return {}
    agg = {"slope": _mean_se(r["slope"] for r in rows),
           "endpoint": {k: _mean_se(r["endpoint"][k] for r in rows)
                        for k in sorted(rows[0]["endpoint"], key=int)}}
    pref = [r["slope_prefix"] for r in rows if r["slope_prefix"] is not None]
    agg["slope_prefix"] = _mean_se(pref)
    return agg


def _aggregate_equivalence(rows: list) -> dict:
    if not rows:
        return {}
    p = sorted(r["p_value"] for r in rows)
    agg = {"p_values": p, "min_p": p[0], "max_p": p[-1], "repetitions": len(p)}
    agg["ks_uniform_p"] = float(stats.kstest(p, "uniform").pvalue) if len(p) >= 2 else None
    return agg


def _aggregate_halfline(rows: list) -> dict:
    if not rows:
        return {}
    return {
        "instances": len(rows),
        "max_hit_error": max(r["hit_error"] for r in rows),
        "max_green_error": max(r["green_error"] for r in rows),
        "max_exit_error": max(r["exit_error"] for r in rows),
        "min_one_step_margin": min(r["one_step_margin"] for r in rows),
        "min_green_margin": min(r["green_margin"] for r in rows),
        "min_chain_margin": min(r["chain_margin"] for r in rows),
        "all_monotone": all(r["hit_monotone"] for r in rows),
    }


_AGGREGATORS = {
    "rwre-speed": _aggregate_speed,
    "exponent": _aggregate_exponent,
    "vrjp-equivalence": _aggregate_equivalence,
    "halfline-oracle": _aggregate_halfline,
}


def aggregate(kind: str, replicas: ReplicaSet) -> dict:
    """Aggregates depend only on the set of summaries, not on merge order."""
    return _AGGREGATORS[kind](replicas.ordered())


def _scan_law(law: OffspringLaw, q1: float) -> OffspringLaw:
    """Put mass q1 on one child and spread 1 - q1 over k >= 2 as in ``law``."""
    rest = np.array(law.probabilities[2:])
    q = [0.0, q1, *((1.0 - q1) * rest / rest.sum())]
    q[-1] = 1.0 - math.fsum(q[:-1])
    return OffspringLaw(tuple(q))


def phase_scan(spec: ExperimentSpec) -> list:
    law = spec.offspring_law()
    rows = []
    laws = [(law.q1, law)] if not spec.q1_grid else [(q, _scan_law(law, q)) for q in spec.q1_grid]
    for c in spec.c_grid:
        for q1, lq in laws:
            rep = classify(lq, c).to_dict()
            rep["q1"] = q1
            rows.append(rep)
    return rows


# -- records -------------------------------------------------------------


def json_safe(x):
    """JSON-safe copy: non-finite floats become strings."""
    if isinstance(x, float):
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return json_safe(x.item())
    if isinstance(x, dict):
        return {str(k): json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [json_safe(v) for v in x]
    return x


@dataclass
class ResultRecord:
    spec: ExperimentSpec
    spec_hash: str
    build: str
    replicas: list
    errors: list
    aggregates: dict
    classification: dict | None
    meta: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return bool(self.errors)

    def payload(self) -> dict:
        """Everything except wall-clock metadata."""
        return json_safe({
            "spec": self.spec.to_dict(),
            "spec_hash": self.spec_hash,
            "build": self.build,
            "replicas": self.replicas,
            "errors": self.errors,
            "aggregates": self.aggregates,
            "classification": self.classification,
        })

    def to_json(self, include_meta: bool = True) -> str:
        d = self.payload()
        if include_meta:
            d["meta"] = json_safe(self.meta)
        return json.dumps(d, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ResultRecord":
        d = json.loads(text)
        return cls(ExperimentSpec.from_dict(d["spec"]), d["spec_hash"], d["build"],
                   d["replicas"], d["errors"], d["aggregates"], d["classification"],
                   d.get("meta", {}))

    @classmethod
    def load(cls, path) -> "ResultRecord":
        return cls.from_json(Path(path).read_text())

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{self.spec_hash}.json"
        path.write_text(self.to_json())
        return path


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return default
    try:
        n = int(raw)
    except ValueError as exc:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    if n < 1:
        raise UsageError(f"{WORKERS_ENV} must be at least 1")
    return n


def run_replicas(spec: ExperimentSpec, workers: int = 1) -> ReplicaSet:
    indices = list(range(spec.replicas))
    if workers <= 1 or len(indices) <= 1:
        return _run_chunk(spec.to_json(), indices)
    chunks = [indices[j::workers] for j in range(workers)]
    result = ReplicaSet()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_run_chunk, [spec.to_json()] * len(chunks), chunks):
            result = result.merge(part)
    return result


def run_experiment(spec: ExperimentSpec, workers: int | None = None,
                   results_dir=None) -> ResultRecord:
    """Run every replica of ``spec`` and assemble (and optionally persist) a record.

    ``results_dir`` defaults to ``spec.output``; nothing is written when
    both are unset.  Replica failures are recorded, not raised.
    """
    workers = worker_count() if workers is None else workers
    started = time.time()
    classification = None
    replicas = ReplicaSet()
    aggregates: dict = {}
    if spec.kind in ("classify", "rwre-speed", "exponent"):
        classification = classify(spec.offspring_law(), spec.c).to_dict()
    if spec.kind == "phase-scan":
        aggregates = {"rows": phase_scan(spec)}
    elif spec.kind in REPLICA_KINDS:
        replicas = run_replicas(spec, workers)
        aggregates = aggregate(spec.kind, replicas)
    record = ResultRecord(
        spec=spec,
        spec_hash=spec.spec_hash(),
        build=BUILD_ID,
        replicas=replicas.ordered(),
        errors=[{"replica": i, "error": replicas.errors[i]} for i in sorted(replicas.errors)],
        aggregates=aggregates,
        classification=classification,
        meta={"started": _dt.datetime.fromtimestamp(started, _dt.timezone.utc).isoformat(),
              "elapsed_s": time.time() - started, "workers": workers},
    )
    target = results_dir if results_dir is not None else spec.output
    if target is not None:
        record.save(target)
    return record


# -- plot tables -----------------------------------------------------------

PLOT_COLUMNS = {
    "psi-curve": ("c", "t", "psi", "moment"),
    "phase": ("c", "q1", "b", "mu", "b_mu", "q1_xi_half", "t_star", "lambda", "regime"),
    "speed": ("c", "n", "estimator", "speed", "se", "ci_low", "ci_high"),
    "loglog": ("replica", "n", "log_n", "abs_eta", "log_abs_eta"),
}
PLOT_SOURCES = {
    "psi-curve": ("classify", "phase-scan", "rwre-speed", "exponent"),
    "phase": ("phase-scan",),
    "speed": ("rwre-speed",),
    "loglog": ("exponent",),
}


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if x is None:
        return "nan"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _plot_rows(record: ResultRecord, kind: str, t_grid) -> list:
    spec = record.spec
    agg = _restore(record.aggregates)
    if kind == "psi-curve":
        cs = spec.c_grid if spec.kind == "phase-scan" else (spec.c,)
        rows = []
        for c in cs:
            engine = MomentEngine.for_c(c)
            for t in t_grid:
                psi = engine.psi(float(t))
                rows.append((c, float(t), psi, math.exp(psi)))
        return rows
    if kind == "phase":
        return [(r["c"], r["q1"], r["b"], r["mu"], r["b_mu"], r["q1_xi_half"], r["t_star"],
                 r["lam"], r["regime"]) for r in agg.get("rows", [])]
    if kind == "speed":
        rows = []
        for n, est in agg.get("endpoint", {}).items():
            rows.append((spec.c, int(n), "endpoint", est["mean"], est["se"], est["ci_low"],
                         est["ci_high"]))
        regen = agg.get("regeneration")
        if regen:
            rows.append((spec.c, spec.steps, "regeneration", regen["mean"], regen["se"],
                         regen["ci_low"], regen["ci_high"]))
        return rows
    rows = []
    for r in record.replicas:
        for n, eta in zip(r["trace_n"], r["trace_eta"]):
            a = abs(int(eta))
            rows.append((r["replica"], int(n), math.log(n), a, math.log(a) if a > 0 else "-inf"))
    return rows


def _restore(x):
    if isinstance(x, str) and x in ("inf", "-inf", "nan"):
        return float(x)
    if isinstance(x, dict):
        return {k: _restore(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_restore(v) for v in x]
    return x


def emit_plotdata(record: ResultRecord, kind: str, path, t_grid=None) -> Path:
    """Write a tab-separated table of plot kind ``kind`` (see PLOT_COLUMNS).

    The first line is ``# vrjptree-table/1 <kind>``, the second the column
    names.  A record with nothing to plot yields a header-only file.
    """
    if kind not in PLOT_COLUMNS:
        raise UsageError(f"unknown plot kind {kind!r}; choose from {sorted(PLOT_COLUMNS)}")
    if record.spec.kind not in PLOT_SOURCES[kind]:
        raise UsageError(f"a {record.spec.kind} record cannot produce a {kind} table")
    if t_grid is None:
        t_grid = np.round(np.linspace(-2.0, 3.0, 101), 10)
    rows = _plot_rows(record, kind, t_grid)
    lines = [f"# {TABLE_FORMAT} {kind}", "\t".join(PLOT_COLUMNS[kind])]
    lines += ["\t".join(_fmt(x) for x in row) for row in rows]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path
