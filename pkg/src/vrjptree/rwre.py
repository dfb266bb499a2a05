"""The discrete-time random walk in random environment on the enlarged tree.

From a vertex x the walk moves to its parent with weight 1/A_x and to a
child z with weight A_z; the artificial parent of the root sends the walk
back to the root.  Besides simulation this module holds the regeneration
machinery and the speed, exponent and escape-probability estimators.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .exceptions import UsageError
from .gw_env import ROOT, SUPER_ROOT, EnvTree, VertexId


@dataclass(frozen=True)
class WalkConfig:
    max_steps: int
    buffer: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.buffer is not None and not 0 <= self.buffer < self.max_steps:
            raise ValueError("buffer must lie in [0, max_steps)")

    @property
    def censor(self) -> int:
        """Tail buffer; by default the last 20% of the run."""
        return self.max_steps // 5 if self.buffer is None else self.buffer


def walk_key(seed: int, stream: int = 0) -> np.uint64:
    """Counter-based stream key for one walker."""
    return K.derive_key(seed, 0xA5A5, stream)


def drive(tree: EnvTree, mode: int, key, n_steps: int, *, t_max: float = math.inf,
          start: int = K.ROOT_IDX, stop: int = -1, c: float = 1.0):
    """Run a kernel walker to completion, growing the tree as needed.

    Returns ``(vertices, times, d_values, local_times, truncated)``; the
    arrays have one entry per recorded position, starting position included.
    """
    out_v = np.empty(n_steps + 1, dtype=np.int64)
    out_t = np.zeros(n_steps + 1)
    out_d = np.zeros(n_steps + 1)
    out_v[0] = start
    state = np.array([start, 0, 0.0, 0.0])
    local = np.full(tree.capacity, c) if mode == K.VRJP else np.zeros(1)
    truncated = False
    while True:
        status = K.run_chain(mode, *tree._arrays(), local, c, key, state, n_steps,
                             t_max, stop, out_v, out_t, out_d)
        if status == 0:
            break
        try:
            tree._grow()
        except MemoryError:
            truncated = True
            break
        if mode == K.VRJP:
            local = np.concatenate([local, np.full(tree.capacity - local.shape[0], c)])
    n = int(state[1])
    return out_v[: n + 1], out_t[: n + 1], out_d[: n + 1], local, truncated, state


def step_distribution(tree: EnvTree, v: VertexId) -> list:
    """Quenched one-step law from ``v`` as ``[(vertex, probability), ...]``."""
    v = tuple(v)
    if v == SUPER_ROOT:
        return [(ROOT, 1.0)]
    kids = tree.children(v)
    weights = [1.0 / tree.env_value(v)] + [tree.env_value(z) for z in kids]
    total = math.fsum(weights)
    targets = [tree.parent_of(v)] + kids
    return [(u, w / total) for u, w in zip(targets, weights)]


@dataclass
class Trajectory:
    """A realized walk: vertex indices into ``tree`` and their generations."""

    vertices: np.ndarray
    generations: np.ndarray
    tree: EnvTree | None = None
    times: np.ndarray | None = None
    truncated: bool = False
    degrees: np.ndarray | None = None
    _reg_cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_generations(cls, generations, degrees=None) -> "Trajectory":
        """Synthetic trajectory known only through its generation sequence."""
        g = np.asarray(generations, dtype=np.int64)
        d = None if degrees is None else np.asarray(degrees, dtype=np.int64)
        return cls(vertices=np.arange(g.size), generations=g, degrees=d)

    def __len__(self):
        return self.generations.shape[0]

    @property
    def n_steps(self) -> int:
        return len(self) - 1

    def vertex_ids(self) -> list:
        return [self.tree.path_of(int(i)) for i in self.vertices]

    def hitting_times(self) -> np.ndarray:
        """tau_n for n = 0 .. max generation reached."""
        running = np.maximum.accumulate(np.maximum(self.generations, 0))
        return np.searchsorted(running, np.arange(running[-1] + 1), side="left")

    def step_degrees(self) -> np.ndarray:
        if self.degrees is not None:
            return self.degrees
        if self.tree is None:
            raise UsageError("degrees are unknown for a synthetic trajectory")
        nchild = self.tree.nchild[self.vertices]
        deg = nchild + 1
        deg[self.vertices == K.SUPER_ROOT_IDX] = 1
        return deg

    def regenerations(self, buffer: int) -> np.ndarray:
        if buffer not in self._reg_cache:
            self._reg_cache[buffer] = detect_regenerations(self, buffer)
        return self._reg_cache[buffer]


def run_walk(tree: EnvTree, cfg: WalkConfig, stream: int = 0) -> Trajectory:
    """Simulate the quenched walk from the root for ``cfg.max_steps`` steps."""
    verts, _, _, _, truncated, _ = drive(tree, K.ETA, walk_key(cfg.seed, stream), cfg.max_steps)
    return Trajectory(verts, tree.gen[verts].copy(), tree, truncated=truncated)


def detect_regenerations(tr: Trajectory, buffer: int) -> np.ndarray:
    """Censored regeneration times.

    A time k qualifies when it is the first visit to generation |eta_k|,
    eta_k has degree at least 3, the walk never drops below generation
    |eta_k| afterwards within the record (on a tree that is the same as
    never crossing the edge to the parent), and k <= len - 1 - buffer.
    """
    g = tr.generations
    n = g.shape[0]
    if n <= buffer:
        raise ValueError("trajectory is not longer than the censoring buffer")
    tau = tr.hitting_times()
    fresh = np.zeros(n, dtype=bool)
    fresh[tau] = True
    suffix_min = np.minimum.accumulate(g[::-1])[::-1]
    after = np.empty(n, dtype=g.dtype)
    after[:-1] = suffix_min[1:]
    after[-1] = np.iinfo(g.dtype).max
    ok = fresh & (tr.step_degrees() >= 3) & (after >= g) & (g >= 0)
    ok[n - buffer:] = False
    ok[0] = False
    return np.flatnonzero(ok)


@dataclass(frozen=True)
class SpeedEstimate:
    estimate: float
    se: float
    method: str
    n: int


@dataclass(frozen=True)
class SpeedReport:
    endpoint: SpeedEstimate
    regeneration: SpeedEstimate | None

    @property
    def no_regenerations(self) -> bool:
        return self.regeneration is None


def estimate_speed(tr: Trajectory, buffer: int | None = None, batches: int = 20,
                   bootstrap: int = 200, seed: int = 0) -> SpeedReport:
    """Endpoint and regeneration-ratio speed estimators.

    The endpoint SE uses non-overlapping batch means of the generation
    increments; the regeneration SE bootstraps whole inter-regeneration
    blocks.
    """
    n = tr.n_steps
    if n < 1000:
        raise ValueError("speed estimation needs at least 1000 steps")
    g = tr.generations
    inc = np.diff(g)
    edges = np.linspace(0, n, batches + 1).astype(int)
    batch_speed = np.array([inc[a:b].sum() / (b - a) for a, b in zip(edges[:-1], edges[1:])])
    endpoint = SpeedEstimate(float(g[-1] / n), float(batch_speed.std(ddof=1) / math.sqrt(batches)),
                             "endpoint", n)
    buffer = n // 5 if buffer is None else buffer
    regs = tr.regenerations(buffer)
    if regs.size < 3:
        return SpeedReport(endpoint, None)
    lengths = np.diff(regs).astype(float)
    gains = np.diff(g[regs]).astype(float)
    ratio = gains.sum() / lengths.sum()
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, lengths.size, size=(bootstrap, lengths.size))
    boot = gains[idx].sum(axis=1) / lengths[idx].sum(axis=1)
    regen = SpeedEstimate(float(ratio), float(boot.std(ddof=1)), "regeneration", int(lengths.size))
    return SpeedReport(endpoint, regen)


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    residual: float
    n_points: int


def estimate_exponent(tr: Trajectory, decades: int = 2, per_decade: int = 50) -> ExponentFit:
    """Least-squares slope of log|eta_n| against log n over the last decades."""
    n = tr.n_steps
    if n < 10**decades:
        raise ValueError(f"need at least {decades} decades of steps, got n={n}")
    ns = np.unique(np.geomspace(n / 10**decades, n, decades * per_decade + 1).astype(np.int64))
    x = np.log(ns)
    y = np.log(np.maximum(tr.generations[ns], 1))
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    rms = math.sqrt(res[0] / ns.size) if res.size else 0.0
    return ExponentFit(float(coef[0]), rms, int(ns.size))


@dataclass(frozen=True)
class BetaEstimate:
    direct: float
    direct_se: float
    recursion: float
    recursion_se: float
    children: tuple


def _escape_frequency(tree: EnvTree, start: int, target: int, replicas: int,
                      horizon: int, key) -> np.ndarray:
    escaped = np.zeros(replicas, dtype=np.int64)
    done = 0
    while done < replicas:
        done = K.escape_runs(*tree._arrays(), start, target, key, done, replicas,
                             horizon, escaped)
        if done < replicas:
            tree._grow()
    return escaped


def estimate_beta(tree: EnvTree, v: VertexId = ROOT, replicas: int = 2000,
                  horizon: int = 2000, seed: int = 0) -> BetaEstimate:
    """Quenched probability of never hitting the parent of ``v``.

    Direct Monte Carlo from ``v`` plus the value implied by
    1/beta(v) = 1 + 1/(A_v sum_y A_y beta(y)) from child-level estimates.
    Escape means "no hit within ``horizon`` steps", which biases both
    estimates upward by the same mechanism.
    """
    v = tuple(v)
    i = tree.index_of(v)
    target = int(tree.parent[i])
    key = walk_key(seed, 0xBE7A)
    hits = _escape_frequency(tree, i, target, replicas, horizon, key)
    direct = hits.mean()
    direct_se = math.sqrt(max(direct * (1 - direct), 1.0 / replicas) / replicas)
    if direct < 1.0 / replicas:
        warnings.warn("escape probability estimate is ~0; configuration looks recurrent")
    kids = tree.children(v)
    a_v = tree.env_value(v)
    s = 0.0
    var_s = 0.0
    child_est = []
    for j, y in enumerate(kids):
        yi = tree.index_of(y)
        b = _escape_frequency(tree, yi, i, replicas, horizon, walk_key(seed, 0xBE7A + 1 + j)).mean()
        b_var = max(b * (1 - b), 1.0 / replicas) / replicas
        a_y = tree.env_value(y)
        s += a_v * a_y * b
        var_s += (a_v * a_y) ** 2 * b_var
        child_est.append(float(b))
    recursion = s / (1.0 + s)
    recursion_se = math.sqrt(var_s) / (1.0 + s) ** 2
    return BetaEstimate(float(direct), direct_se, float(recursion), recursion_se, tuple(child_est))
