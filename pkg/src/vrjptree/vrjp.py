"""The vertex-reinforced jump process and its mixture representation.

``simulate_vrjp`` runs the reinforced process Y exactly: while the walker
sits at v the local times of all neighbours are frozen, so the sojourn is
exponential with rate sum_u L_u.  ``simulate_z_quenched`` runs the Markov
jump process with rates 1/(2 A_x) towards the parent and A_z / 2 towards
a child.  ``mixture_equivalence_test`` compares the two in law on small
finite trees.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy import stats

from . import _kernels as K
from .gw_env import EnvTree
from .moments import IgParams, ig_sample
from .rwre import drive, walk_key


@dataclass
class LocalTimeState:
    """L_x(t) = c + occupation time of x, for every visited vertex."""

    c: float
    local_times: dict
    current: int
    time: float

    def time_change(self) -> float:
        """D(t) recomputed from scratch as sum_x (L_x^2 - c^2)."""
        c2 = self.c * self.c
        return math.fsum(l * l - c2 for l in self.local_times.values())


@dataclass
class TimeChangeAccumulator:
    """Incrementally maintained D(t), sampled at every jump."""

    value: float
    at_jumps: np.ndarray


@dataclass
class ContinuousPath:
    """Jump chain of a continuous-time process on an :class:`EnvTree`."""

    vertices: np.ndarray
    jump_times: np.ndarray
    generations: np.ndarray
    t_end: float
    truncated: bool = False

    @property
    def n_jumps(self) -> int:
        return self.vertices.shape[0] - 1

    def speed(self) -> float:
        return float(max(self.generations[-1], 0) / self.t_end)

    def holding_times(self) -> np.ndarray:
        return np.diff(self.jump_times)


@dataclass
class VrjpRun:
    path: ContinuousPath
    local: LocalTimeState
    time_change: TimeChangeAccumulator


def simulate_vrjp(tree: EnvTree, c: float, t_max: float, seed: int = 0,
                  stream: int = 0, max_jumps: int = 10**6) -> VrjpRun:
    """Simulate VRJP(c) from the root of ``tree`` up to time ``t_max``.

    Only the topology of ``tree`` is used.  The root has no parent here;
    the walk lives on the tree itself.  The run stops at ``t_max`` (the
    last sojourn is cut exactly there) or after ``max_jumps`` jumps,
    whichever comes first.
    """
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    IgParams(c)
    verts, times, d, local, truncated, state = drive(
        tree, K.VRJP, walk_key(seed, stream), max_jumps, t_max=t_max, c=c)
    t_end = float(state[2])
    visited = np.unique(verts)
    table = {int(i): float(local[i]) for i in visited}
    path = ContinuousPath(verts, times, tree.gen[verts].copy(), t_end, truncated)
    return VrjpRun(
        path,
        LocalTimeState(c, table, int(state[0]), t_end),
        TimeChangeAccumulator(float(state[3]), d),
    )


def simulate_z_quenched(tree: EnvTree, t_max: float, seed: int = 0, stream: int = 0,
                        max_jumps: int = 10**6) -> ContinuousPath:
    """Quenched Markov jump process on the enlarged tree.

    Rates: x -> parent(x) at 1/(2 A_x), x -> child z at A_z / 2, and the
    artificial parent of the root returns at rate A_root / 2.
    """
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    verts, times, _, _, truncated, state = drive(
        tree, K.ZQ, walk_key(seed, stream), max_jumps, t_max=t_max)
    return ContinuousPath(verts, times, tree.gen[verts].copy(), float(state[2]), truncated)


def skeleton_probabilities(tree: EnvTree, i: int) -> np.ndarray:
    """Jump probabilities of the quenched jump process out of vertex index ``i``.

    Order: parent first, then children.  Computed from the rates alone.
    """
    tree._expand_indices(np.array([i]))
    fc, nc = int(tree.first_child[i]), int(tree.nchild[i])
    rates = np.concatenate([[1.0 / (2.0 * tree.A[i])], 0.5 * tree.A[fc:fc + nc]])
    return rates / rates.sum()


# -- finite trees and the equivalence test -------------------------------


@dataclass(frozen=True)
class FixedTree:
    """A finite rooted tree given by its parent array (root = vertex 0)."""

    parents: tuple
    name: str = ""

    def __post_init__(self):
        p = tuple(int(x) for x in self.parents)
        if not p or p[0] != -1 or any(not 0 <= p[i] < i for i in range(1, len(p))):
            raise ValueError("parents must list -1 for the root and earlier vertices otherwise")
        object.__setattr__(self, "parents", p)

    @classmethod
    def path(cls, n: int) -> "FixedTree":
        return cls((-1, *range(n - 1)), f"path{n}")

    @classmethod
    def star(cls, leaves: int) -> "FixedTree":
        return cls((-1, *([0] * leaves)), f"star{leaves}")

    @classmethod
    def binary(cls, depth: int) -> "FixedTree":
        n = 2 ** (depth + 1) - 1
        return cls((-1, *((i - 1) // 2 for i in range(1, n))), f"binary{depth}")

    @property
    def size(self) -> int:
        return len(self.parents)

    def neighbours(self) -> np.ndarray:
        """Padded neighbour table, parent first, -1 as filler."""
        lists = [[] for _ in self.parents]
        for v, p in enumerate(self.parents):
            if p >= 0:
                lists[v].append(p)
        for v, p in enumerate(self.parents):
            if p >= 0:
                lists[p].append(v)
        width = max(len(x) for x in lists)
        table = np.full((self.size, width), -1, dtype=np.int64)
        for v, nb in enumerate(lists):
            table[v, : len(nb)] = nb
        return table

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.parents).encode()).hexdigest()[:16]


def _choose(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise categorical draw given unnormalized weights."""
    cum = np.cumsum(weights, axis=1)
    target = u * cum[:, -1]
    idx = (cum <= target[:, None]).sum(axis=1)
    return np.minimum(idx, weights.shape[1] - 1)


def vrjp_skeletons(tree: FixedTree, c: float, k: int, replicas: int,
                   rng: np.random.Generator) -> np.ndarray:
    """First ``k`` jump targets of VRJP(c) from the root, one row per replica."""
    nb = tree.neighbours()
    valid = nb >= 0
    nb_safe = np.where(valid, nb, 0)
    rows = np.arange(replicas)
    local = np.full((replicas, tree.size), float(c))
    cur = np.zeros(replicas, dtype=np.int64)
    out = np.empty((replicas, k), dtype=np.int64)
    for step in range(k):
        cand = nb_safe[cur]
        w = np.where(valid[cur], local[rows[:, None], cand], 0.0)
        total = w.sum(axis=1)
        hold = -np.log(rng.random(replicas)) / total
        local[rows, cur] += hold
        cur = cand[rows, _choose(w, rng.random(replicas))]
        out[:, step] = cur
    return out


def mixture_skeletons(tree: FixedTree, c: float, k: int, replicas: int,
                      rng: np.random.Generator, corrupt: bool = False) -> np.ndarray:
    """First ``k`` jumps of the annealed mixture of quenched jump processes.

    Each replica draws its own environment A_x ~ IG(1, c^2) on the
    non-root vertices (or A = 1 everywhere when ``corrupt``).
    """
    nb = tree.neighbours()
    valid = nb >= 0
    nb_safe = np.where(valid, nb, 0)
    parents = np.array(tree.parents)
    rows = np.arange(replicas)
    if corrupt:
        env = np.ones((replicas, tree.size))
    else:
        env = ig_sample(IgParams(c), rng, size=(replicas, tree.size))
    cur = np.zeros(replicas, dtype=np.int64)
    out = np.empty((replicas, k), dtype=np.int64)
    for step in range(k):
        cand = nb_safe[cur]
        is_child = parents[cand] == cur[:, None]
        w = np.where(is_child, env[rows[:, None], cand], 1.0 / env[rows, cur][:, None])
        w = np.where(valid[cur], w, 0.0)
        cur = cand[rows, _choose(w, rng.random(replicas))]
        out[:, step] = cur
    return out


def encode_skeletons(sk: np.ndarray, base: int) -> np.ndarray:
    codes = np.zeros(sk.shape[0], dtype=np.int64)
    for j in range(sk.shape[1]):
        codes = codes * base + sk[:, j]
    return codes


def pooled_chi2(counts_a: dict, counts_b: dict, min_expected: float = 5.0):
    """Two-sample chi-squared homogeneity test with low-count pooling.

    Categories are merged, smallest first, into one pooled bin until all
    expected counts reach ``min_expected``.  Returns ``(stat, dof, p)``.
    """
    cats = sorted(set(counts_a) | set(counts_b))
    a = np.array([counts_a.get(x, 0) for x in cats], dtype=float)
    b = np.array([counts_b.get(x, 0) for x in cats], dtype=float)
    na, nb_ = a.sum(), b.sum()
    frac = min(na, nb_) / (na + nb_)
    need = min_expected / frac
    order = np.argsort(a + b, kind="stable")
    tot = (a + b)[order]
    keep_from = 0
    pooled = 0.0
    while keep_from < tot.size and (tot[keep_from] < need or 0 < pooled < need):
        pooled += tot[keep_from]
        keep_from += 1
    a_bins = list(a[order][keep_from:])
    b_bins = list(b[order][keep_from:])
    if keep_from:
        a_bins.append(a[order][:keep_from].sum())
        b_bins.append(b[order][:keep_from].sum())
    table = np.array([a_bins, b_bins])
    if table.shape[1] < 2 or table.sum(axis=0).min() * frac < min_expected:
        raise ValueError("too few replicas for a valid chi-squared test")
    expected = table.sum(axis=0)[None, :] * table.sum(axis=1)[:, None] / table.sum()
    stat = float(((table - expected) ** 2 / expected).sum())
    dof = table.shape[1] - 1
    return stat, dof, float(stats.chi2.sf(stat, dof))


@dataclass(frozen=True)
class EquivalenceReport:
    statistic: float
    dof: int
    p_value: float
    replicas_a: int
    replicas_b: int
    tree_hash: str
    tree_name: str
    skeleton_length: int
    c: float
    corrupt: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def mixture_equivalence_test(tree: FixedTree, c: float, k: int, replicas: int,
                             seed: int = 0, corrupt: bool = False) -> EquivalenceReport:
    """Chi-squared comparison of K-step skeletons of Y and of the mixture.

    Sample A runs VRJP(c) directly; its skeleton equals that of the
    time-changed process Z because D is continuous and strictly
    increasing.  Sample B draws a fresh environment per replica and runs
    the quenched jump process.
    """
    if tree.size > 20 or k > 8:
        raise ValueError("equivalence test is limited to 20 vertices and K <= 8")
    if replicas < 20:
        raise ValueError("too few replicas for a valid chi-squared test")
    ss = np.random.SeedSequence([int(seed), 0xE9])
    rng_a, rng_b = (np.random.Generator(np.random.Philox(s)) for s in ss.spawn(2))
    base = tree.size
    a = encode_skeletons(vrjp_skeletons(tree, c, k, replicas, rng_a), base)
    b = encode_skeletons(mixture_skeletons(tree, c, k, replicas, rng_b, corrupt), base)
    ua, ca = np.unique(a, return_counts=True)
    ub, cb = np.unique(b, return_counts=True)
    stat, dof, p = pooled_chi2(dict(zip(ua.tolist(), ca.tolist())),
                               dict(zip(ub.tolist(), cb.tolist())))
    return EquivalenceReport(stat, dof, p, replicas, replicas, tree.digest(), tree.name,
                             k, float(c), corrupt)


# -- speeds ------------------------------------------------------------


@dataclass(frozen=True)
class SpeedChainReport:
    v_y: float
    v_y_se: float
    v_z: float
    v_z_se: float
    c: float

    @property
    def margin(self) -> float:
        """v_Y - 2c v_Z in units of the joint standard error."""
        se = math.hypot(self.v_y_se, 2 * self.c * self.v_z_se)
        return (self.v_y - 2 * self.c * self.v_z) / se if se > 0 else math.inf

    def holds(self, n_se: float = 3.0) -> bool:
        return self.margin >= -n_se


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    se = v.std(ddof=1) / math.sqrt(v.size) if v.size > 1 else math.inf
    return float(v.mean()), float(se)


def speed_chain(paths_y, paths_z, c: float) -> SpeedChainReport:
    """Replica-averaged speeds of Y and Z and the comparison v_Y >= 2c v_Z."""
    v_y, se_y = _mean_se([p.speed() for p in paths_y])
    v_z, se_z = _mean_se([p.speed() for p in paths_z])
    return SpeedChainReport(v_y, se_y, v_z, se_z, float(c))
