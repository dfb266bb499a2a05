"""Lazily grown Galton-Watson trees carrying an i.i.d. inverse Gaussian environment.

Vertices are identified by their path from the root: the root is ``()``,
its second child is ``(1,)``, and so on.  The artificial parent of the
root has the reserved id :data:`SUPER_ROOT`.  Offspring counts and
environment values are pure functions of ``(seed, path)``, so a tree
explored in any order yields identical values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import _kernels as K
from .exceptions import UsageError
from .moments import IgParams, MomentEngine

VertexId = tuple
ROOT: VertexId = ()
SUPER_ROOT: VertexId = (-1,)

DEFAULT_POPULATION_CAP = 10_000_000


@dataclass(frozen=True)
class OffspringLaw:
    """Finite-support offspring distribution ``(q_0, ..., q_kmax)``."""

    probabilities: tuple

    def __post_init__(self):
        q = tuple(float(p) for p in self.probabilities)
        if not q or any(p < 0 for p in q):
            raise ValueError("offspring probabilities must be nonnegative")
        if abs(sum(q) - 1.0) > 1e-12:
            raise ValueError(f"offspring probabilities sum to {sum(q)!r}, not 1")
        object.__setattr__(self, "probabilities", q)

    @classmethod
    def from_dict(cls, masses: dict) -> "OffspringLaw":
        kmax = max(int(k) for k in masses)
        q = [0.0] * (kmax + 1)
        for k, p in masses.items():
            q[int(k)] = float(p)
        return cls(tuple(q))

    @property
    def b(self) -> float:
        return sum(k * p for k, p in enumerate(self.probabilities))

    @property
    def M(self) -> float:
        return sum(k * k * p for k, p in enumerate(self.probabilities))

    @property
    def q0(self) -> float:
        return self.probabilities[0]

    @property
    def q1(self) -> float:
        return self.probabilities[1] if len(self.probabilities) > 1 else 0.0

    @property
    def kmax(self) -> int:
        return len(self.probabilities) - 1

    def require_supercritical(self):
        if not self.b > 1:
            raise ValueError(f"offspring mean b={self.b} must exceed 1")

    def require_speed_assumptions(self):
        """Speed experiments need a supercritical law without leaves."""
        self.require_supercritical()
        if self.q0 != 0:
            raise ValueError("speed experiments require q_0 = 0")

    def cumulative(self) -> np.ndarray:
        cum = np.cumsum(self.probabilities)
        cum[-1] = 1.0
        return cum


class EnvTree:
    """Rooted GW tree with environment values, materialized on demand.

    Parameters
    ----------
    law : OffspringLaw
    params : IgParams
        Law of the environment values A_x.
    seed : int
        Master seed.  Together with a vertex path it determines that
        vertex's offspring count and A value.
    capacity : int
        Initial size of the vertex store; grows geometrically.
    population_cap : int
        Hard limit on materialized vertices.
    """

    def __init__(self, law: OffspringLaw, params: IgParams, seed: int,
                 capacity: int = 1024, population_cap: int = DEFAULT_POPULATION_CAP):
        self.law = law
        self.params = params
        self.seed = int(seed)
        self.population_cap = int(population_cap)
        self._cum = law.cumulative()
        self._lam = params.shape
        capacity = max(int(capacity), law.kmax + 2)
        self._alloc(capacity)
        self._meta = np.array([2], dtype=np.int64)
        root_key = K.derive_key(self.seed, 0x5EED)
        self.key[0] = np.uint64(0)
        self.parent[0] = -1
        self.first_child[0] = K.ROOT_IDX
        self.nchild[0] = 1
        self.A[0] = np.nan
        self.gen[0] = -1
        self.key[1] = root_key
        self.parent[1] = K.SUPER_ROOT_IDX
        self.first_child[1] = -1
        self.A[1] = K.ig_from_key(root_key, self._lam)
        self.gen[1] = 0

    def _alloc(self, capacity):
        self.key = np.zeros(capacity, dtype=np.uint64)
        self.parent = np.full(capacity, -1, dtype=np.int64)
        self.first_child = np.full(capacity, -1, dtype=np.int64)
        self.nchild = np.zeros(capacity, dtype=np.int64)
        self.A = np.zeros(capacity, dtype=np.float64)
        self.gen = np.zeros(capacity, dtype=np.int64)

    # -- storage ---------------------------------------------------------

    @property
    def size(self) -> int:
        """Number of materialized vertices, super-root included."""
        return int(self._meta[0])

    @property
    def capacity(self) -> int:
        return self.key.shape[0]

    def _grow(self, needed: int | None = None):
        new_cap = max(2 * self.capacity, needed or 0)
        if self.size >= self.population_cap:
            raise MemoryError(f"population cap {self.population_cap} reached")
        new_cap = min(new_cap, self.population_cap + self.law.kmax + 1)
        for name in ("key", "parent", "first_child", "nchild", "A", "gen"):
            old = getattr(self, name)
            fill = -1 if name in ("parent", "first_child") else 0
            new = np.full(new_cap, fill, dtype=old.dtype)
            new[: old.shape[0]] = old
            setattr(self, name, new)

    def _arrays(self):
        return (self.key, self.parent, self.first_child, self.nchild, self.A,
                self.gen, self._meta, self._cum, self._lam)

    def _expand_indices(self, idx: np.ndarray):
        idx = np.ascontiguousarray(idx, dtype=np.int64)
        done = 0
        while done < idx.shape[0]:
            done += K.expand_many(idx[done:], *self._arrays())
            if done < idx.shape[0]:
                self._grow()

    # -- id translation --------------------------------------------------

    def index_of(self, v: VertexId) -> int:
        """Internal index of a vertex, materializing ancestors as needed."""
        v = tuple(v)
        if v == SUPER_ROOT:
            return K.SUPER_ROOT_IDX
        i = K.ROOT_IDX
        for step in v:
            self._expand_indices(np.array([i]))
            if not 0 <= step < self.nchild[i]:
                raise UsageError(f"vertex {v} does not exist in this tree")
            i = int(self.first_child[i] + step)
        return i

    def _lookup(self, v: VertexId) -> int:
        """Index of an already materialized vertex."""
        v = tuple(v)
        if v == SUPER_ROOT:
            return K.SUPER_ROOT_IDX
        i = K.ROOT_IDX
        for step in v:
            if self.first_child[i] < 0 or not 0 <= step < self.nchild[i]:
                raise UsageError(f"vertex {v} is not materialized")
            i = int(self.first_child[i] + step)
        return i

    def path_of(self, i: int) -> VertexId:
        if i == K.SUPER_ROOT_IDX:
            return SUPER_ROOT
        steps = []
        while i != K.ROOT_IDX:
            p = int(self.parent[i])
            steps.append(int(i - self.first_child[p]))
            i = p
        return tuple(reversed(steps))

    # -- queries ---------------------------------------------------------

    def children(self, v: VertexId) -> list:
        """Children of ``v``; the super-root's only child is the root."""
        v = tuple(v)
        if v == SUPER_ROOT:
            return [ROOT]
        i = self.index_of(v)
        self._expand_indices(np.array([i]))
        return [v + (j,) for j in range(int(self.nchild[i]))]

    def parent_of(self, v: VertexId) -> VertexId:
        v = tuple(v)
        if v == SUPER_ROOT:
            raise UsageError("the super-root has no parent")
        return SUPER_ROOT if v == ROOT else v[:-1]

    def generation(self, v: VertexId) -> int:
        return -1 if tuple(v) == SUPER_ROOT else len(v)

    def env_value(self, v: VertexId) -> float:
        if tuple(v) == SUPER_ROOT:
            raise UsageError("the super-root carries no environment value")
        return float(self.A[self._lookup(v)])

    def override_env(self, v: VertexId, value: float):
        """Replace A_v in this realization (for sensitivity experiments)."""
        if not value > 0:
            raise ValueError("environment values must be positive")
        self.A[self._lookup(v)] = value

    def degree(self, v: VertexId) -> int:
        """Tree degree, counting the edge to the super-root for the root."""
        i = self.index_of(v)
        self._expand_indices(np.array([i]))
        return int(self.nchild[i]) + 1

    def ancestors(self, v: VertexId) -> Iterator[VertexId]:
        """Vertices strictly between the root and ``v``."""
        for n in range(1, len(v)):
            yield tuple(v[:n])

    def conductance(self, v: VertexId) -> float:
        """Edge conductance (prod_{]root, v[} A_u)^2 * A_v of the edge to the parent."""
        v = tuple(v)
        if v in (ROOT, SUPER_ROOT):
            raise ValueError("conductance is defined for non-root vertices only")
        return math.exp(self.log_conductance(v))

    def log_conductance(self, v: VertexId) -> float:
        i = self.index_of(v)
        total = math.log(self.A[i])
        j = int(self.parent[i])
        while j != K.ROOT_IDX:
            total += 2.0 * math.log(self.A[j])
            j = int(self.parent[j])
        return total

    def generation_indices(self, n: int) -> np.ndarray:
        """Indices of all generation-``n`` vertices (materializes the first n levels)."""
        level = np.array([K.ROOT_IDX], dtype=np.int64)
        for _ in range(n):
            if level.size == 0:
                break
            if self.size + level.size * self.law.kmax > self.population_cap:
                raise MemoryError("population cap exceeded")
            self._expand_indices(level)
            fc = self.first_child[level]
            nc = self.nchild[level]
            level = np.repeat(fc, nc) + _ragged_arange(nc)
        return level

    def martingale_w(self, n: int, engine: MomentEngine | None = None) -> "MartingaleValue":
        """Normalized W_n = sum_{|x|=n} prod_{]root, x]} sqrt(A_u) / (b mu)^n.

        Generations are materialized breadth-first.  When the population
        would exceed ``population_cap`` the result carries ``capped=True``
        and ``value=nan``.
        """
        if n < 1:
            raise ValueError("n must be at least 1")
        engine = engine or MomentEngine(self.params)
        norm = self.law.b * engine.mu()
        level = np.array([K.ROOT_IDX], dtype=np.int64)
        weights = np.array([1.0])
        for _ in range(n):
            if level.size == 0:
                break
            if self.size + level.size * self.law.kmax > self.population_cap:
                return MartingaleValue(math.nan, math.nan, True)
            self._expand_indices(level)
            fc = self.first_child[level]
            nc = self.nchild[level]
            weights = np.repeat(weights, nc)
            level = np.repeat(fc, nc) + _ragged_arange(nc)
            weights = weights * np.sqrt(self.A[level]) / norm
        raw = float(weights.sum()) * norm**n
        return MartingaleValue(float(weights.sum()), raw, False)

    # -- export ----------------------------------------------------------

    def iter_records(self) -> Iterator[tuple]:
        """``(id, parent id, generation, A)`` for every materialized vertex."""
        for i in range(K.ROOT_IDX, self.size):
            p = int(self.parent[i])
            yield (self.path_of(i), self.path_of(p), int(self.gen[i]), float(self.A[i]))

    def export_snapshot(self, fh):
        """Write one tab-separated vertex per line (format ``vrjptree-tree/1``)."""
        fh.write("# vrjptree-tree/1\n")
        fh.write("id\tparent\tgeneration\tA\n")
        for vid, pid, g, a in self.iter_records():
            fh.write(f"{format_vertex(vid)}\t{format_vertex(pid)}\t{g}\t{a!r}\n")


@dataclass(frozen=True)
class MartingaleValue:
    value: float
    raw: float
    capped: bool


def format_vertex(v: VertexId) -> str:
    """Text form of a vertex id: ``r`` for the root, ``r.0.2`` below, ``S`` for the super-root."""
    v = tuple(v)
    if v == SUPER_ROOT:
        return "S"
    return ".".join(["r", *map(str, v)])


def parse_vertex(s: str) -> VertexId:
    if s == "S":
        return SUPER_ROOT
    parts = s.split(".")
    if parts[0] != "r":
        raise UsageError(f"bad vertex id {s!r}")
    return tuple(int(p) for p in parts[1:])


def _ragged_arange(counts: np.ndarray) -> np.ndarray:
    """Concatenation of arange(k) for each k in counts."""
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    return np.arange(total, dtype=np.int64) - starts
