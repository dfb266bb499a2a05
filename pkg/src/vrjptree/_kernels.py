"""Compiled kernels: counter-based hashing RNG, lazy tree growth, walkers.

Every random number is a pure function of a 64-bit key and a slot
counter, so draws never depend on the order in which vertices are
materialized or on how a run is split across resumptions.
"""

import numpy as np
from numba import njit, uint64

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_CHILD_SALT = np.uint64(0xD1B54A32D192ED03)
_INV53 = 1.0 / 9007199254740992.0

ETA, ZQ, VRJP = 0, 1, 2
SUPER_ROOT_IDX, ROOT_IDX = 0, 1

# slots of per-vertex draws
SLOT_OFFSPRING, SLOT_N1, SLOT_N2, SLOT_U = 0, 1, 2, 3


@njit(cache=True)
def splitmix64(x):
    z = x + GOLDEN
    z = (z ^ (z >> uint64(30))) * _M1
    z = (z ^ (z >> uint64(27))) * _M2
    return z ^ (z >> uint64(31))


_MASK = (1 << 64) - 1


def py_splitmix64(x: int) -> int:
    """Pure-Python twin of :func:`splitmix64` for deriving keys outside kernels."""
    z = (int(x) + int(GOLDEN)) & _MASK
    z = ((z ^ (z >> 30)) * int(_M1)) & _MASK
    z = ((z ^ (z >> 27)) * int(_M2)) & _MASK
    return z ^ (z >> 31)


def derive_key(*parts: int) -> np.uint64:
    """Fold integers into one 64-bit stream key."""
    h = 0x243F6A8885A308D3
    for p in parts:
        h = py_splitmix64(h ^ py_splitmix64(int(p) & _MASK))
    return np.uint64(h)


@njit(cache=True)
def uniform(key, slot):
    """Uniform on the open interval (0, 1)."""
    h = splitmix64(key ^ splitmix64(uint64(slot)))
    return (float(h >> uint64(11)) + 0.5) * _INV53


@njit(cache=True)
def child_key(parent_key, index):
    return splitmix64(parent_key ^ splitmix64(uint64(index) + _CHILD_SALT))


@njit(cache=True)
def ig_from_key(key, lam):
    u1 = uniform(key, SLOT_N1)
    u2 = uniform(key, SLOT_N2)
    z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    y = z * z
    big = 1.0 + (y + np.sqrt(4.0 * lam * y + y * y)) / (2.0 * lam)
    small = 1.0 / big
    if uniform(key, SLOT_U) <= 1.0 / (1.0 + small):
        return small
    return big


@njit(cache=True)
def offspring_from_key(key, cum):
    u = uniform(key, SLOT_OFFSPRING)
    k = 0
    while k < cum.shape[0] - 1 and u > cum[k]:
        k += 1
    return k


@njit(cache=True)
def expand(v, key, parent, first_child, nchild, A, gen, meta, cum, lam):
    """Materialize the children of ``v``; False when capacity is exhausted."""
    if first_child[v] >= 0:
        return True
    k = offspring_from_key(key[v], cum)
    size = meta[0]
    if size + k > key.shape[0]:
        return False
    for i in range(k):
        w = size + i
        kw = child_key(key[v], i)
        key[w] = kw
        parent[w] = v
        first_child[w] = -1
        nchild[w] = 0
        A[w] = ig_from_key(kw, lam)
        gen[w] = gen[v] + 1
    first_child[v] = size
    nchild[v] = k
    meta[0] = size + k
    return True


@njit(cache=True)
def expand_many(vs, key, parent, first_child, nchild, A, gen, meta, cum, lam):
    """Expand a batch of vertices; returns how many were completed."""
    for j in range(vs.shape[0]):
        if not expand(vs[j], key, parent, first_child, nchild, A, gen, meta, cum, lam):
            return j
    return vs.shape[0]


@njit(cache=True)
def run_chain(mode, key, parent, first_child, nchild, A, gen, meta, cum, lam,
              L, c, walk_key, state, n_steps, t_max, stop_vertex,
              out_v, out_t, out_d):
    """Advance one walker.

    ``state`` holds ``[current vertex, step count, time, D]`` and is
    updated in place so the caller can grow the tree and resume.
    Returns 0 when done (steps, time or stop vertex reached) and 1 when
    the tree needs more capacity.
    """
    cur = int(state[0])
    k = int(state[1])
    t = state[2]
    d = state[3]
    status = 0
    while k < n_steps:
        if cur == stop_vertex:
            break
        if cur != SUPER_ROOT_IDX and not expand(cur, key, parent, first_child, nchild,
                                                A, gen, meta, cum, lam):
            status = 1
            break
        fc = first_child[cur]
        nc = nchild[cur]
        par = parent[cur]
        u_move = uniform(walk_key, 2 * k)
        if mode == VRJP:
            total = 0.0
            if cur != ROOT_IDX:
                total += L[par]
            for i in range(nc):
                total += L[fc + i]
            if total > 0.0:
                s = -np.log(uniform(walk_key, 2 * k + 1)) / total
            else:
                s = np.inf
            if t + s >= t_max:
                s = t_max - t
                d += 2.0 * L[cur] * s + s * s
                L[cur] += s
                t = t_max
                break
            d += 2.0 * L[cur] * s + s * s
            L[cur] += s
            t += s
            target = u_move * total
            acc = 0.0
            nxt = -1
            if cur != ROOT_IDX:
                acc = L[par]
                if target < acc:
                    nxt = par
            if nxt < 0:
                nxt = fc + nc - 1
                for i in range(nc):
                    acc += L[fc + i]
                    if target < acc:
                        nxt = fc + i
                        break
        else:
            if cur == SUPER_ROOT_IDX:
                nxt = ROOT_IDX
                total = 0.5 * A[ROOT_IDX]
            else:
                w_par = 1.0 / A[cur]
                total = w_par
                for i in range(nc):
                    total += A[fc + i]
                target = u_move * total
                if target < w_par:
                    nxt = par
                else:
                    acc = w_par
                    nxt = fc + nc - 1
                    for i in range(nc):
                        acc += A[fc + i]
                        if target < acc:
                            nxt = fc + i
                            break
                total *= 0.5
            if mode == ZQ:
                s = -np.log(uniform(walk_key, 2 * k + 1)) / total
                if t + s >= t_max:
                    t = t_max
                    break
                t += s
        k += 1
        cur = nxt
        out_v[k] = cur
        out_t[k] = t
        out_d[k] = d
    state[0] = cur
    state[1] = k
    state[2] = t
    state[3] = d
    return status


@njit(cache=True)
def escape_runs(key, parent, first_child, nchild, A, gen, meta, cum, lam,
                start, target, base_key, first_replica, n_replicas, horizon, escaped):
    """Quenched walks from ``start`` until ``target`` is hit or ``horizon`` steps.

    Writes 1 into ``escaped[r]`` when replica r avoided ``target``.
    Returns the number of replicas completed before capacity ran out.
    """
    for r in range(first_replica, n_replicas):
        wk = splitmix64(base_key ^ splitmix64(uint64(r) + GOLDEN))
        cur = start
        hit = False
        for k in range(horizon):
            if cur == target:
                hit = True
                break
            if cur == SUPER_ROOT_IDX:
                cur = ROOT_IDX
                continue
            if not expand(cur, key, parent, first_child, nchild, A, gen, meta, cum, lam):
                return r
            fc = first_child[cur]
            nc = nchild[cur]
            w_par = 1.0 / A[cur]
            total = w_par
            for i in range(nc):
                total += A[fc + i]
            x = uniform(wk, k) * total
            if x < w_par:
                cur = parent[cur]
            else:
                acc = w_par
                nxt = fc + nc - 1
                for i in range(nc):
                    acc += A[fc + i]
                    if x < acc:
                        nxt = fc + i
                        break
                cur = nxt
        if cur == target:
            hit = True
        escaped[r] = 0 if hit else 1
    return n_replicas
