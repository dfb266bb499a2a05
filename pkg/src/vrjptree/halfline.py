"""Exact analytics for the random walk in random environment on {-1, 0, 1, ...}.

From site i >= 0 the walk steps to i+1 with probability
A_i A_{i+1} / (1 + A_i A_{i+1}) and to i-1 otherwise; -1 reflects to 0.
Everything here is computed from the potential

    S_0 = 0,  S_j = -sum_{i=1}^{j} log(A_i A_{i-1})

with log-sum-exp, plus banded linear solves used as an independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import logsumexp

from .moments import IgParams, MomentEngine, ig_sample


@dataclass(frozen=True)
class HalflineEnv:
    """Environment values A_0, ..., A_n."""

    A: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.A, dtype=float)
        if a.ndim != 1 or a.size < 2:
            raise ValueError("need at least A_0 and A_1")
        if not np.all(a > 0) or not np.all(np.isfinite(a)):
            raise ValueError("environment values must be positive and finite")
        a.setflags(write=False)
        object.__setattr__(self, "A", a)

    @classmethod
    def sample(cls, n: int, params: IgParams, rng: np.random.Generator) -> "HalflineEnv":
        return cls(ig_sample(params, rng, size=n + 1))

    @classmethod
    def from_file(cls, path) -> "HalflineEnv":
        """Read whitespace-separated values; ``#`` starts a comment."""
        with open(path) as fh:
            values = [float(tok) for line in fh for tok in line.split("#", 1)[0].split()]
        return cls(np.array(values))

    @property
    def n(self) -> int:
        return self.A.size - 1

    @property
    def potential(self) -> np.ndarray:
        log_a = np.log(self.A)
        s = np.zeros(self.A.size)
        s[1:] = -np.cumsum(log_a[1:] + log_a[:-1])
        return s

    def p_up(self, i: int) -> float:
        prod = self.A[i] * self.A[i + 1]
        return prod / (1.0 + prod)


def _check_segment(env, left, right):
    if not -1 <= left < right <= env.n:
        raise ValueError(f"need -1 <= left < right <= n={env.n}, got ({left}, {right})")


def _up(S, i, a, b):
    """P_i(hit b before a) for a <= i <= b."""
    if i <= a:
        return 0.0
    if i >= b:
        return 1.0
    return math.exp(logsumexp(S[a + 1 : i + 1]) - logsumexp(S[a + 1 : b + 1]))


def hit_prob(env: HalflineEnv, i: int, n: int, left: int = -1) -> float:
    """P_i(tau_n < tau_left), by default the probability of reaching n before -1."""
    _check_segment(env, left, n)
    if not (left < i < n and i >= 0):
        raise ValueError(f"start {i} must lie strictly inside ({left}, {n})")
    return _up(env.potential, i, left, n)


def _cumulative(S, a, b):
    """Forward and backward log partial sums of e^{S_j} over a < j <= b.

    ``fwd[k] = log sum_{j=a+1}^{a+1+k} e^{S_j}`` and
    ``bwd[k] = log sum_{j=a+1+k}^{b} e^{S_j}``.
    """
    seg = S[a + 1 : b + 1]
    fwd = np.logaddexp.accumulate(seg)
    bwd = np.logaddexp.accumulate(seg[::-1])[::-1]
    return fwd, bwd


def _green_all(S, A, a, b):
    """G(y, y) for every a < y < b, walk killed at a and b."""
    fwd, bwd = _cumulative(S, a, b)
    y = np.arange(a + 1, b)
    prod = A[y] * A[y + 1]
    w_down = 1.0 / (1.0 + prod)
    w_up = prod / (1.0 + prod)
    k = y - a - 1
    # escape probabilities from the two neighbours of y
    esc_down = np.where(k > 0, np.exp(S[y] - fwd[k]), 1.0)
    esc_up = np.where(y + 1 < b, np.exp(S[y + 1] - bwd[np.minimum(k + 1, b - a - 1)]), 1.0)
    return 1.0 / (w_down * esc_down + w_up * esc_up)


def green_function(env: HalflineEnv, y: int, left: int, right: int) -> float:
    """Expected visits to ``y`` (time 0 included) before hitting ``left`` or ``right``."""
    _check_segment(env, left, right)
    if not left < y < right:
        raise ValueError("need left < y < right")
    return float(_green_all(env.potential, env.A, left, right)[y - left - 1])


def _exit_time(S, A, start, a, b):
    fwd, bwd = _cumulative(S, a, b)
    i = np.arange(a + 1, b)
    k = i - a - 1
    ks = start - a - 1
    # P_start(tau_i before exit): climb to i before a, or descend to i before b
    reach = np.where(i >= start, np.exp(fwd[ks] - fwd[k]),
                     np.exp(bwd[ks + 1] - bwd[np.minimum(k + 1, b - a - 1)]))
    return float(np.sum(reach * _green_all(S, A, a, b)))


def expected_exit_time(env: HalflineEnv, start: int, left: int, right: int) -> float:
    """E_start[tau_left ^ tau_right] as sum_i P_start(reach i first) * G(i, i)."""
    _check_segment(env, left, right)
    if not left <= start < right:
        raise ValueError("need left <= start < right")
    if start == left:
        return 0.0
    return _exit_time(env.potential, env.A, start, left, right)


# -- linear-solve oracle -------------------------------------------------


def _interior_system(env, left, right):
    idx = np.arange(left + 1, right)
    a = env.A.astype(np.longdouble)
    prod = a[idx] * a[idx + 1]
    up = prod / (1 + prod)
    down = 1 / (1 + prod)
    m = idx.size
    ab = np.zeros((3, m))
    ab[0, 1:] = -up[:-1]
    ab[1, :] = 1.0
    ab[2, :-1] = -down[1:]
    return up, down, ab


def _refined_solve(env, left, right, rhs, sweeps=3):
    """Banded LU solve of (I - Q) x = rhs plus iterative refinement.

    Residuals are formed in extended precision; without refinement the
    solve loses about log10(G) digits when the potential drifts strongly.
    """
    up, down, ab = _interior_system(env, left, right)
    rhs = np.asarray(rhs, dtype=np.longdouble)
    x = solve_banded((1, 1), ab, rhs.astype(float))
    for _ in range(sweeps):
        xl = x.astype(np.longdouble)
        r = rhs - xl
        r[:-1] += up[:-1].reshape((-1,) + (1,) * (x.ndim - 1)) * xl[1:]
        r[1:] += down[1:].reshape((-1,) + (1,) * (x.ndim - 1)) * xl[:-1]
        x = x + solve_banded((1, 1), ab, r.astype(float))
    return x


def oracle_hit_prob(env: HalflineEnv, left: int, right: int) -> np.ndarray:
    """Solve the Dirichlet problem phi(left) = 0, phi(right) = 1 on the interior."""
    _check_segment(env, left, right)
    up, _, _ = _interior_system(env, left, right)
    rhs = np.zeros(up.size, dtype=np.longdouble)
    rhs[-1] = up[-1]
    return _refined_solve(env, left, right, rhs)


def oracle_green(env: HalflineEnv, left: int, right: int) -> np.ndarray:
    """Fundamental matrix (I - Q)^{-1} of the walk killed at left and right."""
    _check_segment(env, left, right)
    return _refined_solve(env, left, right, np.eye(right - left - 1))


def oracle_exit_time(env: HalflineEnv, left: int, right: int) -> np.ndarray:
    _check_segment(env, left, right)
    return _refined_solve(env, left, right, np.ones(right - left - 1))


# -- inequality checks -----------------------------------------------------


def s_lambda(env: HalflineEnv, lam: float, y1: int, y2: int) -> float:
    a = env.A**lam
    total = 0.0
    for z in range(y1 + 1, y2 + 1):
        total += np.prod(a[y1 + 1 : z] ** 2) * a[z]
    return float(1.0 + 2.0 * a[y1] * total + a[y1] * np.prod(a[y1 + 1 : y2 + 1] ** 2))


@dataclass(frozen=True)
class BoundReport:
    s_lambda: float
    green_margin: float
    chain_margin: float
    one_step_margin: float

    @property
    def min_margin(self) -> float:
        return min(self.green_margin, self.chain_margin, self.one_step_margin)


def one_step_margin(env: HalflineEnv, p: int, m: int) -> float:
    """RHS - LHS of E_p[tau_{p-1}^tau_m] <= 1 + A_p A_{p+1} (1 + E_{p+1}[tau_p^tau_m])."""
    prod = env.A[p] * env.A[p + 1]
    lhs = expected_exit_time(env, p, p - 1, m)
    nxt = expected_exit_time(env, p + 1, p, m) if p + 1 < m else 0.0
    return 1.0 + prod + prod * nxt - lhs


def s_lambda_bound_check(env: HalflineEnv, lam: float, y1: int, y2: int, y3: int) -> BoundReport:
    """Margins of the Green-function and chained exit-time bounds on [y1, y3].

    ``green_margin`` is the smallest slack of
    P_{y1}(tau_y < tau_{y1-1}) G^{tau_{y1} ^ tau_{y3}}(y, y) <= E_{y1}[tau_{y1-1} ^ tau_{y3}]
    over y2 < y < y3; ``chain_margin`` the slack of the lambda-power bound
    through S_lambda; ``one_step_margin`` the smallest slack of the
    one-step recursion over y1 <= p < y3.
    """
    if not 0 <= lam <= 1:
        raise ValueError("lambda must lie in [0, 1]")
    if not 0 <= y1 < y2 < y3 <= env.n:
        raise ValueError("need 0 <= Y1 < Y2 < Y3 <= n")
    S = env.potential
    exit_y1 = expected_exit_time(env, y1, y1 - 1, y3)
    green_margin = math.inf
    green_y = _green_all(S, env.A, y1, y3)
    for y in range(y2 + 1, y3):
        reach = _up(S, y1, y1 - 1, y)
        green_margin = min(green_margin, exit_y1 - reach * green_y[y - y1 - 1])
    s = s_lambda(env, lam, y1, y2)
    tail = expected_exit_time(env, y2 + 1, y2, y3) if y2 + 1 < y3 else 0.0
    rhs = s * (1.0 + env.A[y2 + 1] ** lam * (1.0 + tail**lam))
    chain_margin = rhs - exit_y1**lam
    step = min(one_step_margin(env, p, y3) for p in range(y1, y3))
    return BoundReport(float(s), float(green_margin), float(chain_margin), float(step))


# -- survival in a pipe ------------------------------------------------------


def killed_kernel(env: HalflineEnv) -> np.ndarray:
    """Substochastic kernel on {0, ..., n-1} of the walk killed at -1 and n."""
    n = env.n
    q = np.zeros((n, n))
    for i in range(n):
        up = env.p_up(i)
        if i + 1 < n:
            q[i, i + 1] = up
        if i - 1 >= 0:
            q[i, i - 1] = 1.0 - up
    return q


def survival_probability(env: HalflineEnv, m: int) -> float:
    """P_0(tau_n ^ tau_{-1} > m) by repeated squaring of the killed kernel."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    q = killed_kernel(env)
    vec = np.ones(env.n)
    power = q
    m = int(m)
    while m:
        if m & 1:
            vec = power @ vec
        m >>= 1
        if m:
            power = power @ power
    return float(vec[0])


def survival_stepwise(env: HalflineEnv, m: int) -> float:
    q = killed_kernel(env)
    vec = np.ones(env.n)
    for _ in range(int(m)):
        vec = q @ vec
    return float(vec[0])


def survival_monte_carlo(env: HalflineEnv, m: int, replicas: int, rng: np.random.Generator):
    """Fraction of walks from 0 still inside (-1, n) after m steps, with its SE."""
    n = env.n
    up = np.array([env.p_up(i) for i in range(n)])
    pos = np.zeros(replicas, dtype=np.int64)
    alive = np.ones(replicas, dtype=bool)
    for _ in range(int(m)):
        u = rng.random(replicas)
        step = np.where(u < up[np.clip(pos, 0, n - 1)], 1, -1)
        pos = np.where(alive, pos + step, pos)
        alive &= (pos >= 0) & (pos < n)
    p = alive.mean()
    return float(p), float(math.sqrt(max(p * (1 - p), 1e-300) / replicas))


def bound_exponent(engine: MomentEngine, z: float, z1: float) -> float:
    """-(z1 I(z / 2 z1) + (1 - z1) I(-z / 2(1 - z1)))."""
    return -(z1 * engine.rate_function(z / (2 * z1))
             + (1 - z1) * engine.rate_function(-z / (2 * (1 - z1))))


@dataclass(frozen=True)
class SurvivalReport:
    n: int
    m: int
    log_survival_per_n: float
    bound: float
    gap: float
    weighted_log_per_n: float
    replicas: int


def survival_probability_lower_bound_check(params: IgParams, q1: float, z: float, z1: float,
                                           n: int, replicas: int, a: float = 0.5,
                                           seed: int = 0) -> SurvivalReport:
    """Annealed survival in a pipe of length n against the large-deviation bound.

    The environment is drawn with A_0 conditioned on [a, 1/a]; survival
    probabilities are exact per environment and averaged.  ``gap`` is
    log(P)/n minus the bound exponent; the bound is only claimed up to
    subexponential factors, so the gap is reported, not asserted.
    """
    if n > 30:
        raise ValueError("n is capped at 30 for exact survival computations")
    if not (z > 0 and 0 < z1 < 1):
        raise ValueError("need z > 0 and 0 < z1 < 1")
    m = math.floor(math.exp(z * n))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, n])))
    probs = np.empty(replicas)
    for r in range(replicas):
        values = ig_sample(params, rng, size=n + 1)
        while not a <= values[0] <= 1 / a:
            values[0] = ig_sample(params, rng)
        probs[r] = survival_probability(HalflineEnv(values), m)
    mean = probs.mean()
    log_per_n = math.log(mean) / n if mean > 0 else -math.inf
    bound = bound_exponent(MomentEngine(params), z, z1)
    weighted = math.log(q1) + log_per_n if q1 > 0 else -math.inf
    return SurvivalReport(n, m, log_per_n, bound, log_per_n - bound, weighted, replicas)
