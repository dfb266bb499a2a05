"""Analytics of the inverse Gaussian environment law IG(1, c^2).

Moments are computed from the representation

    E[A^t] = c / sqrt(2 pi) * integral exp((t - 1/2) y - c^2 (cosh y - 1)) dy

obtained with the substitution x = e^y.  Folding the integral onto
y >= 0 turns exp(s y) into 2 cosh(s y), so the quadrature path treats
t and 1 - t identically and the symmetry psi(t) = psi(1 - t) holds to
rounding.  The modified Bessel closed form

    E[A^t] = e^{c^2} sqrt(2 c^2 / pi) K_{t - 1/2}(c^2)

is kept as an independent cross-check and can be switched on for speed
once it has been validated against quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import integrate, optimize, special

from .exceptions import NumericalError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_TAIL_DROP = 80.0


@dataclass(frozen=True)
class IgParams:
    """Inverse Gaussian with mean 1 and shape ``c**2``."""

    c: float

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValueError(f"c must be positive and finite, got {self.c!r}")

    @property
    def shape(self) -> float:
        return self.c * self.c


def ig_density(x, p: IgParams):
    """Density of IG(1, c^2) at ``x > 0``."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("inverse Gaussian density is defined for x > 0 only")
    c = p.c
    out = c / np.sqrt(2.0 * np.pi * x**3) * np.exp(-c * c * (x - 1.0) ** 2 / (2.0 * x))
    return out if out.ndim else float(out)


def ig_sample(p: IgParams, rng: np.random.Generator, size=None):
    """Draw from IG(1, c^2) by the transformation-with-multiple-roots method.

    One standard normal and one uniform variate are consumed per draw.
    """
    lam = p.shape
    z = rng.standard_normal(size)
    u = rng.random(size)
    y = z * z
    # larger root is cancellation-free; the roots multiply to 1
    big = 1.0 + (y + np.sqrt(4.0 * lam * y + y * y)) / (2.0 * lam)
    small = 1.0 / big
    out = np.where(u <= 1.0 / (1.0 + small), small, big)
    return out if np.ndim(out) else float(out)


class LdpSupremum(NamedTuple):
    value: float
    z: float
    z1: float


@dataclass(frozen=True)
class QuadSettings:
    epsrel: float = 1e-10
    epsabs: float = 1e-12
    limit: int = 200


@dataclass(frozen=True)
class MomentEngine:
    """All moment-based quantities of the environment for one value of ``c``.

    Parameters
    ----------
    params : IgParams
    quad : QuadSettings
        Tolerances of the adaptive quadrature path.
    closed_form : bool
        Evaluate psi through the Bessel closed form instead of quadrature.
        The closed form is validated against quadrature at t in {0, 1, -2}
        on construction; a mismatch raises :class:`NumericalError`.

    Notes
    -----
    Instances are immutable apart from an internal memo of psi values and
    can be shared freely between threads.
    """

    params: IgParams
    quad: QuadSettings = QuadSettings()
    closed_form: bool = False
    _memo: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @classmethod
    def for_c(cls, c: float, **kwargs) -> "MomentEngine":
        return cls(IgParams(c), **kwargs)

    def __post_init__(self):
        if self.closed_form:
            self.validate_closed_form()

    @property
    def c(self) -> float:
        return self.params.c

    # -- moments ---------------------------------------------------------

    def _segments(self, a: float):
        """Peak location, log-scale and integration end for |t - 1/2| = a."""
        c2 = self.params.shape
        y0 = math.asinh(a / c2)
        h0 = a * y0 - c2 * (math.cosh(y0) - 1.0)
        y_end = y0 + 1.0
        while a * y_end - c2 * (math.cosh(y_end) - 1.0) - h0 > -_TAIL_DROP:
            y_end = y0 + 2.0 * (y_end - y0)
        return y0, h0, y_end

    def _integrals(self, t: float, powers=(0,)):
        """Scaled integrals of y^k * {cosh, sinh}(a y) * exp(-c^2 (cosh y - 1)).

        Returns ``(h0, [I_k ...])`` where the true integral is
        ``exp(h0) * I_k``; odd k use sinh, even k use cosh.
        """
        a = abs(t - 0.5)
        c2 = self.params.shape
        y0, h0, y_end = self._segments(a)

        def base(y):
            return math.exp(a * y - c2 * (math.cosh(y) - 1.0) - h0)

        def even(y, k):
            return y**k * base(y) * 0.5 * (1.0 + math.exp(-2.0 * a * y))

        def odd(y, k):
            return y**k * base(y) * 0.5 * (-math.expm1(-2.0 * a * y))

        results = []
        for k in powers:
            fn = even if k % 2 == 0 else odd
            total = 0.0
            for lo, hi in ((0.0, y0), (y0, y_end)):
                if hi <= lo:
                    continue
                val, err, *info = integrate.quad(
                    fn, lo, hi, args=(k,), epsabs=self.quad.epsabs,
                    epsrel=self.quad.epsrel, limit=self.quad.limit, full_output=1,
                )
                if len(info) > 1 and info[0]["last"] >= self.quad.limit:
                    raise NumericalError(
                        "moment quadrature did not converge",
                        t=t, c=self.c, segment=(lo, hi), estimate=val, abserr=err,
                    )
                total += val
            results.append(total)
        return h0, results

    def _psi_quad(self, t: float) -> float:
        h0, (i0,) = self._integrals(t)
        if not i0 > 0:
            raise NumericalError("moment integral vanished", t=t, c=self.c)
        return math.log(2.0 * self.c) - _LOG_SQRT_2PI + h0 + math.log(i0)

    def psi_bessel(self, t: float) -> float:
        """log E[A^t] from the modified Bessel closed form."""
        c2 = self.params.shape
        return 0.5 * math.log(2.0 * c2 / math.pi) + math.log(special.kve(t - 0.5, c2))

    def validate_closed_form(self, tol: float = 1e-9) -> None:
        for t in (0.0, 1.0, -2.0):
            q, b = self._psi_quad(t), self.psi_bessel(t)
            if abs(q - b) > tol:
                raise NumericalError(
                    "Bessel closed form disagrees with quadrature", t=t, quad=q, bessel=b
                )

    def psi(self, t: float) -> float:
        """Cumulant function log E[A^t]."""
        t = float(t)
        if not math.isfinite(t):
            raise ValueError("psi requires a finite argument")
        cached = self._memo.get(t)
        if cached is None:
            cached = self.psi_bessel(t) if self.closed_form else self._psi_quad(t)
            self._memo[t] = cached
        return cached

    def psi_derivatives(self, t: float):
        """Return ``(psi(t), psi'(t), psi''(t))``.

        Derivatives are the mean and variance of log A under the
        exponentially tilted law, both from quadrature.
        """
        t = float(t)
        h0, (i0, i1, i2) = self._integrals(t, powers=(0, 1, 2))
        sign = 1.0 if t >= 0.5 else -1.0
        m1 = sign * i1 / i0
        m2 = i2 / i0
        value = self.psi(t)
        return value, m1, max(m2 - m1 * m1, 0.0)

    def moment(self, t: float) -> float:
        return math.exp(self.psi(t))

    def xi(self, r: float) -> float:
        """E[A^{-r}]."""
        return math.exp(self.psi(-r))

    def mu(self) -> float:
        """E[sqrt(A)], the minimum over t of E[A^t]."""
        return math.exp(self.psi(0.5))

    # -- large deviations ------------------------------------------------

    def _solve_slope(self, x: float, t_limit: float = 1e3) -> float | None:
        """Find t with psi'(t) = x by safeguarded Newton; None if out of range."""
        if x == 0.0:
            return 0.5
        direction = 1.0 if x > 0 else -1.0
        lo, hi = 0.5, 0.5 + direction
        while (self.psi_derivatives(hi)[1] - x) * direction < 0:
            lo, hi = hi, 0.5 + 2.0 * (hi - 0.5)
            if abs(hi) > t_limit:
                return None
        a, b = min(lo, hi), max(lo, hi)
        t = 0.5 * (a + b)
        for _ in range(100):
            _, d1, d2 = self.psi_derivatives(t)
            g = d1 - x
            if g > 0:
                b = t
            else:
                a = t
            step = g / d2 if d2 > 0 else math.inf
            t_new = t - step
            if not (a < t_new < b):
                t_new = 0.5 * (a + b)
            if abs(t_new - t) < 1e-13 * max(1.0, abs(t)) or b - a < 1e-14:
                return t_new
            t = t_new
        raise NumericalError("rate function optimizer did not converge", x=x, bracket=(a, b))

    def rate_function(self, x: float) -> float:
        """Legendre transform sup_t {t x - psi(t)}; ``inf`` outside the range of psi'."""
        t = self._solve_slope(float(x))
        if t is None:
            return math.inf
        return max(t * x - self.psi(t), 0.0)

    def _root_psi(self, level: float, lo: float, hi: float) -> float:
        """Bisection for psi(t) = level on a bracket where psi - level changes sign."""
        f_lo = self.psi(lo) - level
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            f_mid = self.psi(mid) - level
            if (f_mid > 0) == (f_lo > 0):
                lo, f_lo = mid, f_mid
            else:
                hi = mid
            if hi - lo < 1e-11:
                break
        return 0.5 * (lo + hi)

    def t_star(self, q1: float) -> float:
        """sup{t : q1 E[A^t] <= 1}; ``inf`` when q1 = 0."""
        _check_q1(q1)
        if q1 == 0:
            return math.inf
        level = -math.log(q1)
        hi = 1.5
        while self.psi(hi) <= level:
            hi = 0.5 + 2.0 * (hi - 0.5)
        return self._root_psi(level, 0.5, hi)

    def lambda_measure(self, q1: float) -> float:
        """Lebesgue measure of {t : E[A^{2t}] < 1/q1}.

        Both ends of the sublevel set of psi are located by independent
        root searches; symmetry is not assumed.
        """
        _check_q1(q1)
        if q1 == 0:
            return math.inf
        level = -math.log(q1)
        hi = 1.5
        while self.psi(hi) <= level:
            hi = 0.5 + 2.0 * (hi - 0.5)
        lo = -0.5
        while self.psi(lo) <= level:
            lo = 0.5 - 2.0 * (0.5 - lo)
        s_hi = self._root_psi(level, 0.5, hi)
        s_lo = self._root_psi(level, lo, 0.5)
        return 0.5 * (s_hi - s_lo)

    def ldp_objective(self, q1: float, z: float, z1: float) -> float:
        """log q1 / z - (z1/z) I(z/(2 z1)) - ((1-z1)/z) I(-z/(2(1-z1)))."""
        return (
            math.log(q1) / z
            - z1 / z * self.rate_function(z / (2.0 * z1))
            - (1.0 - z1) / z * self.rate_function(-z / (2.0 * (1.0 - z1)))
        )

    def ldp_sup_check(self, q1: float, xatol: float = 1e-7) -> LdpSupremum:
        """Maximize :meth:`ldp_objective` over z > 0 and 0 < z1 < 1.

        Nested bounded scalar searches (outer z, inner z1) followed by
        coordinate-wise refinement.  Independent of :meth:`t_star` except
        that the search box for z is scaled by psi'(t* + 1).
        """
        if not 0 < q1 < 1:
            raise ValueError("ldp_sup_check requires 0 < q1 < 1")
        z_max = 4.0 * self.psi_derivatives(self.t_star(q1) + 1.0)[1]
        eps = 1e-6

        def best_z1(z):
            res = optimize.minimize_scalar(
                lambda w: -self.ldp_objective(q1, z, w), bounds=(eps, 1 - eps),
                method="bounded", options={"xatol": xatol},
            )
            return res.x, -res.fun

        def profile(z):
            return -best_z1(z)[1]

        res = optimize.minimize_scalar(
            profile, bounds=(1e-3, z_max), method="bounded", options={"xatol": xatol}
        )
        if not res.success:
            raise NumericalError("ldp outer search failed", message=res.message)
        z = res.x
        z1, value = best_z1(z)
        for _ in range(3):
            res = optimize.minimize_scalar(
                lambda v: -self.ldp_objective(q1, v, z1), bounds=(1e-3, z_max),
                method="bounded", options={"xatol": xatol},
            )
            z = res.x
            z1, new_value = best_z1(z)
            if abs(new_value - value) < 1e-12:
                value = new_value
                break
            value = new_value
        return LdpSupremum(float(value), float(z), float(z1))


def _check_q1(q1):
    if not 0 <= q1 < 1:
        raise ValueError(f"q1 must lie in [0, 1), got {q1!r}")
