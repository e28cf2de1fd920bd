"""Scalar friction potentials on the slip boundary.

Each law is a piecewise-C1 function of the tangential slip with finitely many
breakpoints. The Clarke subdifferential at ``s`` is then the closed interval
spanned by the one-sided derivatives, which is all the solver needs.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc


_EPS = np.finfo(float).eps


class ProxConditionError(ValueError):
    pass


class FrictionLaw:
    name = "law"
    c0 = 0.0
    alpha_psi = 0.0

    def psi(self, s):
        raise NotImplementedError

    def dminus(self, s):
        """Left derivative."""
        raise NotImplementedError

    def dplus(self, s):
        """Right derivative."""
        raise NotImplementedError

    def breakpoints(self):
        return np.zeros(0)

    def params(self):
        return {}

    def subdiff(self, s):
        """Endpoints ``(lo, hi)`` of the Clarke subdifferential at ``s``."""
        a, b = self.dminus(s), self.dplus(s)
        return np.minimum(a, b), np.maximum(a, b)

    def _prox_unchecked(self, theta, z):
        raise NotImplementedError

    def prox(self, theta, z):
        """Global minimizer of ``w -> (w - z)^2 / (2 theta) + psi(w)``."""
        if not theta > 0:
            raise ProxConditionError("prox step theta must be positive")
        if theta * self.alpha_psi >= 1.0:
            raise ProxConditionError(
                f"step violates per-node convexity condition (theta*alpha_psi = "
                f"{theta * self.alpha_psi:.6g} >= 1)")
        return self._prox_unchecked(theta, np.asarray(z, dtype=float))

    def prox_shifted(self, theta, z):
        """Prox of the convexified potential ``psi(w) + alpha_psi w^2 / 2``.

        Always well posed: it equals the prox of ``psi`` with the reduced
        step ``theta / (1 + theta alpha_psi)`` at the scaled point.
        """
        scale = 1.0 + theta * self.alpha_psi
        return self._prox_unchecked(theta / scale, np.asarray(z, dtype=float) / scale)

    def describe(self):
        body = ", ".join(f"{k}={float(v)!r}" for k, v in self.params().items())
        return f"{self.name}({body})"


@dataclass(frozen=True)
class Quadratic(FrictionLaw):
    """psi(s) = kappa s^2 / 2; linear viscous slip (kappa = 0 is free slip)."""

    kappa: float = 1.0
    name: str = field(default="quadratic", init=False)

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")

    @property
    def c0(self):
        return max(self.kappa, 1e-8)

    @property
    def alpha_psi(self):
        return 1e-8

    def psi(self, s):
        return 0.5 * self.kappa * np.asarray(s, dtype=float) ** 2

    def dminus(self, s):
        return self.kappa * np.asarray(s, dtype=float)

    dplus = dminus

    def params(self):
        return {"kappa": self.kappa}

    def _prox_unchecked(self, theta, z):
        return z / (1.0 + theta * self.kappa)


@dataclass(frozen=True)
class LogSaturating(FrictionLaw):
    """psi(s) = (kappa/2) log(1 + s^2).

    Smooth, nonconvex for |s| > 1, derivative bounded by kappa/2. The most
    negative curvature is -kappa/8 at s^2 = 3.
    """

    kappa: float = 1.0
    name: str = field(default="log-saturating", init=False)

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")

    @property
    def c0(self):
        return max(0.5 * self.kappa, 1e-8)

    @property
    def alpha_psi(self):
        return max(self.kappa / 8.0, 1e-8)

    def psi(self, s):
        s = np.asarray(s, dtype=float)
        return 0.5 * self.kappa * np.log1p(s * s)

    def dminus(self, s):
        s = np.asarray(s, dtype=float)
        return self.kappa * s / (1.0 + s * s)

    dplus = dminus

    def params(self):
        return {"kappa": self.kappa}

    def _prox_unchecked(self, theta, z):
        # stationarity g(w) = w - z + theta*kappa*w/(1+w^2) is increasing when
        # theta*kappa/8 < 1; its root lies within theta*kappa/2 of z
        shape = np.shape(z)
        z = np.atleast_1d(np.asarray(z, dtype=float)).astype(float)
        tk = theta * self.kappa
        lo = z - 0.5 * tk
        hi = z + 0.5 * tk
        w = np.clip(z / (1.0 + tk), lo, hi)
        for _ in range(200):
            d = 1.0 + w * w
            g = w - z + tk * w / d
            hi = np.where(g > 0, w, hi)
            lo = np.where(g > 0, lo, w)
            dg = 1.0 + tk * (1.0 - w * w) / (d * d)
            wn = w - g / dg
            outside = ~((wn > lo) & (wn < hi))
            wn = np.where(outside, 0.5 * (lo + hi), wn)
            wn = np.where(g == 0, w, wn)
            done = np.all(np.abs(wn - w) <= 4e-16 * (1.0 + np.abs(w)))
            w = wn
            if done:
                break
        return w.reshape(shape)


@dataclass(frozen=True)
class SlipWeakening(FrictionLaw):
    """Static friction mu1 decaying linearly to kinetic friction mu2 over slip s0.

    psi'(s) = sign(s) max(mu2, mu1 - (mu1 - mu2)|s|/s0) for s != 0 and
    the subdifferential at 0 is [-mu1, mu1].
    """

    mu1: float = 1.0
    mu2: float = 0.2
    s0: float = 1.0
    name: str = field(default="slip-weakening", init=False)

    def __post_init__(self):
        if not (self.mu1 >= self.mu2 >= 0):
            raise ValueError("need mu1 >= mu2 >= 0")
        if not self.s0 > 0:
            raise ValueError("s0 must be positive")

    @property
    def c0(self):
        return max(self.mu1, 1e-8)

    @property
    def alpha_psi(self):
        return max((self.mu1 - self.mu2) / self.s0, 1e-8)

    @property
    def _slope(self):
        return (self.mu1 - self.mu2) / self.s0

    def psi(self, s):
        a = np.abs(np.asarray(s, dtype=float))
        inner = self.mu1 * a - 0.5 * self._slope * a * a
        outer = 0.5 * (self.mu1 + self.mu2) * self.s0 + self.mu2 * (a - self.s0)
        return np.where(a <= self.s0, inner, outer)

    def _dmag(self, a):
        return np.maximum(self.mu2, self.mu1 - self._slope * a)

    def dplus(self, s):
        s = np.asarray(s, dtype=float)
        a = np.abs(s)
        # at s = 0 the right derivative is +mu1
        return np.where(s >= 0, self._dmag(a), -self._dmag(a))

    def dminus(self, s):
        s = np.asarray(s, dtype=float)
        a = np.abs(s)
        return np.where(s > 0, self._dmag(a), -self._dmag(a))

    def breakpoints(self):
        return np.array([-self.s0, 0.0, self.s0])

    def params(self):
        return {"mu1": self.mu1, "mu2": self.mu2, "s0": self.s0}

    def _prox_unchecked(self, theta, z):
        z = np.asarray(z, dtype=float)
        zz = np.atleast_1d(z)
        a = self._slope
        s0 = self.s0
        with np.errstate(divide="ignore", invalid="ignore"):
            inner_p = (zz - theta * self.mu1) / (1.0 - theta * a)
            inner_m = (zz + theta * self.mu1) / (1.0 - theta * a)
        outer_p = zz - theta * self.mu2
        outer_m = zz + theta * self.mu2
        n = zz.size
        cands = np.stack([
            np.where((inner_p > 0) & (inner_p < s0), inner_p, np.nan),
            np.where((inner_m < 0) & (inner_m > -s0), inner_m, np.nan),
            np.where(outer_p > s0, outer_p, np.nan),
            np.where(outer_m < -s0, outer_m, np.nan),
            np.zeros(n), np.full(n, s0), np.full(n, -s0),
        ], axis=1)
        obj = (cands - zz[:, None]) ** 2 / (2.0 * theta) + self.psi(cands)
        obj = np.where(np.isnan(cands), np.inf, obj)
        best = np.argmin(obj, axis=1)
        return cands[np.arange(n), best].reshape(z.shape)


LAWS = {
    "quadratic": Quadratic,
    "log-saturating": LogSaturating,
    "slip-weakening": SlipWeakening,
}


def make_law(name, **params):
    try:
        cls = LAWS[name]
    except KeyError:
        raise ValueError(f"unknown friction law {name!r}; known: {', '.join(LAWS)}") from None
    return cls(**params)


def eval_psi0(law, xi, eta):
    """Clarke directional derivative: max of g*eta over the subdifferential."""
    lo, hi = law.subdiff(xi)
    eta = np.asarray(eta, dtype=float)
    return np.maximum(lo * eta, hi * eta)


def select_subgrad(law, xi):
    """Minimal-absolute-value element of the subdifferential."""
    lo, hi = law.subdiff(xi)
    return np.clip(0.0, lo, hi)


def subdiff_distance(law, xi, s):
    """Distance of ``xi`` to the interval ``[lo, hi]`` of the subdifferential at ``s``."""
    lo, hi = law.subdiff(s)
    return np.maximum(np.maximum(lo - xi, xi - hi), 0.0)


def prox(law, theta, z):
    return law.prox(theta, z)


@dataclass
class LawReport:
    law: str
    n_pairs: int
    c0: float
    alpha_psi: float
    growth_violations: int
    monotonicity_violations: int
    worst_growth_margin: float
    worst_monotonicity_margin: float
    alpha_hat: float

    @property
    def passed(self):
        return self.growth_violations == 0 and self.monotonicity_violations == 0

    def lines(self):
        return [
            f"law = {self.law}",
            f"pairs = {self.n_pairs}",
            f"c0 = {self.c0:.17g}",
            f"alpha_psi = {self.alpha_psi:.17g}",
            f"alpha_hat = {self.alpha_hat:.17g}",
            f"growth_violations = {self.growth_violations}",
            f"monotonicity_violations = {self.monotonicity_violations}",
            f"worst_growth_margin = {self.worst_growth_margin:.17g}",
            f"worst_monotonicity_margin = {self.worst_monotonicity_margin:.17g}",
            f"status = {'PASS' if self.passed else 'FAIL'}",
        ]


def validate_law(law, n_samples=100_000, radius=5.0, alpha_psi=None, c0=None, seed=0,
                 rtol=1e-12):
    """Sample the growth and relaxed-monotonicity conditions.

    Pairs come from a scrambled Sobol sequence on ``[-radius, radius]^2``,
    augmented with every breakpoint pair and with near-diagonal pairs made
    from sorted neighbours (where the curvature bound is tight). Both
    conditions are checked at all four subdifferential endpoint
    combinations. ``alpha_psi``/``c0`` override the law's stored constants,
    which is how negative controls are run.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    alpha = law.alpha_psi if alpha_psi is None else float(alpha_psi)
    c0 = law.c0 if c0 is None else float(c0)
    sob = qmc.Sobol(d=2, scramble=True, seed=seed)
    m = int(np.ceil(np.log2(max(n_samples, 2))))
    pts = (2.0 * sob.random_base2(m)[:n_samples] - 1.0) * radius
    x1, x2 = pts[:, 0], pts[:, 1]

    bp = law.breakpoints()
    bp = bp[np.abs(bp) <= radius]
    extra = np.concatenate([bp, [-radius, radius]])
    g1, g2 = np.meshgrid(extra, extra)
    srt = np.sort(np.concatenate([x1, x2, extra]))
    x1 = np.concatenate([x1, g1.ravel(), srt[:-1], bp, bp])
    x2 = np.concatenate([x2, g2.ravel(), srt[1:], bp + 1e-3, bp - 1e-3])

    lo1, hi1 = law.subdiff(x1)
    lo2, hi2 = law.subdiff(x2)
    xs = np.concatenate([x1, x2])
    los = np.concatenate([lo1, lo2])
    his = np.concatenate([hi1, hi2])
    bound = c0 * (1.0 + np.abs(xs))
    gmargin = bound - np.maximum(np.abs(los), np.abs(his))
    growth_bad = gmargin < -rtol * bound

    d = x1 - x2
    keep = d != 0
    d = d[keep]
    worst_prod = np.full(d.shape, np.inf)
    for e1 in (lo1[keep], hi1[keep]):
        for e2 in (lo2[keep], hi2[keep]):
            worst_prod = np.minimum(worst_prod, (e1 - e2) * d)
    dd = d * d
    mmargin = worst_prod + alpha * dd
    # rounding allowance: e1 - e2 carries an absolute error of a few ulps of |e|
    emax = np.maximum.reduce([np.abs(lo1[keep]), np.abs(hi1[keep]),
                              np.abs(lo2[keep]), np.abs(hi2[keep])])
    slack = rtol * np.maximum(alpha * dd, np.abs(worst_prod)) + 8 * _EPS * emax * np.abs(d)
    mono_bad = mmargin < -slack
    alpha_hat = float(max(np.max(-worst_prod / dd), 0.0)) if d.size else 0.0

    return LawReport(
        law=law.describe(),
        n_pairs=int(len(x1)),
        c0=c0,
        alpha_psi=alpha,
        growth_violations=int(growth_bad.sum()),
        monotonicity_violations=int(mono_bad.sum()),
        worst_growth_margin=float(gmargin.min()),
        worst_monotonicity_margin=float(mmargin.min()) if d.size else 0.0,
        alpha_hat=alpha_hat,
    )
