"""Trace eigenvalue, discrete inf-sup constant and the step/smallness margins."""

import math
from dataclasses import dataclass, fields

import numpy as np

from .linalg import SPDFactor, gen_eig_extreme


def compute_lambda_tau(sys, tol=1e-10, return_vector=False):
    """Smallest positive lam with ``K_V u = lam T^T W T u`` over free DOFs."""
    key = ("lambda_tau", tol)
    if key not in sys.cache:
        if sys.n_slip == 0:
            raise ValueError("semidefinite operator has empty positive spectrum "
                             "(no slip boundary nodes)")
        sys.cache[key] = gen_eig_extreme(sys.K_V, sys.boundary_gram, "smallest-positive", tol=tol)
    lam, x = sys.cache[key]
    return (lam, x.copy()) if return_vector else lam


def _inf_sup_from_blocks(B0, K0, M_Q, tol):
    n_p = B0.shape[0]
    if n_p < 2:
        raise ValueError("pressure space has no nontrivial zero-mean subspace")
    if B0.shape[1] == 0:
        return 0.0
    Bd = B0.toarray()
    S = Bd @ SPDFactor(K0).solve(Bd.T)
    S = 0.5 * (S + S.T)
    # lift the constant mode (always in the kernel) well above the spectrum:
    # beta^2 <= d = 2 for divergence of H^1 fields in 2D
    Mq = M_Q.toarray()
    m1 = Mq @ np.ones(n_p)
    S_defl = S + 4.0 * np.outer(m1, m1) / m1.sum()
    try:
        lam, _ = gen_eig_extreme(S_defl, Mq, "smallest-positive", tol=tol)
    except np.linalg.LinAlgError:
        # spurious pressure mode: the deflated Schur complement is singular
        return 0.0
    return math.sqrt(max(lam, 0.0))


def compute_inf_sup(sys, dm=None, tol=1e-10, over="V0"):
    """Discrete inf-sup constant of ``b`` on mean-free pressures.

    ``over="V0"`` uses velocity DOFs away from the whole boundary (the
    supremum set of the continuous condition); ``over="V"`` uses all free
    DOFs and is reported as a diagnostic.
    """
    key = ("inf_sup", over, tol)
    if key in sys.cache:
        return sys.cache[key]
    if over == "V0":
        mask = sys.v0_mask if dm is None else dm.interior_free_mask()
    elif over == "V":
        mask = np.ones(sys.n_free, dtype=bool)
    else:
        raise ValueError(f"unknown velocity set {over!r}")
    B0 = sys.B[:, mask].tocsr()
    K0 = sys.K_V[mask][:, mask].tocsr()
    val = _inf_sup_from_blocks(B0, K0, sys.M_Q, tol)
    sys.cache[key] = val
    return val


def step_condition(mu, alpha_psi, lambda_tau, k):
    """Unique solvability of one backward-Euler step: alpha k / lam < 1 + 2 mu k."""
    return alpha_psi * k / lambda_tau < 1.0 + 2.0 * mu * k


@dataclass(frozen=True)
class ConstantsReport:
    mu: float
    alpha_psi: float
    lambda_tau: float
    k: float
    m_margin: float
    step_bound: float
    inf_sup_alpha: float = float("nan")
    inf_sup_alpha_full: float = float("nan")

    @property
    def step_ok(self):
        return self.k < self.step_bound

    @property
    def smallness_ok(self):
        return self.m_margin > 0

    @property
    def k_threshold(self):
        """The sufficient step size bound lam / alpha (infinite when alpha = 0)."""
        return math.inf if self.alpha_psi == 0 else self.lambda_tau / self.alpha_psi

    def items(self):
        out = [(f.name, getattr(self, f.name)) for f in fields(self)]
        out += [("smallness_ok", self.smallness_ok), ("step_ok", self.step_ok)]
        return out

    def as_text(self):
        def fmt(v):
            if isinstance(v, bool):
                return str(v).lower()
            return f"{v:.17g}"
        return "\n".join(f"{k} = {fmt(v)}" for k, v in self.items()) + "\n"

    def csv_header(self):
        units = {"mu": "Pa*s", "k": "s", "step_bound": "s"}
        names = [n for n, _ in self.items()]
        return [f"{n} [{units.get(n, '1')}]" for n in names]

    def csv_row(self):
        return [str(v).lower() if isinstance(v, bool) else f"{v:.17g}" for _, v in self.items()]


def smallness(mu, alpha_psi, lambda_tau, k, inf_sup_alpha=float("nan"),
              inf_sup_alpha_full=float("nan")):
    if not (mu > 0 and lambda_tau > 0 and alpha_psi >= 0 and k > 0):
        raise ValueError("need mu > 0, lambda_tau > 0, alpha_psi >= 0, k > 0")
    m = 2.0 * mu - alpha_psi / lambda_tau
    # alpha k/lam < 1 + 2 mu k  <=>  k (alpha/lam - 2 mu) < 1  <=>  k (-m) < 1
    bound = math.inf if m >= 0 else lambda_tau / (alpha_psi - 2.0 * mu * lambda_tau)
    return ConstantsReport(mu=float(mu), alpha_psi=float(alpha_psi), lambda_tau=float(lambda_tau),
                           k=float(k), m_margin=m, step_bound=bound,
                           inf_sup_alpha=float(inf_sup_alpha),
                           inf_sup_alpha_full=float(inf_sup_alpha_full))


def constants_report(sys, law, k, tol=1e-10):
    lam = compute_lambda_tau(sys, tol=tol)
    return smallness(sys.mu, law.alpha_psi if law is not None else 0.0, lam, k,
                     inf_sup_alpha=compute_inf_sup(sys, tol=tol),
                     inf_sup_alpha_full=compute_inf_sup(sys, tol=tol, over="V"))


def random_admissible(sys, n, seed=0):
    """``n`` random free-DOF vectors (columns), deterministic in ``seed``."""
    return np.random.default_rng(seed).standard_normal((sys.n_free, n))


def trace_certificate(sys, n_samples=100, seed=0, tol=1e-10):
    """Check the discrete trace inequality on random fields and its sharpness.

    Returns ``(worst_slack, eig_rel_gap)`` where the slack of a sample is
    ``(v'K v / lam - v'G v) / (v'K v / lam)`` and the gap measures how far the
    eigenvector is from equality.
    """
    lam, x = compute_lambda_tau(sys, tol=tol, return_vector=True)
    G = sys.boundary_gram
    V = random_admissible(sys, n_samples, seed)
    kv = np.einsum("ij,ij->j", V, sys.K_V @ V) / lam
    gv = np.einsum("ij,ij->j", V, G @ V)
    slack = float(np.min((kv - gv) / kv))
    kx = x @ (sys.K_V @ x) / lam
    gx = x @ (G @ x)
    return slack, abs(kx - gx) / kx
