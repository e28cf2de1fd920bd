"""Backward-Euler (Rothe) time stepping with a nonsmooth slip boundary.

Each step solves, over free velocity DOFs,

    (1/k) M (u - u_prev) + K_a u + T^T W xi - B^T p = f,   B u = 0,
    xi_b in dpsi((T u)_b)  at every slip node b,

which is the optimality system of minimizing

    J(u) = |u - u_prev|_M^2 / (2k) + u'K_a u / 2 - f'u + sum_b w_b psi((T u)_b)

over discretely divergence-free u. Writing psi = psi_c - alpha s^2 / 2 with
psi_c convex turns J into a convex quadratic plus a separable convex term
whenever M/k + K_a - alpha T'WT is positive definite. That split problem is
solved with a relaxed ADMM: a linear saddle solve for (u, p), a nodal prox on
the slip values, and a multiplier update.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .friction import subdiff_distance
from .linalg import ConvergenceError, SaddleSolver, gen_eig_extreme
from .spectral import compute_lambda_tau, step_condition


class StepConditionError(ValueError):
    pass


class StepFailure(ConvergenceError):
    pass


class RotheError(RuntimeError):
    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def k(self):
        return self.T / self.N

    @property
    def nodes(self):
        return self.k * np.arange(self.N + 1)

    def step_index(self, t):
        """Step n with t in (t_{n-1}, t_n]; t = 0 belongs to step 1."""
        t = np.asarray(t, dtype=float)
        n = np.ceil(t / self.k - 1e-12).astype(int)
        return np.clip(n, 1, self.N)


@dataclass
class SourceTerm:
    """Time-dependent load: ``evaluate(t)`` returns a free-DOF load vector."""

    evaluate: object
    tag: str = "source"

    def __call__(self, t):
        return self.evaluate(t)

    @classmethod
    def zero(cls, sys):
        z = np.zeros(sys.n_free)
        return cls(lambda t: z, tag="zero")

    @classmethod
    def from_field(cls, sys, func, tag="field"):
        """``func(x, y, t) -> (fx, fy)`` sampled at the quadrature points."""
        return cls(lambda t: sys.load_field(func, t), tag=tag)


_GAUSS2 = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))


def average_source(f, grid):
    """Step averages ``f_n = k^{-1} int_{t_{n-1}}^{t_n} f`` by 2-point Gauss."""
    k = grid.k
    out = []
    for n in range(1, grid.N + 1):
        acc = 0.0
        for g in _GAUSS2:
            t = (n - 1 + g) * k
            val = np.asarray(f(t), dtype=float)
            if not np.all(np.isfinite(val)):
                raise ValueError(f"source term is not finite at t = {t!r}")
            acc = acc + 0.5 * val
        out.append(acc)
    return out


def _saddle(sys, A):
    return SaddleSolver(A, -sys.B.T, sys.mean_p)


def project_initial(u0, sys, grid):
    """Divergence-free admissible v minimizing |v - u0|_H^2 + k |v|_V^2.

    ``u0`` is either a callable ``(x, y) -> (ux, uy)`` (integrated against
    the basis by quadrature, so it may be discontinuous) or a free-DOF
    coefficient vector.
    """
    k = grid.k
    if callable(u0):
        g = sys.load_field(u0)
    else:
        g = sys.M @ np.asarray(u0, dtype=float)
    if not np.any(g):
        return np.zeros(sys.n_free)
    key = ("project", k)
    if key not in sys.cache:
        sys.cache[key] = _saddle(sys, (sys.M + k * sys.K_V).tocsr())
    v, _ = sys.cache[key].solve(g)
    return v


def strictly_convex(sys, alpha, k):
    """Is M/k + K_a - alpha T'WT positive definite on free DOFs?"""
    if alpha <= 0 or sys.n_slip == 0:
        return True
    key = ("convex", alpha, k)
    if key not in sys.cache:
        H = (sys.M / k + sys.K_a).tocsr()
        theta, _ = gen_eig_extreme(H, alpha * sys.boundary_gram, "largest", tol=1e-8)
        sys.cache[key] = theta < 1.0 - 1e-10
    return sys.cache[key]


def check_step(sys, law, k, lambda_tau=None):
    """Raise ``StepConditionError`` unless the step problem is uniquely solvable."""
    if law is None:
        return
    lam = compute_lambda_tau(sys) if lambda_tau is None else lambda_tau
    a = law.alpha_psi
    if not step_condition(sys.mu, a, lam, k):
        raise StepConditionError(
            f"step condition violated: alpha_psi*k/lambda_tau = {a * k / lam:.6g} >= "
            f"1 + 2*mu*k = {1 + 2 * sys.mu * k:.6g}; use k < lambda_tau/alpha_psi = {lam / a:.6g}")
    if not strictly_convex(sys, a, k):
        raise StepConditionError(
            "discrete step functional is not strictly convex at this k "
            f"(M/k + K_a - alpha_psi*T'WT indefinite); use k < lambda_tau/alpha_psi = {lam / a:.6g}")


def default_penalty(sys, law, k):
    """ADMM penalty balancing the nodal prox against the bulk operator."""
    if sys.n_slip == 0:
        return 1.0
    H = (sys.M / k + sys.K_a).tocsr()
    dofs = sys.T.indices
    diag = H.diagonal()[dofs] / sys.wgamma
    # the bulk operator seen through the lumped trace scales like diag * h
    beta = float(np.sqrt(np.min(diag) * np.max(diag))) * float(np.min(sys.wgamma))
    return max(beta, 2.0 * law.alpha_psi, 1e-12)


@dataclass
class StepResult:
    u: np.ndarray
    p: np.ndarray
    xi: np.ndarray
    s: np.ndarray
    lam: np.ndarray
    stats: dict


def _step_factor(sys, k, shift):
    key = ("step", k, shift)
    if key not in sys.cache:
        A = (sys.M / k + sys.K_a + shift * sys.boundary_gram).tocsr()
        sys.cache[key] = _saddle(sys, A)
    return sys.cache[key]


def step_objective(sys, law, u, u_prev, f_n, k):
    """Value of the step functional J at ``u`` (see module docstring)."""
    d = u - u_prev
    val = 0.5 * d @ (sys.M @ d) / k + 0.5 * u @ (sys.K_a @ u) - f_n @ u
    if law is not None and sys.n_slip:
        val += np.sum(sys.wgamma * law.psi(sys.T @ u))
    return float(val)


def step_solve(sys, law, u_prev, f_n, k, tol=1e-10, max_iter=20000, s0=None, lam0=None,
               beta=None, omega=1.0, check=True):
    """One backward-Euler step; returns a :class:`StepResult`.

    ``s0``/``lam0`` warm-start the slip values and the multiplier of the
    constraint ``T u = s`` (returned as ``lam`` for chaining steps).
    """
    u_prev = np.asarray(u_prev, dtype=float)
    f_n = np.asarray(f_n, dtype=float)
    rhs0 = sys.M @ u_prev / k + f_n
    if law is None or sys.n_slip == 0:
        u, p = _step_factor(sys, k, 0.0).solve(rhs0)
        z = np.zeros(sys.n_slip)
        return StepResult(u, p, z, sys.T @ u, z.copy(),
                          _finish_stats(sys, law, u, p, z, u_prev, f_n, k, 0, 0.0, rhs0))
    if check:
        check_step(sys, law, k)
    alpha = law.alpha_psi
    beta0 = default_penalty(sys, law, k) if beta is None else float(beta)
    adaptive = beta is None
    level = 0
    W = sys.wgamma
    TtW = (sys.T.T @ sp.diags(W)).tocsr()
    s = np.zeros(sys.n_slip) if s0 is None else np.array(s0, dtype=float)
    y = np.zeros(sys.n_slip) if lam0 is None else np.array(lam0, dtype=float) / beta0
    omega = float(omega)
    increases = 0
    res = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        beta = beta0 * 2.0 ** level
        solver = _step_factor(sys, k, beta - alpha)
        u, p = solver.solve(rhs0 + beta * (TtW @ (s - y)))
        w = sys.T @ u
        wr = omega * w + (1.0 - omega) * s
        s_new = law.prox_shifted(1.0 / beta, wr + y)
        y = y + wr - s_new
        r_primal = float(np.max(np.abs(w - s_new)))
        r_dual = float(np.max(np.abs(s_new - s)))
        s = s_new
        new_res = max(r_primal, r_dual)
        increases = increases + 1 if new_res > res else 0
        if increases >= 3 and omega > 1.0 / 16:
            omega = max(omega / 2.0, 1.0 / 16)
            increases = 0
        res = new_res
        if r_primal <= tol and r_dual <= tol:
            break
        # residual balancing on a power-of-two ladder so factorizations are reused
        if adaptive and it % 10 == 0:
            step = 0
            if r_primal > 10.0 * r_dual and level < 12:
                step = 1
            elif r_dual > 10.0 * r_primal and level > -12:
                step = -1
            if step:
                level += step
                y = y * 2.0 ** (-step)  # keep the unscaled multiplier beta*y fixed
    else:
        raise StepFailure(
            f"step solver hit max_iter={max_iter} with residual {res:.3e}; "
            f"try halving k (k < lambda_tau/alpha_psi guarantees solvability)",
            residual=res, iterations=max_iter)
    # solve once more with the converged slip so u, p are consistent with (s, y)
    u, p = solver.solve(rhs0 + beta * (TtW @ (s - y)))
    xi = beta * y - alpha * s
    stats = _finish_stats(sys, law, u, p, xi, u_prev, f_n, k, it, res, rhs0, s=s)
    stats["beta"] = beta
    stats["omega"] = omega
    return StepResult(u, p, xi, s, beta * y, stats)


def _finish_stats(sys, law, u, p, xi, u_prev, f_n, k, iters, res, rhs0, s=None):
    w = sys.T @ u
    mom = (sys.M / k + sys.K_a) @ u - sys.B.T @ p + sys.T.T @ (sys.wgamma * xi) - rhs0
    scale = max(np.linalg.norm(rhs0), 1e-300)
    div = float(np.linalg.norm(sys.B @ u))
    if law is not None and sys.n_slip:
        d_w = subdiff_distance(law, xi, w)
        graph = d_w if s is None else np.minimum(d_w, np.abs(w - s) + subdiff_distance(law, xi, s))
        incl = float(np.max(graph)) if graph.size else 0.0
    else:
        incl = 0.0
    # energy identity: test the step equation with v = u
    lhs = ((u - u_prev) @ (sys.M @ u)) / k + u @ (sys.K_a @ u) + w @ (sys.wgamma * xi) - p @ (sys.B @ u)
    rhs = f_n @ u
    escale = max(abs(lhs), abs(rhs), 1e-300)
    return {
        "iterations": int(iters),
        "fixed_point_residual": float(res),
        "momentum_residual": float(np.linalg.norm(mom) / scale),
        "divergence_norm": div,
        "inclusion_residual": incl,
        "energy_residual": float(abs(lhs - rhs) / escale) if (lhs or rhs) else 0.0,
        "pressure_mean": float(sys.mean_p @ p),
    }


@dataclass
class RotheTrajectory:
    grid: TimeGrid
    u: list
    p: list = field(default_factory=list)
    xi: list = field(default_factory=list)
    s: list = field(default_factory=list)
    f: list = field(default_factory=list)
    step_stats: list = field(default_factory=list)
    complete: bool = False

    @property
    def n_steps(self):
        return len(self.u) - 1

    def velocity_array(self):
        return np.array(self.u)


def run(sys, law, u0, f, grid, tol=1e-10, max_iter=20000, force=False, on_step=None,
        beta=None, f_avg=None, omega=1.0):
    """Full Rothe trajectory from initial data ``u0`` and source ``f``.

    ``f`` is a :class:`SourceTerm` (or any callable ``t -> load``);
    ``f_avg`` may supply precomputed step averages instead. Unless
    ``force`` is set the step condition is checked once up front. A failing
    step raises :class:`RotheError` carrying the partial trajectory.
    """
    k = grid.k
    if law is not None and not force:
        check_step(sys, law, k)
    fs = average_source(f, grid) if f_avg is None else list(f_avg)
    traj = RotheTrajectory(grid=grid, u=[project_initial(u0, sys, grid)], f=fs)
    s = lam = None
    for n in range(1, grid.N + 1):
        try:
            r = step_solve(sys, law, traj.u[-1], fs[n - 1], k, tol=tol, max_iter=max_iter,
                           s0=s, lam0=lam, beta=beta, omega=omega, check=False)
        except (StepFailure, StepConditionError) as exc:
            raise RotheError(f"step {n} failed: {exc}", trajectory=traj) from exc
        s, lam = r.s, r.lam
        traj.u.append(r.u)
        traj.p.append(r.p)
        traj.xi.append(r.xi)
        traj.s.append(r.s)
        r.stats["n"] = n
        r.stats["t"] = n * k
        traj.step_stats.append(r.stats)
        if on_step is not None:
            on_step(n, traj)
    traj.complete = True
    return traj


@dataclass
class Interpolants:
    """Piecewise-linear ``u_k`` and piecewise-constant ``u_bar``, ``xi_bar``, ``f_bar``."""

    grid: TimeGrid
    nodes_u: np.ndarray          # (N+1, n)
    xi: np.ndarray               # (N, n_slip)
    f: np.ndarray                # (N, n)

    def u_lin(self, t):
        n = int(self.grid.step_index(t))
        a = t / self.grid.k - n
        return self.nodes_u[n] + a * (self.nodes_u[n] - self.nodes_u[n - 1])

    def u_bar(self, t):
        return self.nodes_u[int(self.grid.step_index(t))]

    def xi_bar(self, t):
        return self.xi[int(self.grid.step_index(t)) - 1]

    def f_bar(self, t):
        return self.f[int(self.grid.step_index(t)) - 1]

    def u_prime(self, t):
        n = int(self.grid.step_index(t))
        return (self.nodes_u[n] - self.nodes_u[n - 1]) / self.grid.k


def build_interpolants(traj):
    if not traj.complete:
        raise ValueError("trajectory is incomplete")
    n_slip = traj.xi[0].size if traj.xi else 0
    return Interpolants(
        grid=traj.grid,
        nodes_u=np.array(traj.u),
        xi=np.array(traj.xi) if traj.xi else np.zeros((0, n_slip)),
        f=np.array(traj.f),
    )
