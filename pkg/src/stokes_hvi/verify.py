"""Numerical checks of the stability, convergence and uniqueness estimates.

Every check compares a computed left-hand side with a computed right-hand
side in discrete norms: ``|.|_H`` through the velocity mass matrix,
``|.|_V`` through ``K_V``, ``|.|_{V*}`` as the ``K_V^{-1}`` dual norm of a
load vector, and the slip-boundary norm through the lumped weights.
"""

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .friction import select_subgrad
from .linalg import SPDFactor, solve_saddle_uzawa
from .rothe import (SourceTerm, TimeGrid, average_source, build_interpolants, run,
                    step_solve)
from .spectral import compute_inf_sup, compute_lambda_tau


def inputs_digest(*items):
    """SHA-256 over arrays (raw bytes) and other values (repr)."""
    h = hashlib.sha256()
    for it in items:
        if isinstance(it, np.ndarray):
            h.update(np.ascontiguousarray(it, dtype=float).tobytes())
        elif isinstance(it, (list, tuple)) and it and isinstance(it[0], np.ndarray):
            for a in it:
                h.update(np.ascontiguousarray(a, dtype=float).tobytes())
        else:
            h.update(repr(it).encode())
    return h.hexdigest()


@dataclass
class Check:
    name: str
    lhs: float
    rhs: float
    rel_tol: float = 0.0
    abs_tol: float = 0.0
    digest: str = ""

    @property
    def margin(self):
        return self.rhs * (1.0 + self.rel_tol) + self.abs_tol - self.lhs

    @property
    def passed(self):
        return bool(np.isfinite(self.lhs) and np.isfinite(self.rhs) and self.margin >= 0)


@dataclass
class VerificationReport:
    title: str
    checks: list = field(default_factory=list)
    table: list = field(default_factory=list)    # free-form rows (dicts) for studies

    def add(self, name, lhs, rhs, rel_tol=0.0, abs_tol=0.0, digest=""):
        c = Check(name, float(lhs), float(rhs), rel_tol, abs_tol, digest)
        self.checks.append(c)
        return c

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check", "lhs [1]", "rhs [1]", "margin [1]", "rel_tol [1]", "abs_tol [1]",
                    "pass", "digest"])
        for c in self.checks:
            w.writerow([c.name, f"{c.lhs:.17g}", f"{c.rhs:.17g}", f"{c.margin:.17g}",
                        f"{c.rel_tol:.17g}", f"{c.abs_tol:.17g}", int(c.passed), c.digest])
        return buf.getvalue()

    def table_csv(self):
        if not self.table:
            return ""
        buf = io.StringIO()
        keys = list(self.table[0])
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys)
        for row in self.table:
            w.writerow([f"{row[k]:.17g}" if isinstance(row[k], float) else row[k] for k in keys])
        return buf.getvalue()

    def summary(self):
        lines = [f"== {self.title} =="]
        for c in self.checks:
            tag = "PASS" if c.passed else "FAIL"
            lines.append(f"[{tag}] {c.name}: lhs={c.lhs:.6e} rhs={c.rhs:.6e} margin={c.margin:.3e}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


# ----------------------------------------------------------------------------
# energy estimates


def energy_quantities(traj, sys):
    """``(max_n |u_n|_H, sum_n |u_n - u_{n-1}|_H^2, k sum_{n>=1} |u_n|_V^2)``."""
    U = traj.u
    k = traj.grid.k
    c1 = max(sys.norm_H(u) for u in U)
    c2 = sum(sys.norm_H(U[n] - U[n - 1]) ** 2 for n in range(1, len(U)))
    c3 = k * sum(sys.norm_V(u) ** 2 for u in U[1:])
    return c1, c2, c3


def boundary_growth_constant(sys, law, lambda_tau):
    """Constant c2 in ``|sum_b w_b g0 (Tv)_b| <= c2 |v|_V`` with g0 in dpsi(0)."""
    g0 = float(abs(select_subgrad(law, 0.0))) if law is not None else 0.0
    return g0 * math.sqrt(sys.slip_measure / lambda_tau)


def energy_bounds(traj, sys, law, m_margin, lambda_tau=None, rel_tol=1e-8, abs_tol=1e-12):
    """Summed discrete energy inequality at every time node.

    Testing step n with v = u_n, bounding the friction term from below by
    relaxed monotonicity against a fixed subgradient at 0 and the trace
    inequality, and applying Young's inequality with weight m/4 to the
    boundary and load terms gives

        |u_n|^2 + sum_{j<=n} |du_j|^2 + m k sum_{j<=n} |u_j|_V^2
            <= |u_0|^2 + (2/m) (n k c2^2 + k sum_{j<=n} |f_j|_{V*}^2).
    """
    if not m_margin > 0:
        raise ValueError("energy bound needs a positive smallness margin")
    lam = compute_lambda_tau(sys) if lambda_tau is None else lambda_tau
    c2 = boundary_growth_constant(sys, law, lam)
    k = traj.grid.k
    U = traj.u
    rep = VerificationReport("energy bounds")
    digest = inputs_digest(U, k, m_margin, lam)
    c1, cc2, c3 = energy_quantities(traj, sys)
    rep.table.append({"k": k, "C1": c1, "C2": cc2, "C3": c3})
    u0 = sys.norm_H(U[0]) ** 2
    incr = 0.0
    vsum = 0.0
    fsum = 0.0
    worst = None
    for n in range(1, len(U)):
        incr += sys.norm_H(U[n] - U[n - 1]) ** 2
        vsum += sys.norm_V(U[n]) ** 2
        fsum += sys.dual_V(traj.f[n - 1]) ** 2
        lhs = sys.norm_H(U[n]) ** 2 + incr + m_margin * k * vsum
        rhs = u0 + (2.0 / m_margin) * (n * k * c2**2 + k * fsum)
        c = Check("summed_energy_inequality", lhs, rhs, rel_tol, abs_tol, digest)
        if worst is None or c.margin / max(rhs, 1e-300) < worst.margin / max(worst.rhs, 1e-300):
            worst = c
    if worst is not None:
        rep.checks.append(worst)
    return rep


def xi_bound(traj, sys, law, lambda_tau=None, abs_tol=1e-12):
    """Check ``|xi_n|_W <= c0' (1 + |u_n|_V)`` at every step.

    Growth gives ``|xi_b| <= c0 (1 + |s_b|)`` with ``s`` the converged slip,
    hence ``|xi|_W <= c0 (|Gamma_S|_h^{1/2} + |T u|_W + |s - T u|_W)`` and
    the trace inequality turns ``|T u|_W`` into ``lambda^{-1/2} |u|_V``.
    """
    lam = compute_lambda_tau(sys) if lambda_tau is None else lambda_tau
    c0 = law.c0
    c0p = c0 * max(math.sqrt(sys.slip_measure), 1.0 / math.sqrt(lam))
    rep = VerificationReport("xi growth bound")
    worst = None
    for n, xi in enumerate(traj.xi, start=1):
        u = traj.u[n]
        gap = sys.norm_S(traj.s[n - 1] - sys.T @ u) if traj.s else 0.0
        lhs = sys.norm_S(xi)
        rhs = c0p * (1.0 + sys.norm_V(u)) + c0 * gap
        c = Check("xi_growth", lhs, rhs, 0.0, abs_tol)
        if worst is None or c.margin < worst.margin:
            worst = c
    if worst is not None:
        worst.digest = inputs_digest(traj.xi, c0p)
        rep.checks.append(worst)
    rep.table.append({"c0_prime": c0p})
    return rep


def energy_family(sys, law, u0, f, T, Ns, m_margin, tol=1e-10, variation=0.10):
    """Run every N in ``Ns`` and check k-uniformity of the three energy quantities."""
    rep = VerificationReport("energy family")
    lam = compute_lambda_tau(sys)
    rows = []
    for N in Ns:
        traj = run(sys, law, u0, f, TimeGrid(T, N), tol=tol)
        sub = energy_bounds(traj, sys, law, m_margin, lam)
        rep.checks.append(Check(f"summed_energy_inequality[N={N}]", *_lr(sub.checks[0])))
        if law is not None and law.c0 > 0:
            xb = xi_bound(traj, sys, law, lam)
            rep.checks.append(Check(f"xi_growth[N={N}]", *_lr(xb.checks[0])))
        row = dict(sub.table[0])
        row["N"] = N
        rows.append(row)
    rep.table = rows
    for key in ("C1", "C2", "C3"):
        vals = np.array([r[key] for r in rows])
        top = float(vals.max())
        spread = float(vals.max() - vals.min())
        # relative variation across the k family
        rep.add(f"{key}_variation", spread, variation * top)
    return rep


def _lr(c):
    return c.lhs, c.rhs, c.rel_tol, c.abs_tol, c.digest


# ----------------------------------------------------------------------------
# BV^2 seminorm


def bv2_partition(interp, sys, indices):
    """Sum of squared V*-increments of u_bar over the node subset ``indices``."""
    U = interp.nodes_u
    idx = list(indices)
    tot = 0.0
    for a, b in zip(idx[:-1], idx[1:]):
        tot += sys.dual_V(sys.M @ (U[b] - U[a])) ** 2
    return tot


def bv2_seminorm(interp, sys):
    """BV^2 seminorm of ``u_bar`` and the derivative bound that controls it.

    ``u_bar`` takes the values ``u_1, ..., u_N`` (the first step also covers
    t = 0). A partition of [0, T] only sees an increasing subsequence of
    these values, so the supremum over partitions is a longest-path problem
    over node pairs, solved exactly by dynamic programming. Merging aligned
    increments raises a sum of squares, so the node partition alone is not
    the supremum. Cauchy-Schwarz bounds every partition by
    ``T k sum_{n>=1} |du_n / k|_{V*}^2``.
    """
    N = interp.grid.N
    U = interp.nodes_u
    k = interp.grid.k
    Kf = sys.K_V_factor
    G = sys.M @ U[1:].T                     # column j holds M u_{j+1}
    KG = Kf.solve(G)
    sq = np.zeros((N, N))                   # sq[a, b] = |u_b - u_a|_{V*}^2
    for a in range(N - 1):
        dg = G[:, a + 1:] - G[:, [a]]
        sq[a, a + 1:] = np.einsum("ij,ij->j", dg, KG[:, a + 1:] - KG[:, [a]])
    best = np.zeros(N)
    for j in range(1, N):
        best[j] = np.max(best[:j] + sq[:j, j])
    val = float(best.max()) if N else 0.0
    incr = sum(sys.dual_V(sys.M @ (U[n] - U[n - 1])) ** 2 for n in range(1, N + 1))
    bound = interp.grid.T * k * incr / k**2
    return val, bound


# ----------------------------------------------------------------------------
# Lipschitz dependence


def _as_data(sys, data, grid):
    u0, f = data
    if isinstance(f, (list, tuple)):
        f_avg = [np.asarray(v, dtype=float) for v in f]
    else:
        f_avg = average_source(f, grid)
    return u0, f_avg


def lipschitz_pair(sys, law, grid, data1, data2, m_margin, tol=1e-12, rel_tol=1e-8,
                   abs_tol=1e-12, beta=None):
    """Paired runs and the discrete continuous-dependence inequality at every node.

        |du_n|_H^2 + m k sum_{j<=n} |du_j|_V^2
            <= |du_0|_H^2 + (k/m) sum_{j<=n} |df_j|_{V*}^2

    with right-endpoint sums (the ones backward Euler produces) and du_0 the
    difference of the projected initial data.
    """
    if not m_margin > 0:
        raise ValueError("Lipschitz check refused: smallness margin m <= 0")
    u01, f1 = _as_data(sys, data1, grid)
    u02, f2 = _as_data(sys, data2, grid)
    t1 = run(sys, law, u01, None, grid, tol=tol, f_avg=f1, beta=beta)
    t2 = run(sys, law, u02, None, grid, tol=tol, f_avg=f2, beta=beta)
    k = grid.k
    du = [a - b for a, b in zip(t1.u, t2.u)]
    df = [a - b for a, b in zip(f1, f2)]
    lhs = [sys.norm_H(du[0]) ** 2]
    rhs = [lhs[0]]
    vs = fs = 0.0
    for n in range(1, grid.N + 1):
        vs += sys.norm_V(du[n]) ** 2
        fs += sys.dual_V(df[n - 1]) ** 2
        lhs.append(sys.norm_H(du[n]) ** 2 + m_margin * k * vs)
        rhs.append(sys.norm_H(du[0]) ** 2 + (k / m_margin) * fs)
    lhs = np.array(lhs)
    rhs = np.array(rhs)
    # node 0 holds with equality by construction; report the worst later node
    margins = (rhs * (1.0 + rel_tol) + abs_tol - lhs) / np.maximum(rhs, 1e-300)
    j = 1 + int(np.argmin(margins[1:]))
    return Check("lipschitz", lhs[j], rhs[j], rel_tol, abs_tol,
                 inputs_digest(du, df, m_margin)), lhs, rhs


def lipschitz_check(sys, law, grid, data1, data2, m_margin, n_eval=0, seed=0, tol=1e-12,
                    perturb=None):
    """Worst node margin for the given pair plus ``n_eval`` random pairs.

    Random pairs perturb ``data1`` by ``perturb(rng) -> (du0_vec, df_list)``
    (defaults to random smooth fields, see :func:`random_perturbation`).
    """
    rep = VerificationReport("lipschitz")
    c, _, _ = lipschitz_pair(sys, law, grid, data1, data2, m_margin, tol=tol)
    c.name = "lipschitz[given]"
    rep.checks.append(c)
    rng = np.random.default_rng(seed)
    pert = perturb or (lambda r: random_perturbation(sys, grid, r))
    u01, f1 = _as_data(sys, data1, grid)
    if callable(u01):
        # L2 projection onto free DOFs; the run applies its own initial projection
        u01 = sys.M_factor.solve(sys.load_field(u01))
    for i in range(n_eval):
        du0, dfs = pert(rng)
        d2 = (u01 + np.asarray(du0), [a + b for a, b in zip(f1, dfs)])
        c, _, _ = lipschitz_pair(sys, law, grid, (u01, f1), d2, m_margin, tol=tol)
        c.name = f"lipschitz[pair={i}]"
        rep.checks.append(c)
    return rep


def random_perturbation(sys, grid, rng, scale_u=None, scale_f=None):
    """Random smooth perturbation of initial data and load.

    The initial perturbation is a random combination of low trigonometric
    modes interpolated at the nodes; the load perturbation is a random
    time-varying combination of the same modes. Amplitudes are drawn on a
    log scale so that both small and large differences are exercised.
    """
    X = sys.dofmap.node_coords
    free = sys.dofmap.free
    su = 10.0 ** rng.uniform(-2, 0) if scale_u is None else scale_u
    sf = 10.0 ** rng.uniform(-1, 1) if scale_f is None else scale_f

    def modes(c):
        x, y = X[:, 0], X[:, 1]
        vx = sum(c[i, j, 0] * np.sin(np.pi * (i + 1) * x) * np.sin(np.pi * (j + 1) * y)
                 for i in range(2) for j in range(2))
        vy = sum(c[i, j, 1] * np.sin(np.pi * (i + 1) * x) * np.sin(np.pi * (j + 1) * y)
                 for i in range(2) for j in range(2))
        return np.column_stack([vx, vy]).ravel()[free]

    du0 = su * modes(rng.standard_normal((2, 2, 2)))
    shape_f = sf * modes(rng.standard_normal((2, 2, 2)))
    shape_g = sf * modes(rng.standard_normal((2, 2, 2)))
    tn = (np.arange(grid.N) + 0.5) * grid.k / grid.T
    dfs = [sys.M @ (shape_f + np.sin(2 * np.pi * t) * shape_g) for t in tn]
    return du0, dfs


# ----------------------------------------------------------------------------
# Cauchy study


def l2h_difference(sys, coarse, fine):
    """``|u_bar_c - u_bar_f|_{L2(0,T;H)}`` for a fine grid with twice the steps."""
    Nc = coarse.grid.N
    if fine.grid.N != 2 * Nc:
        raise ValueError("fine trajectory must have exactly twice the steps")
    kf = fine.grid.k
    tot = 0.0
    for i in range(1, 2 * Nc + 1):
        d = fine.u[i] - coarse.u[(i + 1) // 2]
        tot += kf * sys.norm_H(d) ** 2
    return math.sqrt(tot)


def cauchy_study(sys, law, u0, f, T_final, N0, halvings, tol=1e-10, ratio_max=0.75):
    if halvings < 2:
        raise ValueError("halvings must be >= 2")
    rep = VerificationReport("cauchy study")
    trajs = []
    for j in range(halvings + 1):
        trajs.append(run(sys, law, u0, f, TimeGrid(T_final, N0 * 2**j), tol=tol))
    e = [l2h_difference(sys, trajs[j], trajs[j + 1]) for j in range(halvings)]
    for j, ej in enumerate(e):
        rep.table.append({"N_coarse": N0 * 2**j, "e": ej,
                          "ratio": ej / e[j - 1] if j and e[j - 1] > 0 else float("nan")})
    digest = inputs_digest(np.array(e))
    for j in range(1, halvings):
        if e[j - 1] == 0.0 and e[j] == 0.0:
            rep.add(f"ratio[{j}]", 0.0, 0.0, digest=digest)
            continue
        rep.add(f"strictly_decreasing[{j}]", e[j], e[j - 1] * (1 - 1e-15), digest=digest)
        rep.add(f"ratio[{j}]", e[j], ratio_max * e[j - 1], digest=digest)
    rep.e = e
    return rep


# ----------------------------------------------------------------------------
# manufactured Stokes regression


def l2h_error_exact(sys, traj, u_exact_at_t0, decay=1.0):
    """``|u - u_bar|_{L2(0,T;H)}`` for ``u(x,t) = exp(-decay t) U(x)``, exact in time."""
    qx, qy = sys.quad_points[:, 0], sys.quad_points[:, 1]
    Ux, Uy = u_exact_at_t0(qx, qy, 0.0)
    wq = sys.quad_weights
    UU = float(np.sum(wq * (Ux * Ux + Uy * Uy)))
    k = traj.grid.k
    tot = 0.0
    for n in range(1, traj.grid.N + 1):
        a, b = (n - 1) * k, n * k
        if decay == 0.0:
            i1, i2 = k, k
        else:
            i2 = (math.exp(-2 * decay * a) - math.exp(-2 * decay * b)) / (2 * decay)
            i1 = (math.exp(-decay * a) - math.exp(-decay * b)) / decay
        vx, vy = sys.eval_at_quad(traj.u[n])
        UV = float(np.sum(wq * (Ux * vx + Uy * vy)))
        VV = float(np.sum(wq * (vx * vx + vy * vy)))
        tot += i2 * UU - 2.0 * i1 * UV + k * VV
    return math.sqrt(max(tot, 0.0))


def stokes_regression(sys, T_final=0.25, Ns=(32, 64, 128, 256, 512), min_order=0.8, steady=False,
                      mean_tol=1e-10):
    """Zero-friction regression against a manufactured solution.

    The boundary must be Dirichlet on x = 0, x = 1, y = 1 and slip on y = 0
    (the layout the manufactured flow satisfies).
    """
    from .fields import manufactured
    mu = sys.mu
    uex = manufactured("u", mu=mu, steady=steady)
    fex = manufactured("f", mu=mu, steady=steady)
    f = SourceTerm.from_field(sys, fex, tag="manufactured")
    u0 = sys.interpolate(uex, 0.0)
    rep = VerificationReport("stokes regression")
    errs = []
    worst_mean = 0.0
    worst_div = 0.0
    for N in Ns:
        grid = TimeGrid(T_final, N)
        traj = run(sys, None, u0, f, grid)
        err = l2h_error_exact(sys, traj, uex, decay=0.0 if steady else 1.0)
        errs.append(err)
        worst_mean = max(worst_mean, max(abs(s["pressure_mean"]) for s in traj.step_stats))
        worst_div = max(worst_div, max(s["divergence_norm"] for s in traj.step_stats))
        rep.table.append({"N": N, "k": grid.k, "error_L2H": err})
    digest = inputs_digest(np.array(errs))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    for i, o in enumerate(orders):
        rep.table[i + 1]["order"] = o
        if not steady:
            # order >= min_order  <=>  min_order <= order
            rep.add(f"order[{Ns[i]}->{Ns[i + 1]}]", min_order, o, digest=digest)
    rep.add("pressure_mean", worst_mean, mean_tol)
    rep.add("divergence", worst_div, 1e-10)
    rep.errors = errs
    rep.orders = orders
    return rep


# ----------------------------------------------------------------------------
# pressure uniqueness


def _v0_dual(sys, g, factor):
    g0 = g[sys.v0_mask]
    if not np.any(g0):
        return 0.0
    return float(math.sqrt(max(g0 @ factor.solve(g0), 0.0)))


def pressure_uniqueness_check(sys, traj, law=None, seed=0, tol=1e-12, residual_tol=1e-10,
                              inf_sup=None):
    """Re-solve every step's saddle system by Schur-complement CG from a random
    pressure start and compare pressures against the inf-sup bound.

    The friction multiplier of each step enters as known data. For any
    interior test field v, ``b(v, p' - p)`` equals the momentum residual
    difference plus ``A(u' - u)``, so ``alpha_b |p' - p|_Q`` is bounded by the
    V0-dual norm of those three terms.
    """
    k = traj.grid.k
    A = (sys.M / k + sys.K_a).tocsr()
    Af = SPDFactor(A)
    mask = sys.v0_mask
    K00 = SPDFactor(sys.K_V[mask][:, mask].tocsr())
    alpha = compute_inf_sup(sys) if inf_sup is None else inf_sup
    rng = np.random.default_rng(seed)
    rep = VerificationReport("pressure uniqueness")
    worst_p = None
    worst_r = None
    for n in range(1, traj.grid.N + 1):
        rhs = sys.M @ traj.u[n - 1] / k + traj.f[n - 1]
        if sys.n_slip and traj.xi:
            rhs = rhs - sys.T.T @ (sys.wgamma * traj.xi[n - 1])
        u, p = traj.u[n], traj.p[n - 1]
        p0 = p + rng.standard_normal(p.size)
        u2, p2, _ = solve_saddle_uzawa(A, -sys.B.T, rhs, None, tol=tol, mean=sys.mean_p,
                                       p0=p0, factor=Af)
        r1 = A @ u - sys.B.T @ p - rhs
        r2 = A @ u2 - sys.B.T @ p2 - rhs
        R = (_v0_dual(sys, A @ (u2 - u), K00) + _v0_dual(sys, r1, K00)
             + _v0_dual(sys, r2, K00))
        dp = sys.norm_Q(p2 - p)
        bound = R / alpha if alpha > 0 else math.inf
        c = Check(f"pressure_difference[n={n}]", dp, bound, 1e-8, 1e-14)
        if worst_p is None or c.margin < worst_p.margin:
            worst_p = c
        scale = max(np.linalg.norm(rhs), 1.0)
        rv0 = float(np.max(np.abs(r1[mask]))) / scale if mask.any() else 0.0
        c2 = Check(f"v0_residual[n={n}]", rv0, 10 * residual_tol)
        if worst_r is None or c2.margin < worst_r.margin:
            worst_r = c2
        rep.table.append({"n": n, "dp_Q": dp, "bound": bound, "v0_residual": rv0})
    rep.checks += [worst_p, worst_r]
    return rep


def uniqueness_restart(sys, law, u_prev, f_n, k, tol=1e-10, seed=0, scale=1.0):
    """Solve one step from zero and from a random initial slip/multiplier."""
    rng = np.random.default_rng(seed)
    a = step_solve(sys, law, u_prev, f_n, k, tol=tol)
    b = step_solve(sys, law, u_prev, f_n, k, tol=tol,
                   s0=scale * rng.standard_normal(sys.n_slip),
                   lam0=scale * rng.standard_normal(sys.n_slip))
    return a, b, float(np.max(np.abs(a.u - b.u)))


def minimizer_check(sys, law, u_prev, f_n, k, n_perturb=100, size=1e-4, seed=0, tol=1e-12):
    """Compare the step functional at the computed step against random nearby
    divergence-free admissible fields (dense null space of B, small meshes).

    Returns ``(violations, worst_gain, result)`` where ``worst_gain`` is the
    smallest ``J(u + dv) - J(u)`` over the samples.
    """
    from scipy.linalg import null_space
    from .rothe import step_objective
    res = step_solve(sys, law, u_prev, f_n, k, tol=tol)
    Z = null_space(sys.B.toarray())
    if Z.shape[1] == 0:
        raise ValueError("discrete divergence-free space is trivial on this mesh")
    rng = np.random.default_rng(seed)
    j0 = step_objective(sys, law, res.u, u_prev, f_n, k)
    gains = []
    for _ in range(n_perturb):
        dv = Z @ rng.standard_normal(Z.shape[1])
        dv *= size / np.linalg.norm(dv)
        gains.append(step_objective(sys, law, res.u + dv, u_prev, f_n, k) - j0)
    gains = np.array(gains)
    return int(np.sum(gains < 0)), float(gains.min()), res


__all__ = [
    "Check", "VerificationReport", "energy_quantities", "energy_bounds", "xi_bound",
    "energy_family", "bv2_seminorm", "bv2_partition", "lipschitz_pair", "lipschitz_check",
    "random_perturbation", "cauchy_study", "l2h_difference", "stokes_regression",
    "pressure_uniqueness_check", "uniqueness_restart", "minimizer_check", "build_interpolants",
]
