import math

import numpy as np
import pytest

from stokes_hvi.fespace import build_system
from stokes_hvi.fields import make_field
from stokes_hvi.friction import Quadratic, SlipWeakening
from stokes_hvi.mesh import build_rect_mesh
from stokes_hvi.rothe import Interpolants, SourceTerm, TimeGrid, build_interpolants, run
from stokes_hvi.spectral import constants_report
from stokes_hvi.verify import (Check, VerificationReport, bv2_partition, bv2_seminorm,
                               cauchy_study, energy_bounds, energy_family, energy_quantities,
                               inputs_digest, lipschitz_check, pressure_uniqueness_check,
                               stokes_regression, xi_bound)

L3 = SlipWeakening(1.0, 0.2, 0.5)
UP = make_field("indicator", ax=0.0, ay=1.0)


def source(sys, amp=40.0, **kw):
    return SourceTerm.from_field(sys, make_field("poly", ax=amp, **kw))


def test_check_semantics():
    assert Check("a", 1.0, 1.0).passed
    assert Check("a", 1.0 + 1e-9, 1.0, rel_tol=1e-8).passed
    assert not Check("a", 1.1, 1.0).passed
    assert not Check("a", float("nan"), 1.0).passed
    rep = VerificationReport("r")
    rep.add("x", 2.0, 1.0)
    assert not rep.passed and rep.failures()[0].name == "x" and rep["x"].margin == -1.0
    lines = rep.to_csv().splitlines()
    assert lines[0].startswith("check,lhs [1]")
    assert lines[1].split(",")[:3] == ["x", "2", "1"]


def test_digest_reproducible():
    a = [np.arange(3.0), np.ones(2)]
    assert inputs_digest(a, 0.5) == inputs_digest([x.copy() for x in a], 0.5)
    assert inputs_digest(a, 0.5) != inputs_digest(a, 0.25)


def test_energy_zero_data(sys4):
    traj = run(sys4, L3, make_field("zero"), SourceTerm.zero(sys4), TimeGrid(1.0, 4))
    assert energy_quantities(traj, sys4) == (0.0, 0.0, 0.0)
    m = constants_report(sys4, L3, 0.25).m_margin
    assert energy_bounds(traj, sys4, L3, m).passed


def test_energy_quantity_relations(sys4):
    traj = run(sys4, L3, UP, source(sys4), TimeGrid(1.0, 8))
    c1, c2, c3 = energy_quantities(traj, sys4)
    assert min(c1, c2, c3) >= 0
    N = traj.grid.N
    assert c2 >= sys4.norm_H(traj.u[-1] - traj.u[0]) ** 2 / N


def test_energy_family_linear_law(sys4):
    law = Quadratic(2.0)
    m = constants_report(sys4, law, 0.1).m_margin
    rep = energy_family(sys4, law, make_field("zero"), source(sys4), 1.0, (8, 16, 32, 64, 128), m)
    assert rep["C1_variation"].passed and rep["C3_variation"].passed
    assert all(c.passed for c in rep.checks if c.name.startswith(("summed", "xi")))
    # the increment sum is bounded but shrinks with k, see the acceptance notes
    c2 = [row["C2"] for row in rep.table]
    assert all(b < a for a, b in zip(c2, c2[1:]))


def test_xi_bound_per_run(sys4):
    traj = run(sys4, L3, UP, source(sys4, 200.0, time="sin", rate=4.0), TimeGrid(1.0, 16))
    rep = xi_bound(traj, sys4, L3)
    assert rep.passed


def test_bv2_constant_trajectory(sys4):
    u = np.ones(sys4.n_free)
    it = Interpolants(TimeGrid(1.0, 3), np.array([u] * 4), np.zeros((3, sys4.n_slip)),
                      np.zeros((3, sys4.n_free)))
    val, bound = bv2_seminorm(it, sys4)
    assert val == 0.0 and bound == 0.0


def test_bv2_single_jump(sys4):
    d = np.random.default_rng(0).standard_normal(sys4.n_free)
    d /= sys4.dual_V(sys4.M @ d)
    z = np.zeros(sys4.n_free)
    it = Interpolants(TimeGrid(1.0, 2), np.array([z, z, d]), np.zeros((2, sys4.n_slip)),
                      np.zeros((2, sys4.n_free)))
    val, bound = bv2_seminorm(it, sys4)
    assert val == pytest.approx(1.0, rel=1e-12)
    assert val <= bound


def test_bv2_node_partition_dominates(sys4):
    traj = run(sys4, L3, UP, source(sys4, 100.0, time="sin", rate=9.0), TimeGrid(1.0, 12))
    interp = build_interpolants(traj)
    val, bound = bv2_seminorm(interp, sys4)
    assert val <= bound
    rng = np.random.default_rng(5)
    assert bv2_partition(interp, sys4, range(1, 13)) <= val * (1 + 1e-12)
    for _ in range(10):
        keep = sorted({1, 12} | set(rng.choice(np.arange(2, 12), size=4, replace=False)))
        assert bv2_partition(interp, sys4, keep) <= val * (1 + 1e-12)


def test_bv2_monotone_ramp_prefers_coarse_partition(sys4):
    d = np.random.default_rng(1).standard_normal(sys4.n_free)
    d /= sys4.dual_V(sys4.M @ d)
    N = 8
    nodes = np.array([min(n, N) / N * d for n in range(N + 1)])
    nodes[0] = nodes[1]
    it = Interpolants(TimeGrid(1.0, N), nodes, np.zeros((N, sys4.n_slip)),
                      np.zeros((N, sys4.n_free)))
    val, _ = bv2_seminorm(it, sys4)
    # straight path from u_1 to u_N: one increment of size (N-1)/N
    assert val == pytest.approx(((N - 1) / N) ** 2, rel=1e-12)
    assert bv2_partition(it, sys4, range(1, N + 1)) < val


def test_lipschitz_identical_and_initial_only(sys4):
    grid = TimeGrid(1.0, 4)
    m = constants_report(sys4, L3, grid.k).m_margin
    f = source(sys4, 100.0)
    rep = lipschitz_check(sys4, L3, grid, (UP, f), (UP, f), m)
    assert rep.passed and rep.checks[0].lhs == 0.0 and rep.checks[0].rhs == 0.0
    from stokes_hvi.verify import lipschitz_pair
    u0 = sys4.M_factor.solve(sys4.load_field(UP))
    _, lhs, rhs = lipschitz_pair(sys4, L3, grid, (u0, f), (0.5 * u0, f), m)
    assert lhs[0] == rhs[0] > 0
    assert np.all(lhs <= rhs * (1 + 1e-8) + 1e-12)


def test_lipschitz_scaled_load_graceful(sys4):
    grid = TimeGrid(1.0, 4)
    m = constants_report(sys4, L3, grid.k).m_margin
    f = source(sys4, 50.0)
    g = SourceTerm(lambda t: 3.0 * f(t))
    rep = lipschitz_check(sys4, L3, grid, (UP, f), (UP, g), m)
    assert all(np.isfinite([c.lhs, c.rhs]).all() for c in rep.checks)
    assert rep.passed


def test_lipschitz_refuses_negative_margin(sys4):
    with pytest.raises(ValueError, match="refused"):
        lipschitz_check(sys4, L3, TimeGrid(1.0, 4), (UP, source(sys4)), (UP, source(sys4)), -0.1)


def test_cauchy_linear_first_order(sys4):
    rep = cauchy_study(sys4, None, UP, source(sys4, 150.0, time="sin", rate=6.0), 1.0, 8, 3)
    ratios = [b / a for a, b in zip(rep.e, rep.e[1:])]
    assert rep.passed
    assert all(0.4 < r < 0.65 for r in ratios)


def test_cauchy_zero_data(sys4):
    rep = cauchy_study(sys4, L3, make_field("zero"), SourceTerm.zero(sys4), 1.0, 4, 2)
    assert rep.e == [0.0, 0.0] and rep.passed


def test_cauchy_needs_two_halvings(sys4):
    with pytest.raises(ValueError):
        cauchy_study(sys4, L3, UP, source(sys4), 1.0, 4, 1)


def test_steady_regression_error_independent_of_k():
    # on a coarse mesh the spatial error dwarfs the O(k) smoothing of the initial projection
    s = build_system(build_rect_mesh(2, 2), 1.0)
    rep = stokes_regression(s, T_final=1.0, Ns=(64, 128, 256), steady=True)
    errs = rep.errors
    assert max(errs) - min(errs) <= 0.02 * max(errs)
    assert rep.passed


def test_pressure_uniqueness_linear_law(sys2):
    traj = run(sys2, Quadratic(1.0), UP, source(sys2, 60.0), TimeGrid(1.0, 4), tol=1e-12)
    rep = pressure_uniqueness_check(sys2, traj, Quadratic(1.0))
    assert rep.passed
    assert max(row["dp_Q"] for row in rep.table) <= 1e-8
