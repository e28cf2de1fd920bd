import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stokes_hvi.fespace import assemble_full, build_spaces, build_system, tangential_trace
from stokes_hvi.fields import manufactured
from stokes_hvi.linalg import SaddleSolver, gen_eig_extreme
from stokes_hvi.mesh import BoundarySpec, build_rect_mesh
from stokes_hvi.spectral import compute_lambda_tau, random_admissible

from conftest import LEFT_CLAMPED


def full_system(nx, ny, Lx=1.0, Ly=1.0):
    m = build_rect_mesh(nx, ny, Lx=Lx, Ly=Ly)
    return assemble_full(m, build_spaces(m), 1.0)


def test_classification_unit_square_left_clamped():
    dm = build_spaces(build_rect_mesh(1, 1, spec=LEFT_CLAMPED))
    X = dm.node_coords
    free = {(tuple(X[d // 2]), d % 2) for d in dm.free}
    expected = {((0.5, 0.0), 0), ((0.5, 1.0), 0), ((1.0, 0.5), 1),
                ((0.5, 0.5), 0), ((0.5, 0.5), 1)}
    assert free == expected
    slip = {tuple(X[n]) for n in dm.slip_nodes}
    assert slip == {(0.5, 0.0), (0.5, 1.0), (1.0, 0.5)}
    # every DOF is free, Dirichlet or normal-fixed, exactly once
    parts = np.concatenate([dm.free, dm.dirichlet, dm.slip_normal])
    assert np.array_equal(np.sort(parts), np.arange(dm.n_velocity))


def test_all_dirichlet_forced_has_no_slip():
    m = build_rect_mesh(2, 2, spec=BoundarySpec("D", "D", "D", "D"), strict=False)
    dm = build_spaces(m)
    assert dm.slip_nodes.size == 0
    assert dm.n_free == 2 * 9


def test_free_count_2x2():
    # 9 interior P2 nodes (two components) plus the tangential component of the
    # 3 bottom nodes away from the clamped corners
    assert build_spaces(build_rect_mesh(2, 2)).n_free == 2 * 9 + 3


def test_constant_field_divergence_free():
    s = full_system(3, 2)
    w = s.interpolate(lambda x, y: (np.full_like(x, 0.7), np.full_like(x, -1.3)))
    assert np.max(np.abs(s.B @ w)) <= 1e-14


def test_patch_divergence():
    s = full_system(3, 3)
    v = s.interpolate(lambda x, y: (x, -y))
    assert np.max(np.abs(s.B @ v)) <= 1e-14


def test_rigid_motions_in_kernel():
    s = full_system(2, 3)
    for f in (lambda x, y: (-y, x), lambda x, y: (np.ones_like(x), 0 * x)):
        v = s.interpolate(f)
        assert abs(v @ (s.K_a @ v)) <= 1e-13 * (v @ v)


def test_korn_with_dirichlet(sys2):
    ev = np.linalg.eigvalsh(sys2.K_a.toarray())
    assert ev.min() > 1e-3


def test_strain_energy_oracle():
    # (xy, y^2) on [0,2]x[0,1]: eps:eps = y^2 + x^2/2 + 4y^2, integral 14/3
    s = full_system(2, 2, Lx=2.0)
    v = s.interpolate(lambda x, y: (x * y, y**2))
    assert v @ (s.K_V @ v) == pytest.approx(14.0 / 3.0, rel=1e-13)


def test_divergence_integral_oracle():
    # b(v, q) = int q div v with v = (x^2, 0), q = y: integral of 2xy is 1/2
    s = full_system(2, 2)
    v = s.interpolate(lambda x, y: (x**2, 0 * x))
    q = s.mesh.vertices[:, 1]
    assert q @ (s.B @ v) == pytest.approx(0.5, rel=1e-13)


def test_operator_structure(sys4):
    s = sys4
    for A in (s.K_a, s.M, s.M_Q):
        assert abs(A - A.T).max() <= 1e-12 * abs(A).max()
    assert abs(s.K_a - 2.0 * s.mu * s.K_V).max() == 0.0
    assert np.all(s.wgamma > 0)
    assert s.mean_p @ np.ones(s.n_pressure) == pytest.approx(1.0, abs=1e-12)


def test_slip_measure_excludes_clamped_corners(sys4):
    # corner nodes belong to the Dirichlet part; the lumped mass misses one Simpson weight each
    h = 0.25
    assert sys4.wgamma.sum() == pytest.approx(1.0 - 2 * h / 6, rel=1e-14)


def test_trace_examples():
    s = build_system(build_rect_mesh(2, 2, spec=BoundarySpec("D", "D", "D", "S")), 1.0)
    assert not np.any(tangential_trace(s, np.zeros(s.n_free)))
    v = np.zeros(s.n_free)
    v[s.v0_mask] = 1.0
    assert not np.any(tangential_trace(s, v))
    shear = s.interpolate(lambda x, y: (y, 0 * x))
    X = s.dofmap.node_coords[s.dofmap.slip_nodes]
    # tangent on the top side is (-1, 0): the trace is minus the x-component
    np.testing.assert_allclose(tangential_trace(s, shear), -X[:, 1], atol=1e-15)


@pytest.mark.parametrize("n", [2, 4, 8])
def test_divergence_continuity_constant(n):
    s = build_system(build_rect_mesh(n, n), 1.0)
    Bd = s.B.toarray()
    S = Bd @ np.linalg.solve(s.K_V.toarray(), Bd.T)
    cb2, _ = gen_eig_extreme(s.M_Q, 0.5 * (S + S.T), "largest", tol=1e-12)
    # (tr eps)^2 <= 2 eps:eps in two dimensions
    assert 0.5 < np.sqrt(cb2) <= np.sqrt(2.0) + 1e-10


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_trace_inequality_random_fields(sys4, seed):
    lam = compute_lambda_tau(sys4)
    v = random_admissible(sys4, 1, seed=seed)[:, 0]
    lhs = sys4.norm_S(tangential_trace(sys4, v)) ** 2
    rhs = v @ (sys4.K_V @ v) / lam
    assert lhs <= rhs * (1 + 1e-10)


def test_steady_stokes_spatial_rate():
    errs = []
    for n in (4, 8):
        s = build_system(build_rect_mesh(n, n), 1.0)
        uex = manufactured("u", steady=True)
        f = s.load_field(manufactured("f", steady=True))
        u, _ = SaddleSolver(s.K_a, -s.B.T, s.mean_p).solve(f)
        ux, uy = s.eval_at_quad(u)
        x, y = s.quad_points.T
        ex, ey = uex(x, y)
        errs.append(np.sqrt(np.sum(s.quad_weights * ((ux - ex) ** 2 + (uy - ey) ** 2))))
    assert np.log2(errs[0] / errs[1]) > 2.7
