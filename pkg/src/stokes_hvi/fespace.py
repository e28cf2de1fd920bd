"""Taylor-Hood (P2 velocity / P1 pressure) spaces and operator assembly.

Velocity DOFs are interleaved per P2 node: ``2*node + component``. Nodes
``0..nv-1`` are mesh vertices, the rest are edge midpoints. All assembled
operators in :class:`DiscreteSystem` are restricted to the *free* velocity
DOFs; homogeneous constraints are eliminated by dropping rows and columns.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .linalg import SPDFactor
from .mesh import DIRICHLET, SLIP

# 6-point degree-4 rule on the reference triangle (barycentric coordinates)
_A1, _B1, _W1 = 0.445948490915964886318, 0.108103018168070227363, 0.223381589678011465944
_A2, _B2, _W2 = 0.091576213509770743460, 0.816847572980458513080, 0.109951743655321867389
QUAD_BARY = np.array([
    [_B1, _A1, _A1], [_A1, _B1, _A1], [_A1, _A1, _B1],
    [_B2, _A2, _A2], [_A2, _B2, _A2], [_A2, _A2, _B2],
])
QUAD_W = np.array([_W1] * 3 + [_W2] * 3)

# local P2 node order: three vertices, then midpoints of edges (0,1), (1,2), (2,0)
_EDGE_PAIRS = ((0, 1), (1, 2), (2, 0))


def _p2_values(lam):
    """P2 shape functions at barycentric points ``lam`` (nq, 3) -> (nq, 6)."""
    v = [lam[:, i] * (2 * lam[:, i] - 1) for i in range(3)]
    e = [4 * lam[:, i] * lam[:, j] for i, j in _EDGE_PAIRS]
    return np.column_stack(v + e)


def _p2_bary_derivs(lam):
    """d N_a / d lam_i at points, shape (nq, 6, 3)."""
    nq = lam.shape[0]
    D = np.zeros((nq, 6, 3))
    for i in range(3):
        D[:, i, i] = 4 * lam[:, i] - 1
    for a, (i, j) in enumerate(_EDGE_PAIRS):
        D[:, 3 + a, i] = 4 * lam[:, j]
        D[:, 3 + a, j] = 4 * lam[:, i]
    return D


@dataclass(eq=False)
class DofMap:
    n_vertices: int
    edges: np.ndarray            # (ne, 2) sorted vertex pairs
    cell_nodes: np.ndarray       # (nt, 6) P2 node ids per triangle
    node_coords: np.ndarray      # (n_nodes, 2)
    free: np.ndarray             # global velocity DOFs kept in the system
    dirichlet: np.ndarray        # global DOFs fixed by u = 0 on Gamma_D
    slip_normal: np.ndarray      # global DOFs fixed by u.n = 0 on Gamma_S
    slip_nodes: np.ndarray       # P2 nodes carrying a tangential trace value
    slip_dofs: np.ndarray        # global DOF of the tangential component per slip node
    slip_sign: np.ndarray        # +1/-1 orientation of the tangent per slip node
    slip_weights: np.ndarray     # lumped boundary mass per slip node
    boundary_nodes: np.ndarray   # all P2 nodes on the boundary
    n_pressure: int

    @property
    def n_nodes(self):
        return len(self.node_coords)

    @property
    def n_velocity(self):
        return 2 * self.n_nodes

    @property
    def n_free(self):
        return len(self.free)

    def interior_free_mask(self):
        """Mask over free DOFs selecting the V_0 (all-boundary-fixed) subset."""
        on_bnd = np.zeros(self.n_nodes, dtype=bool)
        on_bnd[self.boundary_nodes] = True
        return ~on_bnd[self.free // 2]


def build_spaces(m):
    nv = m.n_vertices
    tri = m.triangles
    local_edges = np.stack([np.sort(tri[:, [i, j]], axis=1) for i, j in _EDGE_PAIRS], axis=1)
    edges, inverse = np.unique(local_edges.reshape(-1, 2), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1, 3)
    cell_nodes = np.hstack([tri, nv + inverse])
    node_coords = np.vstack([m.vertices, 0.5 * (m.vertices[edges[:, 0]] + m.vertices[edges[:, 1]])])
    edge_index = {(int(a), int(b)): nv + i for i, (a, b) in enumerate(edges)}

    n_nodes = len(node_coords)
    is_dir = np.zeros(n_nodes, dtype=bool)
    normal_fixed = np.zeros((n_nodes, 2), dtype=bool)
    normal_of = {}
    weights = np.zeros(n_nodes)
    on_boundary = np.zeros(n_nodes, dtype=bool)
    lengths = m.edge_lengths()
    for (a, b), tag, nrm, h in zip(m.boundary_edges, m.edge_tags, m.edge_normals, lengths):
        a, b = int(a), int(b)
        c = edge_index[(min(a, b), max(a, b))]
        nodes = (a, b, c)
        on_boundary[list(nodes)] = True
        if tag == DIRICHLET:
            is_dir[list(nodes)] = True
        else:
            comp = 0 if abs(nrm[0]) > 0.5 else 1
            for nd in nodes:
                normal_fixed[nd, comp] = True
                normal_of.setdefault(nd, tuple(nrm))
            # Simpson lumping of the P2 edge mass
            weights[a] += h / 6.0
            weights[b] += h / 6.0
            weights[c] += 2.0 * h / 3.0

    fixed = np.zeros((n_nodes, 2), dtype=bool)
    fixed[is_dir] = True
    fixed |= normal_fixed
    dofs = np.arange(2 * n_nodes).reshape(n_nodes, 2)
    dirichlet = dofs[is_dir].ravel()
    slip_normal = dofs[normal_fixed & ~is_dir[:, None]]
    free = dofs[~fixed]

    slip_nodes, slip_dofs, slip_sign = [], [], []
    for nd in sorted(normal_of):
        if is_dir[nd] or normal_fixed[nd].all():
            continue
        nx_, ny_ = normal_of[nd]
        tx, ty = -ny_, nx_       # tangent: normal rotated by +90 degrees
        comp = 0 if abs(tx) > 0.5 else 1
        slip_nodes.append(nd)
        slip_dofs.append(dofs[nd, comp])
        slip_sign.append(np.sign(tx if comp == 0 else ty))
    slip_nodes = np.array(slip_nodes, dtype=np.int64)
    return DofMap(
        n_vertices=nv,
        edges=edges,
        cell_nodes=cell_nodes,
        node_coords=node_coords,
        free=free.astype(np.int64),
        dirichlet=dirichlet.astype(np.int64),
        slip_normal=slip_normal.astype(np.int64),
        slip_nodes=slip_nodes,
        slip_dofs=np.array(slip_dofs, dtype=np.int64),
        slip_sign=np.array(slip_sign, dtype=float),
        slip_weights=weights[slip_nodes] if len(slip_nodes) else np.zeros(0),
        boundary_nodes=np.flatnonzero(on_boundary),
        n_pressure=nv,
    )


def _geometry(m):
    p = m.vertices[m.triangles]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns = edge vectors
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    # gradients of lam_1, lam_2 are the rows of J^{-1}
    g1 = np.stack([J[:, 1, 1], -J[:, 0, 1]], axis=1) / det[:, None]
    g2 = np.stack([-J[:, 1, 0], J[:, 0, 0]], axis=1) / det[:, None]
    grad_lam = np.stack([-g1 - g2, g1, g2], axis=1)
    return 0.5 * det, grad_lam


@dataclass(eq=False)
class DiscreteSystem:
    """Assembled operators restricted to the free velocity DOFs."""

    mesh: object
    dofmap: DofMap
    mu: float
    K_V: sp.csr_matrix           # (eps(u), eps(v))
    K_a: sp.csr_matrix           # 2 mu K_V
    B: sp.csr_matrix             # (n_p, n_free), b(v, q) = q^T B v
    M: sp.csr_matrix             # velocity L2 mass
    M_Q: sp.csr_matrix           # pressure L2 mass
    T: sp.csr_matrix             # free DOFs -> tangential nodal values on Gamma_S
    wgamma: np.ndarray           # lumped boundary mass per slip node
    mean_p: np.ndarray           # integral of each pressure basis function
    load_op: sp.csr_matrix       # quadrature values (fx..., fy...) -> free load vector
    eval_op: sp.csr_matrix       # free coefficients -> quadrature values (ux..., uy...)
    quad_points: np.ndarray
    quad_weights: np.ndarray
    p_eval_op: sp.csr_matrix     # pressure coefficients -> quadrature values
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_free(self):
        return self.K_V.shape[0]

    @property
    def n_pressure(self):
        return self.B.shape[0]

    @property
    def n_slip(self):
        return self.T.shape[0]

    @cached_property
    def boundary_gram(self):
        """T^T diag(w) T, the lumped tangential trace Gram matrix."""
        return (self.T.T @ sp.diags(self.wgamma) @ self.T).tocsr()

    @cached_property
    def K_V_factor(self):
        return SPDFactor(self.K_V)

    @cached_property
    def M_factor(self):
        return SPDFactor(self.M)

    @cached_property
    def v0_mask(self):
        return self.dofmap.interior_free_mask()

    @cached_property
    def slip_measure(self):
        return float(self.wgamma.sum())

    # norms -------------------------------------------------------------
    def norm_H(self, v):
        return float(np.sqrt(max(v @ (self.M @ v), 0.0)))

    def norm_V(self, v):
        return float(np.sqrt(max(v @ (self.K_V @ v), 0.0)))

    def norm_Q(self, q):
        return float(np.sqrt(max(q @ (self.M_Q @ q), 0.0)))

    def norm_S(self, s):
        return float(np.sqrt(max(np.sum(self.wgamma * s * s), 0.0)))

    def dual_V(self, g):
        """||g||_{V*} for a load vector g over free DOFs."""
        if not np.any(g):
            return 0.0
        return float(np.sqrt(max(g @ self.K_V_factor.solve(g), 0.0)))

    # fields -----------------------------------------------------------
    def load(self, fx, fy):
        """Load vector of the body force sampled at quadrature points."""
        return self.load_op @ np.concatenate([np.broadcast_to(fx, self.quad_weights.shape),
                                               np.broadcast_to(fy, self.quad_weights.shape)])

    def load_field(self, func, *args):
        x, y = self.quad_points[:, 0], self.quad_points[:, 1]
        fx, fy = func(x, y, *args)
        return self.load(fx, fy)

    def interpolate(self, func, *args):
        """Nodal interpolant of a vector field, restricted to free DOFs."""
        X = self.dofmap.node_coords
        ux, uy = func(X[:, 0], X[:, 1], *args)
        full = np.column_stack([np.broadcast_to(ux, X[:, 0].shape),
                                np.broadcast_to(uy, X[:, 0].shape)]).ravel()
        return full[self.dofmap.free]

    def expand(self, v):
        """Free coefficients -> full velocity coefficient vector."""
        full = np.zeros(self.dofmap.n_velocity)
        full[self.dofmap.free] = v
        return full

    def vertex_velocity(self, v):
        return self.expand(v).reshape(-1, 2)[: self.dofmap.n_vertices]

    def eval_at_quad(self, v):
        vals = self.eval_op @ v
        n = len(self.quad_weights)
        return vals[:n], vals[n:]


def assemble(m, dm, mu):
    if not mu > 0:
        raise ValueError("viscosity mu must be positive")
    area, grad_lam = _geometry(m)
    nt = len(area)
    nq = len(QUAD_W)
    N = _p2_values(QUAD_BARY)                       # (nq, 6)
    dN = _p2_bary_derivs(QUAD_BARY)                 # (nq, 6, 3)
    G = np.einsum("qai,tid->tqad", dN, grad_lam)    # (nt, nq, 6, 2)
    L = QUAD_BARY                                   # P1 values (nq, 3)
    wq = area[:, None] * QUAD_W[None, :]            # (nt, nq)

    # strain inner product: 1/2 [delta_cd grad Na . grad Nb + d_d Na d_c Nb]
    gg = np.einsum("tq,tqai,tqbi->tab", wq, G, G)
    cross = np.einsum("tq,tqad,tqbc->tacbd", wq, G, G)   # d_d Na * d_c Nb
    Kloc = np.zeros((nt, 6, 2, 6, 2))
    for c in range(2):
        Kloc[:, :, c, :, c] += 0.5 * gg
    Kloc += 0.5 * cross
    Kloc = Kloc.reshape(nt, 12, 12)

    mass = np.einsum("tq,qa,qb->tab", wq, N, N)
    Mloc = np.zeros((nt, 6, 2, 6, 2))
    for c in range(2):
        Mloc[:, :, c, :, c] = mass
    Mloc = Mloc.reshape(nt, 12, 12)

    Bloc = np.einsum("tq,qi,tqac->tiac", wq, L, G).reshape(nt, 3, 12)
    MQloc = np.einsum("tq,qi,qj->tij", wq, L, L)

    vd = (2 * dm.cell_nodes[:, :, None] + np.arange(2)[None, None, :]).reshape(nt, 12)
    pd = m.triangles
    nvel = dm.n_velocity
    npr = dm.n_pressure

    def coo(loc, rows, cols, shape):
        r = np.broadcast_to(rows[:, :, None], loc.shape).ravel()
        c = np.broadcast_to(cols[:, None, :], loc.shape).ravel()
        A = sp.coo_matrix((loc.ravel(), (r, c)), shape=shape).tocsr()
        A.sum_duplicates()
        A.sort_indices()
        return A

    K_full = coo(Kloc, vd, vd, (nvel, nvel))
    M_full = coo(Mloc, vd, vd, (nvel, nvel))
    B_full = coo(Bloc, pd, vd, (npr, nvel))
    M_Q = coo(MQloc, pd, pd, (npr, npr))
    mean_p = np.zeros(npr)
    np.add.at(mean_p, pd.ravel(), np.repeat(area / 3.0, 3))

    free = dm.free
    K_V = K_full[free][:, free].tocsr()
    K_V = (0.5 * (K_V + K_V.T)).tocsr()
    M = M_full[free][:, free].tocsr()
    M = (0.5 * (M + M.T)).tocsr()
    B = B_full[:, free].tocsr()

    pos = -np.ones(nvel, dtype=np.int64)
    pos[free] = np.arange(len(free))
    ns = len(dm.slip_dofs)
    T = sp.csr_matrix((dm.slip_sign, (np.arange(ns), pos[dm.slip_dofs])), shape=(ns, len(free)))

    # quadrature-point operators
    qrow = (np.arange(nt)[:, None] * nq + np.arange(nq)[None, :])      # (nt, nq)
    nqt = nt * nq
    rows, cols, vals = [], [], []
    for c in range(2):
        r = np.broadcast_to(qrow[:, :, None], (nt, nq, 6)) + c * nqt
        col = np.broadcast_to(2 * dm.cell_nodes[:, None, :] + c, (nt, nq, 6))
        v = np.broadcast_to(N[None, :, :], (nt, nq, 6))
        rows.append(r.ravel()); cols.append(col.ravel()); vals.append(v.ravel())
    E_full = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(2 * nqt, nvel)).tocsr()
    E = E_full[:, free].tocsr()
    w_flat = wq.ravel()
    load_op = (E.T @ sp.diags(np.concatenate([w_flat, w_flat]))).tocsr()
    Pr = np.broadcast_to(qrow[:, :, None], (nt, nq, 3)).ravel()
    Pc = np.broadcast_to(pd[:, None, :], (nt, nq, 3)).ravel()
    Pv = np.broadcast_to(L[None, :, :], (nt, nq, 3)).ravel()
    p_eval = sp.coo_matrix((Pv, (Pr, Pc)), shape=(nqt, npr)).tocsr()

    bary = QUAD_BARY
    P = m.vertices[m.triangles]                       # (nt, 3, 2)
    qpts = np.einsum("qi,tid->tqd", bary, P).reshape(-1, 2)

    return DiscreteSystem(
        mesh=m, dofmap=dm, mu=float(mu),
        K_V=K_V, K_a=(2.0 * mu * K_V).tocsr(), B=B, M=M, M_Q=M_Q, T=T,
        wgamma=dm.slip_weights.copy(), mean_p=mean_p,
        load_op=load_op, eval_op=E, quad_points=qpts, quad_weights=w_flat,
        p_eval_op=p_eval,
    )


def assemble_full(m, dm, mu):
    """Unconstrained stiffness over all velocity DOFs (for null-space checks)."""
    sub = build_spaces(m)
    sub.free = np.arange(sub.n_velocity)
    sub.slip_dofs = np.zeros(0, dtype=np.int64)
    sub.slip_sign = np.zeros(0)
    sub.slip_weights = np.zeros(0)
    return assemble(m, sub, mu)


def tangential_trace(sys, v):
    """Tangential nodal values on Gamma_S of the free-DOF vector ``v``."""
    return sys.T @ np.asarray(v, dtype=float)


def build_system(m, mu):
    return assemble(m, build_spaces(m), mu)
