"""Deterministic linear algebra kernels.

Matrices are ``scipy.sparse`` CSR matrices (or dense ndarrays where noted),
vectors are 1-D float64 ndarrays. Systems below ``DENSE_LIMIT`` unknowns are
factorized densely; larger SPD systems go through Jacobi-preconditioned CG.
"""

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_LIMIT = 2000


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=np.nan, iterations=0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class InfSupError(RuntimeError):
    """Discrete pressure space has a null mode of the divergence operator."""

    def __init__(self, message, mode):
        super().__init__(message)
        self.mode = mode


def as_csr(A):
    if sp.issparse(A):
        A = A.tocsr()
        A.sum_duplicates()
        A.sort_indices()
        return A
    return sp.csr_matrix(np.asarray(A, dtype=float))


def is_symmetric(A, rtol=1e-12):
    A = as_csr(A)
    scale = abs(A).max() if A.nnz else 0.0
    if scale == 0.0:
        return True
    return abs(A - A.T).max() <= rtol * scale


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} has non-finite entries")


class SPDFactor:
    """Reusable factorization of an SPD matrix.

    Dense Cholesky below ``DENSE_LIMIT`` unknowns, sparse LU (SuperLU) above.
    """

    def __init__(self, K):
        self.n = K.shape[0]
        if self.n == 0:
            self._solve = lambda b: np.zeros_like(b)
        elif self.n < DENSE_LIMIT:
            Kd = K.toarray() if sp.issparse(K) else np.asarray(K, dtype=float)
            try:
                cf = sla.cho_factor(Kd, lower=True, check_finite=True)
            except sla.LinAlgError as exc:
                raise np.linalg.LinAlgError("matrix is not positive definite") from exc
            self._solve = lambda b: sla.cho_solve(cf, b, check_finite=False)
        else:
            lu = spla.splu(sp.csc_matrix(K), permc_spec="COLAMD")
            self._solve = lu.solve

    def solve(self, b):
        return self._solve(np.asarray(b, dtype=float))

    __call__ = solve


def _pcg(K, rhs, tol, max_iter, x0=None):
    """Jacobi-preconditioned CG with a fixed reduction order."""
    n = rhs.shape[0]
    d = K.diagonal()
    if np.any(d <= 0):
        raise np.linalg.LinAlgError("matrix is not positive definite (non-positive diagonal)")
    dinv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = rhs - K @ x
    bnorm = np.linalg.norm(rhs)
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for it in range(max_iter):
        if np.linalg.norm(r) <= tol * bnorm:
            return x, it
        Kp = K @ p
        pKp = p @ Kp
        if pKp <= 0:
            raise np.linalg.LinAlgError("matrix is not positive definite (negative curvature in CG)")
        a = rz / pKp
        x += a * p
        r -= a * Kp
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(rhs - K @ x) / bnorm
    if res <= tol:
        return x, max_iter
    raise ConvergenceError("CG did not converge", residual=res, iterations=max_iter)


def solve_spd(K, rhs, tol=1e-12, max_iter=10000):
    """Solve ``K x = rhs`` for SPD ``K`` to relative residual ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    rhs = np.asarray(rhs, dtype=float)
    _check_finite(rhs, "rhs")
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros_like(rhs)
    K = as_csr(K)
    if K.shape[0] < DENSE_LIMIT:
        x = SPDFactor(K).solve(rhs)
        res = np.linalg.norm(K @ x - rhs) / bnorm
        if res > tol:
            # one step of iterative refinement before giving up
            x = x + SPDFactor(K).solve(rhs - K @ x)
            res = np.linalg.norm(K @ x - rhs) / bnorm
            if res > tol:
                raise ConvergenceError("dense Cholesky solve missed tolerance", residual=res)
        return x
    x, _ = _pcg(K, rhs, tol, max_iter)
    return x


def dual_norm(K, g, tol=1e-12, factor=None):
    """Discrete dual norm ``sqrt(g^T K^{-1} g)`` for the Gram matrix ``K``."""
    g = np.asarray(g, dtype=float)
    if not np.any(g):
        return 0.0
    x = factor.solve(g) if factor is not None else solve_spd(K, g, tol=tol)
    return float(np.sqrt(max(g @ x, 0.0)))


class SaddleSolver:
    """Factorized solver for ``[K Bt c; Bt^T 0 m; 0 m^T 0]``.

    The last row/column is a Lagrange multiplier pinning ``m @ p = 0``;
    omitted when ``mean`` is None.
    """

    def __init__(self, K, Bt, mean=None):
        K = as_csr(K)
        Bt = as_csr(Bt)
        self.nu, self.np_ = Bt.shape
        blocks = [[K, Bt], [Bt.T, None]]
        self.has_mean = mean is not None and self.np_ > 0
        if self.has_mean:
            m = sp.csr_matrix(np.asarray(mean, dtype=float).reshape(-1, 1))
            blocks = [[K, Bt, None], [Bt.T, None, m], [None, m.T, None]]
        if self.np_ == 0:
            self.A = K
        else:
            self.A = sp.bmat(blocks, format="csc")
        try:
            self._lu = spla.splu(sp.csc_matrix(self.A), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise InfSupError(f"saddle matrix is singular: {exc}", mode=None) from exc

    def solve(self, rhs_u, rhs_p=None):
        rhs_u = np.asarray(rhs_u, dtype=float)
        rhs_p = np.zeros(self.np_) if rhs_p is None else np.asarray(rhs_p, dtype=float)
        parts = [rhs_u, rhs_p] + ([np.zeros(1)] if self.has_mean else [])
        x = self._lu.solve(np.concatenate(parts))
        return x[: self.nu], x[self.nu: self.nu + self.np_]

    def residual(self, u, p, rhs_u, rhs_p=None):
        rhs_p = np.zeros(self.np_) if rhs_p is None else rhs_p
        x = np.concatenate([u, p] + ([np.zeros(1)] if self.has_mean else []))
        b = np.concatenate([rhs_u, rhs_p] + ([np.zeros(1)] if self.has_mean else []))
        r = self.A @ x - b
        return r[: self.nu], r[self.nu: self.nu + self.np_]


def pressure_null_modes(K, Bt, mean=None, rtol=1e-10):
    """Pressure modes ``q`` (orthogonal to ``mean``) with ``Bt q`` K^{-1}-null.

    Dense; meant for diagnostics on small systems. Returns an array with one
    mode per column (possibly zero columns).
    """
    K = as_csr(K)
    Bt = as_csr(Bt)
    n_p = Bt.shape[1]
    if n_p == 0:
        return np.zeros((0, 0))
    Kf = SPDFactor(K)
    Btd = Bt.toarray()
    S = Btd.T @ Kf.solve(Btd)
    S = 0.5 * (S + S.T)
    if mean is not None:
        m = np.asarray(mean, dtype=float)
        m = m / np.linalg.norm(m)
        # restrict to the complement of the mean functional
        Q, _ = np.linalg.qr(np.column_stack([m, np.eye(n_p)[:, : n_p - 1]]))
        Z = Q[:, 1:]
        S = Z.T @ S @ Z
    else:
        Z = np.eye(n_p)
    evals, evecs = np.linalg.eigh(S)
    scale = max(abs(evals).max(), 1.0) if evals.size else 1.0
    null = evals <= rtol * scale
    return Z @ evecs[:, null]


def solve_saddle(K, Bt, rhs_u, rhs_p, tol=1e-10, mean=None, check_rank=True):
    """Solve ``[K Bt; Bt^T 0][u; p] = [rhs_u; rhs_p]`` with ``mean @ p = 0``.

    ``mean`` defaults to the all-ones functional; ``mean=False`` drops the
    constraint for pressure blocks without a constant null mode. Raises
    ``InfSupError`` if the pressure block is rank deficient on mean-free
    pressures.
    """
    rhs_u = np.asarray(rhs_u, dtype=float)
    Bt = as_csr(Bt)
    if Bt.shape[1] == 0:
        return solve_spd(K, rhs_u, tol=tol), np.zeros(0)
    rhs_p = np.zeros(Bt.shape[1]) if rhs_p is None else np.asarray(rhs_p, dtype=float)
    if mean is False:
        mean = None
    elif mean is None:
        mean = np.ones(Bt.shape[1])
    if check_rank and Bt.shape[1] < DENSE_LIMIT:
        modes = pressure_null_modes(K, Bt, mean)
        if modes.shape[1]:
            q = modes[:, 0]
            worst = int(np.argmax(abs(q)))
            raise InfSupError(
                f"{modes.shape[1]} null pressure mode(s); first mode peaks at pressure DOF {worst}",
                mode=q,
            )
    solver = SaddleSolver(K, Bt, mean)
    u, p = solver.solve(rhs_u, rhs_p)
    ru, rp = solver.residual(u, p, rhs_u, rhs_p)
    scale = max(np.linalg.norm(rhs_u) + np.linalg.norm(rhs_p), 1e-300)
    res = np.hypot(np.linalg.norm(ru), np.linalg.norm(rp)) / scale
    if res > tol:
        raise ConvergenceError("saddle-point solve missed tolerance", residual=res)
    return u, p


def solve_saddle_uzawa(K, Bt, rhs_u, rhs_p=None, tol=1e-12, mean=None, p0=None,
                       max_iter=5000, factor=None):
    """Schur-complement CG (Uzawa-type) solve of the same saddle system.

    An independent route to ``solve_saddle``: velocity solves reuse an SPD
    factorization of ``K``, the pressure iterates live on ``mean @ p = 0``.
    Returns ``(u, p, iterations)``.
    """
    Bt = as_csr(Bt)
    n_p = Bt.shape[1]
    Kf = factor if factor is not None else SPDFactor(as_csr(K))
    rhs_u = np.asarray(rhs_u, dtype=float)
    rhs_p = np.zeros(n_p) if rhs_p is None else np.asarray(rhs_p, dtype=float)
    m = np.ones(n_p) if mean is None else np.asarray(mean, dtype=float)
    mm = m @ m

    def proj(q):
        return q - (m @ q) / mm * m

    # S p = Bt^T K^{-1} rhs_u - rhs_p with S = Bt^T K^{-1} Bt
    def S(q):
        return Bt.T @ Kf.solve(Bt @ q)

    b = proj(Bt.T @ Kf.solve(rhs_u) - rhs_p)
    p = proj(np.zeros(n_p) if p0 is None else np.asarray(p0, dtype=float))
    r = b - proj(S(p))
    d = r.copy()
    rr = r @ r
    bnorm = max(np.linalg.norm(b), 1e-300)
    it = 0
    while np.sqrt(rr) > tol * bnorm and it < max_iter:
        Sd = proj(S(d))
        a = rr / (d @ Sd)
        p += a * d
        r -= a * Sd
        rr_new = r @ r
        d = r + (rr_new / rr) * d
        rr = rr_new
        it += 1
    if np.sqrt(rr) > tol * bnorm:
        raise ConvergenceError("Uzawa/Schur CG did not converge", residual=np.sqrt(rr) / bnorm,
                               iterations=it)
    u = Kf.solve(rhs_u - Bt @ p)
    return u, p, it


def _k_orthonormalize(Y, K, drop=1e-13):
    G = Y.T @ (K @ Y)
    G = 0.5 * (G + G.T)
    d, V = np.linalg.eigh(G)
    keep = d > drop * max(d.max(), 1e-300)
    return (Y @ V[:, keep]) / np.sqrt(d[keep])


def gen_eig_extreme(Kmat, Bmat, which="largest", tol=1e-10, max_iter=20000, block=8, seed=0):
    """Extreme eigenpair of the pencil ``Bmat x = theta Kmat x``.

    Subspace (block power) iteration on ``Kmat^{-1} Bmat`` in the Kmat inner
    product with Rayleigh-Ritz extraction. ``which="largest"`` returns
    ``(theta_max, x)``; ``which="smallest-positive"`` returns
    ``(1/theta_max, x)``, the smallest positive ``lam`` of
    ``Kmat x = lam Bmat x``. ``x`` is normalized to unit Kmat-norm.
    """
    if which not in ("largest", "smallest-positive"):
        raise ValueError(f"unknown selector {which!r}")
    K = as_csr(Kmat)
    B = as_csr(Bmat)
    if B.nnz == 0 or abs(B).max() == 0.0:
        raise ValueError("semidefinite operator has empty positive spectrum")
    n = K.shape[0]
    Kf = SPDFactor(K)
    rng = np.random.default_rng(seed)
    p = min(block, n)
    X = _k_orthonormalize(rng.standard_normal((n, p)), K)
    theta = np.nan
    res = np.inf
    for it in range(1, max_iter + 1):
        Y = Kf.solve(B @ X)
        if Y.ndim == 1:
            Y = Y[:, None]
        if not np.any(Y):
            raise ValueError("semidefinite operator has empty positive spectrum")
        Z = _k_orthonormalize(Y, K)
        H = Z.T @ (B @ Z)
        H = 0.5 * (H + H.T)
        w, C = np.linalg.eigh(H)
        order = np.argsort(w)[::-1]
        X = Z @ C[:, order]
        theta = w[order[0]]
        x = X[:, 0]
        Kx = K @ x
        res = np.linalg.norm(B @ x - theta * Kx) / max(theta * np.linalg.norm(Kx), 1e-300)
        if theta <= 0:
            raise ValueError("semidefinite operator has empty positive spectrum")
        if res <= tol:
            break
    else:
        raise ConvergenceError("subspace iteration did not converge", residual=res,
                               iterations=max_iter)
    x = x / np.sqrt(x @ (K @ x))
    # fixed sign convention for reproducibility
    if x[np.argmax(abs(x))] < 0:
        x = -x
    if which == "largest":
        return float(theta), x
    return float(1.0 / theta), x
