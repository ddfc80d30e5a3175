"""Problem instances, their operators, and analytic parameters.

All concrete problems here are affine: every per-sample operator has the
form ``F_ij(z) = J_ij @ z + b_ij`` with a constant Jacobian.  A handle
stores the stacked per-sample coefficients once and derives client and
full operators by averaging, which keeps evaluation, parameter
computation (mu, ell, ...), exact solutions, and oracle enumeration all
in one place.

Conventions: the joint variable is z = (x1, x2) with x1 the minimization
block and x2 the maximization block; the operator of a minimax objective
f is F = (grad_{x1} f, -grad_{x2} f).  Full operator F = (1/n) sum_i f_i,
client operator f_i = (1/m_i) sum_j F_ij.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import (
    DimensionError,
    NotCocoerciveError,
    NotMonotoneError,
    ParameterError,
    SingularMatrixError,
    UnsupportedProblemError,
)
from .numerics import RngStream, as_matrix, as_vector, solve_linear, spectrum

STAR_RESIDUAL_TOL = 1e-9


@dataclass(frozen=True)
class BlockDims:
    """Dimensions of a distributed minimax problem.

    d2 = 0 is allowed for operators without a maximization block.
    """

    d1: int
    d2: int
    n: int
    m: tuple[int, ...]

    def __post_init__(self):
        if self.d1 < 1 or self.d2 < 0:
            raise DimensionError(f"block dims must be positive, got ({self.d1}, {self.d2})")
        if self.n < 1:
            raise DimensionError(f"client count must be >= 1, got {self.n}")
        if len(self.m) != self.n or any(mi < 1 for mi in self.m):
            raise DimensionError("samples-per-client must list one positive count per client")

    @property
    def joint(self) -> int:
        """Dimension of z = (x1, x2)."""
        return self.d1 + self.d2

    @property
    def stacked(self) -> int:
        """Dimension of the stacked consensus variable."""
        return self.n * self.joint

    @property
    def total_samples(self) -> int:
        return sum(self.m)


@dataclass(frozen=True)
class QuadraticGame:
    """Per-sample quadratic minimax terms: quadratic in x1, coupled via B, concave in x2."""

    a_mats: np.ndarray  # (n, m, d1, d1), symmetric PSD
    b_mats: np.ndarray  # (n, m, d1, d2)
    c_mats: np.ndarray  # (n, m, d2, d2), symmetric PSD
    a_vecs: np.ndarray  # (n, m, d1)
    c_vecs: np.ndarray  # (n, m, d2)


@dataclass(frozen=True)
class RlsProblem:
    """Penalized robust least squares: min_beta max_y |A beta - y|^2 - lam |y - y0|^2."""

    a: np.ndarray  # (rows, cols)
    y0: np.ndarray  # (rows,)
    lam: float
    n: int

    def __post_init__(self):
        if self.lam <= 1.0:
            raise NotMonotoneError(f"rls penalty must exceed 1 for strong monotonicity, got {self.lam}")
        if self.a.shape[0] % self.n != 0:
            raise DimensionError(f"row count {self.a.shape[0]} not divisible by {self.n} clients")


@dataclass(frozen=True)
class BilinearProblem:
    """Per-client bilinear coupling with quadratic regularization of both blocks."""

    a_mats: np.ndarray  # (n, d2, d1)
    b_vecs: np.ndarray  # (n, d2)
    lam: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ParameterError(f"bilinear regularization must be positive, got {self.lam}")


@dataclass(frozen=True)
class ShiftedLinearProblem:
    """Clients share a linear map M but anchor it at different points x_i*."""

    m: np.ndarray  # (d, d)
    shifts: np.ndarray  # (n, d)


@dataclass(frozen=True)
class MatrixGame:
    """Per-client payoff matrices for a simplex-constrained bilinear game."""

    payoffs: np.ndarray  # (n, d, d)


@dataclass(frozen=True)
class ProblemParams:
    """Analytic operator parameters (None where undefined for the instance)."""

    mu: float | None
    mu_i: tuple[float, ...]
    ell: float | None
    ell_i: tuple[float, ...] | None
    ell_ij: tuple[tuple[float, ...], ...] | None
    ell_hat: float | None
    lipschitz: float
    lipschitz_i: tuple[float, ...]
    kappa: float | None
    sigma_star_sq: float | None


def _cocoercivity_from_jacobian(jac: np.ndarray) -> float:
    """Modulus ell with <F(x)-F(x*), x-x*> >= (1/ell) |F(x)-F(x*)|^2, via 1/ell = min Re(1/lambda).

    Zero eigenvalues (directions the affine operator does not act on, e.g.
    rank-deficient per-sample operators) are excluded from the minimum.
    """
    eigs = spectrum(jac)
    mags = np.abs(eigs)
    nonzero = mags > 1e-12 * max(1.0, float(mags.max(initial=0.0)))
    if not np.any(nonzero):
        raise NotCocoerciveError("operator Jacobian is zero; no finite modulus")
    inv_real = (1.0 / eigs[nonzero]).real
    worst = float(np.min(inv_real))
    if worst <= 0:
        raise NotCocoerciveError(f"spectral test gives min Re(1/lambda) = {worst:.3e} <= 0")
    return 1.0 / worst


def _mu_from_jacobian(jac: np.ndarray) -> float:
    sym = 0.5 * (jac + jac.T)
    return float(np.linalg.eigvalsh(sym)[0])


class OperatorHandle:
    """Affine distributed operator backed by stacked per-sample coefficients."""

    def __init__(self, dims, sample_jacobians, sample_offsets, problem=None,
                 has_unique_star=True, sample_objective=None):
        self.dims = dims
        self.sample_jacobians = np.ascontiguousarray(sample_jacobians, dtype=np.float64)
        self.sample_offsets = np.ascontiguousarray(sample_offsets, dtype=np.float64)
        self.problem = problem
        self.has_unique_star = has_unique_star
        self._sample_objective = sample_objective
        n, m = dims.n, dims.m[0]
        if any(mi != m for mi in dims.m):
            raise DimensionError("array-backed handles require equal samples per client")
        expected = (n, m, dims.joint, dims.joint)
        if self.sample_jacobians.shape != expected:
            raise DimensionError(
                f"sample jacobians must have shape {expected}, got {self.sample_jacobians.shape}")
        if self.sample_offsets.shape != (n, m, dims.joint):
            raise DimensionError("sample offsets shape mismatch")
        self.client_jacobians = self.sample_jacobians.mean(axis=1)
        self.client_offsets = self.sample_offsets.mean(axis=1)
        self.full_jacobian = self.client_jacobians.mean(axis=0)
        self.full_offset = self.client_offsets.mean(axis=0)

    # -- evaluation ----------------------------------------------------

    def full(self, z: np.ndarray) -> np.ndarray:
        """F(z) = (1/n) sum_i f_i(z)."""
        return self.full_jacobian @ z + self.full_offset

    def client(self, i: int, z: np.ndarray) -> np.ndarray:
        """f_i(z) = (1/m_i) sum_j F_ij(z)."""
        return self.client_jacobians[i] @ z + self.client_offsets[i]

    def sample(self, i: int, j: int, z: np.ndarray) -> np.ndarray:
        return self.sample_jacobians[i, j] @ z + self.sample_offsets[i, j]

    def clients_batched(self, x_rows: np.ndarray) -> np.ndarray:
        """Rows f_i(x_rows[i]) for an (n, joint) array of per-client points."""
        return np.einsum("nij,nj->ni", self.client_jacobians, x_rows) + self.client_offsets

    def samples_batched(self, idx: np.ndarray, x_rows: np.ndarray) -> np.ndarray:
        """Rows F_{i, idx[i]}(x_rows[i])."""
        rows = np.arange(self.dims.n)
        jac = self.sample_jacobians[rows, idx]
        off = self.sample_offsets[rows, idx]
        return np.einsum("nij,nj->ni", jac, x_rows) + off

    def jacobian(self) -> np.ndarray:
        return self.full_jacobian

    def sample_objective(self, i: int, j: int, z: np.ndarray) -> float:
        """Scalar minimax objective of sample (i, j), when one exists."""
        if self._sample_objective is None:
            raise UnsupportedProblemError("problem has no scalar minimax objective")
        return self._sample_objective(i, j, z)

    @property
    def has_objective(self) -> bool:
        return self._sample_objective is not None

    # -- derived quantities ---------------------------------------------

    @cached_property
    def star(self) -> np.ndarray:
        return solve_star(self)

    @cached_property
    def _params(self) -> ProblemParams:
        n, m = self.dims.n, self.dims.m[0]
        mu_i = tuple(_mu_from_jacobian(self.client_jacobians[i]) for i in range(n))
        lipschitz_i = tuple(
            float(np.linalg.norm(self.client_jacobians[i], 2)) for i in range(n))
        lipschitz = float(np.linalg.norm(self.full_jacobian, 2))
        mu_full = _mu_from_jacobian(self.full_jacobian)
        mu = mu_full if mu_full > 0 else None
        try:
            ell = _cocoercivity_from_jacobian(self.full_jacobian)
            ell_i = tuple(
                _cocoercivity_from_jacobian(self.client_jacobians[i]) for i in range(n))
            ell_ij = tuple(
                tuple(_cocoercivity_from_jacobian(self.sample_jacobians[i, j])
                      for j in range(m))
                for i in range(n))
            ell_hat = max(max(row) for row in ell_ij)
        except NotCocoerciveError:
            ell = ell_i = ell_ij = ell_hat = None
        sigma = None
        if self.has_unique_star and mu is not None:
            try:
                sigma = sample_variance_at(self, self.star)
            except (SingularMatrixError, UnsupportedProblemError):
                sigma = None
        kappa = lipschitz / mu if mu else None
        return ProblemParams(mu=mu, mu_i=mu_i, ell=ell, ell_i=ell_i, ell_ij=ell_ij,
                             ell_hat=ell_hat, lipschitz=lipschitz,
                             lipschitz_i=lipschitz_i, kappa=kappa, sigma_star_sq=sigma)

    def params(self) -> ProblemParams:
        return self._params


class ConsensusHandle:
    """Stacked consensus form of a distributed handle.

    The operator on x = (x_1, ..., x_n) has block i equal to f_i(x_i); its
    prox (blockwise averaging) lives in the federation module.  Clients of
    the lifted problem are the base clients, so parameter rules reduce to
    per-client extrema of the base problem.
    """

    def __init__(self, base: OperatorHandle):
        self.base = base
        self.dims = base.dims
        self.has_unique_star = base.has_unique_star

    @property
    def stacked_dim(self) -> int:
        return self.dims.stacked

    def blocks(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(self.dims.n, self.dims.joint)

    def full(self, x: np.ndarray) -> np.ndarray:
        return self.base.clients_batched(self.blocks(x)).ravel()

    def jacobian(self) -> np.ndarray:
        n, dj = self.dims.n, self.dims.joint
        out = np.zeros((n * dj, n * dj))
        for i in range(n):
            out[i * dj:(i + 1) * dj, i * dj:(i + 1) * dj] = self.base.client_jacobians[i]
        return out

    @cached_property
    def star(self) -> np.ndarray:
        return np.tile(self.base.star, self.dims.n)

    @cached_property
    def _params(self) -> ProblemParams:
        bp = self.base.params()
        # per-client modulus when every client is strongly monotone; problems
        # whose clients are only PSD (e.g. row-split least squares, where a
        # client never sees the other clients' target rows) fall back to the
        # full-operator modulus
        mu_client = min(bp.mu_i)
        mu = mu_client if mu_client > 1e-12 else bp.mu
        ell = max(bp.ell_i) if bp.ell_i else None
        lipschitz = max(bp.lipschitz_i)
        sigma = None
        if self.has_unique_star and mu is not None:
            sigma = stacked_sample_variance_at(self.base, self.base.star)
        return ProblemParams(mu=mu, mu_i=bp.mu_i, ell=ell, ell_i=bp.ell_i,
                             ell_ij=bp.ell_ij, ell_hat=bp.ell_hat,
                             lipschitz=lipschitz, lipschitz_i=bp.lipschitz_i,
                             kappa=lipschitz / mu if mu else None,
                             sigma_star_sq=sigma)

    def params(self) -> ProblemParams:
        return self._params


# -- operator construction ----------------------------------------------


def minimax_to_operator(problem) -> OperatorHandle:
    """Build the operator handle F = (grad_{x1} f, -grad_{x2} f) of a concrete problem."""
    if isinstance(problem, QuadraticGame):
        return _quadratic_game_handle(problem)
    if isinstance(problem, RlsProblem):
        return rls_decompose(problem.a, problem.y0, problem.lam, problem.n)
    if isinstance(problem, BilinearProblem):
        return _bilinear_handle(problem)
    if isinstance(problem, ShiftedLinearProblem):
        return _shifted_linear_handle(problem)
    if isinstance(problem, MatrixGame):
        return _matrix_game_handle(problem)
    raise UnsupportedProblemError(f"no operator construction for {type(problem).__name__}")


def _quadratic_game_handle(game: QuadraticGame) -> OperatorHandle:
    a, b, c = game.a_mats, game.b_mats, game.c_mats
    if a.ndim != 4 or b.ndim != 4 or c.ndim != 4:
        raise DimensionError("quadratic game matrices must be stacked (n, m, ., .) arrays")
    n, m, d1 = a.shape[:3]
    d2 = c.shape[2]
    if a.shape != (n, m, d1, d1) or c.shape != (n, m, d2, d2) or b.shape != (n, m, d1, d2):
        raise DimensionError("quadratic game block shapes are inconsistent")
    if game.a_vecs.shape != (n, m, d1) or game.c_vecs.shape != (n, m, d2):
        raise DimensionError("quadratic game linear terms have wrong shape")
    dims = BlockDims(d1=d1, d2=d2, n=n, m=(m,) * n)
    dj = d1 + d2
    jac = np.zeros((n, m, dj, dj))
    jac[:, :, :d1, :d1] = a
    jac[:, :, :d1, d1:] = b
    jac[:, :, d1:, :d1] = -np.swapaxes(b, 2, 3)
    jac[:, :, d1:, d1:] = c
    off = np.concatenate([game.a_vecs, game.c_vecs], axis=2)

    def objective(i, j, z):
        x1, x2 = z[:d1], z[d1:]
        return float(0.5 * x1 @ a[i, j] @ x1 + x1 @ b[i, j] @ x2
                     - 0.5 * x2 @ c[i, j] @ x2
                     + game.a_vecs[i, j] @ x1 - game.c_vecs[i, j] @ x2)

    return OperatorHandle(dims, jac, off, problem=game, sample_objective=objective)


def rls_decompose(a, y0, lam: float, n: int) -> OperatorHandle:
    """Split the robust-least-squares rows among n clients.

    Client i owns rows (i-1)m+1 ... im.  Per-sample operators are scaled
    by n*m so their double average is the gradient field of the full
    objective |A beta - y|^2 - lam |y - y0|^2 (row sum, not row mean).
    """
    a = as_matrix(a, "design matrix")
    y0 = as_vector(y0, dim=a.shape[0], what="target vector")
    if lam <= 1.0:
        raise NotMonotoneError(f"rls penalty must exceed 1 for strong monotonicity, got {lam}")
    rows, cols = a.shape
    if rows % n != 0:
        raise DimensionError(f"row count {rows} not divisible by {n} clients")
    m = rows // n
    dj = cols + rows
    scale = float(n * m)
    jac = np.zeros((n, m, dj, dj))
    off = np.zeros((n, m, dj))
    for k in range(rows):
        i, j = divmod(k, m)
        row = a[k]
        jac[i, j, :cols, :cols] = 2.0 * scale * np.outer(row, row)
        jac[i, j, :cols, cols + k] = -2.0 * scale * row
        jac[i, j, cols + k, :cols] = 2.0 * scale * row
        jac[i, j, cols + k, cols + k] = 2.0 * scale * (lam - 1.0)
        off[i, j, cols + k] = -2.0 * scale * lam * y0[k]
    dims = BlockDims(d1=cols, d2=rows, n=n, m=(m,) * n)
    problem = RlsProblem(a=a, y0=y0, lam=lam, n=n)

    def objective(i, j, z):
        k = i * m + j
        beta, y = z[:cols], z[cols:]
        return float(scale * ((a[k] @ beta - y[k]) ** 2 - lam * (y[k] - y0[k]) ** 2))

    return OperatorHandle(dims, jac, off, problem=problem, sample_objective=objective)


def _bilinear_handle(problem: BilinearProblem) -> OperatorHandle:
    a, b = problem.a_mats, problem.b_vecs
    if a.ndim != 3 or b.ndim != 2 or a.shape[0] != b.shape[0] or a.shape[1] != b.shape[1]:
        raise DimensionError("bilinear blocks are inconsistent")
    n, d2, d1 = a.shape
    dj = d1 + d2
    jac = np.zeros((n, 1, dj, dj))
    jac[:, 0, :d1, :d1] = problem.lam * np.eye(d1)
    jac[:, 0, :d1, d1:] = -np.swapaxes(a, 1, 2)
    jac[:, 0, d1:, :d1] = a
    jac[:, 0, d1:, d1:] = np.eye(d2)
    off = np.zeros((n, 1, dj))
    off[:, 0, d1:] = -b
    dims = BlockDims(d1=d1, d2=d2, n=n, m=(1,) * n)

    def objective(i, j, z):
        x1, x2 = z[:d1], z[d1:]
        return float(-(0.5 * x2 @ x2 - b[i] @ x2 + x2 @ a[i] @ x1)
                     + 0.5 * problem.lam * (x1 @ x1))

    return OperatorHandle(dims, jac, off, problem=problem, sample_objective=objective)


def _shifted_linear_handle(problem: ShiftedLinearProblem) -> OperatorHandle:
    m = as_matrix(problem.m, "linear map")
    shifts = as_matrix(problem.shifts, "shift points")
    if m.shape[0] != m.shape[1] or shifts.shape[1] != m.shape[0]:
        raise DimensionError("shift points must match the linear map dimension")
    n, d = shifts.shape
    jac = np.broadcast_to(m, (n, 1, d, d)).copy()
    off = -(shifts @ m.T).reshape(n, 1, d)
    dims = BlockDims(d1=d, d2=0, n=n, m=(1,) * n)
    return OperatorHandle(dims, jac, off, problem=problem)


def _matrix_game_handle(problem: MatrixGame) -> OperatorHandle:
    payoffs = problem.payoffs
    if payoffs.ndim != 3 or payoffs.shape[1] != payoffs.shape[2]:
        raise DimensionError("matrix game payoffs must be stacked square matrices")
    n, d = payoffs.shape[:2]
    dj = 2 * d
    jac = np.zeros((n, 1, dj, dj))
    jac[:, 0, :d, d:] = payoffs
    jac[:, 0, d:, :d] = -np.swapaxes(payoffs, 1, 2)
    off = np.zeros((n, 1, dj))
    dims = BlockDims(d1=d, d2=d, n=n, m=(1,) * n)

    def objective(i, j, z):
        return float(z[:d] @ payoffs[i] @ z[d:])

    return OperatorHandle(dims, jac, off, problem=problem, has_unique_star=False,
                          sample_objective=objective)


# -- generators -----------------------------------------------------------


def random_orthogonal(rng: RngStream, d: int) -> np.ndarray:
    """Haar-ish orthogonal factor from the QR of a Gaussian matrix."""
    g = rng.gaussian_vector(d * d).reshape(d, d)
    q, r = np.linalg.qr(g)
    signs = np.where(np.diag(r) >= 0, 1.0, -1.0)
    return q * signs


def random_spd(rng: RngStream, d: int, eig_range: tuple[float, float]) -> np.ndarray:
    """Symmetric PSD matrix with spectrum drawn uniformly from eig_range."""
    lo, hi = eig_range
    if not 0 <= lo <= hi:
        raise ParameterError(f"eigenvalue range must satisfy 0 <= lo <= hi, got {eig_range}")
    q = random_orthogonal(rng, d)
    eigs = lo + (hi - lo) * rng.uniforms(d)
    return (q * eigs) @ q.T


def generate_quadratic_game(rng: RngStream, n: int, m: int, d1: int, d2: int | None = None,
                            a_range=(0.01, 1.0), b_range=(0.0, 1.0),
                            c_range=(0.01, 1.0)) -> QuadraticGame:
    """Heterogeneous quadratic game: independent PSD blocks and normal linear terms per (i, j)."""
    if d2 is None:
        d2 = d1
    for lo, hi in (a_range, b_range, c_range):
        if not 0 <= lo <= hi:
            raise ParameterError("eigenvalue ranges must satisfy 0 <= lo <= hi")
    a_mats = np.empty((n, m, d1, d1))
    b_mats = np.empty((n, m, d1, d2))
    c_mats = np.empty((n, m, d2, d2))
    a_vecs = np.empty((n, m, d1))
    c_vecs = np.empty((n, m, d2))
    for i in range(n):
        for j in range(m):
            a_mats[i, j] = random_spd(rng, d1, a_range)
            c_mats[i, j] = random_spd(rng, d2, c_range)
            if d1 == d2:
                b_mats[i, j] = random_spd(rng, d1, b_range)
            else:
                raw = rng.uniforms(d1 * d2).reshape(d1, d2)
                norm = np.linalg.norm(raw, 2)
                b_mats[i, j] = raw * (b_range[1] / norm) if norm > 0 else raw
            a_vecs[i, j] = rng.gaussian_vector(d1)
            c_vecs[i, j] = rng.gaussian_vector(d2)
    return QuadraticGame(a_mats=a_mats, b_mats=b_mats, c_mats=c_mats,
                         a_vecs=a_vecs, c_vecs=c_vecs)


def generate_rls(rng: RngStream, rows: int, cols: int, n: int, lam: float = 50.0,
                 coef_var: float = 0.1, noise_var: float = 0.01) -> RlsProblem:
    """Synthetic robust-least-squares data: normal design, y0 = A beta0 + noise.

    Variance arguments are variances (std = sqrt(var)).
    """
    a = rng.gaussian_vector(rows * cols).reshape(rows, cols)
    beta0 = rng.gaussian_vector(cols, scale=float(np.sqrt(coef_var)))
    eps = rng.gaussian_vector(rows, scale=float(np.sqrt(noise_var)))
    y0 = a @ beta0 + eps
    return RlsProblem(a=a, y0=y0, lam=lam, n=n)


def generate_bilinear(rng: RngStream, n: int, d1: int, d2: int, lam: float = 0.1,
                      s_const: float | None = 10.0, s_max: float | None = None,
                      t_const: float | None = 1.0, t_max: float | None = None) -> BilinearProblem:
    """Bilinear instances with b_i ~ N(0, s_i^2 I) and A_i = t_i I.

    Pass ``s_max``/``t_max`` to draw s_i ~ U(0, s_max), t_i ~ U(0, t_max)
    (heterogeneous clients); otherwise the constant values are used.
    """
    a_mats = np.empty((n, d2, d1))
    b_vecs = np.empty((n, d2))
    eye = np.eye(d2, d1)
    for i in range(n):
        s_i = s_max * rng.uniform01() if s_max is not None else float(s_const)
        t_i = t_max * rng.uniform01() if t_max is not None else float(t_const)
        b_vecs[i] = rng.gaussian_vector(d2, scale=s_i)
        a_mats[i] = t_i * eye
    return BilinearProblem(a_mats=a_mats, b_vecs=b_vecs, lam=lam)


def make_shifted_linear(m, shifts) -> ShiftedLinearProblem:
    return ShiftedLinearProblem(m=as_matrix(m, "linear map"),
                                shifts=as_matrix(shifts, "shift points"))


def heterogeneity_dial(delta: float, m=None) -> ShiftedLinearProblem:
    """Two-client instance with shifts (delta, 0) and (0, delta); M defaults to I2."""
    mat = np.eye(2) if m is None else as_matrix(m, "linear map")
    shifts = np.array([[delta, 0.0], [0.0, delta]])
    return ShiftedLinearProblem(m=mat, shifts=shifts)


def generate_matrix_game(rng: RngStream, n: int, d: int, decay: float = 0.8,
                         shared: bool = False) -> MatrixGame:
    """Payoff entries w_r (1 - exp(-decay |r - s|)) with w_r = |N(0,1)| per client.

    With ``shared`` the same weight vector is reused for every client.
    """
    r_idx = np.arange(d)
    envelope = 1.0 - np.exp(-decay * np.abs(r_idx[:, None] - r_idx[None, :]))
    payoffs = np.empty((n, d, d))
    w_shared = np.abs(rng.gaussian_vector(d)) if shared else None
    for i in range(n):
        w = w_shared if shared else np.abs(rng.gaussian_vector(d))
        payoffs[i] = w[:, None] * envelope
    return MatrixGame(payoffs=payoffs)


# -- analytic parameters ---------------------------------------------------


def compute_cocoercivity(handle) -> float:
    """Star-cocoercivity modulus of the full operator from its Jacobian spectrum."""
    return _cocoercivity_from_jacobian(handle.jacobian())


def compute_mu(handle) -> float:
    """Quasi-strong-monotonicity modulus: smallest eigenvalue of the symmetrized Jacobian."""
    mu = _mu_from_jacobian(handle.jacobian())
    if mu <= 0:
        raise NotMonotoneError(f"operator is not strongly monotone (mu = {mu:.3e})")
    return mu


def solve_star(handle) -> np.ndarray:
    """Unique zero of the affine operator, with a residual check."""
    if not handle.has_unique_star:
        raise UnsupportedProblemError("problem has no unique unconstrained solution")
    jac = handle.jacobian()
    offset = handle.full(np.zeros(jac.shape[0]))
    star = solve_linear(jac, -offset)
    residual = float(np.linalg.norm(handle.full(star)))
    if residual > STAR_RESIDUAL_TOL * (1.0 + float(np.linalg.norm(star))):
        raise SingularMatrixError(
            f"solution residual {residual:.3e} too large; system effectively singular")
    return star


def heterogeneity(handle: OperatorHandle, z_star=None) -> float:
    """max_i |f_i(z*) - F(z*)|^2, the client dissimilarity at the solution."""
    z = handle.star if z_star is None else as_vector(z_star, dim=handle.dims.joint)
    rows = handle.clients_batched(np.broadcast_to(z, (handle.dims.n, z.size)).copy())
    full = handle.full(z)
    return float(np.max(np.sum((rows - full) ** 2, axis=1)))


def sample_variance_at(handle: OperatorHandle, z: np.ndarray) -> float:
    """E|F_IJ(z) - F(z)|^2 under two-stage uniform sampling (client, then sample)."""
    full = handle.full(z)
    dev = np.einsum("nmij,j->nmi", handle.sample_jacobians, z) + handle.sample_offsets - full
    return float(np.mean(np.sum(dev ** 2, axis=2)))


def stacked_sample_variance_at(handle: OperatorHandle, z: np.ndarray) -> float:
    """sum_i (1/m_i) sum_j |F_ij(z) - f_i(z)|^2: per-client sampling variance, summed."""
    rows = handle.clients_batched(np.broadcast_to(z, (handle.dims.n, z.size)).copy())
    dev = (np.einsum("nmij,j->nmi", handle.sample_jacobians, z)
           + handle.sample_offsets - rows[:, None, :])
    return float(np.sum(np.mean(np.sum(dev ** 2, axis=2), axis=1)))


# -- data ingestion ---------------------------------------------------------


def load_rls_csv(path, target_column: str, n: int, lam: float = 50.0) -> RlsProblem:
    """Read a numeric CSV (header row, '.' decimals) into a robust-least-squares problem.

    Rows are truncated to the largest multiple of n; remaining columns form
    the design matrix and ``target_column`` becomes y0.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DimensionError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise ParameterError(f"{path}: no column named {target_column!r} in header")
        target_idx = header.index(target_column)
        data = []
        for row_num, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DimensionError(
                    f"{path}: row {row_num} has {len(row)} cells, expected {len(header)}")
            try:
                data.append([float(cell) for cell in row])
            except ValueError:
                bad = next(c for c, cell in enumerate(row) if not _is_float(cell))
                raise ParameterError(
                    f"{path}: non-numeric cell at row {row_num}, column {header[bad]!r}"
                ) from None
    if len(data) < n:
        raise DimensionError(f"{path}: {len(data)} data rows, need at least {n}")
    rows = (len(data) // n) * n
    arr = np.asarray(data[:rows], dtype=np.float64)
    y0 = arr[:, target_idx]
    a = np.delete(arr, target_idx, axis=1)
    return RlsProblem(a=a, y0=y0, lam=lam, n=n)


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False
