"""Unbiased operator estimators, their constant certificates, and variance tracking.

Six kinds are supported:

* ``full``       -- g = F(x), deterministic.
* ``sampled``    -- one component F_IJ(x), client then sample uniform.
* ``gaussian``   -- F(x) plus isotropic noise of a given scale.
* ``lsvrg``      -- loopless variance reduction with a single shared
                    reference point w, refreshed by an external coin.
* ``fl-sampled`` -- stacked per-client sampling on a consensus handle.
* ``fl-lsvrg``   -- per-client reference points w_i with a broadcast
                    refresh coin, on a consensus handle.

Every kind admits exact expectations by enumeration over its sample
indices; those enumerations back both the certificate checker and the
oracle tests.  Reference-point variance is measured at the reference
(sigma^2 is a function of w, not of the current iterate), matching the
finite-sum analysis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CertificateError, ParameterError
from .problems import ConsensusHandle, OperatorHandle

CERTIFICATE_SLACK = -1e-9
ENUMERATION_LIMIT = 256

CENTRAL_KINDS = ("full", "sampled", "gaussian", "lsvrg")
FL_KINDS = ("fl-sampled", "fl-lsvrg")
ALL_KINDS = CENTRAL_KINDS + FL_KINDS


@dataclass(frozen=True)
class EstimatorSpec:
    """Constants (A, B, C, D1, D2, rho) certifying the two estimator inequalities."""

    a: float
    b: float
    c: float
    d1: float
    d2: float
    rho: float

    def __post_init__(self):
        for name in ("a", "b", "c", "d1", "d2"):
            if getattr(self, name) < 0:
                raise ParameterError(f"estimator constant {name} must be >= 0")
        if not 0 < self.rho <= 1:
            raise ParameterError(f"rho must be in (0, 1], got {self.rho}")


@dataclass
class EstimatorState:
    """Mutable per-run estimator state (single owner, never shared)."""

    kind: str
    q: float | None = None
    noise_scale: float = 0.0
    batch: int = 1
    w: np.ndarray | None = None
    f_w: np.ndarray | None = field(default=None, repr=False)
    sigma_t_sq: float | None = None


def _require_consensus(handle, kind):
    if not isinstance(handle, ConsensusHandle):
        raise ParameterError(f"estimator kind {kind!r} needs a consensus handle")


def _star_or_none(handle):
    try:
        return handle.star
    except Exception:
        return None


def init_estimator(handle, kind: str, x0: np.ndarray, *, q: float | None = None,
                   noise_scale: float = 0.0, batch: int = 1) -> EstimatorState:
    """Create estimator state; variance-reduced kinds start with w = x0."""
    if kind not in ALL_KINDS:
        raise ParameterError(f"unknown estimator kind {kind!r}")
    if kind in FL_KINDS:
        _require_consensus(handle, kind)
    if batch < 1:
        raise ParameterError("batch size must be >= 1")
    state = EstimatorState(kind=kind, q=q, noise_scale=noise_scale, batch=batch)
    if kind in ("lsvrg", "fl-lsvrg"):
        if q is None or not 0 < q <= 1:
            raise ParameterError(f"reference probability q must be in (0, 1], got {q}")
        if kind == "lsvrg":
            state.w = np.array(x0, dtype=np.float64)
            state.f_w = handle.full(state.w)
        else:
            state.w = handle.blocks(np.asarray(x0, dtype=np.float64)).copy()
            state.f_w = handle.base.clients_batched(state.w)
        star = _star_or_none(handle)
        if star is not None:
            state.sigma_t_sq = reference_variance(handle, state.w)
    if kind == "gaussian" and noise_scale < 0:
        raise ParameterError("noise scale must be >= 0")
    return state


def draw_estimate(handle, x: np.ndarray, state: EstimatorState, stream,
                  refresh: int | None = None):
    """Draw one unbiased estimate of the handle's operator at x.

    Returns ``(g, state)``; the state is updated in place.  For the
    variance-reduced kinds the reference-refresh decision is supplied by
    the caller (``refresh``), so federated runs can broadcast one coin to
    every client; the estimate itself always uses the pre-refresh
    reference.  ``stream`` is a single stream for centralized kinds and a
    sequence of per-client streams for the fl- kinds.
    """
    kind = state.kind
    if kind == "full":
        return handle.full(x), state
    if kind == "gaussian":
        if isinstance(handle, ConsensusHandle) and isinstance(stream, (list, tuple)):
            rows = client_estimate_rows(handle.base, handle.blocks(x), state, stream)
            return rows.ravel(), state
        g = handle.full(x)
        if state.noise_scale > 0:
            g = g + stream.gaussian_vector(g.size, state.noise_scale)
        return g, state
    if kind == "sampled":
        acc = None
        for _ in range(state.batch):
            i = stream.uniform_index(handle.dims.n)
            j = stream.uniform_index(handle.dims.m[i])
            term = handle.sample(i, j, x)
            acc = term if acc is None else acc + term
        return acc / state.batch, state
    if kind == "lsvrg":
        i = stream.uniform_index(handle.dims.n)
        j = stream.uniform_index(handle.dims.m[i])
        g = handle.sample(i, j, x) - handle.sample(i, j, state.w) + state.f_w
        _maybe_refresh(handle, x, state, refresh)
        return g, state
    if kind in FL_KINDS:
        rows = client_estimate_rows(handle.base, handle.blocks(x), state, stream,
                                    refresh=refresh)
        return rows.ravel(), state
    raise ParameterError(f"unknown estimator kind {kind!r}")


def client_estimate_rows(base: OperatorHandle, x_rows: np.ndarray,
                         state: EstimatorState, streams,
                         refresh: int | None = None) -> np.ndarray:
    """Per-client estimate rows g_i(x_rows[i]); the federated form of draw_estimate.

    Shared by the federated simulator and by consensus-handle draws so the
    two produce bit-identical values.
    """
    kind = state.kind
    n = base.dims.n
    if kind == "full":
        return base.clients_batched(x_rows)
    if kind == "gaussian":
        rows = base.clients_batched(x_rows)
        if state.noise_scale > 0:
            noise = np.stack([streams[i].gaussian_vector(rows.shape[1], state.noise_scale)
                              for i in range(n)])
            rows = rows + noise
        return rows
    if kind == "fl-sampled":
        idx = np.array([streams[i].uniform_index(base.dims.m[i]) for i in range(n)])
        return base.samples_batched(idx, x_rows)
    if kind == "fl-lsvrg":
        idx = np.array([streams[i].uniform_index(base.dims.m[i]) for i in range(n)])
        rows = (base.samples_batched(idx, x_rows)
                - base.samples_batched(idx, state.w) + state.f_w)
        _maybe_refresh_rows(base, x_rows, state, refresh)
        return rows
    raise ParameterError(f"estimator kind {kind!r} has no per-client form")


def _maybe_refresh_rows(base, x_rows, state, refresh):
    if refresh is None:
        raise ParameterError("variance-reduced kinds need an explicit refresh decision")
    if refresh:
        state.w = np.array(x_rows, dtype=np.float64)
        state.f_w = base.clients_batched(state.w)
        if state.sigma_t_sq is not None:
            state.sigma_t_sq = stacked_reference_variance(base, state.w)


def _maybe_refresh(handle, x, state, refresh):
    if refresh is None:
        raise ParameterError("variance-reduced kinds need an explicit refresh decision")
    if refresh:
        state.w = np.array(x, dtype=np.float64)
        state.f_w = handle.full(state.w)
        if state.sigma_t_sq is not None:
            state.sigma_t_sq = reference_variance(handle, state.w)


def spec_for(handle, kind: str, *, q: float | None = None, noise_scale: float = 0.0,
             batch: int = 1) -> EstimatorSpec:
    """Certificate constants for (handle, kind).

    Plain estimators: A is the expected-cocoercivity modulus, D1 twice the
    variance at the solution, rho = 1.  Variance-reduced estimators:
    A = ell_hat, B = 2, C = q ell_hat / 2, rho = q.  Mini-batching divides
    D1 by the batch size (variance scaling; extension beyond the base rules).
    """
    params = handle.params()
    if kind == "full":
        if params.ell is None:
            raise ParameterError("cocoercivity modulus unavailable for this problem")
        return EstimatorSpec(a=params.ell, b=0.0, c=0.0, d1=0.0, d2=0.0, rho=1.0)
    if kind == "gaussian":
        if params.ell is None:
            raise ParameterError("cocoercivity modulus unavailable for this problem")
        d1 = 2.0 * sigma_star_sq(handle, kind, noise_scale=noise_scale) / batch
        return EstimatorSpec(a=params.ell, b=0.0, c=0.0, d1=d1, d2=0.0, rho=1.0)
    if kind in ("sampled", "fl-sampled"):
        if params.ell_hat is None:
            raise ParameterError("per-sample cocoercivity unavailable for this problem")
        d1 = 2.0 * sigma_star_sq(handle, kind) / batch
        return EstimatorSpec(a=params.ell_hat, b=0.0, c=0.0, d1=d1, d2=0.0, rho=1.0)
    if kind in ("lsvrg", "fl-lsvrg"):
        if q is None or not 0 < q <= 1:
            raise ParameterError(f"reference probability q must be in (0, 1], got {q}")
        if params.ell_hat is None:
            raise ParameterError("per-sample cocoercivity unavailable for this problem")
        ell_hat = params.ell_hat
        return EstimatorSpec(a=ell_hat, b=2.0, c=q * ell_hat / 2.0, d1=0.0, d2=0.0, rho=q)
    raise ParameterError(f"unknown estimator kind {kind!r}")


def sigma_star_sq(handle, kind: str, *, noise_scale: float = 0.0) -> float:
    """Exact estimator variance at the solution, by enumeration or closed form."""
    from .errors import UnsupportedProblemError
    from .problems import sample_variance_at, stacked_sample_variance_at

    if not handle.has_unique_star:
        raise UnsupportedProblemError("no solution point to evaluate the variance at")
    if kind == "full":
        return 0.0
    if kind == "gaussian":
        dim = handle.stacked_dim if isinstance(handle, ConsensusHandle) else handle.dims.joint
        return float(dim) * noise_scale ** 2
    if kind == "sampled":
        if isinstance(handle, ConsensusHandle):
            raise ParameterError("use kind 'fl-sampled' on consensus handles")
        return sample_variance_at(handle, handle.star)
    if kind == "fl-sampled":
        _require_consensus(handle, kind)
        return stacked_sample_variance_at(handle.base, handle.base.star)
    if kind in ("lsvrg", "fl-lsvrg"):
        raise ParameterError("variance-reduced kinds have no solution-variance constant")
    raise ParameterError(f"unknown estimator kind {kind!r}")


# -- exact expectations by enumeration --------------------------------------


def _all_samples(handle: OperatorHandle, z: np.ndarray) -> np.ndarray:
    """(n, m, joint) array of every F_ij(z)."""
    return np.einsum("nmij,j->nmi", handle.sample_jacobians, z) + handle.sample_offsets


def _all_samples_rows(handle: OperatorHandle, rows: np.ndarray) -> np.ndarray:
    """(n, m, joint) array of every F_ij(rows[i])."""
    return (np.einsum("nmij,nj->nmi", handle.sample_jacobians, rows)
            + handle.sample_offsets)


def expected_estimate(handle, x: np.ndarray, state: EstimatorState) -> np.ndarray:
    """E[g | x, state], exactly, by enumeration over sample indices."""
    kind = state.kind
    if kind in ("full", "gaussian"):
        return handle.full(x)
    if kind == "sampled":
        return np.mean(_all_samples(handle, x), axis=(0, 1))
    if kind == "lsvrg":
        diff = _all_samples(handle, x) - _all_samples(handle, state.w)
        return np.mean(diff, axis=(0, 1)) + state.f_w
    if kind == "fl-sampled":
        return np.mean(_all_samples_rows(handle.base, handle.blocks(x)), axis=1).ravel()
    if kind == "fl-lsvrg":
        rows_x = handle.blocks(x)
        diff = _all_samples_rows(handle.base, rows_x) - _all_samples_rows(handle.base, state.w)
        return (np.mean(diff, axis=1) + state.f_w).ravel()
    raise ParameterError(f"unknown estimator kind {kind!r}")


def second_moment_about_star(handle, x: np.ndarray, state: EstimatorState) -> float:
    """E|g - F(x*)|^2, exactly."""
    star = handle.star
    f_star = handle.full(star)
    kind = state.kind
    if kind == "full":
        return float(np.sum((handle.full(x) - f_star) ** 2))
    if kind == "gaussian":
        dim = f_star.size
        return float(np.sum((handle.full(x) - f_star) ** 2)) + dim * state.noise_scale ** 2
    if kind == "sampled":
        dev = _all_samples(handle, x) - f_star
        second = float(np.mean(np.sum(dev ** 2, axis=2)))
        if state.batch == 1:
            return second
        mean_sq = float(np.sum((handle.full(x) - f_star) ** 2))
        return mean_sq + (second - mean_sq) / state.batch
    if kind == "lsvrg":
        g_all = _all_samples(handle, x) - _all_samples(handle, state.w) + state.f_w
        return float(np.mean(np.sum((g_all - f_star) ** 2, axis=2)))
    if kind == "fl-sampled":
        rows_x = handle.blocks(x)
        f_star_rows = f_star.reshape(rows_x.shape)
        dev = _all_samples_rows(handle.base, rows_x) - f_star_rows[:, None, :]
        return float(np.sum(np.mean(np.sum(dev ** 2, axis=2), axis=1)))
    if kind == "fl-lsvrg":
        rows_x = handle.blocks(x)
        f_star_rows = f_star.reshape(rows_x.shape)
        g_all = (_all_samples_rows(handle.base, rows_x)
                 - _all_samples_rows(handle.base, state.w) + state.f_w[:, None, :])
        dev = g_all - f_star_rows[:, None, :]
        return float(np.sum(np.mean(np.sum(dev ** 2, axis=2), axis=1)))
    raise ParameterError(f"unknown estimator kind {kind!r}")


def reference_variance(handle, w) -> float:
    """sigma^2 at a reference point: mean (centralized) or sum (federated) over clients
    of per-sample squared deviations from the solution."""
    w = np.asarray(w, dtype=np.float64)
    if isinstance(handle, ConsensusHandle):
        rows = w if w.ndim == 2 else handle.blocks(w)
        return stacked_reference_variance(handle.base, rows)
    if w.ndim == 2:
        return stacked_reference_variance(handle, w)
    star_samples = _all_samples(handle, handle.star)
    dev = _all_samples(handle, w) - star_samples
    return float(np.mean(np.sum(dev ** 2, axis=2)))


def stacked_reference_variance(base: OperatorHandle, w_rows: np.ndarray) -> float:
    """Federated sigma^2: sum_i (1/m_i) sum_j |F_ij(w_i) - F_ij(z*)|^2."""
    star_samples = _all_samples(base, base.star)
    dev = _all_samples_rows(base, np.asarray(w_rows, dtype=np.float64)) - star_samples
    return float(np.sum(np.mean(np.sum(dev ** 2, axis=2), axis=1)))


def expected_next_sigma_sq(handle, x: np.ndarray, state: EstimatorState) -> float:
    """E[sigma_{t+1}^2] = q sigma^2(x) + (1-q) sigma^2(w), exactly."""
    if state.kind not in ("lsvrg", "fl-lsvrg"):
        return 0.0
    w_next = handle.blocks(x) if state.kind == "fl-lsvrg" else x
    return state.q * reference_variance(handle, w_next) + (1 - state.q) * reference_variance(handle, state.w)


@dataclass(frozen=True)
class CertificateReport:
    """Worst-case slacks of the two estimator inequalities over the trial points."""

    kind: str
    points: int
    worst_bound_slack: float
    worst_recursion_slack: float


def verify_assumption2(handle, kind: str, spec: EstimatorSpec, trial_points,
                       *, q: float | None = None, noise_scale: float = 0.0,
                       w_points=None) -> CertificateReport:
    """Check both certificate inequalities by exact enumeration at each trial point.

    Only enumerable instances are accepted (n * total samples <= 256).
    Raises :class:`CertificateError` naming the violated inequality and
    point when any slack falls below -1e-9.
    """
    base = handle.base if isinstance(handle, ConsensusHandle) else handle
    if base.dims.n * base.dims.total_samples > ENUMERATION_LIMIT:
        raise ParameterError("instance too large to enumerate")
    star = handle.star
    f_star = handle.full(star)
    trial_points = [np.asarray(p, dtype=np.float64) for p in trial_points]
    if w_points is None:
        w_points = list(reversed(trial_points))
    worst_bound = np.inf
    worst_rec = np.inf
    for t, x in enumerate(trial_points):
        state = EstimatorState(kind=kind, q=q, noise_scale=noise_scale)
        sigma_sq = 0.0
        if kind in ("lsvrg", "fl-lsvrg"):
            w = np.asarray(w_points[t % len(w_points)], dtype=np.float64)
            if kind == "fl-lsvrg":
                state.w = handle.blocks(w).copy()
                state.f_w = handle.base.clients_batched(state.w)
            else:
                state.w = w
                state.f_w = handle.full(w)
            sigma_sq = reference_variance(handle, state.w)
        inner = float((handle.full(x) - f_star) @ (x - star))
        lhs1 = second_moment_about_star(handle, x, state)
        rhs1 = 2 * spec.a * inner + spec.b * sigma_sq + spec.d1
        slack1 = rhs1 - lhs1
        worst_bound = min(worst_bound, slack1)
        if slack1 < CERTIFICATE_SLACK:
            raise CertificateError(
                f"second-moment bound violated at point {t} (slack {slack1:.3e})",
                inequality="second-moment", point_index=t, slack=slack1)
        lhs2 = expected_next_sigma_sq(handle, x, state)
        rhs2 = 2 * spec.c * inner + (1 - spec.rho) * sigma_sq + spec.d2
        slack2 = rhs2 - lhs2
        worst_rec = min(worst_rec, slack2)
        if slack2 < CERTIFICATE_SLACK:
            raise CertificateError(
                f"variance recursion violated at point {t} (slack {slack2:.3e})",
                inequality="variance-recursion", point_index=t, slack=slack2)
    return CertificateReport(kind=kind, points=len(trial_points),
                             worst_bound_slack=float(worst_bound),
                             worst_recursion_slack=float(worst_rec))
