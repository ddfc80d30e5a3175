"""Centralized prox-skipping solvers and theory-driven parameter selection.

One iteration of the base method:

    x_hat = x - gamma * (g - h)               # drift-corrected operator step
    theta ~ Bernoulli(p)                      # communicate / apply prox?
    x'    = prox_{(gamma/p) R}(x_hat - (gamma/p) h)   if theta = 1
          = x_hat                                      otherwise
    h'    = h + (p/gamma) * (x' - x_hat)      # control variate -> F(x*)

The variance-reduced variant additionally keeps a reference point w,
refreshed with probability q by a separate coin drawn *before* the prox
coin (fixed draw order keeps golden traces stable), and builds the
estimate from the pre-refresh reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DivergenceError, ParameterError, UnsupportedProblemError
from .estimators import EstimatorSpec, EstimatorState, draw_estimate
from .problems import ProblemParams

DIVERGENCE_LIMIT = 1e12

ProxOracle = Callable[[np.ndarray, float], np.ndarray]

POLICIES = ("gda-full", "gda-per-client", "sgda", "sgda-per-sample", "lsvrg", "manual")


def identity_prox(x: np.ndarray, alpha: float) -> np.ndarray:
    """Prox of R = 0."""
    return x


@dataclass
class SolverConfig:
    """Step size gamma, prox probability p, reference probability q, and
    the variance weight used when reporting the convergence functional."""

    gamma: float
    p: float
    q: float | None = None
    lyapunov_weight: float = 0.0
    iterations: int = 1000

    def __post_init__(self):
        if self.gamma <= 0:
            raise ParameterError(f"step size must be positive, got {self.gamma}")
        if not 0 < self.p <= 1:
            raise ParameterError(f"prox probability must be in (0, 1], got {self.p}")
        if self.q is not None and not 0 < self.q <= 1:
            raise ParameterError(f"reference probability must be in (0, 1], got {self.q}")


@dataclass
class SolverState:
    """Iterate, control variate, step counter, and estimator state."""

    x: np.ndarray
    h: np.ndarray
    t: int = 0
    est: EstimatorState = field(default_factory=lambda: EstimatorState(kind="full"))

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.h = np.asarray(self.h, dtype=np.float64)
        if self.x.shape != self.h.shape:
            raise ParameterError("iterate and control variate must share a shape")


def _guard(x: np.ndarray, t: int):
    if not np.all(np.isfinite(x)) or float(np.linalg.norm(x)) > DIVERGENCE_LIMIT:
        raise DivergenceError(f"iterate diverged at step {t}", iteration=t)


def _apply_update(state: SolverState, cfg: SolverConfig, g: np.ndarray,
                  prox: ProxOracle, theta: int) -> bool:
    gamma, p = cfg.gamma, cfg.p
    x_hat = state.x - gamma * (g - state.h)
    if theta:
        x_next = prox(x_hat - (gamma / p) * state.h, gamma / p)
    else:
        x_next = x_hat
    state.h = state.h + (p / gamma) * (x_next - x_hat)
    state.x = x_next
    state.t += 1
    _guard(state.x, state.t)
    return bool(theta)


def proxskip_step(state: SolverState, cfg: SolverConfig, handle, prox: ProxOracle,
                  coin_stream, sample_stream) -> bool:
    """One prox-skipping step; returns whether the prox (a communication) was called.

    The coin and sampling streams must be distinct so the trajectory is a
    deterministic function of the stream assignment.
    """
    if coin_stream is sample_stream:
        raise ParameterError("coin and sample streams must be distinct")
    theta = coin_stream.bernoulli(cfg.p)
    g, _ = draw_estimate(handle, state.x, state.est, sample_stream)
    return _apply_update(state, cfg, g, prox, theta)


def lsvrgda_step(state: SolverState, cfg: SolverConfig, handle, prox: ProxOracle,
                 coin_stream, ref_stream, sample_stream) -> bool:
    """One variance-reduced step (reference coin zeta, then prox coin theta)."""
    if state.est.kind not in ("lsvrg", "fl-lsvrg"):
        raise ParameterError("lsvrgda_step needs a variance-reduced estimator state")
    if cfg.q is None:
        raise ParameterError("config must set the reference probability q")
    zeta = ref_stream.bernoulli(cfg.q)
    theta = coin_stream.bernoulli(cfg.p)
    g, _ = draw_estimate(handle, state.x, state.est, sample_stream, refresh=zeta)
    return _apply_update(state, cfg, g, prox, theta)


def proximal_sgda_step(state: SolverState, cfg: SolverConfig, handle,
                       prox: ProxOracle, sample_stream) -> bool:
    """Plain proximal step: the p = 1 reduction of the skipping method.

    No coin is consumed (theta is identically 1 at p = 1), so a run on a
    shared sample stream is bit-identical to proxskip_step with p = 1 and
    h0 = 0.
    """
    if cfg.p != 1.0:
        raise ParameterError("proximal step requires p = 1")
    g, _ = draw_estimate(handle, state.x, state.est, sample_stream)
    return _apply_update(state, cfg, g, prox, theta=1)


def lyapunov(state: SolverState, handle, cfg: SolverConfig,
             h_star: np.ndarray | None = None) -> float:
    """Convergence functional |x-x*|^2 + (gamma/p)^2 |h - F(x*)|^2 (+ M gamma^2 sigma^2).

    The variance term enters only for variance-reduced estimator kinds with
    tracked sigma^2 and a positive weight.
    """
    try:
        star = handle.star
    except UnsupportedProblemError:
        raise
    if h_star is None:
        h_star = handle.full(star)
    ratio = cfg.gamma / cfg.p
    value = float(np.sum((state.x - star) ** 2)) + ratio ** 2 * float(np.sum((state.h - h_star) ** 2))
    if (state.est.kind in ("lsvrg", "fl-lsvrg") and cfg.lyapunov_weight > 0
            and state.est.sigma_t_sq is not None):
        value += cfg.lyapunov_weight * cfg.gamma ** 2 * state.est.sigma_t_sq
    return value


def select_parameters(policy: str, params: ProblemParams,
                      spec: EstimatorSpec | None = None, eps: float | None = None,
                      *, gamma: float | None = None, p: float | None = None,
                      q: float | None = None, iterations: int = 1000) -> SolverConfig:
    """Resolve (gamma, p, q, M) for a step-size policy.

    gda-full:        gamma = 1/(2 ell)
    gda-per-client:  gamma = 1/(2 max_i ell_i)
    sgda:            gamma = min{1/(2 L_g), 1/(2 mu), mu eps / (8 sigma*^2)}
    sgda-per-sample: gamma = 1/(2 max_ij ell_ij)
    lsvrg:           gamma = min{1/mu, 1/(6 ell_hat)}, q = 2 gamma mu, M = 4/q
    manual:          explicit gamma (and optionally p, q)

    All policies use p = sqrt(gamma mu) unless overridden.
    """
    if policy not in POLICIES:
        raise ParameterError(f"unknown step-size policy {policy!r}")
    weight = 0.0
    if policy == "manual":
        if gamma is None:
            raise ParameterError("manual policy needs an explicit step size")
        resolved_gamma = gamma
    elif policy == "gda-full":
        _need(params.ell, "ell")
        resolved_gamma = 1.0 / (2.0 * params.ell)
    elif policy == "gda-per-client":
        _need(params.ell_i, "per-client ell")
        resolved_gamma = 1.0 / (2.0 * max(params.ell_i))
    elif policy == "sgda-per-sample":
        _need(params.ell_hat, "per-sample ell")
        resolved_gamma = 1.0 / (2.0 * max(max(row) for row in params.ell_ij))
    elif policy == "sgda":
        _need(params.mu, "mu")
        if spec is None:
            raise ParameterError("sgda policy needs an estimator certificate")
        if eps is None or eps <= 0:
            raise ParameterError("sgda policy needs a positive target accuracy")
        caps = [1.0 / (2.0 * spec.a), 1.0 / (2.0 * params.mu)]
        sigma_sq = spec.d1 / 2.0
        if sigma_sq > 0:
            caps.append(params.mu * eps / (8.0 * sigma_sq))
        resolved_gamma = min(caps)
    else:  # lsvrg
        _need(params.mu, "mu")
        _need(params.ell_hat, "ell_hat")
        resolved_gamma = min(1.0 / params.mu, 1.0 / (6.0 * params.ell_hat))
        q = 2.0 * resolved_gamma * params.mu if q is None else q
        weight = 4.0 / q
    if p is None:
        _need(params.mu, "mu")
        p = math.sqrt(resolved_gamma * params.mu)
        p = min(p, 1.0)
    return SolverConfig(gamma=resolved_gamma, p=p, q=q,
                        lyapunov_weight=weight, iterations=iterations)


def _need(value, name):
    if value is None:
        raise ParameterError(f"policy needs {name}, which is unavailable for this problem")


def predicted_complexity(params: ProblemParams, spec: EstimatorSpec,
                         eps: float, v0: float = 1.0) -> tuple[float, float]:
    """Iteration and prox-call counts guaranteed by the complexity bound.

    Uses the explicit constants: with M = 2B/rho the iteration count is
    max{1, 2(A + 2BC/rho)/mu, 2/rho, 2(D1 + 2B D2/rho)/(mu^2 eps)} * ln(2 V0 / eps)
    and prox calls carry the square root of the same max.
    """
    if eps <= 0:
        raise ParameterError(f"target accuracy must be positive, got {eps}")
    _need(params.mu, "mu")
    mu = params.mu
    stiffness = max(
        1.0,
        2.0 * (spec.a + 2.0 * spec.b * spec.c / spec.rho) / mu,
        2.0 / spec.rho,
        2.0 * (spec.d1 + 2.0 * spec.b * spec.d2 / spec.rho) / (mu ** 2 * eps),
    )
    log_term = math.log(2.0 * v0 / eps)
    return stiffness * log_term, math.sqrt(stiffness) * log_term
