"""Single-process federated simulation: clients, server coins, and baselines.

One simulated round is one local step at every client.  The server flips
the shared coins (communicate? refresh reference?) and broadcasts them;
a communication replaces every client iterate by the average of the
shifted iterates.  Running the centralized solver on the stacked
consensus problem with the blockwise-averaging prox reproduces these
dynamics bit-for-bit when both sides share the stream family, which is
the module's cornerstone equivalence check.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DivergenceError, ParameterError
from .estimators import EstimatorState, client_estimate_rows, init_estimator
from .numerics import RngStream, project_simplex
from .problems import ConsensusHandle, OperatorHandle
from .solvers import DIVERGENCE_LIMIT, SolverConfig, SolverState, lsvrgda_step, proxskip_step


@dataclass
class CommLog:
    """Counts rounds, averaging events, and vectors moved (up + down per client)."""

    rounds_total: int = 0
    communications: int = 0
    vectors_transmitted: int = 0

    def record_round(self, communicated: bool, n_clients: int):
        self.rounds_total += 1
        if communicated:
            self.communications += 1
            self.vectors_transmitted += 2 * n_clients


@dataclass
class ServerState:
    """Holds the shared coin stream; every client observes the same flips."""

    coin_stream: RngStream
    round: int = 0
    log: CommLog = field(default_factory=CommLog)


@dataclass
class Fleet:
    """Batched client states: row i is client i's iterate / control variate."""

    x: np.ndarray  # (n, joint)
    h: np.ndarray  # (n, joint)
    sample_streams: list
    est: EstimatorState

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.h = np.asarray(self.h, dtype=np.float64)
        if self.x.shape != self.h.shape or self.x.ndim != 2:
            raise DimensionError("client iterates and control variates must be (n, d') arrays")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def stacked(self) -> np.ndarray:
        return self.x.ravel()


@dataclass(frozen=True)
class SyncSchedule:
    """When baselines average: an independent coin per round, or every k-th round."""

    kind: str
    p: float | None = None
    k: int | None = None

    def __post_init__(self):
        if self.kind == "bernoulli":
            if self.p is None or not 0 < self.p <= 1:
                raise ParameterError(f"sync probability must be in (0, 1], got {self.p}")
        elif self.kind == "every-k":
            if self.k is None or self.k < 1:
                raise ParameterError(f"sync period must be >= 1, got {self.k}")
        else:
            raise ParameterError(f"unknown schedule kind {self.kind!r}")

    def decide(self, round_index: int, coin_stream: RngStream) -> bool:
        if self.kind == "bernoulli":
            return bool(coin_stream.bernoulli(self.p))
        return (round_index + 1) % self.k == 0


def sync_every(k: int) -> SyncSchedule:
    return SyncSchedule(kind="every-k", k=k)


def sync_bernoulli(p: float) -> SyncSchedule:
    return SyncSchedule(kind="bernoulli", p=p)


# -- consensus bridge -------------------------------------------------------


def consensus_lift(z: np.ndarray, n: int) -> np.ndarray:
    """Stack n copies of the shared variable."""
    return np.tile(np.asarray(z, dtype=np.float64), n)


def consensus_prox(x: np.ndarray, n: int) -> np.ndarray:
    """Replace every block with the blockwise mean (the scale is irrelevant:
    the consensus regularizer's prox is an exact projection)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size % n != 0:
        raise DimensionError(f"stacked dimension {x.size} not divisible by {n} blocks")
    rows = x.reshape(n, -1)
    return np.tile(rows.mean(axis=0), n)


def make_consensus_prox(n: int):
    """Prox oracle (x, alpha) -> blockwise averaging, for the centralized solver."""

    def prox(x, alpha):
        return consensus_prox(x, n)

    return prox


def _rows_onto_simplex(v: np.ndarray) -> np.ndarray:
    """Sort-and-threshold simplex projection applied to every row at once."""
    d = v.shape[1]
    u = np.sort(v, axis=1)[:, ::-1]
    css = np.cumsum(u, axis=1) - 1.0
    cond = u - css / np.arange(1, d + 1) > 0
    rho = d - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(v.shape[0]), rho] / (rho + 1)
    return np.maximum(v - tau[:, None], 0.0)


def blockwise_simplex(d1: int):
    """Row projection onto the product of two standard simplices (blocks d1 | rest)."""

    def project(rows: np.ndarray) -> np.ndarray:
        return np.concatenate(
            [_rows_onto_simplex(rows[:, :d1]), _rows_onto_simplex(rows[:, d1:])], axis=1)

    return project


def constrained_round(round_op, projection):
    """Bind a projection into a round operator (projected local methods)."""
    return functools.partial(round_op, projection=projection)


# -- rounds -----------------------------------------------------------------


def _guard_rows(rows: np.ndarray, t: int):
    if not np.all(np.isfinite(rows)) or float(np.linalg.norm(rows)) > DIVERGENCE_LIMIT:
        raise DivergenceError(f"client iterates diverged at round {t}", iteration=t)


def fl_round(fleet: Fleet, server: ServerState, cfg: SolverConfig,
             handle: OperatorHandle, projection=None) -> bool:
    """One prox-skipping round: local control-variate steps, optional averaging.

    Returns whether a communication happened.  With ``projection`` set,
    every client's end-of-round iterate is projected (skip rounds) and the
    averaged model is projected (communication rounds) before the control
    variates are updated.
    """
    gamma, p = cfg.gamma, cfg.p
    theta = server.coin_stream.bernoulli(p)
    g = client_estimate_rows(handle, fleet.x, fleet.est, fleet.sample_streams)
    x_hat = fleet.x - gamma * (g - fleet.h)
    if theta:
        shifted = x_hat - (gamma / p) * fleet.h
        avg = shifted.mean(axis=0)
        if projection is not None:
            avg = projection(avg[None, :])[0]
        x_next = np.tile(avg, (fleet.n, 1))
    else:
        x_next = projection(x_hat) if projection is not None else x_hat
    fleet.h = fleet.h + (p / gamma) * (x_next - x_hat)
    fleet.x = x_next
    server.round += 1
    server.log.record_round(bool(theta), fleet.n)
    _guard_rows(fleet.x, server.round)
    return bool(theta)


def fl_lsvrg_round(fleet: Fleet, server: ServerState, cfg: SolverConfig,
                   handle: OperatorHandle, projection=None) -> bool:
    """One variance-reduced round; the server broadcasts both coins (zeta, theta)."""
    if fleet.est.kind != "fl-lsvrg":
        raise ParameterError("fl_lsvrg_round needs an fl-lsvrg estimator state")
    if cfg.q is None:
        raise ParameterError("config must set the reference probability q")
    gamma, p = cfg.gamma, cfg.p
    zeta = server.coin_stream.bernoulli(cfg.q)
    theta = server.coin_stream.bernoulli(p)
    g = client_estimate_rows(handle, fleet.x, fleet.est, fleet.sample_streams,
                             refresh=zeta)
    x_hat = fleet.x - gamma * (g - fleet.h)
    if theta:
        shifted = x_hat - (gamma / p) * fleet.h
        avg = shifted.mean(axis=0)
        if projection is not None:
            avg = projection(avg[None, :])[0]
        x_next = np.tile(avg, (fleet.n, 1))
    else:
        x_next = projection(x_hat) if projection is not None else x_hat
    fleet.h = fleet.h + (p / gamma) * (x_next - x_hat)
    fleet.x = x_next
    server.round += 1
    server.log.record_round(bool(theta), fleet.n)
    _guard_rows(fleet.x, server.round)
    return bool(theta)


def local_sgda_round(fleet: Fleet, server: ServerState, schedule: SyncSchedule,
                     gamma: float, handle: OperatorHandle, projection=None) -> bool:
    """Local descent-ascent baseline: no control variates, no shift before averaging."""
    synced = schedule.decide(server.round, server.coin_stream)
    g = client_estimate_rows(handle, fleet.x, fleet.est, fleet.sample_streams)
    x_next = fleet.x - gamma * g
    if projection is not None:
        x_next = projection(x_next)
    if synced:
        avg = x_next.mean(axis=0)
        if projection is not None:
            avg = projection(avg[None, :])[0]
        x_next = np.tile(avg, (fleet.n, 1))
    fleet.x = x_next
    server.round += 1
    server.log.record_round(synced, fleet.n)
    _guard_rows(fleet.x, server.round)
    return synced


def local_seg_round(fleet: Fleet, server: ServerState, schedule: SyncSchedule,
                    gamma1: float, gamma2: float, handle: OperatorHandle,
                    projection=None) -> bool:
    """Local extragradient baseline: extrapolate, then update at the midpoint."""
    if not gamma1 >= gamma2 > 0:
        raise ParameterError("extrapolation step must satisfy gamma1 >= gamma2 > 0")
    synced = schedule.decide(server.round, server.coin_stream)
    g1 = client_estimate_rows(handle, fleet.x, fleet.est, fleet.sample_streams)
    x_mid = fleet.x - gamma1 * g1
    if projection is not None:
        x_mid = projection(x_mid)
    g2 = client_estimate_rows(handle, x_mid, fleet.est, fleet.sample_streams)
    x_next = fleet.x - gamma2 * g2
    if projection is not None:
        x_next = projection(x_next)
    if synced:
        avg = x_next.mean(axis=0)
        if projection is not None:
            avg = projection(avg[None, :])[0]
        x_next = np.tile(avg, (fleet.n, 1))
    fleet.x = x_next
    server.round += 1
    server.log.record_round(synced, fleet.n)
    _guard_rows(fleet.x, server.round)
    return synced


# -- stream plumbing and the equivalence check ------------------------------


def split_run_streams(seed: int, n: int, label: str = ""):
    """Derive the (coin, per-client sample) stream family for one run."""
    master = RngStream(seed)
    prefix = f"{label}/" if label else ""
    coin = master.split(f"{prefix}coin")
    samples = [master.split(f"{prefix}client-{i}-samples") for i in range(n)]
    return coin, samples


def make_fleet(handle: OperatorHandle, kind: str, seed: int, x0_rows=None,
               q: float | None = None, noise_scale: float = 0.0,
               label: str = "") -> tuple[Fleet, ServerState, ConsensusHandle]:
    """Initialize clients, server, and the lifted handle for one federated run."""
    n, dj = handle.dims.n, handle.dims.joint
    lifted = ConsensusHandle(handle)
    if x0_rows is None:
        x0_rows = np.zeros((n, dj))
    x0_rows = np.asarray(x0_rows, dtype=np.float64)
    coin, samples = split_run_streams(seed, n, label)
    est = init_estimator(lifted, kind, x0_rows.ravel(), q=q, noise_scale=noise_scale)
    fleet = Fleet(x=x0_rows.copy(), h=np.zeros_like(x0_rows),
                  sample_streams=samples, est=est)
    return fleet, ServerState(coin_stream=coin), lifted


def run_consensus_equivalence(handle: OperatorHandle, gamma: float, p: float,
                              seed: int, rounds: int, kind: str = "full",
                              q: float | None = None, noise_scale: float = 0.0,
                              x0=None) -> float:
    """Max deviation between the centralized consensus run and the federated run.

    Both sides are seeded from the same master stream family; the
    executions are algebraically identical, so the deviation should sit at
    zero up to nothing at all (the arithmetic is shared).
    """
    n, dj = handle.dims.n, handle.dims.joint
    lifted = ConsensusHandle(handle)
    if x0 is None:
        x0 = np.zeros(n * dj)
    x0 = np.asarray(x0, dtype=np.float64)
    cfg = SolverConfig(gamma=gamma, p=p, q=q, iterations=rounds)

    coin_c, samples_c = split_run_streams(seed, n)
    est_c = init_estimator(lifted, kind, x0, q=q, noise_scale=noise_scale)
    state = SolverState(x=x0.copy(), h=np.zeros_like(x0), est=est_c)
    prox = make_consensus_prox(n)

    coin_f, samples_f = split_run_streams(seed, n)
    est_f = init_estimator(lifted, kind, x0, q=q, noise_scale=noise_scale)
    fleet = Fleet(x=x0.reshape(n, dj).copy(), h=np.zeros((n, dj)),
                  sample_streams=samples_f, est=est_f)
    server = ServerState(coin_stream=coin_f)

    deviation = 0.0
    for _ in range(rounds):
        if kind == "fl-lsvrg":
            # the server draws zeta then theta from one stream; alias ref/coin
            lsvrgda_step(state, cfg, lifted, prox, coin_c, coin_c, samples_c)
            fl_lsvrg_round(fleet, server, cfg, handle)
        else:
            proxskip_step(state, cfg, lifted, prox, coin_c, samples_c)
            fl_round(fleet, server, cfg, handle)
        deviation = max(deviation,
                        float(np.linalg.norm(state.x - fleet.stacked())))
    return deviation
