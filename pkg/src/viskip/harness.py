"""Config-driven experiment harness.

Configs are INI-style text (sections of ``key = value`` pairs, diff-able
and hand-editable); see README for the schema.  Every run writes one CSV
per (algorithm, seed) with the trajectory and one JSON manifest with the
resolved parameters.  Reruns with the same config and master seed are
bit-identical (wall-clock timing is off by default for that reason).
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import solvers
from .errors import ConfigError, DivergenceError, StudyError, TuningError
from .estimators import init_estimator, sigma_star_sq, spec_for
from .federation import (
    Fleet,
    ServerState,
    SyncSchedule,
    blockwise_simplex,
    fl_lsvrg_round,
    fl_round,
    local_seg_round,
    local_sgda_round,
    split_run_streams,
    sync_bernoulli,
    sync_every,
)
from .metrics import RoundRecord, RunningAverage, Trajectory, duality_gap, relative_error
from .numerics import RngStream
from .problems import (
    ConsensusHandle,
    MatrixGame,
    ShiftedLinearProblem,
    generate_bilinear,
    generate_matrix_game,
    generate_quadratic_game,
    generate_rls,
    heterogeneity_dial,
    load_rls_csv,
    make_shifted_linear,
    minimax_to_operator,
    rls_decompose,
)
from .solvers import SolverConfig, SolverState, identity_prox, proximal_sgda_step, select_parameters

ALGORITHMS = (
    "proxskip-gda-fl", "proxskip-sgda-fl", "proxskip-lsvrgda-fl",
    "local-gda", "local-sgda", "local-eg", "local-seg", "proximal-sgda",
)
PROBLEM_TYPES = (
    "quadratic-game", "rls-synthetic", "rls-csv", "bilinear",
    "shifted-linear", "matrix-game",
)
SWEEP_GRID = (1, 2, 4, 8, 16, 64, 128, 256, 512, 1024, 2048)  # 32 intentionally absent
CSV_HEADER = "round,communications,relative_error,lyapunov,duality_gap,wall_time_ns"
OUT_ENV_VAR = "VISKIP_OUT"
MAX_STUDY_ITERATIONS = 10_000_000


@dataclass
class ExperimentConfig:
    """Validated, typed view of one experiment config."""

    problem: dict
    algorithms: list[str]
    estimator: str
    noise_scale: float
    policy: str
    eps: float
    gamma: float | None
    p: float | None
    q: float | None
    baseline_gamma: float | None
    sync_kind: str
    sync_k: int | None
    rounds: int
    target_error: float | None
    seeds: list[int]
    metric_names: list[str]
    error_vector: str
    record_every: int
    timings: bool
    out_dir: str
    fingerprint: str = field(default="", compare=False)


def _get(section, key, cast, default=None, *, required=False, where=""):
    if key not in section:
        if required:
            raise ConfigError(f"{where}.{key}", "missing required field")
        return default
    raw = section[key]
    try:
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}", f"cannot parse {raw!r} as {cast.__name__}") from None


def _float_list(raw: str) -> list[float]:
    return [float(tok) for tok in raw.replace(",", " ").split()]


def _int_list(raw: str) -> list[int]:
    return [int(tok) for tok in raw.replace(",", " ").split()]


def parse_config(source) -> ExperimentConfig:
    """Parse and validate a config from a path or from config text."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    text = Path(source).read_text() if os.path.exists(str(source)) else str(source)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", f"unparsable config: {exc}") from None
    if "problem" not in parser:
        raise ConfigError("problem", "missing section")
    prob = dict(parser["problem"])
    ptype = prob.get("type")
    if ptype not in PROBLEM_TYPES:
        raise ConfigError("problem.type", f"must be one of {PROBLEM_TYPES}, got {ptype!r}")

    alg_section = parser["algorithm"] if "algorithm" in parser else {}
    names_raw = _get(alg_section, "name", str, required=True, where="algorithm")
    algorithms = [tok.strip() for tok in names_raw.split(",") if tok.strip()]
    for name in algorithms:
        if name not in ALGORITHMS:
            raise ConfigError("algorithm.name", f"unknown algorithm {name!r}")
    estimator = _get(alg_section, "estimator", str, default="auto", where="algorithm")
    if estimator not in ("auto", "full", "sampled", "gaussian", "lsvrg"):
        raise ConfigError("algorithm.estimator", f"unknown estimator {estimator!r}")
    noise_scale = _get(alg_section, "noise_scale", float, default=0.1, where="algorithm")

    step = parser["stepsize"] if "stepsize" in parser else {}
    policy = _get(step, "policy", str, default="auto", where="stepsize")
    if policy not in ("auto", "manual") + solvers.POLICIES:
        raise ConfigError("stepsize.policy", f"unknown policy {policy!r}")
    eps = _get(step, "epsilon", float, default=1e-4, where="stepsize")
    if eps <= 0:
        raise ConfigError("stepsize.epsilon", "must be positive")
    gamma = _get(step, "gamma", float, where="stepsize")
    p = _get(step, "p", float, where="stepsize")
    q = _get(step, "q", float, where="stepsize")
    baseline_gamma = _get(step, "baseline_gamma", float, where="stepsize")
    if policy == "manual" and gamma is None:
        raise ConfigError("stepsize.gamma", "manual policy needs an explicit gamma")

    run = parser["run"] if "run" in parser else {}
    rounds = _get(run, "rounds", int, default=1000, where="run")
    if rounds < 1:
        raise ConfigError("run.rounds", "must be >= 1")
    target_error = _get(run, "target_error", float, where="run")
    seeds = _get(run, "seeds", _int_list, default=[1], where="run")
    if not seeds:
        raise ConfigError("run.seeds", "need at least one seed")
    metric_names = _get(run, "metrics", str, default="relative_error", where="run")
    metric_names = [tok.strip() for tok in metric_names.split(",") if tok.strip()]
    for name in metric_names:
        if name not in ("relative_error", "lyapunov", "duality_gap"):
            raise ConfigError("run.metrics", f"unknown metric {name!r}")
    error_vector = _get(run, "error_vector", str, default="stacked", where="run")
    if error_vector not in ("stacked", "average"):
        raise ConfigError("run.error_vector", "must be 'stacked' or 'average'")
    record_every = _get(run, "record_every", int, default=1, where="run")
    if record_every < 1:
        raise ConfigError("run.record_every", "must be >= 1")
    sync_kind = _get(run, "sync", str, default="every-k", where="run")
    if sync_kind not in ("every-k", "bernoulli"):
        raise ConfigError("run.sync", "must be 'every-k' or 'bernoulli'")
    sync_k = _get(run, "sync_k", int, where="run")

    out = parser["output"] if "output" in parser else {}
    out_dir = _get(out, "dir", str, default=os.environ.get(OUT_ENV_VAR, "results"),
                   where="output")
    timings = _get(out, "timings", bool, default=False, where="output")

    fingerprint = config_hash(parser)
    return ExperimentConfig(
        problem=prob, algorithms=algorithms, estimator=estimator,
        noise_scale=noise_scale, policy=policy, eps=eps, gamma=gamma, p=p, q=q,
        baseline_gamma=baseline_gamma, sync_kind=sync_kind, sync_k=sync_k,
        rounds=rounds, target_error=target_error, seeds=seeds,
        metric_names=metric_names, error_vector=error_vector,
        record_every=record_every, timings=timings, out_dir=out_dir,
        fingerprint=fingerprint,
    )


def config_hash(parser: configparser.ConfigParser) -> str:
    """Hash of every semantically meaningful field (the output section is excluded)."""
    items = []
    for section in sorted(parser.sections()):
        if section == "output":
            continue
        for key in sorted(parser[section]):
            items.append(f"{section}.{key}={parser[section][key].strip()}")
    digest = hashlib.sha256("\n".join(items).encode("utf-8")).hexdigest()
    return digest[:16]


# -- problem construction ----------------------------------------------------


def build_handle(prob: dict):
    """Instantiate the configured problem and its operator handle."""
    ptype = prob["type"]
    seed = _get(prob, "seed", int, default=0, where="problem")
    rng = RngStream(seed, stream_id=17)
    if ptype == "quadratic-game":
        n = _get(prob, "n", int, default=20, where="problem")
        m = _get(prob, "samples", int, default=100, where="problem")
        d1 = _get(prob, "d1", int, default=20, where="problem")
        d2 = _get(prob, "d2", int, default=d1, where="problem")
        ranges = {}
        for blk, lo, hi in (("a", 0.01, 1.0), ("b", 0.0, 1.0), ("c", 0.01, 1.0)):
            ranges[blk] = (
                _get(prob, f"{blk}_min", float, default=lo, where="problem"),
                _get(prob, f"{blk}_max", float, default=hi, where="problem"),
            )
        game = generate_quadratic_game(rng, n, m, d1, d2, a_range=ranges["a"],
                                       b_range=ranges["b"], c_range=ranges["c"])
        return minimax_to_operator(game)
    if ptype == "rls-synthetic":
        rows = _get(prob, "rows", int, default=200, where="problem")
        cols = _get(prob, "cols", int, default=20, where="problem")
        n = _get(prob, "n", int, default=20, where="problem")
        lam = _get(prob, "lam", float, default=50.0, where="problem")
        problem = generate_rls(rng, rows, cols, n, lam)
        return minimax_to_operator(problem)
    if ptype == "rls-csv":
        path = _get(prob, "path", str, required=True, where="problem")
        target = _get(prob, "target", str, required=True, where="problem")
        n = _get(prob, "n", int, default=20, where="problem")
        lam = _get(prob, "lam", float, default=50.0, where="problem")
        problem = load_rls_csv(path, target, n, lam)
        return minimax_to_operator(problem)
    if ptype == "bilinear":
        n = _get(prob, "n", int, default=100, where="problem")
        d1 = _get(prob, "d1", int, default=20, where="problem")
        d2 = _get(prob, "d2", int, default=d1, where="problem")
        lam = _get(prob, "lam", float, default=0.1, where="problem")
        s_max = _get(prob, "s_max", float, where="problem")
        t_max = _get(prob, "t_max", float, where="problem")
        s_const = _get(prob, "s_const", float, default=10.0, where="problem")
        t_const = _get(prob, "t_const", float, default=1.0, where="problem")
        problem = generate_bilinear(rng, n, d1, d2, lam, s_const=s_const, s_max=s_max,
                                    t_const=t_const, t_max=t_max)
        return minimax_to_operator(problem)
    if ptype == "shifted-linear":
        delta = _get(prob, "delta", float, default=1.0, where="problem")
        diag = _get(prob, "m_diag", _float_list, default=[1.0, 1.0], where="problem")
        skew = _get(prob, "m_skew", float, default=0.0, where="problem")
        if len(diag) != 2:
            raise ConfigError("problem.m_diag", "heterogeneity dial is 2-dimensional")
        mat = np.diag(diag) + np.array([[0.0, skew], [-skew, 0.0]])
        problem = heterogeneity_dial(delta, m=mat)
        return minimax_to_operator(problem)
    if ptype == "matrix-game":
        # defaults d=50, n=10 are conventions, not published values
        n = _get(prob, "n", int, default=10, where="problem")
        d = _get(prob, "d", int, default=50, where="problem")
        decay = _get(prob, "decay", float, default=0.8, where="problem")
        shared = _get(prob, "shared", bool, default=False, where="problem")
        problem = generate_matrix_game(rng, n, d, decay=decay, shared=shared)
        return minimax_to_operator(problem)
    raise ConfigError("problem.type", f"unhandled type {ptype!r}")


# -- parameter resolution ----------------------------------------------------

_DEFAULT_ESTIMATOR = {
    "proxskip-gda-fl": "full",
    "proxskip-sgda-fl": "sampled",
    "proxskip-lsvrgda-fl": "lsvrg",
    "local-gda": "full",
    "local-sgda": "sampled",
    "local-eg": "full",
    "local-seg": "sampled",
    "proximal-sgda": "sampled",
}

_DEFAULT_POLICY = {
    "full": "gda-per-client",
    "sampled": "sgda-per-sample",
    "gaussian": "sgda",
    "lsvrg": "lsvrg",
}


def _resolve_estimator(cfg: ExperimentConfig, algorithm: str) -> str:
    kind = cfg.estimator if cfg.estimator != "auto" else _DEFAULT_ESTIMATOR[algorithm]
    if algorithm == "proxskip-gda-fl" and kind != "full":
        raise ConfigError("algorithm.estimator", "the deterministic variant uses the full estimator")
    if algorithm == "proxskip-lsvrgda-fl" and kind != "lsvrg":
        raise ConfigError("algorithm.estimator", "the variance-reduced variant uses the lsvrg estimator")
    return kind


def _fl_kind(kind: str) -> str:
    return {"full": "full", "gaussian": "gaussian", "sampled": "fl-sampled",
            "lsvrg": "fl-lsvrg"}[kind]


def _lifted(handle) -> ConsensusHandle:
    """Memoized consensus lift (per-sample spectra are costly to recompute)."""
    cached = getattr(handle, "_lifted_cache", None)
    if cached is None:
        cached = ConsensusHandle(handle)
        handle._lifted_cache = cached
    return cached


def resolve_solver_config(cfg: ExperimentConfig, handle, algorithm: str):
    """Resolve (SolverConfig, estimator kind, certificate) for one algorithm.

    Federated algorithms are parameterized on the consensus-lifted problem,
    so the per-client policies coincide with the centralized rules there.
    Problems without a strong-monotonicity modulus (matrix games) require a
    manual step size.
    """
    est = _resolve_estimator(cfg, algorithm)
    centralized = algorithm == "proximal-sgda"
    target = handle if centralized else _lifted(handle)
    kind = est if centralized else _fl_kind(est)
    params = target.params()
    policy = cfg.policy
    if policy == "auto":
        policy = _DEFAULT_POLICY[est]
    if policy == "manual" or params.mu is None:
        if cfg.gamma is None:
            raise ConfigError("stepsize.gamma",
                              "this problem/policy combination needs a manual step size")
        p = cfg.p
        if p is None:
            p = min(1.0, math.sqrt(cfg.gamma * params.mu)) if params.mu else 1.0
        solver_cfg = SolverConfig(gamma=cfg.gamma, p=p, q=cfg.q, iterations=cfg.rounds)
        if est == "lsvrg":
            if solver_cfg.q is None:
                raise ConfigError("stepsize.q", "variance reduction needs a manual q here")
            solver_cfg.lyapunov_weight = 4.0 / solver_cfg.q
    else:
        pre_spec = None
        if policy == "sgda":
            pre_spec = spec_for(target, kind, q=cfg.q, noise_scale=cfg.noise_scale)
        solver_cfg = select_parameters(policy, params, pre_spec, cfg.eps,
                                       gamma=cfg.gamma, p=cfg.p, q=cfg.q,
                                       iterations=cfg.rounds)
    if centralized:
        # the plain proximal method applies its prox every round
        solver_cfg = SolverConfig(gamma=solver_cfg.gamma, p=1.0, q=solver_cfg.q,
                                  lyapunov_weight=solver_cfg.lyapunov_weight,
                                  iterations=solver_cfg.iterations)
    try:
        spec = spec_for(target, kind, q=solver_cfg.q, noise_scale=cfg.noise_scale)
    except Exception:
        spec = None
    return solver_cfg, est, spec, params


# -- single runs --------------------------------------------------------------


class _Recorder:
    """Accumulates per-round metrics into a trajectory."""

    def __init__(self, cfg: ExperimentConfig, handle, lifted, algorithm, seed):
        self.cfg = cfg
        self.handle = handle
        self.lifted = lifted
        self.algorithm = algorithm
        self.is_matrix_game = isinstance(handle.problem, MatrixGame)
        self.track_error = ("relative_error" in cfg.metric_names
                            and handle.has_unique_star)
        self.track_lyapunov = ("lyapunov" in cfg.metric_names
                               and handle.has_unique_star
                               and algorithm.startswith("proxskip"))
        self.track_gap = ("duality_gap" in cfg.metric_names or self.is_matrix_game) \
            and self.is_matrix_game
        self.trajectory = Trajectory(config_fingerprint=cfg.fingerprint, seed=seed)
        self.gap_average = RunningAverage()
        self.x0_flat = None
        self.star_flat = None
        self.h_star = None
        self._t0 = time.perf_counter_ns()

    def reference(self, x_flat):
        self.x0_flat = np.array(x_flat)
        if self.track_error or self.track_lyapunov:
            self.star_flat = self.lifted.star if self.lifted is not None else self.handle.star
            if self.track_lyapunov:
                target = self.lifted if self.lifted is not None else self.handle
                self.h_star = target.full(self.star_flat)

    def update_gap_average(self, model):
        if self.track_gap:
            self.gap_average.update(model)

    def record(self, round_idx, communications, x_flat, h_flat=None,
               solver_cfg=None, est_state=None, force=False):
        if round_idx % self.cfg.record_every and not force:
            return None
        rel = lya = gap = None
        if self.track_error:
            rel = relative_error(x_flat, self.x0_flat, self.star_flat)
        if self.track_lyapunov and solver_cfg is not None:
            ratio = solver_cfg.gamma / solver_cfg.p
            lya = float(np.sum((x_flat - self.star_flat) ** 2))
            if h_flat is not None:
                lya += ratio ** 2 * float(np.sum((h_flat - self.h_star) ** 2))
            if (est_state is not None and est_state.sigma_t_sq is not None
                    and solver_cfg.lyapunov_weight > 0):
                lya += solver_cfg.lyapunov_weight * solver_cfg.gamma ** 2 * est_state.sigma_t_sq
        if self.track_gap and self.gap_average.mean is not None:
            d = self.handle.dims.d1
            avg = self.gap_average.mean
            gap = duality_gap(self.handle.problem, avg[:d], avg[d:])
        wall = time.perf_counter_ns() - self._t0 if self.cfg.timings else 0
        record = RoundRecord(round=round_idx, communications=communications,
                             relative_error=rel, lyapunov=lya, duality_gap=gap,
                             wall_time_ns=wall)
        self.trajectory.append(record)
        return record


def _client_x0(cfg: ExperimentConfig, handle):
    n, dj = handle.dims.n, handle.dims.joint
    rows = np.zeros((n, dj))
    if isinstance(handle.problem, MatrixGame):
        # start from the uniform mixed strategy (feasible)
        d = handle.dims.d1
        rows[:, :d] = 1.0 / d
        rows[:, d:] = 1.0 / d
    return rows


def run_single(cfg: ExperimentConfig, handle, algorithm: str, seed: int) -> Trajectory:
    """Run one (algorithm, seed) pair and return its trajectory."""
    solver_cfg, est, spec, params = resolve_solver_config(cfg, handle, algorithm)
    if algorithm == "proximal-sgda":
        return _run_centralized(cfg, handle, algorithm, seed, solver_cfg, est)
    return _run_federated(cfg, handle, algorithm, seed, solver_cfg, est, params)


def _run_centralized(cfg, handle, algorithm, seed, solver_cfg, est):
    _, samples = split_run_streams(seed, 1, label=algorithm)
    sample_stream = samples[0]
    x0 = np.zeros(handle.dims.joint)
    state = SolverState(x=x0.copy(), h=np.zeros_like(x0),
                        est=init_estimator(handle, est, x0, q=solver_cfg.q,
                                           noise_scale=cfg.noise_scale))
    rec = _Recorder(cfg, handle, None, algorithm, seed)
    rec.reference(x0)
    rec.record(0, 0, state.x, state.h, solver_cfg, state.est, force=True)
    comms = 0
    for t in range(1, solver_cfg.iterations + 1):
        proximal_sgda_step(state, solver_cfg, handle, identity_prox, sample_stream)
        comms += 1
        record = rec.record(t, comms, state.x, state.h, solver_cfg, state.est,
                            force=t == solver_cfg.iterations)
        if _reached_target(cfg, record):
            break
    return rec.trajectory


def _reached_target(cfg, record):
    return (cfg.target_error is not None and record is not None
            and record.relative_error is not None
            and record.relative_error <= cfg.target_error)


def _run_federated(cfg, handle, algorithm, seed, solver_cfg, est, params):
    n = handle.dims.n
    kind = _fl_kind(est)
    coin, samples = split_run_streams(seed, n, label=algorithm)
    lifted = _lifted(handle)
    x0_rows = _client_x0(cfg, handle)
    est_state = init_estimator(lifted, kind, x0_rows.ravel(), q=solver_cfg.q,
                               noise_scale=cfg.noise_scale)
    fleet = Fleet(x=x0_rows.copy(), h=np.zeros_like(x0_rows),
                  sample_streams=samples, est=est_state)
    server = ServerState(coin_stream=coin)
    projection = blockwise_simplex(handle.dims.d1) \
        if isinstance(handle.problem, MatrixGame) else None

    schedule = None
    if algorithm.startswith("local"):
        if cfg.sync_kind == "bernoulli":
            schedule = sync_bernoulli(solver_cfg.p)
        else:
            k = cfg.sync_k if cfg.sync_k else max(1, round(1.0 / solver_cfg.p))
            schedule = sync_every(k)
    gamma_b = cfg.baseline_gamma
    if gamma_b is None:
        if algorithm in ("local-eg", "local-seg"):
            gamma_b = 1.0 / (2.0 * params.lipschitz)
        else:
            gamma_b = solver_cfg.gamma

    rec = _Recorder(cfg, handle, lifted, algorithm, seed)
    rec.reference(x0_rows.ravel())
    if rec.track_gap:
        rec.update_gap_average(x0_rows.mean(axis=0))
    rec.record(0, 0, fleet.stacked(), fleet.h.ravel(), solver_cfg, est_state, force=True)

    def mode_vector():
        if cfg.error_vector == "average":
            return np.tile(fleet.x.mean(axis=0), n)
        return fleet.stacked()

    for t in range(1, cfg.rounds + 1):
        if algorithm in ("proxskip-gda-fl", "proxskip-sgda-fl"):
            communicated = fl_round(fleet, server, solver_cfg, handle, projection)
        elif algorithm == "proxskip-lsvrgda-fl":
            communicated = fl_lsvrg_round(fleet, server, solver_cfg, handle, projection)
        elif algorithm in ("local-gda", "local-sgda"):
            communicated = local_sgda_round(fleet, server, schedule, gamma_b, handle,
                                            projection)
        elif algorithm in ("local-eg", "local-seg"):
            communicated = local_seg_round(fleet, server, schedule, gamma_b, gamma_b,
                                           handle, projection)
        else:
            raise ConfigError("algorithm.name", f"unhandled algorithm {algorithm!r}")
        if communicated:
            rec.update_gap_average(fleet.x.mean(axis=0))
        record = rec.record(t, server.log.communications, mode_vector(),
                            fleet.h.ravel(), solver_cfg, est_state,
                            force=t == cfg.rounds)
        if _reached_target(cfg, record):
            break
    return rec.trajectory


# -- file emission -------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def write_trajectory_csv(path: Path, trajectory: Trajectory):
    lines = [CSV_HEADER]
    for r in trajectory.records:
        lines.append(",".join([
            str(r.round), str(r.communications), _fmt(r.relative_error),
            _fmt(r.lyapunov), _fmt(r.duality_gap), str(r.wall_time_ns),
        ]))
    path.write_text("\n".join(lines) + "\n")


def _manifest(cfg, algorithm, seed, solver_cfg, est, spec, params, handle, status):
    sigma = None
    try:
        target = handle if algorithm == "proximal-sgda" else _lifted(handle)
        kind = est if algorithm == "proximal-sgda" else _fl_kind(est)
        sigma = sigma_star_sq(target, kind, noise_scale=cfg.noise_scale)
    except Exception:
        sigma = None
    predicted = None
    if spec is not None and params.mu is not None:
        it, comm = solvers.predicted_complexity(params, spec, cfg.eps)
        predicted = {"iterations": it, "communications": comm}
    return {
        "algorithm": algorithm,
        "estimator": est,
        "seed": seed,
        "gamma": solver_cfg.gamma,
        "p": solver_cfg.p,
        "q": solver_cfg.q,
        "lyapunov_weight": solver_cfg.lyapunov_weight,
        "mu": params.mu,
        "ell": params.ell,
        "ell_hat": params.ell_hat,
        "kappa": params.kappa,
        "sigma_star_sq": sigma,
        "predicted": predicted,
        "config_hash": cfg.fingerprint,
        "status": status,
    }


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run every (algorithm, seed) pair, emitting CSVs and manifests.

    Returns {"files": [...], "failures": [...]}.  Raises
    :class:`DivergenceError` after writing everything if any run diverged.
    """
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    handle = build_handle(cfg.problem)
    files, failures = [], []
    for algorithm in cfg.algorithms:
        solver_cfg, est, spec, params = resolve_solver_config(cfg, handle, algorithm)
        for seed in cfg.seeds:
            status = "ok"
            try:
                trajectory = run_single(cfg, handle, algorithm, seed)
            except DivergenceError as exc:
                status = f"diverged at round {exc.iteration}"
                failures.append((algorithm, seed, status))
                trajectory = None
            stem = f"{algorithm}-seed{seed}"
            if trajectory is not None:
                csv_path = out / f"{stem}.csv"
                write_trajectory_csv(csv_path, trajectory)
                files.append(str(csv_path))
            manifest_path = out / f"{stem}.manifest.json"
            manifest_path.write_text(json.dumps(
                _manifest(cfg, algorithm, seed, solver_cfg, est, spec, params,
                          handle, status), indent=2, sort_keys=True) + "\n")
            files.append(str(manifest_path))
    if failures:
        raise DivergenceError(f"{len(failures)} run(s) diverged: {failures}",
                              iteration=None)
    return {"files": files, "failures": failures}


def params_report(cfg: ExperimentConfig) -> dict:
    """Resolved problem parameters, certificates, and step sizes for each algorithm."""
    handle = build_handle(cfg.problem)
    report = {"problem": cfg.problem.get("type"), "algorithms": {}}
    for algorithm in cfg.algorithms:
        solver_cfg, est, spec, params = resolve_solver_config(cfg, handle, algorithm)
        entry = {
            "estimator": est,
            "gamma": solver_cfg.gamma,
            "p": solver_cfg.p,
            "q": solver_cfg.q,
            "lyapunov_weight": solver_cfg.lyapunov_weight,
            "mu": params.mu,
            "ell": params.ell,
            "ell_hat": params.ell_hat,
            "kappa": params.kappa,
        }
        target = handle if algorithm == "proximal-sgda" else _lifted(handle)
        kind = est if algorithm == "proximal-sgda" else _fl_kind(est)
        try:
            entry["sigma_star_sq"] = sigma_star_sq(target, kind,
                                                   noise_scale=cfg.noise_scale)
        except Exception:
            entry["sigma_star_sq"] = None
        if spec is not None:
            entry["certificate"] = {"A": spec.a, "B": spec.b, "C": spec.c,
                                    "D1": spec.d1, "D2": spec.d2, "rho": spec.rho}
            if params.mu is not None:
                it, comm = solvers.predicted_complexity(params, spec, cfg.eps)
                entry["predicted_iterations"] = it
                entry["predicted_communications"] = comm
        report["algorithms"][algorithm] = entry
    return report


# -- sweep and scaling study ----------------------------------------------------


@dataclass(frozen=True)
class SweepResult:
    best_divisor: int
    best_gamma: float
    best_error: float
    table: list  # rows (divisor, gamma, seed, final_error or None)


def sweep(cfg: ExperimentConfig, grid=SWEEP_GRID) -> SweepResult:
    """Grid-search gamma = 1/(r L) over the divisor grid; pick the best final error."""
    if not grid:
        raise ConfigError("sweep.grid", "grid must be nonempty")
    handle = build_handle(cfg.problem)
    algorithm = cfg.algorithms[0]
    lifted = _lifted(handle)
    lipschitz = (handle if algorithm == "proximal-sgda" else lifted).params().lipschitz
    mu = (handle if algorithm == "proximal-sgda" else lifted).params().mu
    table = []
    best = None
    for divisor in grid:
        gamma = 1.0 / (divisor * lipschitz)
        p = cfg.p if cfg.p else (math.sqrt(gamma * mu) if mu else 1.0)
        errors = []
        for seed in cfg.seeds:
            trial = ExperimentConfig(**{**cfg.__dict__, "policy": "manual",
                                        "gamma": gamma, "p": min(p, 1.0)})
            trial.fingerprint = cfg.fingerprint
            try:
                trajectory = run_single(trial, handle, algorithm, seed)
                final = trajectory.final().relative_error
            except DivergenceError:
                final = None
            table.append((divisor, gamma, seed, final))
            if final is not None:
                errors.append(final)
        if errors:
            mean_err = float(np.mean(errors))
            if best is None or mean_err < best[2]:
                best = (divisor, gamma, mean_err)
    if best is None:
        raise TuningError("every grid point diverged")
    return SweepResult(best_divisor=best[0], best_gamma=best[1], best_error=best[2],
                       table=table)


@dataclass(frozen=True)
class StudyResult:
    slope: float
    cells: list  # rows (ratio, iterations, communications)


def scaling_study(eps: float = 1e-6, ratios=(10.0, 100.0, 1000.0, 10000.0),
                  seed: int = 1) -> StudyResult:
    """Communication count to reach eps versus the conditioning ratio ell/mu.

    Runs the deterministic skipping method (identity prox, prox calls
    counted as communications) on single-client problems F(x) = diag(1, r) x
    and fits the log-log slope.
    """
    cells = []
    for ratio in ratios:
        problem = make_shifted_linear(np.diag([1.0, ratio]), np.zeros((1, 2)))
        handle = minimax_to_operator(problem)
        params = handle.params()
        solver_cfg = select_parameters("gda-full", params, iterations=MAX_STUDY_ITERATIONS)
        coin, samples = split_run_streams(seed, 1, label=f"scaling-{ratio}")
        x0 = np.ones(2)
        state = SolverState(x=x0.copy(), h=np.zeros(2),
                            est=init_estimator(handle, "full", x0))
        star = handle.star
        denom = float(np.sum((x0 - star) ** 2))
        comms = 0
        for t in range(1, MAX_STUDY_ITERATIONS + 1):
            comms += solvers.proxskip_step(state, solver_cfg, handle, identity_prox,
                                           coin, samples[0])
            if float(np.sum((state.x - star) ** 2)) / denom <= eps:
                cells.append((ratio, t, comms))
                break
        else:
            raise StudyError(f"cell ell/mu = {ratio} did not reach {eps}")
    logs = np.log10(np.array([[c[0], c[2]] for c in cells], dtype=np.float64))
    x, y = logs[:, 0], logs[:, 1]
    var = float(np.sum((x - x.mean()) ** 2))
    slope = float(np.sum((x - x.mean()) * (y - y.mean())) / var) if var > 0 else 0.0
    return StudyResult(slope=slope, cells=cells)


def write_study_csv(path: Path, result: StudyResult):
    lines = ["ratio,iterations,communications"]
    for ratio, iterations, comms in result.cells:
        lines.append(f"{_fmt(ratio)},{iterations},{comms}")
    path.write_text("\n".join(lines) + "\n")
