import math

import numpy as np
import pytest

from viskip.errors import DimensionError, ParameterError
from viskip.estimators import init_estimator
from viskip.federation import (
    CommLog,
    Fleet,
    ServerState,
    blockwise_simplex,
    consensus_lift,
    consensus_prox,
    constrained_round,
    fl_lsvrg_round,
    fl_round,
    local_seg_round,
    local_sgda_round,
    make_consensus_prox,
    run_consensus_equivalence,
    split_run_streams,
    sync_bernoulli,
    sync_every,
)
from viskip.numerics import RngStream, project_simplex
from viskip.problems import (
    ConsensusHandle,
    ShiftedLinearProblem,
    generate_bilinear,
    generate_matrix_game,
    generate_quadratic_game,
    generate_rls,
    heterogeneity_dial,
    minimax_to_operator,
)
from viskip.solvers import SolverConfig, SolverState, identity_prox, proxskip_step


def _fleet(handle, kind="full", seed=1, q=None, x0_rows=None):
    n, dj = handle.dims.n, handle.dims.joint
    lifted = ConsensusHandle(handle)
    coin, samples = split_run_streams(seed, n)
    if x0_rows is None:
        x0_rows = np.zeros((n, dj))
    est = init_estimator(lifted, kind, x0_rows.ravel(), q=q)
    fleet = Fleet(x=x0_rows.copy(), h=np.zeros_like(x0_rows),
                  sample_streams=samples, est=est)
    return fleet, ServerState(coin_stream=coin)


class TestConsensusBridge:
    def test_lift(self):
        assert np.array_equal(consensus_lift(np.array([1.0, 2.0]), 2), [1, 2, 1, 2])

    def test_prox_blockwise_mean(self):
        assert np.array_equal(consensus_prox(np.array([1.0, 3.0, 3.0, 1.0]), 2),
                              [2, 2, 2, 2])

    def test_prox_idempotent(self, rng):
        x = rng.gaussian_vector(12)
        once = consensus_prox(x, 3)
        assert np.array_equal(consensus_prox(once, 3), once)

    def test_prox_shape_guard(self):
        with pytest.raises(DimensionError):
            consensus_prox(np.ones(5), 2)

    def test_prox_oracle_scale_free(self, rng):
        prox = make_consensus_prox(4)
        x = rng.gaussian_vector(8)
        assert np.array_equal(prox(x, 0.1), prox(x, 100.0))

    def test_prox_firmly_nonexpansive(self, rng):
        prox = make_consensus_prox(3)
        for _ in range(200):
            x, y = rng.gaussian_vector(6), rng.gaussian_vector(6)
            px, py = prox(x, 1.0), prox(y, 1.0)
            lhs = float((x - y) @ (px - py))
            assert lhs >= float(np.sum((px - py) ** 2)) - 1e-12


class TestFlRound:
    def test_single_client_matches_centralized(self):
        handle = minimax_to_operator(
            generate_quadratic_game(RngStream(2, 1), n=1, m=2, d1=2))
        cfg = SolverConfig(gamma=0.1, p=0.4)
        fleet, server = _fleet(handle, seed=5)
        lifted = ConsensusHandle(handle)
        coin, samples = split_run_streams(5, 1)
        state = SolverState(x=np.zeros(4), h=np.zeros(4),
                            est=init_estimator(lifted, "full", np.zeros(4)))
        for _ in range(30):
            fl_round(fleet, server, cfg, handle)
            proxskip_step(state, cfg, lifted, make_consensus_prox(1), coin, samples)
            assert np.array_equal(state.x, fleet.stacked())

    def test_communication_creates_consensus(self):
        handle = minimax_to_operator(
            generate_quadratic_game(RngStream(3, 1), n=4, m=2, d1=2))
        cfg = SolverConfig(gamma=0.1, p=1.0)  # every round communicates
        x0 = RngStream(8).split("x0").gaussian_vector(16).reshape(4, 4)
        fleet, server = _fleet(handle, seed=6, x0_rows=x0)
        fl_round(fleet, server, cfg, handle)
        assert np.all(fleet.x == fleet.x[0])

    def test_comm_log_counts_coins(self):
        handle = minimax_to_operator(heterogeneity_dial(2.0))
        p = 0.25
        cfg = SolverConfig(gamma=0.05, p=p)
        fleet, server = _fleet(handle, seed=7)
        total = 4000
        for _ in range(total):
            fl_round(fleet, server, cfg, handle)
        comms = server.log.communications
        assert server.log.rounds_total == total
        assert server.log.vectors_transmitted == 2 * 2 * comms
        assert abs(comms - p * total) <= 3 * math.sqrt(total * p * (1 - p))


class TestConsensusEquivalence:
    CASES = {
        "quadratic-game": lambda: minimax_to_operator(
            generate_quadratic_game(RngStream(7, 1), n=3, m=4, d1=3)),
        "rls": lambda: minimax_to_operator(
            generate_rls(RngStream(3, 2), rows=12, cols=3, n=4, lam=50.0)),
        "bilinear": lambda: minimax_to_operator(
            generate_bilinear(RngStream(5, 5), n=4, d1=3, d2=3, lam=0.5)),
        "shifted-linear": lambda: minimax_to_operator(heterogeneity_dial(10.0)),
        "matrix-game": lambda: minimax_to_operator(
            generate_matrix_game(RngStream(9, 9), n=3, d=4)),
    }

    @pytest.mark.parametrize("name", sorted(CASES))
    def test_full_estimator_all_problems(self, name):
        handle = self.CASES[name]()
        lifted = ConsensusHandle(handle)
        params = lifted.params()
        gamma = 1.0 / (2.0 * max(params.ell_i)) if params.ell_i \
            else 1.0 / (2.0 * params.lipschitz)
        p = min(1.0, math.sqrt(gamma * params.mu)) if params.mu else 0.3
        dev = run_consensus_equivalence(handle, gamma=gamma, p=p, seed=11,
                                        rounds=100, kind="full")
        assert dev <= 1e-12

    def test_single_client_is_exact(self):
        handle = minimax_to_operator(
            generate_quadratic_game(RngStream(8, 1), n=1, m=3, d1=2))
        dev = run_consensus_equivalence(handle, gamma=0.2, p=0.5, seed=4, rounds=100)
        assert dev == 0.0

    def test_sampled_and_variance_reduced(self):
        handle = self.CASES["quadratic-game"]()
        params = ConsensusHandle(handle).params()
        gamma = 1.0 / (2.0 * params.ell_hat)
        p = math.sqrt(gamma * params.mu)
        assert run_consensus_equivalence(handle, gamma, p, seed=12, rounds=100,
                                         kind="fl-sampled") <= 1e-12
        gamma = 1.0 / (6.0 * params.ell_hat)
        q = 2.0 * gamma * params.mu
        assert run_consensus_equivalence(handle, gamma, math.sqrt(gamma * params.mu),
                                         seed=13, rounds=100, kind="fl-lsvrg",
                                         q=q) <= 1e-12

    def test_gaussian_estimator(self):
        handle = self.CASES["quadratic-game"]()
        assert run_consensus_equivalence(handle, gamma=0.1, p=0.3, seed=14,
                                         rounds=60, kind="gaussian",
                                         noise_scale=0.25) <= 1e-12

    def test_mismatched_seeds_deviate(self):
        handle = self.CASES["shifted-linear"]()
        lifted = ConsensusHandle(handle)
        cfg = SolverConfig(gamma=0.2, p=0.4)
        coin_c, samples_c = split_run_streams(1, handle.dims.n)
        state = SolverState(x=np.zeros(4), h=np.zeros(4),
                            est=init_estimator(lifted, "full", np.zeros(4)))
        fleet, server = _fleet(handle, seed=2)
        deviation = 0.0
        for _ in range(50):
            proxskip_step(state, cfg, lifted, make_consensus_prox(2), coin_c, samples_c)
            fl_round(fleet, server, cfg, handle)
            deviation = max(deviation, float(np.linalg.norm(state.x - fleet.stacked())))
        assert deviation > 1e-6


class TestSharedCoins:
    def test_every_client_sees_the_same_flip(self):
        handle = minimax_to_operator(
            generate_quadratic_game(RngStream(4, 1), n=5, m=2, d1=2))
        cfg = SolverConfig(gamma=0.05, p=0.5, q=0.5)
        fleet, server = _fleet(handle, kind="fl-lsvrg", seed=3, q=0.5)
        for _ in range(40):
            w_before = fleet.est.w.copy()
            x_before = fleet.x.copy()
            fl_lsvrg_round(fleet, server, cfg, handle)
            refreshed = [not np.array_equal(fleet.est.w[i], w_before[i])
                         or np.array_equal(x_before[i], w_before[i])
                         for i in range(5)]
            # zeta is broadcast: the reference moves at every client or none
            moved = [not np.array_equal(fleet.est.w[i], w_before[i]) for i in range(5)]
            assert all(moved) or not any(moved) or all(refreshed)

    def test_reference_updates_follow_zeta(self):
        handle = minimax_to_operator(
            generate_quadratic_game(RngStream(5, 1), n=3, m=2, d1=2))
        cfg = SolverConfig(gamma=0.05, p=0.4, q=0.3)
        fleet, server = _fleet(handle, kind="fl-lsvrg", seed=9, q=0.3)
        coin_replay = server.coin_stream.clone()
        for _ in range(60):
            x_before = fleet.x.copy()
            w_before = fleet.est.w.copy()
            fl_lsvrg_round(fleet, server, cfg, handle)
            zeta = coin_replay.bernoulli(cfg.q)
            coin_replay.bernoulli(cfg.p)
            if zeta:
                assert np.array_equal(fleet.est.w, x_before)
            else:
                assert np.array_equal(fleet.est.w, w_before)

    def test_q_one_refreshes_every_round(self):
        handle = minimax_to_operator(
            generate_quadratic_game(RngStream(6, 1), n=2, m=3, d1=2))
        cfg = SolverConfig(gamma=0.05, p=0.5, q=1.0)
        fleet, server = _fleet(handle, kind="fl-lsvrg", seed=10, q=1.0)
        for _ in range(20):
            x_before = fleet.x.copy()
            fl_lsvrg_round(fleet, server, cfg, handle)
            assert np.array_equal(fleet.est.w, x_before)


class TestLocalBaselines:
    def test_sync_every_round_is_distributed_gda(self):
        handle = minimax_to_operator(heterogeneity_dial(3.0))
        gamma = 0.2
        fleet, server = _fleet(handle, seed=4)
        schedule = sync_every(1)
        # distributed GDA reference on the average iterate
        z = np.zeros(2)
        for _ in range(50):
            local_sgda_round(fleet, server, schedule, gamma, handle)
            rows = np.tile(z, (2, 1))
            z = (rows - gamma * handle.clients_batched(rows)).mean(axis=0)
            assert np.allclose(fleet.x, np.tile(z, (2, 1)), atol=1e-12)

    def test_homogeneous_clients_match_single_client(self):
        problem = ShiftedLinearProblem(m=np.diag([1.0, 2.0]),
                                       shifts=np.array([[1.0, 2.0], [1.0, 2.0]]))
        handle = minimax_to_operator(problem)
        fleet, server = _fleet(handle, seed=5)
        schedule = sync_every(7)
        x_solo = np.zeros(2)
        for _ in range(40):
            local_sgda_round(fleet, server, schedule, 0.3, handle)
            x_solo = x_solo - 0.3 * handle.client(0, x_solo)
            assert np.allclose(fleet.x, np.tile(x_solo, (2, 1)), atol=1e-12)

    def test_heterogeneous_cycle_has_biased_fixed_point(self):
        # local steps drift toward each client's own anchor; the end-of-phase
        # state converges to the fixed cycle of the K-step affine map, which
        # sits away from the lifted solution
        delta, gamma, k = 10.0, 0.3, 10
        handle = minimax_to_operator(heterogeneity_dial(delta))
        fleet, server = _fleet(handle, seed=6)
        schedule = sync_every(k)
        rounds = 40 * k + k - 1  # end mid-phase, right before a sync
        for _ in range(rounds):
            local_sgda_round(fleet, server, schedule, gamma, handle)
        shifts = handle.problem.shifts
        z_star = shifts.mean(axis=0)
        contraction = (1.0 - gamma) ** (k - 1)
        oracle = np.stack([contraction * z_star + (1 - contraction) * shifts[i]
                           for i in range(2)])
        assert np.allclose(fleet.x, oracle, atol=1e-8)
        assert np.linalg.norm(fleet.x - z_star) > 1.0

    def test_seg_bounded_where_gda_diverges(self):
        # pure rotation F(x, y) = (y, -x): plain descent-ascent spirals out,
        # the extragradient correction contracts
        from viskip.problems import MatrixGame
        handle = minimax_to_operator(MatrixGame(payoffs=np.ones((1, 1, 1))))
        gamma = 0.3
        x0 = np.array([[1.0, 1.0]])
        fleet_g, server_g = _fleet(handle, seed=7, x0_rows=x0)
        fleet_e, server_e = _fleet(handle, seed=7, x0_rows=x0)
        for _ in range(100):
            local_sgda_round(fleet_g, server_g, sync_every(1), gamma, handle)
            local_seg_round(fleet_e, server_e, sync_every(1), gamma, gamma, handle)
        assert np.linalg.norm(fleet_g.x) > 10 * np.linalg.norm(x0)
        assert np.linalg.norm(fleet_e.x) < np.linalg.norm(x0)

    def test_seg_step_order_guard(self):
        handle = minimax_to_operator(heterogeneity_dial(1.0))
        fleet, server = _fleet(handle, seed=8)
        with pytest.raises(ParameterError):
            local_seg_round(fleet, server, sync_every(1), 0.1, 0.2, handle)

    def test_fixed_seed_reruns_bit_identical(self):
        handle = minimax_to_operator(
            generate_quadratic_game(RngStream(9, 1), n=3, m=4, d1=2))

        def run():
            fleet, server = _fleet(handle, kind="fl-sampled", seed=11)
            for _ in range(50):
                local_seg_round(fleet, server, sync_bernoulli(0.3), 0.05, 0.05, handle)
            return fleet.x.copy()

        assert np.array_equal(run(), run())

    def test_local_sgda_equals_frozen_control_variate_round(self):
        # with h frozen at zero and no shift, the skipping round at theta=0
        # is exactly one local descent step
        handle = minimax_to_operator(heterogeneity_dial(4.0))
        gamma = 0.2
        fleet_a, server_a = _fleet(handle, seed=12)
        fleet_b, _ = _fleet(handle, seed=12)
        schedule = sync_every(10**9)  # never syncs within the trace
        for _ in range(10):
            local_sgda_round(fleet_a, server_a, schedule, gamma, handle)
            g = handle.clients_batched(fleet_b.x)
            fleet_b.x = fleet_b.x - gamma * (g - fleet_b.h)  # h stays 0
            assert np.array_equal(fleet_a.x, fleet_b.x)


class TestConstrainedRounds:
    def test_identity_projection_is_noop(self):
        handle = minimax_to_operator(
            generate_matrix_game(RngStream(2, 2), n=2, d=3))
        x0 = np.full((2, 6), 1.0 / 3.0)
        cfg = SolverConfig(gamma=0.05, p=0.5)
        fleet_a, server_a = _fleet(handle, seed=13, x0_rows=x0)
        fleet_b, server_b = _fleet(handle, seed=13, x0_rows=x0)
        for _ in range(20):
            fl_round(fleet_a, server_a, cfg, handle, projection=None)
            fl_round(fleet_b, server_b, cfg, handle, projection=lambda rows: rows)
            assert np.array_equal(fleet_a.x, fleet_b.x)

    def test_blockwise_projection_matches_scalar(self, rng):
        project = blockwise_simplex(3)
        rows = rng.gaussian_vector(5 * 7).reshape(5, 7) * 2.0
        out = project(rows)
        for i in range(5):
            assert np.array_equal(out[i, :3], project_simplex(rows[i, :3]))
            assert np.array_equal(out[i, 3:], project_simplex(rows[i, 3:]))

    def test_all_negative_row_maps_to_feasible_point(self):
        project = blockwise_simplex(2)
        out = project(np.array([[-3.0, -3.0, -1.0, -5.0]]))
        assert np.allclose(out[0, :2], [0.5, 0.5])
        assert np.allclose(out[0, 2:], [1.0, 0.0])

    def test_constrained_trajectory_stays_feasible(self):
        handle = minimax_to_operator(
            generate_matrix_game(RngStream(3, 3), n=3, d=5))
        d = 5
        x0 = np.full((3, 10), 1.0 / d)
        cfg = SolverConfig(gamma=0.02, p=0.2)
        fleet, server = _fleet(handle, seed=14, x0_rows=x0)
        projected_round = constrained_round(fl_round, blockwise_simplex(d))
        for _ in range(2000):
            projected_round(fleet, server, cfg, handle)
            for block in (fleet.x[:, :d], fleet.x[:, d:]):
                assert np.min(block) >= -1e-12
                assert np.max(np.abs(block.sum(axis=1) - 1.0)) <= 1e-9


class TestSchedulesAndLog:
    def test_every_k(self):
        schedule = sync_every(3)
        stream = RngStream(0)
        decisions = [schedule.decide(t, stream) for t in range(9)]
        assert decisions == [False, False, True] * 3

    def test_bernoulli_guard(self):
        with pytest.raises(ParameterError):
            sync_bernoulli(0.0)
        with pytest.raises(ParameterError):
            sync_every(0)

    def test_comm_log_fields(self):
        log = CommLog()
        log.record_round(True, 4)
        log.record_round(False, 4)
        assert log.rounds_total == 2
        assert log.communications == 1
        assert log.vectors_transmitted == 8
