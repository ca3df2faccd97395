import math

import numpy as np
import pytest

from levelflow import autodiff as ad
from levelflow.autodiff import Tape, Tensor
from levelflow.errors import MissingFlowHead
from levelflow.games import get_game
from levelflow.model import (
    FlowHeads,
    PolicyNet,
    level_from_tiles,
    row_change_flags,
    scan_order,
    step_input_vector,
    tiles_in_scan_order,
)

from oracles import finite_difference, max_rel_error, sampled_fd_error

GAME = get_game("sokoban")


def fresh_policy(seed=0, game=GAME):
    return PolicyNet.for_game(game, np.random.default_rng(seed))


def test_scan_order_three_by_three():
    assert scan_order(3, 3) == [(0, 0), (0, 1), (0, 2), (1, 2), (1, 1), (1, 0),
                                (2, 0), (2, 1), (2, 2)]


def test_scan_order_single_column_and_row():
    assert scan_order(1, 4) == [(0, 0), (1, 0), (2, 0), (3, 0)]
    assert scan_order(4, 1) == [(0, 0), (0, 1), (0, 2), (0, 3)]


def test_scan_order_covers_each_cell_once():
    for w, h in ((2, 5), (5, 2), (4, 4), (7, 3)):
        order = scan_order(w, h)
        assert len(order) == w * h
        assert len(set(order)) == w * h


def test_row_change_flags():
    flags = row_change_flags(3, 3)
    assert flags.tolist() == [0, 0, 0, 1, 0, 0, 1, 0, 0]
    assert row_change_flags(2, 1).tolist() == [0, 0]


def test_step_input_layout():
    emb = np.arange(32, dtype=np.float64)
    first = step_input_vector(emb, None, False, 7)
    assert first.shape == (32 + 8 + 1,)
    assert first[32 + 7] == 1.0  # start-token slot
    assert first[-1] == 0.0
    mid = step_input_vector(emb, 3, True, 7)
    assert mid[32 + 3] == 1.0 and mid[32 + 7] == 0.0 and mid[-1] == 1.0


def test_level_tiles_round_trip():
    rng = np.random.default_rng(2)
    tiles = rng.integers(0, 7, size=12)
    level = level_from_tiles(tiles, 4, 3, "sokoban")
    assert np.array_equal(tiles_in_scan_order(level), tiles)


def test_fresh_network_is_uniform():
    policy = fresh_policy()
    rng = np.random.default_rng(1)
    for w, h in ((3, 3), (5, 5)):
        traj = policy.rollout(np.zeros(2), w, h, rng)
        expected = -w * h * math.log(7)
        assert traj.sum_logp == pytest.approx(expected, abs=1e-9)
        assert np.allclose(traj.step_logp, -math.log(7), atol=1e-12)


def test_rollout_deterministic_under_seed():
    policy = fresh_policy()
    t1 = policy.rollout(np.zeros(2), 4, 4, np.random.default_rng(7))
    t2 = policy.rollout(np.zeros(2), 4, 4, np.random.default_rng(7))
    assert np.array_equal(t1.tiles, t2.tiles)
    assert t1.sum_logp == t2.sum_logp


def test_teacher_force_reproduces_rollout_bit_for_bit():
    policy = fresh_policy(3)
    rng = np.random.default_rng(9)
    u = rng.random((6, 2))
    batch = policy.run(None, u, 3, 3, rng=rng)
    forced = policy.run(None, u, 3, 3, forced=batch.tiles)
    assert np.array_equal(forced.sum_logp.data, batch.sum_logp.data)
    assert np.array_equal(forced.step_logp, batch.step_logp)


def test_rollout_step_distributions_normalize():
    policy = fresh_policy(4)
    # after a few arbitrary updates the distribution must stay normalized
    rng = np.random.default_rng(0)
    for _, t in policy.store.items():
        t.data += rng.standard_normal(t.data.shape) * 0.05
    traj = policy.run(None, np.zeros((2, 2)), 3, 3, rng=rng)
    assert np.all(traj.step_logp <= 0)


def test_fresh_net_empirical_frequencies_uniform():
    policy = fresh_policy(5)
    rng = np.random.default_rng(11)
    n = 20_000
    batch = policy.run(None, np.zeros((n, 2)), 2, 2, rng=rng)
    freqs = np.bincount(batch.tiles.ravel(), minlength=7) / (n * 4)
    assert np.max(np.abs(freqs - 1 / 7)) < 0.01


def test_embed_conditions_zero_weights_give_zero():
    policy = fresh_policy()
    for name in ("policy/embed/w0", "policy/embed/b0",
                 "policy/embed/w1", "policy/embed/b1"):
        policy.store[name].data[:] = 0.0
    out = policy.embed_conditions(None, np.ones((3, 2)), 5, 5)
    assert np.array_equal(out.data, np.zeros((3, 32)))


def test_embed_conditions_gradient_wrt_inputs():
    policy = fresh_policy(8)
    u = np.random.default_rng(0).random((1, 2))

    def forward():
        tape = Tape()
        u_t = Tensor(u, requires=True)
        emb = policy.embed_conditions(tape, u_t, 4, 4)
        return tape, u_t, ad.sum_all(tape, ad.square(tape, emb))

    tape, u_t, loss = forward()
    ad.backward(tape, loss)
    analytic = u_t.grad.copy()
    fd = finite_difference(lambda: float(forward()[2].data), u)
    assert max_rel_error(analytic, fd) < 1e-4


def test_teacher_force_gradient_matches_finite_differences(toy_game):
    policy = PolicyNet.for_game(toy_game, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    for _, t in policy.store.items():
        t.data += rng.standard_normal(t.data.shape) * 0.1
    level = level_from_tiles(np.array([0, 1, 1, 0]), 2, 2, "toy")
    u = np.zeros(0)

    def loss_value():
        tape = Tape()
        out = policy.teacher_force(level, u, tape)
        return tape, ad.sum_all(tape, out)

    tape, loss = loss_value()
    grads = ad.backward(tape, loss, dict(policy.store.items()))
    coord_rng = np.random.default_rng(0)
    for name in ("policy/action/w1", "policy/gru1/wz", "policy/gru2/wh",
                 "policy/embed/w0"):
        err = sampled_fd_error(lambda: float(loss_value()[1].data),
                               policy.store[name].data, grads[name], coord_rng)
        assert err < 1e-4, name


def test_rollout_without_flow_head_succeeds():
    policy = fresh_policy()
    traj = policy.rollout(np.zeros(2), 9, 9, np.random.default_rng(0))
    assert traj.tiles.shape == (81,)


def test_flow_heads_zero_init_and_disjoint():
    rng = np.random.default_rng(0)
    flows = FlowHeads(2, rng)
    flows.ensure(4, 4)
    flows.ensure(5, 5)
    u = np.random.default_rng(1).random((3, 2))
    assert np.array_equal(flows.log_z0(None, u, 4, 4).data, np.zeros(3))
    # update the 5x5 head only; 4x4 output must not move
    flows.store["flow/5x5/w1"].data[:] = 1.0
    flows.store["flow/5x5/b1"].data[:] = 2.0
    assert np.array_equal(flows.log_z0(None, u, 4, 4).data, np.zeros(3))
    assert not np.array_equal(flows.log_z0(None, u, 5, 5).data, np.zeros(3))


def test_flow_head_missing_size_raises():
    flows = FlowHeads(2, np.random.default_rng(0))
    with pytest.raises(MissingFlowHead):
        flows.log_z0(None, np.zeros((1, 2)), 8, 8)


def test_flow_head_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    flows = FlowHeads(2, rng)
    flows.ensure(3, 3)
    for name in ("flow/3x3/w1", "flow/3x3/b1"):
        flows.store[name].data += rng.standard_normal(
            flows.store[name].data.shape) * 0.3
    u = rng.random((4, 2))

    def forward():
        tape = Tape()
        z0 = flows.log_z0(tape, u, 3, 3)
        return tape, ad.sum_all(tape, ad.square(tape, z0))

    tape, loss = forward()
    grads = ad.backward(tape, loss, dict(flows.store.items()))
    for name in ("flow/3x3/w0", "flow/3x3/w1", "flow/3x3/b0", "flow/3x3/b1"):
        fd = finite_difference(lambda: float(forward()[1].data),
                               flows.store[name].data)
        assert max_rel_error(grads[name], fd) < 1e-4, name


def test_action_head_last_layer_zero_initialized():
    policy = fresh_policy(123)
    assert np.array_equal(policy.store["policy/action/w1"].data,
                          np.zeros((32, 7)))
    assert np.array_equal(policy.store["policy/action/b1"].data, np.zeros(7))
