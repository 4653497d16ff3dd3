import numpy as np
import pytest

from mapfkit.dataset import read_dataset, write_dataset, DatasetFormatError
from mapfkit.grid import (
    GridMap,
    ProblemInstance,
    State,
    WAIT,
    bfs_cost_to_goal,
    generate_instance,
)
from mapfkit.solvers import run_expert_episode
from mapfkit.tokenizer import (
    ACTION_BASE,
    AGENT_BASE,
    COORD_BASE,
    EgoNotInState,
    N_COST_TOKENS,
    N_SLOTS,
    OBSTACLE_ID,
    PAD_ID,
    SEQ_LEN,
    SLOT_LEN,
    TAIL_PAD_BASE,
    UNREACHABLE_ID,
    VOCAB_SIZE,
    action_id,
    build_observation,
    build_training_samples,
    coord_id,
    cost_delta_id,
    est_position,
    extract_predicted_neighbor_actions,
    hist_positions,
    quantize_coord,
    slots_from_tokens,
    sre_xy,
    sre_xy_batch,
    weight_sets,
)


def empty_map(w, h):
    return GridMap(width=w, height=h, cells=np.zeros((h, w), np.uint8))


def make_obs(m, pairs, positions=None, ego=0, histories=None, est_override=None):
    inst = ProblemInstance(map=m, agents=tuple(pairs))
    state = State(positions=tuple(positions or inst.starts))
    cfs = {i: bfs_cost_to_goal(m, g) for i, g in enumerate(inst.goals)}
    return build_observation(state, ego, inst, cfs, est_override=est_override,
                             histories=histories)


CENTER = 5 * 11 + 5  # row-major index of offset (0, 0)


class TestVocab:
    def test_vocab_size(self):
        assert VOCAB_SIZE == 60
        assert PAD_ID == 59

    def test_quantize_coord(self):
        assert quantize_coord(0) == COORD_BASE + 15
        assert quantize_coord(40) == COORD_BASE + 30
        assert quantize_coord(-15) == COORD_BASE


class TestBuildObservation:
    def test_length_and_tail(self):
        obs = make_obs(empty_map(9, 9), [((4, 4), (1, 1))])
        assert obs.tokens.shape == (SEQ_LEN,)
        assert (obs.tokens[TAIL_PAD_BASE:] == PAD_ID).all()

    def test_ego_center_cost_token_zero_delta(self):
        obs = make_obs(empty_map(9, 9), [((4, 4), (1, 1))])
        assert obs.tokens[CENTER] == cost_delta_id(0)

    def test_lone_agent_neighbor_slots_pad(self):
        hist = {0: [0, 1, 2, 3, 4]}
        obs = make_obs(empty_map(20, 20), [((10, 10), (3, 3))], histories=hist)
        seg = obs.tokens[AGENT_BASE:TAIL_PAD_BASE]
        assert seg.shape == (130,)
        assert int((seg == PAD_ID).sum()) == 120
        assert (obs.tokens[AGENT_BASE + SLOT_LEN:TAIL_PAD_BASE] == PAD_ID).all()

    def test_neighbor_two_right(self):
        obs = make_obs(
            empty_map(20, 20),
            [((10, 10), (3, 3)), ((10, 12), (5, 5))],
        )
        base = AGENT_BASE + SLOT_LEN  # slot 1
        assert obs.tokens[base + 0] == coord_id(0)
        assert obs.tokens[base + 1] == coord_id(2)
        assert obs.slot_agents[1] == 1

    def test_obstacle_and_offmap_tokens(self):
        obs = make_obs(empty_map(9, 9), [((0, 0), (5, 5))])
        # offsets with negative rows/cols fall off the map
        assert obs.tokens[0] == OBSTACLE_ID

    def test_unreachable_pocket(self):
        rows = np.zeros((5, 5), np.uint8)
        rows[1:4, 1:4] = 0
        m = GridMap(width=5, height=5, cells=rows)
        # wall off the right column
        cells = np.zeros((5, 5), np.uint8)
        cells[:, 3] = 1
        m = GridMap(width=5, height=5, cells=cells)
        obs = make_obs(m, [((2, 0), (0, 0))])
        # cell (2,4) is cut off from the ego goal; offset (0, +4) in window
        idx = 5 * 11 + 9
        assert obs.tokens[idx] == UNREACHABLE_ID

    def test_goal_clamping(self):
        obs = make_obs(empty_map(40, 40), [((0, 0), (39, 39))])
        base = AGENT_BASE
        assert obs.tokens[base + 2] == coord_id(15)
        assert obs.tokens[base + 3] == coord_id(15)
        assert tuple(obs.slot_g[0]) == (15, 15)

    def test_history_pad_fill_oldest_first(self):
        hist = {0: [2, 3]}
        obs = make_obs(empty_map(9, 9), [((4, 4), (1, 1))], histories=hist)
        hp = list(hist_positions(0))
        got = [int(obs.tokens[p]) for p in hp]
        assert got == [PAD_ID, PAD_ID, PAD_ID, action_id(2), action_id(3)]

    def test_est_override(self):
        obs = make_obs(
            empty_map(20, 20),
            [((10, 10), (3, 3)), ((10, 12), (5, 5))],
            est_override={1: WAIT},
        )
        assert obs.tokens[est_position(1)] == action_id(WAIT)
        # ego slot unaffected by neighbour overrides
        assert obs.tokens[est_position(0)] != PAD_ID

    def test_slot_order_deterministic(self):
        pairs = [((10, 10), (1, 1))] + [((10 + dr, 10 + dc), (15, 15)) for dr, dc in
                 [(-2, 0), (0, 3), (1, 1), (4, 4), (0, -1)]]
        a = make_obs(empty_map(20, 20), pairs)
        b = make_obs(empty_map(20, 20), pairs)
        assert (a.tokens == b.tokens).all()
        assert a.slot_agents == b.slot_agents
        # sorted by (chebyshev, id): agent 5 (dist 1), 3 (dist 1), 1 (dist 2)...
        assert a.slot_agents[1] == 3 and a.slot_agents[2] == 5

    def test_ego_not_in_state(self):
        with pytest.raises(EgoNotInState):
            make_obs(empty_map(5, 5), [((0, 0), (1, 1))], ego=3)

    def test_fov_excludes_distant_agents(self):
        obs = make_obs(
            empty_map(20, 20),
            [((10, 10), (3, 3)), ((2, 2), (5, 5))],
        )
        assert obs.slot_agents[1] is None


class TestTrainingSamples:
    def make_traj(self, n_agents=4, seed=3, w=10):
        inst = generate_instance(empty_map(w, w), n_agents, seed=seed)
        return run_expert_episode(inst, seed=seed)

    def test_sample_count(self):
        traj = self.make_traj()
        samples = build_training_samples(traj)
        assert len(samples) == traj.instance.n_agents * traj.makespan

    def test_wait_at_target_action(self):
        for seed in range(10):
            traj = self.make_traj(seed=seed)
            samples = build_training_samples(traj)
            waits = [s for s in samples if s.target_action == WAIT]
            if waits:
                return
        pytest.fail("no wait actions found across seeds")

    def test_weight_set_sizes_full_history(self):
        m = empty_map(9, 9)
        pairs = [((4, 4), (0, 0)), ((4, 6), (8, 8)), ((6, 4), (8, 0))]
        hist = {i: [4, 4, 4, 4, 4] for i in range(3)}
        obs = make_obs(m, pairs, histories=hist)
        a_mask, g_mask = weight_sets(obs)
        assert int(a_mask.sum()) == 15
        assert int(g_mask.sum()) == 3

    def test_mask_disjointness(self):
        traj = self.make_traj(seed=7)
        for s in build_training_samples(traj):
            a, g, m = s.a_mask, s.g_mask, s.m_mask
            assert not (a & g).any()
            assert not ((a | g) & m).any()
            # m covers every pad position of the target
            assert (m == (s.target_tokens == PAD_ID)).all()

    def test_target_is_next_observation(self):
        traj = self.make_traj(seed=5)
        samples = build_training_samples(traj)
        n = traj.instance.n_agents
        s0 = samples[0]
        assert (s0.input.tokens == traj.observations[0][0].tokens).all()
        assert (s0.target_tokens == traj.observations[1][0].tokens).all()


class TestExtraction:
    def test_direct_read(self):
        obs = make_obs(empty_map(20, 20), [((10, 10), (3, 3)), ((10, 12), (5, 5))])
        pred = obs.tokens.copy()
        pred[est_position(1)] = action_id(1)
        assert extract_predicted_neighbor_actions(pred, obs.slot_agents) == {1: 1}

    def test_empty_slots(self):
        obs = make_obs(empty_map(20, 20), [((10, 10), (3, 3))])
        assert extract_predicted_neighbor_actions(obs.tokens, obs.slot_agents) == {}

    def test_pad_prediction_skipped(self):
        obs = make_obs(empty_map(20, 20), [((10, 10), (3, 3)), ((10, 12), (5, 5))])
        pred = obs.tokens.copy()
        pred[est_position(1)] = PAD_ID
        assert extract_predicted_neighbor_actions(pred, obs.slot_agents) == {}


class TestSreMeta:
    def test_sre_xy_matches_batch(self):
        obs = make_obs(empty_map(20, 20), [((10, 10), (3, 3)), ((10, 12), (5, 5))])
        xy, mask = sre_xy(obs.slot_s, obs.slot_g)
        xyb, maskb = sre_xy_batch(obs.slot_s[None], obs.slot_g[None])
        assert np.array_equal(xy, xyb[0].astype(np.float64))
        assert np.array_equal(mask, maskb[0])

    def test_slots_from_tokens_round_trip(self):
        obs = make_obs(empty_map(20, 20), [((10, 10), (3, 3)), ((10, 12), (5, 5))])
        slot_s, slot_g = slots_from_tokens(obs.tokens)
        assert np.array_equal(slot_s, obs.slot_s)
        assert np.array_equal(slot_g, obs.slot_g)

    def test_delta_meta(self):
        obs = make_obs(empty_map(30, 30), [((10, 10), (15, 12))])
        xy, mask = sre_xy(obs.slot_s, obs.slot_g)
        base = AGENT_BASE
        assert tuple(xy[base]) == (0.0, 0.0)
        assert tuple(xy[base + 2]) == (2.0, 5.0)  # (x=dcol, y=drow)
        assert tuple(xy[base + 4]) == (2.0, 5.0)
        assert not mask[TAIL_PAD_BASE:].any()


class TestDatasetFile:
    def test_round_trip_bit_identical(self, tmp_path):
        traj = run_expert_episode(generate_instance(empty_map(8, 8), 3, seed=1), seed=1)
        samples = build_training_samples(traj)
        p1 = tmp_path / "a.mwds"
        p2 = tmp_path / "b.mwds"
        write_dataset(samples, p1)
        ds = read_dataset(p1)
        write_dataset(list(ds.records), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_fields_recovered(self, tmp_path):
        traj = run_expert_episode(generate_instance(empty_map(8, 8), 2, seed=2), seed=2)
        samples = build_training_samples(traj)
        path = tmp_path / "d.mwds"
        write_dataset(samples, path)
        ds = read_dataset(path)
        assert len(ds) == len(samples)
        i = len(samples) // 2
        s = samples[i]
        assert np.array_equal(ds.inputs[i], s.input.tokens)
        assert np.array_equal(ds.targets[i], s.target_tokens)
        assert ds.actions[i] == s.target_action
        assert np.array_equal(ds.a_mask()[i], s.a_mask)
        assert np.array_equal(ds.g_mask()[i], s.g_mask)
        assert np.array_equal(ds.slot_s()[i], s.input.slot_s)
        assert np.array_equal(ds.slot_g()[i], s.input.slot_g)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.mwds"
        p.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(DatasetFormatError):
            read_dataset(p)

    def test_truncated(self, tmp_path):
        traj = run_expert_episode(generate_instance(empty_map(8, 8), 2, seed=2), seed=2)
        samples = build_training_samples(traj)
        p = tmp_path / "t.mwds"
        write_dataset(samples, p)
        data = p.read_bytes()
        p.write_bytes(data[:-10])
        with pytest.raises(DatasetFormatError):
            read_dataset(p)


class TestFuzz:
    def test_random_observations_well_formed(self):
        rng = np.random.default_rng(12)
        checked = 0
        for _ in range(60):
            w = int(rng.integers(6, 14))
            cells = (rng.random((w, w)) < 0.2).astype(np.uint8)
            m = GridMap(width=w, height=w, cells=cells)
            if m.n_free < 6:
                continue
            try:
                inst = generate_instance(m, int(rng.integers(1, 6)), seed=int(rng.integers(1 << 30)))
            except Exception:
                continue
            cfs = {i: bfs_cost_to_goal(m, g) for i, g in enumerate(inst.goals)}
            state = State(positions=inst.starts)
            for ego in range(inst.n_agents):
                obs = build_observation(state, ego, inst, cfs)
                assert obs.tokens.shape == (SEQ_LEN,)
                assert (obs.tokens[TAIL_PAD_BASE:] == PAD_ID).all()
                assert obs.tokens[CENTER] == cost_delta_id(0)
                assert obs.tokens.max() < VOCAB_SIZE
                checked += 1
        assert checked > 50
