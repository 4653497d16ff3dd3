import math

import numpy as np
import pytest

from mapfkit.dataset import read_dataset, write_dataset
from mapfkit.grid import GridMap, generate_instance
from mapfkit.neural import (
    BadMagic,
    Batches,
    ModelConfig,
    ShapeMismatch,
    VersionMismatch,
    fast_loss_from_logits,
    forward_batch,
    grad_check,
    init_params,
    load_params,
    loss_and_grad,
    polar,
    polar_batch,
    position_weights,
    save_params,
    slow_loss_from_logits,
    sre_encode,
    sre_similarity_report,
    token_loss,
    total_loss,
    train,
)
from mapfkit.neural.gradcheck import _total_loss_value
from mapfkit.solvers import run_expert_episode
from mapfkit.tokenizer import (
    AGENT_BASE,
    COST_XY,
    EMPTY_SLOT,
    N_COST_TOKENS,
    PAD_ID,
    SEQ_LEN,
    TAIL_PAD_BASE,
    VOCAB_SIZE,
    build_training_samples,
)

LN5 = math.log(5.0)
LN60 = math.log(60.0)


def tiny_config(**kw):
    base = dict(d_model=8, n_layers=1, n_heads=2, ffn_mult=2, batch_size=4, seed=3)
    base.update(kw)
    return ModelConfig(**base)


def random_batch(rng, b=3):
    tokens = rng.integers(0, VOCAB_SIZE, size=(b, SEQ_LEN))
    targets = rng.integers(0, VOCAB_SIZE, size=(b, SEQ_LEN))
    actions = rng.integers(0, 5, size=b)
    xy = rng.integers(-15, 16, size=(b, SEQ_LEN, 2)).astype(np.float64)
    mask = rng.random((b, SEQ_LEN)) < 0.7
    weights = np.full((b, SEQ_LEN), 0.5)
    weights[rng.random((b, SEQ_LEN)) < 0.2] = 0.0
    weights[rng.random((b, SEQ_LEN)) < 0.1] = 1.0
    return dict(tokens=tokens, xy=xy, sre_mask=mask, targets=targets,
                actions=actions, weights=weights)


class TestPolar:
    def test_three_four_five(self):
        assert np.allclose(polar(3, 4), [5.0, 0.8, 0.6], atol=1e-12)

    def test_origin(self):
        assert np.allclose(polar(0, 0), [0.0, 0.0, 1.0], atol=0)

    def test_negative_x_axis(self):
        assert np.allclose(polar(-2, 0), [2.0, 0.0, -1.0], atol=1e-12)

    def test_batch_matches_scalar(self):
        xy = np.array([[3.0, 4.0], [0.0, 0.0], [-2.0, 0.0], [1.0, -7.0]])
        got = polar_batch(xy)
        for i, (x, y) in enumerate(xy):
            assert np.allclose(got[i], polar(x, y), atol=0)

    def test_injective_over_fov(self):
        enc = polar_batch(COST_XY)
        assert len(np.unique(enc.round(12), axis=0)) == 121


class TestSreEncode:
    def test_segment_row_structure(self):
        params = init_params(tiny_config())
        slot_s = np.full((13, 2), EMPTY_SLOT, np.int16)
        slot_g = np.full((13, 2), EMPTY_SLOT, np.int16)
        slot_s[0] = (1, 1)
        slot_g[0] = (5, 2)
        enc = sre_encode(slot_s, slot_g, params)
        base = AGENT_BASE
        assert np.array_equal(enc[base], enc[base + 1])
        assert np.array_equal(enc[base + 2], enc[base + 3])
        for k in range(5, 10):
            assert np.array_equal(enc[base + 4], enc[base + k])
        # displacement row encodes polar(g - s): delta = (4, 1) as (x=dc, y=dr)
        w, b = params.tensors["sre_w"], params.tensors["sre_b"]
        expect = polar(1, 4) @ w + b
        assert np.allclose(enc[base + 4], expect, atol=0)

    def test_tail_and_empty_slots_zero(self):
        params = init_params(tiny_config())
        slot_s = np.full((13, 2), EMPTY_SLOT, np.int16)
        slot_g = np.full((13, 2), EMPTY_SLOT, np.int16)
        slot_s[0] = (0, 0)
        slot_g[0] = (3, -2)
        enc = sre_encode(slot_s, slot_g, params)
        assert (enc[TAIL_PAD_BASE:] == 0.0).all()
        assert (enc[AGENT_BASE + 10:TAIL_PAD_BASE] == 0.0).all()
        assert not (enc[:N_COST_TOKENS] == 0.0).all()


class TestForward:
    def test_shapes_and_determinism(self):
        params = init_params(tiny_config())
        rng = np.random.default_rng(0)
        batch = random_batch(rng)
        f1, s1 = forward_batch(params, batch["tokens"], batch["xy"], batch["sre_mask"])
        f2, s2 = forward_batch(params, batch["tokens"], batch["xy"], batch["sre_mask"])
        assert f1.shape == (3, 5) and s1.shape == (3, SEQ_LEN, VOCAB_SIZE)
        assert np.array_equal(f1, f2) and np.array_equal(s1, s2)

    def test_sre_flag_controls_meta_sensitivity(self):
        rng = np.random.default_rng(1)
        batch = random_batch(rng)
        batch["sre_mask"][0, 0] = True
        xy2 = batch["xy"].copy()
        xy2[0, 0] += 3.0
        for use_sre, should_differ in ((True, True), (False, False)):
            params = init_params(tiny_config(use_sre=use_sre))
            f1, _ = forward_batch(params, batch["tokens"], batch["xy"], batch["sre_mask"])
            f2, _ = forward_batch(params, batch["tokens"], xy2, batch["sre_mask"])
            assert (not np.array_equal(f1, f2)) == should_differ

    def test_softmax_normalization(self):
        params = init_params(tiny_config())
        rng = np.random.default_rng(2)
        batch = random_batch(rng)
        fast, slow = forward_batch(params, batch["tokens"], batch["xy"], batch["sre_mask"])

        def softmax(x):
            e = np.exp(x - x.max(-1, keepdims=True))
            return e / e.sum(-1, keepdims=True)

        assert np.abs(softmax(fast).sum(-1) - 1.0).max() < 1e-12
        assert np.abs(softmax(slow).sum(-1) - 1.0).max() < 1e-12


class TestLosses:
    def test_token_loss_uniform(self):
        dist = np.full(60, 1.0 / 60.0)
        assert abs(token_loss(dist, 17) - LN60) < 1e-12

    def test_token_loss_certain(self):
        dist = np.zeros(60)
        dist[4] = 1.0
        assert token_loss(dist, 4) == 0.0

    def test_token_loss_half(self):
        dist = np.zeros(60)
        dist[0] = dist[1] = 0.5
        assert abs(token_loss(dist, 1) - math.log(2.0)) < 1e-12

    def test_position_weights_cases(self):
        a = np.zeros(SEQ_LEN, bool)
        g = np.zeros(SEQ_LEN, bool)
        m = np.zeros(SEQ_LEN, bool)
        a[130:135] = True
        g[140] = True
        m[200:256] = True
        w = position_weights(a, g, m)
        assert (w[:N_COST_TOKENS] == 0.5).all()
        assert (w[130:135] == 1.0).all() and w[140] == 1.0
        assert (w[200:] == 0.0).all()
        assert w[125] == 0.5

    def test_slow_loss_hand_computed(self):
        # one sample, logits zero everywhere except position 130 where the
        # label's logit is 1; weights: 121 cost positions at 0.5, positions
        # 121..149 at 1.0 (history/est), 150.. masked to 0, rest 0.5
        logits = np.zeros((1, SEQ_LEN, VOCAB_SIZE))
        targets = np.full((1, SEQ_LEN), 7, dtype=np.int64)
        logits[0, 130, 7] = 1.0
        a = np.zeros((1, SEQ_LEN), bool)
        g = np.zeros((1, SEQ_LEN), bool)
        m = np.zeros((1, SEQ_LEN), bool)
        a[0, 121:150] = True
        m[0, 150:] = True
        w = position_weights(a, g, m)

        ce_uniform = LN60
        ce_bump = math.log(math.exp(1.0) + 59.0) - 1.0
        wsum = 121 * 0.5 + 29 * 1.0
        expected = (121 * 0.5 * ce_uniform + 28 * 1.0 * ce_uniform + 1.0 * ce_bump) / wsum
        got = slow_loss_from_logits(logits, targets, w)
        assert abs(got - expected) < 1e-12

    def test_fast_loss_uniform(self):
        logits = np.zeros((4, 5))
        actions = np.array([0, 1, 2, 3])
        assert abs(fast_loss_from_logits(logits, actions) - LN5) < 1e-12

    def test_fast_loss_perfect(self):
        logits = np.full((2, 5), -1000.0)
        logits[0, 2] = 1000.0
        logits[1, 4] = 1000.0
        assert fast_loss_from_logits(logits, np.array([2, 4])) == 0.0

    def test_fast_loss_mean(self):
        # two samples engineered to CE exactly 1.0 and 3.0
        def logits_for(ce):
            c = math.log((math.exp(ce) - 1.0) / 4.0)
            row = np.full(5, c)
            row[0] = 0.0
            return row

        logits = np.stack([logits_for(1.0), logits_for(3.0)])
        got = fast_loss_from_logits(logits, np.array([0, 0]))
        assert abs(got - 2.0) < 1e-12

    def test_total_loss_combination(self):
        rng = np.random.default_rng(5)
        logits_slow = rng.normal(size=(2, SEQ_LEN, VOCAB_SIZE))
        logits_fast = rng.normal(size=(2, 5))
        targets = rng.integers(0, VOCAB_SIZE, size=(2, SEQ_LEN))
        actions = rng.integers(0, 5, size=2)
        w = np.full((2, SEQ_LEN), 0.5)
        t = total_loss(logits_fast, logits_slow, targets, actions, w)
        f = fast_loss_from_logits(logits_fast, actions)
        s = slow_loss_from_logits(logits_slow, targets, w)
        assert t == f + 0.5 * s

    def test_total_uniform_values(self):
        logits_slow = np.zeros((1, SEQ_LEN, VOCAB_SIZE))
        logits_fast = np.zeros((1, 5))
        targets = np.zeros((1, SEQ_LEN), dtype=np.int64)
        actions = np.zeros(1, dtype=np.int64)
        w = np.full((1, SEQ_LEN), 0.5)
        got = total_loss(logits_fast, logits_slow, targets, actions, w)
        assert abs(got - (LN5 + 0.5 * LN60)) < 1e-12

    def test_masked_position_exactly_inert(self):
        rng = np.random.default_rng(9)
        logits = rng.normal(size=(2, SEQ_LEN, VOCAB_SIZE))
        targets = rng.integers(0, VOCAB_SIZE, size=(2, SEQ_LEN))
        m = np.zeros((2, SEQ_LEN), bool)
        m[:, 250:] = True
        w = position_weights(np.zeros_like(m), np.zeros_like(m), m)
        base = slow_loss_from_logits(logits, targets, w)
        for trial in range(5):
            perturbed = logits.copy()
            perturbed[0, 252] = rng.normal(size=VOCAB_SIZE) * 100
            assert slow_loss_from_logits(perturbed, targets, w) == base


class TestGradients:
    def test_grad_check_small_model(self):
        params = init_params(tiny_config())
        batch = random_batch(np.random.default_rng(0))
        err = grad_check(params, batch, epsilon=1e-5, n_directions=40)
        assert err < 1e-6

    def test_corrupted_gradient_detected(self):
        params = init_params(tiny_config())
        batch = random_batch(np.random.default_rng(0))
        *_, grads = loss_and_grad(params, batch)
        grads["l0.wq"] = grads["l0.wq"] + 1.0  # deliberate corruption
        keys = params.key_order()
        flat_grad = np.concatenate([grads[k].ravel() for k in keys])
        theta = params.flat()
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(10):
            u = rng.normal(size=theta.size)
            u /= np.linalg.norm(u)
            analytic = float(flat_grad @ u)
            probe = params.copy()
            probe.set_flat(theta + 1e-5 * u)
            hi = _total_loss_value(probe, batch)
            probe.set_flat(theta - 1e-5 * u)
            lo = _total_loss_value(probe, batch)
            numeric = (hi - lo) / 2e-5
            worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8))
        assert worst > 1e-2

    def test_zero_weight_position_has_zero_gradient(self):
        params = init_params(tiny_config())
        batch = random_batch(np.random.default_rng(3))
        batch["weights"][:, 200] = 0.0
        base = slow_loss_from_logits(
            np.random.default_rng(0).normal(size=(3, SEQ_LEN, VOCAB_SIZE)),
            batch["targets"], batch["weights"],
        )
        # direct check through the loss: any logit change at a zero-weight
        # position leaves the loss bit-identical
        logits = np.random.default_rng(0).normal(size=(3, SEQ_LEN, VOCAB_SIZE))
        l0 = slow_loss_from_logits(logits, batch["targets"], batch["weights"])
        logits[1, 200, :] += 17.0
        assert slow_loss_from_logits(logits, batch["targets"], batch["weights"]) == l0


def toy_dataset(tmp_path, n_agents=3, seeds=range(12)):
    m = GridMap(width=8, height=8, cells=np.zeros((8, 8), np.uint8))
    samples = []
    for s in seeds:
        inst = generate_instance(m, n_agents, seed=s)
        traj = run_expert_episode(inst, seed=s)
        samples.extend(build_training_samples(traj))
    path = tmp_path / "toy.mwds"
    write_dataset(samples, path)
    return read_dataset(path)


class TestTraining:
    def test_loss_decreases(self, tmp_path):
        ds = toy_dataset(tmp_path)
        cfg = tiny_config(d_model=16, lr=1e-3, batch_size=16)
        params = init_params(cfg)
        batches = Batches(ds)
        eval_batch = batches.make(np.arange(min(64, len(batches))))
        init_loss = _total_loss_value(params, eval_batch)
        params, log = train(batches, cfg, params=params, steps=60)
        final_loss = _total_loss_value(params, eval_batch)
        assert final_loss < init_loss

    def test_deterministic_same_seed(self, tmp_path):
        ds = toy_dataset(tmp_path, seeds=range(4))
        cfg = tiny_config(batch_size=8)
        p1, log1 = train(ds, cfg, steps=8)
        p2, log2 = train(ds, cfg, steps=8)
        assert log1[-1][3] == log2[-1][3]
        for k in p1.key_order():
            assert np.array_equal(p1.tensors[k], p2.tensors[k])

    def test_zero_lr_leaves_params(self, tmp_path):
        ds = toy_dataset(tmp_path, seeds=range(2))
        cfg = tiny_config(lr=0.0, batch_size=4)
        before = init_params(cfg)
        snapshot = {k: v.copy() for k, v in before.tensors.items()}
        after, _ = train(ds, cfg, params=before, steps=3)
        for k, v in snapshot.items():
            assert np.array_equal(after.tensors[k], v)

    def test_log_csv(self, tmp_path):
        ds = toy_dataset(tmp_path, seeds=range(2))
        log_path = tmp_path / "log.csv"
        train(ds, tiny_config(batch_size=4), steps=3, log_path=log_path)
        lines = log_path.read_text().strip().split("\n")
        assert lines[0] == "step,fast_loss,slow_loss,total_loss,wall_ms"
        assert len(lines) == 4


class TestParamsIO:
    def test_round_trip_identical_outputs(self, tmp_path):
        params = init_params(tiny_config())
        path = tmp_path / "p.mwld"
        save_params(params, path)
        loaded = load_params(path)
        batch = random_batch(np.random.default_rng(4))
        f1, s1 = forward_batch(params, batch["tokens"], batch["xy"], batch["sre_mask"])
        f2, s2 = forward_batch(loaded, batch["tokens"], batch["xy"], batch["sre_mask"])
        assert np.array_equal(f1, f2) and np.array_equal(s1, s2)
        assert loaded.trained_steps == params.trained_steps

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.mwld"
        p.write_bytes(b"HELO" + b"\x00" * 64)
        with pytest.raises(BadMagic):
            load_params(p)

    def test_truncated(self, tmp_path):
        params = init_params(tiny_config())
        path = tmp_path / "p.mwld"
        save_params(params, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises((BadMagic, ValueError)):
            load_params(path)

    def test_version_mismatch(self, tmp_path):
        params = init_params(tiny_config())
        path = tmp_path / "p.mwld"
        save_params(params, path)
        data = bytearray(path.read_bytes())
        data[4] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(VersionMismatch):
            load_params(path)

    def test_shape_mismatch(self, tmp_path):
        params = init_params(tiny_config(d_model=16))
        path = tmp_path / "p.mwld"
        save_params(params, path)
        data = path.read_bytes()
        # flip the recorded d_model without touching tensor payloads
        tampered = data.replace(b'"d_model": 16', b'"d_model": 32', 1)
        assert len(tampered) == len(data)
        path.write_bytes(tampered)
        with pytest.raises(ShapeMismatch):
            load_params(path)


class TestSreReport:
    def test_degenerate_constant_encoding(self):
        params = init_params(tiny_config())
        params.tensors["sre_w"][:] = 0.0
        params.tensors["sre_b"][:] = 1.0
        rep = sre_similarity_report(params)
        assert rep.adjacent_mean == 1.0
        assert rep.non_adjacent_mean == 1.0
        assert rep.distance_correlation == 0.0
        assert rep.distinct_levels == 1

    def test_deterministic(self):
        params = init_params(tiny_config())
        assert sre_similarity_report(params) == sre_similarity_report(params)

    def test_sre_off_reports_degenerate(self):
        params = init_params(tiny_config(use_sre=False))
        rep = sre_similarity_report(params)
        assert rep.distinct_levels == 1
        assert rep.distance_correlation == 0.0
