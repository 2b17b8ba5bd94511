import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import World
from oracles import central_differences, max_relative_error
from handoff_lab.corpus import PAD_ID
from handoff_lab.memn2n import (EncodedInstances, Hyperparams, MemN2N, ModelParams, TrainingDivergence,
                                accuracy, attend, encode_memory, encode_sentence, evaluate,
                                hop_update, learning_rate, load_checkpoint, position_encoding, read,
                                save_checkpoint, sgd_step, softmax, train)


def test_position_encoding_single_word_is_ones():
    assert np.allclose(position_encoding(1, 7), 1.0)


def test_encode_single_token_returns_row():
    m = np.arange(12.0).reshape(4, 3)
    assert np.array_equal(encode_sentence([2], m), m[2])


def test_encode_all_pad_is_zero():
    m = np.ones((4, 3))
    assert np.array_equal(encode_sentence([PAD_ID, PAD_ID], m), np.zeros(3))
    assert np.array_equal(encode_sentence([], m), np.zeros(3))


def test_encode_two_tokens_by_hand():
    # J=2, d=2: weights [[1.25, 0.75], [0.75, 1.25]]
    m = np.array([[0, 0], [0, 0], [1.0, 2.0], [3.0, 4.0]])
    assert np.allclose(encode_sentence([2, 3], m), [1.25 * 1 + 0.75 * 3, 0.75 * 2 + 1.25 * 4])


def _params(vocab, d, cap, rng, scale=0.3):
    return ModelParams(*(rng.normal(0, scale, shape) for shape in
                         [(vocab, d)] * 3 + [(cap, d)] * 2 + [(vocab, d)]))


def test_encode_memory_empty(rng):
    a, c = encode_memory([], _params(6, 3, 4, rng), 4)
    assert a.shape == (0, 3) and c.shape == (0, 3)


def test_encode_memory_truncates_oldest(rng):
    p = _params(20, 3, 5, rng)
    sents = [[i + 2] for i in range(10)]
    a, c = encode_memory(sents, p, 5)
    assert a.shape == (5, 3)
    # slot 0 is the most recent sentence
    assert np.allclose(a[0] - p.TA[0], p.A[11])
    assert np.allclose(a[4] - p.TA[4], p.A[7])


def test_encode_memory_zero_temporal_is_bag(rng):
    p = _params(8, 3, 4, rng)
    p.TA[:] = 0
    a, _ = encode_memory([[2, 3], [4]], p, 4)
    assert np.allclose(a[1], encode_sentence([2, 3], p.A))


def test_attend_identical_rows_uniform():
    a = np.tile([0.3, -1.0], (4, 1))
    assert np.allclose(attend(np.array([2.0, 1.0]), a), 0.25)


def test_attend_single_memory():
    assert np.array_equal(attend(np.array([5.0, 1.0]), np.array([[1.0, 2.0]])), [1.0])


def test_attend_scalar_softmax_oracle():
    p = attend(np.array([1.0, 0.0]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    e = math.e
    assert np.allclose(p, [e / (e + 1), 1 / (e + 1)])


def test_attend_empty_memory():
    assert attend(np.ones(2), np.zeros((0, 2))).shape == (0,)
    assert np.array_equal(read(np.zeros(0), np.zeros((0, 2))), np.zeros(2))


def test_read_one_hot_and_constant(rng):
    c = rng.normal(size=(4, 3))
    assert np.allclose(read(np.eye(4)[2], c), c[2])
    same = np.tile([1.0, 2.0, 3.0], (4, 1))
    assert np.allclose(read(softmax(rng.normal(size=4)), same), [1, 2, 3])


def test_read_matches_loop(rng):
    p, c = softmax(rng.normal(size=5)), rng.normal(size=(5, 3))
    expect = np.zeros(3)
    for i in range(5):
        expect += p[i] * c[i]
    assert np.allclose(read(p, c), expect)


def test_hop_update():
    u, o = np.array([1.0, -2.0]), np.array([0.5, 4.0])
    assert np.array_equal(hop_update(np.zeros(2), u), u)
    assert np.array_equal(hop_update(o, np.zeros(2)), o)
    assert np.array_equal(hop_update(o, u), [1.5, 2.0])


def test_zero_params_uniform_probs(world):
    p = world.model.init_params().zeros_like()
    fr = world.model.forward(world.data, p)
    assert np.allclose(fr.probs, 1.0 / len(world.cands))


def _manual_forward(world, params, i, hops):
    inst = world.instances[i]
    ids = world.vocab.ids
    u = encode_sentence(ids(inst.query), params.B)
    a, c = encode_memory([ids(s) for s in inst.memory], params, world.hyper.memory_cap)
    for _ in range(hops):
        if len(a):
            u = hop_update(read(attend(u, a), c), u)
    cand = np.array([params.W[ids(t)].sum(axis=0) for t in world.cands.candidates])
    return u, cand @ u


@pytest.mark.parametrize("hops", [1, 3])
def test_forward_matches_manual_composition(hops, rng):
    w = World(hops=hops)
    params = _params(len(w.vocab), w.hyper.d, w.hyper.memory_cap, rng)
    fr = w.model.forward(w.data, params)
    for i in range(len(w.instances)):
        s, scores = _manual_forward(w, params, i, hops)
        assert np.allclose(fr.state[i], s)
        assert np.allclose(fr.scores[i], scores)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_distributions_valid(seed):
    w = World()
    params = _params(len(w.vocab), w.hyper.d, w.hyper.memory_cap, np.random.default_rng(seed), 1.0)
    fr = w.model.forward(w.data, params)
    assert np.all(fr.probs >= 0)
    assert np.allclose(fr.probs.sum(axis=1), 1.0, atol=1e-9)
    for p, n in zip(fr.cache["ps"][0], w.data.n_mem):
        if n:
            assert abs(p.sum() - 1.0) < 1e-9 and np.all(p[:n] > 0)


def test_uniform_loss_is_log_k(world):
    p = world.model.init_params().zeros_like()
    loss, _ = world.model.loss_and_gradients(world.data, p)
    assert loss == pytest.approx(math.log(len(world.cands)), abs=1e-12)


def _fd_check(world, params, batch, state_grad=None):
    def f():
        fr = world.model.forward(batch, params)
        lp = fr.scores - fr.scores.max(axis=1, keepdims=True)
        lp = lp - np.log(np.exp(lp).sum(axis=1, keepdims=True))
        val = -lp[np.arange(len(batch)), batch.answer].mean()
        if state_grad is not None:
            val += float((state_grad * fr.state).sum())
        return val

    _, grads = world.model.loss_and_gradients(batch, params, state_grad)
    numeric = central_differences(f, dict(params.items()))
    return max_relative_error(dict(grads.items()), numeric)


def test_gradients_match_finite_differences(world, rng):
    params = _params(len(world.vocab), world.hyper.d, world.hyper.memory_cap, rng)
    batch = world.data.take([2, 3, 7])
    assert _fd_check(world, params, batch) < 1e-4


def test_state_gradient_chain_matches_finite_differences(world, rng):
    params = _params(len(world.vocab), world.hyper.d, world.hyper.memory_cap, rng)
    batch = world.data.take([1, 4, 8])
    sg = rng.normal(size=(3, world.hyper.d))
    assert _fd_check(world, params, batch, sg) < 1e-4


def test_zero_state_grad_is_identity(world, rng):
    params = _params(len(world.vocab), world.hyper.d, world.hyper.memory_cap, rng)
    l1, g1 = world.model.loss_and_gradients(world.data, params)
    l2, g2 = world.model.loss_and_gradients(world.data, params, np.zeros((len(world.data), world.hyper.d)))
    assert l1 == l2 and g1.equals(g2)


def test_non_finite_loss_raises(world):
    p = world.model.init_params()
    p.W[:] = np.nan
    with pytest.raises(TrainingDivergence):
        world.model.loss_and_gradients(world.data, p)


def test_learning_rate_schedule():
    h = Hyperparams()
    assert learning_rate(0, h) == 0.01
    assert learning_rate(24, h) == 0.01
    assert learning_rate(25, h) == pytest.approx(0.005)
    assert learning_rate(50, h) == pytest.approx(0.0025)


def test_sgd_step_zero_grads_unchanged(world):
    p = world.model.init_params()
    assert sgd_step(p, p.zeros_like(), 0.01).equals(p)


def test_sgd_step_clips_global_norm(world):
    p = world.model.init_params()
    g = p.zeros_like()
    g.A[0, 0] = 100.0
    new = sgd_step(p, g, 1.0, grad_clip=2.0)
    assert new.A[0, 0] == pytest.approx(p.A[0, 0] - 2.0)


def test_candidate_permutation_permutes_scores(world, rng):
    params = _params(len(world.vocab), world.hyper.d, world.hyper.memory_cap, rng)
    perm = rng.permutation(len(world.cands))
    other = MemN2N(world.hyper, len(world.vocab), world.model.cand_bow[perm])
    a = world.model.forward(world.data, params).scores
    b = other.forward(world.data, params).scores
    assert np.allclose(b, a[:, perm])


def test_toy_corpus_memorized():
    w = World(d=20, hops=3, memory_cap=20)
    res = train(w.model, w.data, w.data, seed=1, max_epochs=50)
    assert evaluate(w.model, w.data, res.best_params)["per_turn"] == 1.0


def test_training_deterministic_and_checkpointed(world):
    r1 = train(world.model, world.data, world.data, seed=3, max_epochs=8)
    r2 = train(world.model, world.data, world.data, seed=3, max_epochs=8)
    assert r1.log == r2.log
    assert r1.best_params.equals(r2.best_params)
    best = [row["best_dev"] for row in r1.log]
    assert best == sorted(best)


def test_accuracy_definitions():
    answer = np.array([1, 2, 3, 4, 5])
    dialog = np.array([0, 0, 1, 1, 2])
    assert accuracy(answer, answer, dialog) == (1.0, 1.0)
    pred = answer.copy()
    pred[2] = 0
    pt, pd = accuracy(pred, answer, dialog)
    assert pt == pytest.approx(0.8)
    assert pd == pytest.approx(2 / 3)


def test_argmax_ties_pick_lowest_index(world):
    p = world.model.init_params().zeros_like()
    assert np.all(world.model.predict(world.data, p) == 0)


def test_encoded_subset_roundtrip(world):
    parts = [world.data.take([0, 1]), world.data.take([5, 6, 7])]
    joined = EncodedInstances.concat(parts)
    p = world.model.init_params()
    a = world.model.forward(joined, p).scores
    b = world.model.forward(world.data.take([0, 1, 5, 6, 7]), p).scores
    assert np.allclose(a, b)


def test_checkpoint_round_trip(world, tmp_path):
    p = world.model.init_params()
    save_checkpoint(tmp_path / "m.npz", p, world.hyper, world.vocab, note="x")
    q, hyper, meta = load_checkpoint(tmp_path / "m.npz")
    assert q.equals(p) and hyper == world.hyper
    assert meta["vocab_digest"] == world.vocab.digest() and meta["note"] == "x"


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        Hyperparams(d=0)
    with pytest.raises(ValueError):
        Hyperparams(anneal_ratio=0)
    assert replace(Hyperparams(), hops=1).hops == 1
