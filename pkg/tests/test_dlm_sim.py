import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lrdwm.dlm_sim import (
    MarkovSource,
    NGramModel,
    SequenceState,
    base_logits,
    decode,
    logit_of,
    make_schedule,
    max_prob,
    train_base_model,
)
from lrdwm.errors import ConfigError, DataError, UsageError
from lrdwm.inject import InjectorConfig, LRInjector
from lrdwm.vocab_hash import Vocabulary, WatermarkKey

from oracles import RefNGram, ref_greedy_decode


def softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


@pytest.fixture(scope="module")
def small():
    src = MarkovSource(16, branching=3, leak=0.1, seed=4)
    corpus = src.sample(40, 30, 5)
    return corpus, train_base_model(corpus, order=3, smoothing=0.5, vocab_size=16)


# -- state ---------------------------------------------------------------

def test_state_from_prompt():
    vocab = Vocabulary(8)
    st_ = SequenceState.from_prompt([1, 2], 5, vocab)
    assert st_.tokens.tolist() == [1, 2, 8, 8, 8]
    assert st_.revealed.tolist() == [True, True, False, False, False]
    st_.reveal(3, 4)
    assert st_.masked_positions().tolist() == [2, 4]
    with pytest.raises(UsageError):
        st_.reveal(3, 5)
    with pytest.raises(UsageError):
        st_.reveal(0, 5)
    with pytest.raises(UsageError):
        st_.reveal(2, vocab.mask_id)
    with pytest.raises(ConfigError):
        SequenceState.from_prompt([1, 8], 5, vocab)


# -- corpus --------------------------------------------------------------

def test_markov_source_deterministic_and_valid():
    src = MarkovSource(32, seed=1)
    a = src.sample(10, 50, 3)
    b = MarkovSource(32, seed=1).sample(10, 50, 3)
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() < 32
    P = src.transition_matrix()
    assert np.allclose(P.sum(axis=1), 1.0)


def test_markov_source_transition_frequencies():
    src = MarkovSource(8, branching=2, leak=0.2, seed=0)
    x = src.sample(2000, 60, 1)
    counts = np.zeros((8, 8))
    np.add.at(counts, (x[:, :-1].ravel(), x[:, 1:].ravel()), 1)
    emp = counts / counts.sum(axis=1, keepdims=True)
    n = counts.sum(axis=1, keepdims=True)
    P = src.transition_matrix()
    assert np.all(np.abs(emp - P) <= 4 * np.sqrt(P * (1 - P) / n) + 1e-9)


# -- model ---------------------------------------------------------------

def test_cycle_corpus_left_neighbor_argmax():
    corpus = [[0, 1, 2, 3] * 10]
    model = train_base_model(corpus, order=2, smoothing=0.1)
    vocab = Vocabulary(4)
    st_ = SequenceState.from_prompt([0, 1], 6, vocab)
    logits = base_logits(model, st_, 2)
    ref = RefNGram(corpus, 4, 2, 0.1)
    expected = ref.probs(st_.tokens.tolist(), st_.revealed.tolist(), 2)
    assert int(np.argmax(logits)) == 2
    assert np.allclose(softmax(logits), [float(p) for p in expected], atol=1e-12)


def test_huge_smoothing_is_uniform():
    corpus = [[0, 1, 2, 3] * 10, [3, 3, 3, 1]]
    model = train_base_model(corpus, order=3, smoothing=1e12)
    st_ = SequenceState.from_prompt([0, 1], 6, Vocabulary(4))
    assert np.allclose(softmax(base_logits(model, st_, 2)), 0.25, atol=1e-9)


def test_fully_masked_neighborhood_is_unigram(small):
    corpus, model = small
    st_ = SequenceState.from_prompt([3], 10, Vocabulary(16))
    counts = np.bincount(corpus.ravel(), minlength=16) + 0.5
    assert np.allclose(softmax(base_logits(model, st_, 5)), counts / counts.sum(), atol=1e-12)


def test_left_only_matches_count_lookup(small):
    corpus, model = small
    st_ = SequenceState.from_prompt([3, 7], 10, Vocabulary(16))
    left = corpus[:, :-1].ravel() == 7
    counts = np.bincount(corpus[:, 1:].ravel()[left], minlength=16)
    tri = (corpus[:, :-2] == 3) & (corpus[:, 1:-1] == 7)
    tri_counts = np.bincount(corpus[:, 2:][tri], minlength=16)
    expected = (tri_counts if tri_counts.sum() else counts) + 0.5
    assert np.allclose(softmax(base_logits(model, st_, 2)), expected / expected.sum(), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), order=st.sampled_from([2, 3]),
       alpha=st.sampled_from([0.25, 0.5, 1.0, 0.1]))
def test_forward_matches_exact_oracle(seed, order, alpha):
    rng = np.random.default_rng(seed)
    V = int(rng.integers(4, 12))
    corpus = [rng.integers(0, V, size=int(rng.integers(2, 15))).tolist() for _ in range(6)]
    model = train_base_model(corpus, order=order, smoothing=alpha, vocab_size=V)
    ref = RefNGram(corpus, V, order, alpha)
    L = int(rng.integers(3, 10))
    tokens = rng.integers(0, V, size=L)
    revealed = rng.random(L) < 0.5
    tokens[~revealed] = V
    positions = np.flatnonzero(~revealed)
    if positions.size == 0:
        return
    logits = model.forward(tokens, revealed, positions)
    for row, pos in zip(logits, positions):
        expected = [float(p) for p in ref.probs(tokens.tolist(), revealed.tolist(), int(pos))]
        assert np.allclose(softmax(row), expected, atol=1e-12)


def test_softmax_normalizes(small):
    _, model = small
    rng = np.random.default_rng(0)
    for _ in range(20):
        tokens = rng.integers(0, 17, size=12)
        revealed = tokens < 16
        pos = np.flatnonzero(~revealed)
        if pos.size:
            probs = np.exp(model.forward(tokens, revealed, pos))
            probs /= probs.sum(axis=1, keepdims=True)
            assert np.all(np.isfinite(probs))
            assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_mask_logit_is_minus_inf(small):
    _, model = small
    st_ = SequenceState.from_prompt([3], 5, Vocabulary(16))
    logits = base_logits(model, st_, 2)
    assert logits.shape == (16,)
    assert logit_of(logits, 16) == float("-inf")
    assert np.isfinite(logit_of(logits, 3))


def test_base_logits_rejects_revealed(small):
    _, model = small
    st_ = SequenceState.from_prompt([3, 4], 5, Vocabulary(16))
    with pytest.raises(UsageError):
        base_logits(model, st_, 1)
    st_.reveal(2, 1)
    with pytest.raises(UsageError):
        base_logits(model, st_, 2)


def test_training_errors():
    with pytest.raises(DataError):
        train_base_model([])
    with pytest.raises(DataError):
        train_base_model([[]])
    with pytest.raises(ConfigError):
        train_base_model([[0, 1, 2]], order=4)
    with pytest.raises(DataError):
        train_base_model([[0, 1, 9]], vocab_size=5)
    with pytest.raises(ConfigError):
        train_base_model([[0, 1, 2]], smoothing=0)


def test_model_roundtrip(tmp_path, small):
    corpus, model = small
    path = tmp_path / "m.json"
    model.save(path)
    again = NGramModel.load(path)
    rng = np.random.default_rng(2)
    tokens = rng.integers(0, 17, size=20)
    revealed = tokens < 16
    pos = np.flatnonzero(~revealed)
    assert np.array_equal(model.forward(tokens, revealed, pos), again.forward(tokens, revealed, pos))
    assert again.order == 3 and again.vocab_size == 16
    path.write_text('{"format": "other"}')
    with pytest.raises(DataError):
        NGramModel.load(path)


def test_left_to_right_logprob_normalized(small):
    corpus, model = small
    lp = model.left_to_right_logprob(corpus[0], start=1)
    assert lp.shape == (corpus.shape[1] - 1,)
    assert np.all(lp < 0)


# -- schedules -----------------------------------------------------------

def test_random_schedule_singletons():
    sch = make_schedule("random", 10, 2, 8, seed=1)
    assert all(len(s) == 1 for s in sch.step_sets)
    assert sorted(p for s in sch.step_sets for p in s) == list(range(2, 10))


def test_block_schedule_order():
    sch = make_schedule("block", 10, 2, 8, block_len=4, seed=1)
    flat = [p for s in sch.step_sets for p in s]
    assert sorted(flat[:4]) == [2, 3, 4, 5]
    assert sorted(flat[4:]) == [6, 7, 8, 9]


def test_schedule_determinism():
    a = make_schedule("random", 30, 3, 9, seed=5)
    b = make_schedule("random", 30, 3, 9, seed=5)
    assert a == b
    assert make_schedule("random", 30, 3, 9, seed=6) != a


@settings(max_examples=100, deadline=None)
@given(kind=st.sampled_from(["random", "block", "confidence"]), gen=st.integers(1, 60),
       prompt=st.integers(0, 5), data=st.data())
def test_schedule_partition(kind, gen, prompt, data):
    block_len = data.draw(st.integers(1, gen))
    n_blocks = -(-gen // block_len)
    lo = n_blocks if kind == "block" else 1
    steps = data.draw(st.integers(lo, gen))
    sch = make_schedule(kind, prompt + gen, prompt, steps, block_len=block_len, seed=3)
    assert sum(sch.step_sizes) == gen
    assert len(sch.step_sizes) == steps
    assert all(s >= 1 for s in sch.step_sizes)
    if sch.step_sets is not None:
        flat = [p for s in sch.step_sets for p in s]
        assert sorted(flat) == list(range(prompt, prompt + gen))
    if kind == "block":
        blocks = [[(p - prompt) // block_len for p in s] for s in sch.step_sets]
        assert all(len(set(b)) == 1 for b in blocks)
        firsts = [b[0] for b in blocks]
        assert firsts == sorted(firsts)


def test_schedule_errors():
    with pytest.raises(ConfigError):
        make_schedule("zigzag", 10, 2)
    with pytest.raises(ConfigError):
        make_schedule("random", 10, 2, steps=9)
    with pytest.raises(ConfigError):
        make_schedule("random", 2, 2)
    with pytest.raises(ConfigError):
        make_schedule("block", 10, 2, steps=1, block_len=4)
    with pytest.raises(ConfigError):
        make_schedule("block", 10, 2)


# -- decoding ------------------------------------------------------------

def _cfg(delta):
    return InjectorConfig(WatermarkKey(11), WatermarkKey(22), delta)


@pytest.mark.parametrize("kind,steps", [("random", None), ("random", 3), ("block", None), ("block", 4)])
def test_greedy_matches_reference(kind, steps):
    rng = np.random.default_rng(9)
    for case in range(15):
        V = int(rng.integers(4, 17))
        corpus = [rng.integers(0, V, size=20).tolist() for _ in range(5)]
        alpha = [0.25, 0.5, 1.0][case % 3]
        order = 2 + case % 2
        model = train_base_model(corpus, order=order, smoothing=alpha, vocab_size=V)
        L = int(rng.integers(4, 13))
        prompt = rng.integers(0, V, size=int(rng.integers(1, 3)))
        sch = make_schedule(kind, L, prompt.size, steps if steps is None else min(steps, L - prompt.size),
                            block_len=3, seed=case)
        got = decode(model, prompt, sch).tokens.tolist()
        ref = ref_greedy_decode(RefNGram(corpus, V, order, alpha), prompt.tolist(), L, sch.step_sets, V)
        assert got == ref


def test_zero_delta_injector_is_identity(small):
    corpus, model = small
    vocab = Vocabulary(16)
    for temp in (0.0, 0.7):
        sch = make_schedule("random", 40, 4, seed=2)
        a = decode(model, corpus[0, :4], sch, temperature=temp, seed=3)
        b = decode(model, corpus[0, :4], sch, temperature=temp, seed=3, injector=LRInjector(_cfg(0.0), vocab))
        assert np.array_equal(a.tokens, b.tokens)


def test_forward_all_does_not_change_output(small):
    corpus, model = small
    vocab = Vocabulary(16)
    for kind in ("random", "block"):
        sch = make_schedule(kind, 40, 4, 20, block_len=6, seed=2)
        inj = LRInjector(_cfg(1.5), vocab)
        a = decode(model, corpus[1, :4], sch, temperature=0.9, seed=5, injector=inj)
        b = decode(model, corpus[1, :4], sch, temperature=0.9, seed=5, injector=inj, forward_all=False)
        assert np.array_equal(a.tokens, b.tokens)
        assert [r.logits_digest for r in a.audit] == [r.logits_digest for r in b.audit]


def test_decode_completes_and_is_monotone(small):
    corpus, model = small
    sch = make_schedule("block", 50, 5, 15, block_len=10, seed=1)
    res = decode(model, corpus[2, :5], sch, temperature=1.0, seed=8,
                 injector=LRInjector(_cfg(2.0), Vocabulary(16)))
    assert res.state.complete
    positions = [r.pos for r in res.audit]
    assert sorted(positions) == list(range(5, 50))
    steps = [r.step for r in res.audit]
    assert steps == sorted(steps)
    assert all(res.tokens[r.pos] == r.token for r in res.audit)
    assert np.array_equal(res.tokens[:5], corpus[2, :5])


def test_decode_reproducible(small):
    corpus, model = small
    inj = LRInjector(_cfg(2.0), Vocabulary(16))
    sch = make_schedule("random", 40, 3, seed=4)
    a = decode(model, corpus[0, :3], sch, temperature=0.8, seed=1, injector=inj)
    b = decode(model, corpus[0, :3], sch, temperature=0.8, seed=1, injector=inj)
    c = decode(model, corpus[0, :3], sch, temperature=0.8, seed=2, injector=inj)
    assert np.array_equal(a.tokens, b.tokens)
    assert not np.array_equal(a.tokens, c.tokens)


def test_confidence_schedule_reveals_most_certain_first(small):
    corpus, model = small
    sch = make_schedule("confidence", 30, 3)
    res = decode(model, corpus[0, :3], sch)
    st_ = SequenceState.from_prompt(corpus[0, :3], 30, Vocabulary(16))
    for rec in res.audit:
        masked = st_.masked_positions()
        conf = max_prob(model.forward(st_.tokens, st_.revealed, masked))
        best = masked[conf == conf.max()].min()
        assert rec.pos == best
        st_.reveal(rec.pos, rec.token)


def test_confidence_on_near_deterministic_corpus():
    # a long deterministic cycle: positions next to the prompt are certain
    corpus = [list(range(12)) * 30]
    model = train_base_model(corpus, order=2, smoothing=0.01)
    res = decode(model, [0, 1, 2], make_schedule("confidence", 12, 3))
    order = [r.pos for r in res.audit]
    assert order[0] == 3
    assert res.tokens.tolist() == list(range(12))


def test_negative_temperature(small):
    corpus, model = small
    with pytest.raises(ConfigError):
        decode(model, corpus[0, :3], make_schedule("random", 10, 3), temperature=-1)


def test_prompt_length_mismatch(small):
    corpus, model = small
    with pytest.raises(ConfigError):
        decode(model, corpus[0, :4], make_schedule("random", 10, 3))


def test_audit_json_lines(small):
    import json
    corpus, model = small
    res = decode(model, corpus[0, :3], make_schedule("random", 10, 3, seed=2),
                 injector=LRInjector(_cfg(1.0), Vocabulary(16)))
    rows = [json.loads(r.to_json()) for r in res.audit]
    assert {"pos", "step", "mode", "logits_digest", "left_digest", "right_digest",
            "delta_left", "delta_right"} <= set(rows[0])
