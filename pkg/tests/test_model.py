"""Model-composition tests: album encoder, summary selection, word decoding,
story likelihood, beam search, and the two flat baselines.

Layer primitives (gru_step, mlp, embed) are verified independently in
test_layers.py, so they serve as trusted building blocks for recomputing
what the model functions are supposed to wire together.
"""

import math

import numpy as np
import pytest

from hatstory.data import BOS_ID, EOS_ID, Story
from hatstory.errors import ConfigurationError, ContractError, DimensionError
from hatstory.layers import bi_gru, gru_step, mlp
from hatstory.model import (
    ModelDims,
    beam_decode,
    decode_word_step,
    enc_attn_dec_generate,
    enc_attn_dec_log_prob,
    enc_dec_generate,
    enc_dec_log_prob,
    encode_album,
    generate_story,
    init_model,
    select_step,
    select_summary,
    story_log_prob,
)
from hatstory.tensor import Rng, Tensor, log_softmax, zeros

from conftest import assert_close


def tiny_dims(**overrides):
    base = dict(k=4, d_s=3, d_g=3, d_w=2, vocab_size=6, t_steps=5)
    base.update(overrides)
    return ModelDims(**base)


def tiny_model(seed=0, **overrides):
    return init_model(tiny_dims(**overrides), Rng(seed))


def zero_weights(*groups):
    for group in groups:
        for _, tensor in group.named():
            tensor.data[...] = 0.0


def random_features(rng, n, k):
    return rng.uniform(-1.0, 1.0, (n, k))


# ---------------------------------------------------------------------------
# album encoder


def test_encode_album_is_residual_relu_over_bigru():
    params = tiny_model(seed=3)
    rng = Rng(42)
    feats = random_features(rng, 3, 4)
    enc = encode_album(params, feats)

    xs = [Tensor(feats[i]) for i in range(3)]
    outs = bi_gru(params.enc_fwd, params.enc_bwd, xs)
    for i in range(3):
        expected = np.maximum(outs[i].data + feats[i], 0.0)
        assert_close(Tensor(enc.v.data[i]), Tensor(expected))
    half = 2
    expected_final = np.concatenate([outs[-1].data[:half], outs[0].data[half:]])
    assert_close(enc.final_state, Tensor(expected_final))
    assert enc.n == 3


def test_encode_album_zero_encoder_passes_relu_features():
    params = tiny_model(seed=0)
    zero_weights(params.enc_fwd, params.enc_bwd)
    feats = np.array([[-1.0, 2.0, -0.5, 3.0], [0.0, -4.0, 1.5, 0.25]])
    enc = encode_album(params, feats)
    assert_close(enc.v, Tensor(np.maximum(feats, 0.0)))
    assert_close(enc.final_state, Tensor(np.zeros(4)))


def test_encode_album_input_validation():
    params = tiny_model()
    with pytest.raises(DimensionError):
        encode_album(params, np.zeros(4))
    with pytest.raises(DimensionError):
        encode_album(params, np.zeros((3, 5)))
    with pytest.raises(ContractError):
        encode_album(params, np.zeros((0, 4)))


# ---------------------------------------------------------------------------
# summary-photo selection


def test_select_step_recomputes_as_sigmoid_mlp_renormalized():
    params = tiny_model(seed=5)
    rng = Rng(9)
    enc = encode_album(params, random_features(rng, 4, 4))
    prev_g = Tensor(rng.uniform(-1.0, 1.0, (4,)))
    state0 = Tensor(rng.uniform(-1.0, 1.0, (3,)))

    p, state1 = select_step(params, enc.v, prev_g, state0)

    expected_state = gru_step(params.sel_gru, prev_g, state0)
    assert_close(state1, expected_state)
    raws = []
    for i in range(4):
        feats_i = Tensor(np.concatenate([expected_state.data, enc.v.data[i]]))
        score = mlp(params.sel_mlp, feats_i).data.reshape(())
        raws.append(1.0 / (1.0 + math.exp(-float(score))))
    raws = np.array(raws)
    assert_close(p, Tensor(raws / raws.sum()), tol=1e-12)


def test_select_step_constant_scorer_is_uniform():
    params = tiny_model(seed=1)
    zero_weights(params.sel_mlp)
    enc = encode_album(params, random_features(Rng(2), 5, 4))
    p, _ = select_step(params, enc.v, zeros(4), zeros(3))
    assert_close(p, Tensor(np.full(5, 0.2)), tol=1e-15)


def test_select_step_mask_zeroes_and_renormalizes():
    params = tiny_model(seed=7)
    rng = Rng(11)
    enc = encode_album(params, random_features(rng, 4, 4))
    prev_g, state = zeros(4), zeros(3)
    unmasked, _ = select_step(params, enc.v, prev_g, state)
    excluded = np.array([True, False, True, False])
    masked, _ = select_step(params, enc.v, prev_g, state, excluded)

    assert masked.data[0] == 0.0 and masked.data[2] == 0.0
    # the surviving entries keep their raw-score ratios
    expected = unmasked.data * (~excluded)
    expected = expected / expected.sum()
    assert_close(masked, Tensor(expected), tol=1e-12)

    with pytest.raises(ContractError):
        select_step(params, enc.v, prev_g, state, np.array([True] * 4))


@pytest.mark.parametrize("seed", range(20))
def test_select_summary_soft_invariants(seed):
    rng = Rng(seed)
    params = tiny_model(seed=seed)
    n = 5 + seed % 4
    enc = encode_album(params, random_features(rng, n, 4))
    sel = select_summary(params, enc, "soft")

    assert sel.probs.shape == (5, n)
    assert np.all(sel.probs.data >= 0.0)
    assert np.allclose(sel.probs.data.sum(axis=1), 1.0, atol=1e-12)
    assert len(sel.indices) == 5 and len(set(sel.indices)) == 5
    assert_close(sel.g, Tensor(sel.probs.data @ enc.v.data), tol=1e-12)
    # greedy-distinct: each index is the best-scoring photo not yet taken
    taken = set()
    for t in range(5):
        available = [i for i in range(n) if i not in taken]
        best = min(available, key=lambda i: (-sel.probs.data[t, i], i))
        assert sel.indices[t] == best
        taken.add(best)


def test_select_summary_hard_matches_stepwise_masking():
    params = tiny_model(seed=13)
    rng = Rng(29)
    enc = encode_album(params, random_features(rng, 7, 4))
    sel = select_summary(params, enc, "hard")

    state = zeros(3)
    prev_g = Tensor(np.full(7, 1.0 / 7) @ enc.v.data)
    chosen = []
    for t in range(5):
        excluded = None
        if chosen:
            excluded = np.zeros(7, dtype=bool)
            excluded[chosen] = True
        p, state = select_step(params, enc.v, prev_g, state, excluded)
        idx = min(
            (i for i in range(7) if i not in chosen),
            key=lambda i: (-p.data[i], i),
        )
        assert_close(Tensor(sel.probs.data[t]), p)
        assert sel.indices[t] == idx
        chosen.append(idx)
        prev_g = Tensor(p.data @ enc.v.data)
    # taken photos carry exactly zero probability afterwards
    for t in range(1, 5):
        assert np.all(sel.probs.data[t, sel.indices[:t]] == 0.0)


def test_select_summary_hard_requires_enough_photos():
    params = tiny_model()
    enc = encode_album(params, random_features(Rng(0), 4, 4))
    with pytest.raises(ContractError):
        select_summary(params, enc, "hard")


def test_select_summary_soft_allows_fewer_photos_than_steps():
    params = tiny_model(seed=2)
    enc = encode_album(params, random_features(Rng(1), 3, 4))
    sel = select_summary(params, enc, "soft")
    assert len(sel.indices) == 5
    assert all(0 <= i < 3 for i in sel.indices)
    assert set(sel.indices[:3]) == {0, 1, 2}  # distinct until photos run out


def test_select_summary_oracle_copies_photo_rows():
    params = tiny_model(seed=4)
    enc = encode_album(params, random_features(Rng(6), 8, 4))
    idx = [6, 0, 3, 7, 2]
    sel = select_summary(params, enc, "oracle", idx)
    assert sel.indices == idx
    expected = np.zeros((5, 8))
    expected[np.arange(5), idx] = 1.0
    assert np.array_equal(sel.probs.data, expected)
    for t, i in enumerate(idx):
        assert np.array_equal(sel.g.data[t], enc.v.data[i])


def test_select_summary_oracle_and_mode_validation():
    params = tiny_model()
    enc = encode_album(params, random_features(Rng(0), 6, 4))
    with pytest.raises(ContractError):
        select_summary(params, enc, "oracle", [0, 1, 2])  # too few
    with pytest.raises(ContractError):
        select_summary(params, enc, "oracle", [0, 1, 2, 3, 3])  # repeated
    with pytest.raises(ContractError):
        select_summary(params, enc, "oracle", [0, 1, 2, 3, 6])  # out of range
    with pytest.raises(ContractError):
        select_summary(params, enc, "best")  # unknown mode


# ---------------------------------------------------------------------------
# word decoding and story likelihood


def test_decode_word_step_composition():
    params = tiny_model(seed=8)
    rng = Rng(15)
    g = Tensor(rng.uniform(-1.0, 1.0, (4,)))
    h = Tensor(rng.uniform(-1.0, 1.0, (3,)))
    logits, h2 = decode_word_step(params, 4, g, h)

    x = Tensor(np.concatenate([params.embedding.table.data[4], g.data]))
    expected_h2 = gru_step(params.gen_gru, x, h)
    assert_close(h2, expected_h2)
    expected_logits = expected_h2.data @ params.proj_w.data + params.proj_b.data
    assert_close(logits, Tensor(expected_logits), tol=1e-12)


def test_decode_zero_projection_is_uniform():
    params = tiny_model(seed=0)
    params.proj_w.data[...] = 0.0
    logits, _ = decode_word_step(params, 0, zeros(4), zeros(3))
    assert np.array_equal(logits.data, np.zeros(6))
    lps = log_softmax(logits).data
    assert np.allclose(lps, -math.log(6), atol=1e-15)


def test_story_log_prob_uniform_model_counts_tokens():
    params = tiny_model(seed=1)
    params.proj_w.data[...] = 0.0
    params.proj_b.data[...] = 0.0
    enc = encode_album(params, random_features(Rng(3), 6, 4))
    sel = select_summary(params, enc, "soft")
    story = Story(sentences=[[4, 5, 2], [5, 2], [3, 3, 4, 2], [2], [4, 2]])
    total_tokens = sum(len(s) for s in story.sentences)
    lp = story_log_prob(params, enc, sel, story)
    assert abs(float(lp.data) - (-total_tokens * math.log(6))) < 1e-12


def test_story_log_prob_matches_stepwise_recomputation():
    params = init_model(tiny_dims(t_steps=2), Rng(17))
    enc = encode_album(params, random_features(Rng(18), 5, 4))
    sel = select_summary(params, enc, "soft")
    story = Story(sentences=[[4, 3, 2], [5, 2]])
    lp = story_log_prob(params, enc, sel, story)

    total = 0.0
    h = zeros(3)
    for t, sentence in enumerate(story.sentences):
        g = Tensor(sel.g.data[t])
        prev = BOS_ID
        for tok in sentence:
            logits, h = decode_word_step(params, prev, g, h)
            total += float(log_softmax(logits).data[tok])
            prev = tok
    assert abs(float(lp.data) - total) < 1e-10


def test_story_log_prob_without_state_carry_resets_per_sentence():
    params = init_model(tiny_dims(t_steps=2), Rng(21), carry_state=False)
    enc = encode_album(params, random_features(Rng(22), 5, 4))
    sel = select_summary(params, enc, "soft")
    story = Story(sentences=[[4, 3, 2], [5, 2]])
    lp = story_log_prob(params, enc, sel, story)

    total = 0.0
    for t, sentence in enumerate(story.sentences):
        g = Tensor(sel.g.data[t])
        h = zeros(3)  # fresh state every sentence
        prev = BOS_ID
        for tok in sentence:
            logits, h = decode_word_step(params, prev, g, h)
            total += float(log_softmax(logits).data[tok])
            prev = tok
    assert abs(float(lp.data) - total) < 1e-10


def test_story_log_prob_rejects_wrong_sentence_count():
    params = tiny_model()
    enc = encode_album(params, random_features(Rng(0), 6, 4))
    sel = select_summary(params, enc, "soft")
    with pytest.raises(ContractError):
        story_log_prob(params, enc, sel, Story(sentences=[[2], [2]]))


# ---------------------------------------------------------------------------
# beam search


def greedy_decode(params, g, max_len):
    h = zeros(params.dims.d_g)
    prev = BOS_ID
    tokens = []
    for _ in range(max_len):
        logits, h = decode_word_step(params, prev, g, h)
        tok = int(np.argmax(logits.data))  # ties go to the lower token id
        tokens.append(tok)
        if tok == EOS_ID:
            break
        prev = tok
    return tokens


def exhaustive_argmax(params, g, max_len):
    """Score every sequence that stops at EOS or the length cap; return the
    highest-likelihood one (shorter-then-lexicographic on exact ties)."""
    vocab = params.dims.vocab_size
    complete = []

    def extend(tokens, logp, h):
        prev = tokens[-1] if tokens else BOS_ID
        logits, h2 = decode_word_step(params, prev, g, h)
        lps = log_softmax(logits).data
        for tok in range(vocab):
            seq = tokens + (tok,)
            lp = logp + float(lps[tok])
            if tok == EOS_ID or len(seq) == max_len:
                complete.append((seq, lp))
            else:
                extend(seq, lp, h2)

    extend((), 0.0, zeros(params.dims.d_g))
    complete.sort(key=lambda item: (-item[1], len(item[0]), item[0]))
    return complete[0]


@pytest.mark.parametrize("seed", range(100))
def test_beam_one_equals_greedy(seed):
    rng = Rng(seed)
    params = init_model(tiny_dims(vocab_size=5), rng)
    g = Tensor(rng.uniform(-1.0, 1.0, (4,)))
    assert beam_decode(params, g, beam=1, max_len=6) == greedy_decode(params, g, 6)


@pytest.mark.parametrize("seed", range(50))
def test_beam_three_matches_exhaustive_tiny_vocab(seed):
    rng = Rng(1000 + seed)
    params = init_model(tiny_dims(vocab_size=3), rng)
    g = Tensor(rng.uniform(-1.0, 1.0, (4,)))
    best_tokens, best_lp = exhaustive_argmax(params, g, max_len=3)
    found = beam_decode(params, g, beam=3, max_len=3)
    assert tuple(found) == best_tokens, f"beam {found} vs exhaustive {best_tokens} (lp {best_lp})"


def test_beam_tie_breaking_is_canonical():
    params = tiny_model(seed=0)
    for _, t in params.named_tensors():
        t.data[...] = 0.0
    g = zeros(4)
    # all logits equal: greedy runs token 0 to the cap, a wider beam keeps
    # the shorter all-tied EOS hypothesis alive and prefers it on length
    assert beam_decode(params, g, beam=1, max_len=3) == [0, 0, 0]
    assert beam_decode(params, g, beam=3, max_len=3) == [EOS_ID]


def test_beam_argument_validation():
    params = tiny_model()
    with pytest.raises(ContractError):
        beam_decode(params, zeros(4), beam=0, max_len=3)
    with pytest.raises(ContractError):
        beam_decode(params, zeros(4), beam=1, max_len=0)


def test_generate_story_is_deterministic_and_well_formed():
    params = tiny_model(seed=9)
    feats = random_features(Rng(33), 6, 4)
    story1 = generate_story(params, feats, beam=3, max_len=5)
    story2 = generate_story(params, feats, beam=3, max_len=5)
    assert story1.sentences == story2.sentences
    assert len(story1.sentences) == 5
    for sentence in story1.sentences:
        assert 1 <= len(sentence) <= 5
        assert all(0 <= tok < 6 for tok in sentence)


def test_generate_story_oracle_decodes_from_chosen_photos():
    params = tiny_model(seed=10)
    feats = random_features(Rng(34), 6, 4)
    idx = [5, 2, 0, 4, 1]
    story = generate_story(params, feats, beam=2, max_len=4, oracle_indices=idx)

    enc = encode_album(params, feats)
    h = zeros(3)
    for t, i in enumerate(idx):
        from hatstory.model import _beam_search

        winner = _beam_search(params, Tensor(enc.v.data[i]), 2, 4, h)
        assert story.sentences[t] == list(winner.tokens)
        h = winner.state


# ---------------------------------------------------------------------------
# flat baselines


def test_enc_dec_log_prob_uses_projected_final_state():
    params = init_model(tiny_dims(t_steps=2), Rng(25))
    feats = random_features(Rng(26), 5, 4)
    story = Story(sentences=[[4, 2], [5, 3, 2]])
    lp = enc_dec_log_prob(params, feats, story)

    enc = encode_album(params, feats)
    vis = Tensor(enc.final_state.data @ params.encdec_w.data + params.encdec_b.data)
    total = 0.0
    h = zeros(3)
    for sentence in story.sentences:
        prev = BOS_ID
        for tok in sentence:
            logits, h = decode_word_step(params, prev, vis, h)
            total += float(log_softmax(logits).data[tok])
            prev = tok
    assert abs(float(lp.data) - total) < 1e-10


def test_enc_dec_zero_projection_ignores_photos():
    params = init_model(tiny_dims(t_steps=1), Rng(27))
    params.encdec_w.data[...] = 0.0
    params.encdec_b.data[...] = 0.0
    story = Story(sentences=[[4, 5, 2]])
    lp_a = enc_dec_log_prob(params, random_features(Rng(1), 5, 4), story)
    lp_b = enc_dec_log_prob(params, random_features(Rng(2), 8, 4), story)
    assert float(lp_a.data) == float(lp_b.data)


def test_enc_dec_generate_shapes():
    params = tiny_model(seed=11)
    story = enc_dec_generate(params, random_features(Rng(3), 6, 4), beam=2, max_len=4)
    assert len(story.sentences) == 5
    assert all(1 <= len(s) <= 4 for s in story.sentences)


def test_enc_attn_dec_attention_is_a_distribution():
    params = init_model(tiny_dims(t_steps=3), Rng(30))
    story, attn = enc_attn_dec_generate(params, random_features(Rng(31), 7, 4), beam=1, max_len=4)
    assert attn.shape == (3, 7)
    assert np.all(attn > 0.0)
    assert np.allclose(attn.sum(axis=1), 1.0, atol=1e-12)
    assert len(story.sentences) == 3


def test_enc_attn_dec_single_photo_gets_full_attention():
    params = init_model(tiny_dims(t_steps=1), Rng(32))
    story = Story(sentences=[[4, 2]])
    _, attn = enc_attn_dec_log_prob(params, random_features(Rng(5), 1, 4), story)
    assert np.array_equal(attn, np.ones((1, 1)))


def test_enc_attn_dec_constant_scorer_attends_uniformly():
    params = init_model(tiny_dims(t_steps=2), Rng(35))
    zero_weights(params.attn_mlp)
    feats = random_features(Rng(36), 4, 4)
    story = Story(sentences=[[4, 2], [5, 2]])
    lp, attn = enc_attn_dec_log_prob(params, feats, story)
    assert np.allclose(attn, 0.25, atol=1e-15)

    # with uniform attention every sentence sees the mean photo representation
    enc = encode_album(params, feats)
    mean_v = Tensor(enc.v.data.mean(axis=0))
    total = 0.0
    h = zeros(3)
    for sentence in story.sentences:
        prev = BOS_ID
        for tok in sentence:
            logits, h = decode_word_step(params, prev, mean_v, h)
            total += float(log_softmax(logits).data[tok])
            prev = tok
    assert abs(float(lp.data) - total) < 1e-10


def test_enc_attn_dec_log_prob_rejects_wrong_sentence_count():
    params = tiny_model()
    with pytest.raises(ContractError):
        enc_attn_dec_log_prob(params, random_features(Rng(0), 5, 4), Story(sentences=[[2]]))


# ---------------------------------------------------------------------------
# construction and validation


def test_model_dims_validation():
    with pytest.raises(ConfigurationError):
        tiny_dims(k=5)  # odd width cannot split across directions
    with pytest.raises(ConfigurationError):
        tiny_dims(d_g=0)
    with pytest.raises(ConfigurationError):
        tiny_dims(vocab_size=EOS_ID)
    with pytest.raises(ConfigurationError):
        tiny_dims(t_steps=-1)


def test_init_model_same_seed_same_weights():
    a = init_model(tiny_dims(), Rng(5))
    b = init_model(tiny_dims(), Rng(5))
    for (name_a, t_a), (name_b, t_b) in zip(a.named_tensors(), b.named_tensors()):
        assert name_a == name_b
        assert np.array_equal(t_a.data, t_b.data)
    c = init_model(tiny_dims(), Rng(6))
    assert any(
        not np.array_equal(t_a.data, t_c.data)
        for (_, t_a), (_, t_c) in zip(a.named_tensors(), c.named_tensors())
    )


def test_init_model_encoder_gain_scales_only_encoder():
    base = init_model(tiny_dims(), Rng(5))
    scaled = init_model(tiny_dims(), Rng(5), enc_init_gain=0.5)
    enc_names = {"enc_fwd", "enc_bwd"}
    for (name, t_base), (_, t_scaled) in zip(base.named_tensors(), scaled.named_tensors()):
        if name.split(".")[0] in enc_names:
            assert np.array_equal(t_scaled.data, t_base.data * 0.5)
        else:
            assert np.array_equal(t_scaled.data, t_base.data)


def test_init_model_rejects_nonpositive_gain():
    with pytest.raises(ConfigurationError):
        init_model(tiny_dims(), Rng(0), enc_init_gain=0.0)
    with pytest.raises(ConfigurationError):
        init_model(tiny_dims(), Rng(0), enc_init_gain=-1.0)


def test_trainable_tensor_groups_per_variant():
    params = tiny_model()
    hier = {name.split(".")[0] for name, _ in params.trainable("hier")}
    assert "sel_gru" in hier and "sel_mlp" in hier
    assert "encdec" not in hier and "attn_mlp" not in hier

    enc_dec = {name.split(".")[0] for name, _ in params.trainable("enc_dec")}
    assert "encdec" in enc_dec
    assert "sel_gru" not in enc_dec and "attn_mlp" not in enc_dec

    attn = {name.split(".")[0] for name, _ in params.trainable("enc_attn_dec")}
    assert "attn_mlp" in attn
    assert "sel_gru" not in attn and "encdec" not in attn

    with pytest.raises(ConfigurationError):
        params.trainable("transformer")
