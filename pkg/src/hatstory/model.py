"""The album storyteller with latent photo selection, plus two flat baselines.

Pipeline: a bidirectional GRU turns an album's photo features into
contextualized representations v_i = relu(bi_gru_i + f_i); a pointer-style
selector GRU walks 5 steps, scoring every photo with a sigmoid MLP and
renormalizing to a distribution p_t; the story decoder GRU consumes the
attended photo summary g_t = p_t V together with the previous word and
emits one sentence per step, its hidden state carried across sentences.

Selection modes:
  soft   - no masking; used for training and for likelihood scoring.
  hard   - photos already taken are forced to weight 0 and the rows are
           renormalized over the rest; used at generation/evaluation time.
  oracle - probability rows are one-hot at caller-provided indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import BOS_ID, EOS_ID, Story
from .errors import ConfigurationError, ContractError, DimensionError
from .layers import (
    EmbeddingTable,
    GruParams,
    MlpParams,
    bi_gru,
    embed,
    gru_step,
    mlp,
)
from .tensor import (
    Tensor,
    concat,
    log_softmax,
    matmul,
    mul,
    narrow,
    pick,
    relu,
    reshape,
    row,
    seeded_init,
    sigmoid,
    softmax,
    stack_rows,
    sum_all,
    tile_rows,
    vecmat,
    zeros,
)

SELECTION_MODES = ("soft", "hard", "oracle")


@dataclass
class ModelDims:
    k: int  # photo feature width; the album encoder preserves it
    d_s: int  # selector GRU state width
    d_g: int  # story decoder state width
    d_w: int  # word embedding width
    vocab_size: int
    t_steps: int = 5  # summary photos per album == sentences per story

    def __post_init__(self):
        for name in ("k", "d_s", "d_g", "d_w", "vocab_size", "t_steps"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"ModelDims: {name} must be positive")
        if self.k % 2 != 0:
            raise ConfigurationError(
                f"ModelDims: k must be even to split across the two GRU directions, got {self.k}"
            )
        if self.vocab_size <= EOS_ID:
            raise ConfigurationError("ModelDims: vocab too small to contain EOS")


@dataclass
class ModelParams:
    """Every trainable tensor of the full model plus the baseline heads."""

    dims: ModelDims
    enc_fwd: GruParams
    enc_bwd: GruParams
    sel_gru: GruParams
    sel_mlp: MlpParams
    gen_gru: GruParams
    embedding: EmbeddingTable
    proj_w: Tensor  # (d_g, vocab)
    proj_b: Tensor  # (vocab,)
    encdec_w: Tensor  # (k, k): flat baseline's projection of the final encoder state
    encdec_b: Tensor  # (k,)
    attn_mlp: MlpParams  # attention baseline scorer over [decoder state, v_i]
    carry_state: bool = True  # keep decoder state across sentence boundaries

    def named_tensors(self):
        out = []
        for prefix, grp in (
            ("enc_fwd", self.enc_fwd),
            ("enc_bwd", self.enc_bwd),
            ("sel_gru", self.sel_gru),
            ("gen_gru", self.gen_gru),
        ):
            out.extend((f"{prefix}.{n}", t) for n, t in grp.named())
        out.extend((f"sel_mlp.{n}", t) for n, t in self.sel_mlp.named())
        out.append(("embedding.table", self.embedding.table))
        out.append(("proj.w", self.proj_w))
        out.append(("proj.b", self.proj_b))
        out.append(("encdec.w", self.encdec_w))
        out.append(("encdec.b", self.encdec_b))
        out.extend((f"attn_mlp.{n}", t) for n, t in self.attn_mlp.named())
        return out

    def trainable(self, variant):
        """Named tensors that participate in one model variant's loss."""
        names = {
            "hier": ("enc_fwd", "enc_bwd", "sel_gru", "sel_mlp", "gen_gru",
                     "embedding", "proj"),
            "enc_dec": ("enc_fwd", "enc_bwd", "gen_gru", "embedding", "proj", "encdec"),
            "enc_attn_dec": ("enc_fwd", "enc_bwd", "attn_mlp", "gen_gru",
                             "embedding", "proj"),
        }.get(variant)
        if names is None:
            raise ConfigurationError(f"unknown model variant {variant!r}")
        return [(n, t) for n, t in self.named_tensors() if n.split(".")[0] in names]


def init_model(dims, rng, carry_state=True, enc_init_gain=1.0):
    """Build a model with xavier weights and zero biases; the draw order is
    fixed so one seed always produces the same model.

    `enc_init_gain` scales the album-encoder GRU weights after the xavier
    draw. Values below 1 start the encoder near-transparent (photo
    representations close to relu(f_i)), which makes the raw photo signal
    dominate early selection learning; 1.0 leaves the draw untouched. The
    rng consumption is identical for every gain, so models with different
    gains share all other initial weights.
    """
    if enc_init_gain <= 0:
        raise ConfigurationError("init_model: enc_init_gain must be positive")
    half = dims.k // 2
    enc_fwd = GruParams.create(rng, dims.k, half)
    enc_bwd = GruParams.create(rng, dims.k, half)
    if enc_init_gain != 1.0:
        for cell in (enc_fwd, enc_bwd):
            for _, tensor in cell.named():
                tensor.data *= enc_init_gain
    return ModelParams(
        dims=dims,
        enc_fwd=enc_fwd,
        enc_bwd=enc_bwd,
        sel_gru=GruParams.create(rng, dims.k, dims.d_s),
        sel_mlp=MlpParams.create(rng, [dims.d_s + dims.k, dims.d_s + dims.k, 1]),
        gen_gru=GruParams.create(rng, dims.d_w + dims.k, dims.d_g),
        embedding=EmbeddingTable.create(rng, dims.vocab_size, dims.d_w),
        proj_w=seeded_init(rng, (dims.d_g, dims.vocab_size), "xavier"),
        proj_b=zeros(dims.vocab_size, requires_grad=True),
        encdec_w=seeded_init(rng, (dims.k, dims.k), "xavier"),
        encdec_b=zeros(dims.k, requires_grad=True),
        attn_mlp=MlpParams.create(rng, [dims.d_g + dims.k, dims.d_g + dims.k, 1]),
        carry_state=carry_state,
    )


# ---------------------------------------------------------------------------
# album encoding


@dataclass
class AlbumEncoding:
    v: Tensor  # (n, k) photo representations
    n: int
    final_state: Tensor  # (k,) both directions' terminal states, concatenated


def encode_album(params, features):
    """v_i = relu(bi_gru(features)_i + f_i); features is an (n, k) array."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise DimensionError(f"encode_album: features must be (n, k), got {features.shape}")
    n, width = features.shape
    if n < 1:
        raise ContractError("encode_album: album has no photos")
    if width != params.dims.k:
        raise DimensionError(
            f"encode_album: feature width {width} != model k={params.dims.k}"
        )
    xs = [Tensor(features[i]) for i in range(n)]
    outs = bi_gru(params.enc_fwd, params.enc_bwd, xs)
    vs = [relu(outs[i] + xs[i]) for i in range(n)]
    half = params.dims.k // 2
    final = concat([narrow(outs[-1], 0, half), narrow(outs[0], half, half)])
    return AlbumEncoding(v=stack_rows(vs), n=n, final_state=final)


# ---------------------------------------------------------------------------
# summary-photo selection


@dataclass
class SelectionResult:
    probs: Tensor  # (T, n); each row sums to 1
    indices: list  # T photo indices, argmax per row among photos still available
    g: Tensor  # (T, k); row t equals probs[t] @ V


def select_step(params, v_matrix, prev_g, state, excluded=None):
    """One selector step.

    state' = gru(prev_g, state); raw_i = sigmoid(mlp([state', v_i])); the
    raw scores (zeroed where `excluded`) renormalize to a distribution.
    Returns (p, state'). `excluded` is a boolean mask, True = unavailable.
    """
    n = v_matrix.shape[0]
    if excluded is not None and bool(np.all(excluded)):
        raise ContractError("select_step: every photo is masked")
    state = gru_step(params.sel_gru, prev_g, state)
    feats = concat([tile_rows(state, n), v_matrix], axis=1)
    raw = sigmoid(reshape(mlp(params.sel_mlp, feats), (n,)))
    if excluded is not None and bool(np.any(excluded)):
        raw = mul(raw, Tensor((~np.asarray(excluded)).astype(np.float64)))
    p = raw / sum_all(raw)
    return p, state


def select_summary(params, enc, mode, oracle_indices=None):
    """Run T selection steps in one of the three modes.

    The first step attends from the mean photo representation; afterwards
    the attended summary g_t feeds the next step. Indices are chosen
    greedily distinct (argmax among photos not yet taken, ties to the lower
    index); in hard mode the mask also zeroes taken photos' probability.
    """
    if mode not in SELECTION_MODES:
        raise ContractError(f"select_summary: unknown mode {mode!r}")
    t_steps = params.dims.t_steps
    n = enc.n
    if mode == "oracle":
        idx = list(oracle_indices or [])
        if len(idx) != t_steps or len(set(idx)) != t_steps:
            raise ContractError(
                f"select_summary: oracle needs {t_steps} distinct indices, got {idx}"
            )
        if any(not 0 <= i < n for i in idx):
            raise ContractError(f"select_summary: oracle index out of range for n={n}")
        one_hot = np.zeros((t_steps, n))
        one_hot[np.arange(t_steps), idx] = 1.0
        probs = Tensor(one_hot)
        return SelectionResult(probs=probs, indices=idx, g=matmul(probs, enc.v))
    if mode == "hard" and n < t_steps:
        raise ContractError(
            f"select_summary: hard mode needs at least {t_steps} photos, album has {n}"
        )
    state = zeros(params.dims.d_s)
    prev_g = vecmat(Tensor(np.full(n, 1.0 / n)), enc.v)
    chosen = []
    rows_p = []
    for _ in range(t_steps):
        excluded = None
        if mode == "hard" and chosen:
            excluded = np.zeros(n, dtype=bool)
            excluded[chosen] = True
        p, state = select_step(params, enc.v, prev_g, state, excluded)
        vals = p.data
        remaining = [i for i in range(n) if i not in chosen] or list(range(n))
        idx = min(remaining, key=lambda i: (-vals[i], i))
        chosen.append(idx)
        rows_p.append(p)
        prev_g = vecmat(p, enc.v)
    probs = stack_rows(rows_p)
    return SelectionResult(probs=probs, indices=chosen, g=matmul(probs, enc.v))


# ---------------------------------------------------------------------------
# word-level decoding


def decode_word_step(params, prev_word_id, g, h):
    """One decoder step: GRU over [embed(prev word), g], affine to logits."""
    x = concat([embed(params.embedding, prev_word_id), g])
    h2 = gru_step(params.gen_gru, x, h)
    logits = vecmat(h2, params.proj_w) + params.proj_b
    return logits, h2


def _teacher_force_sentence(params, g, sentence, h, total):
    prev = BOS_ID
    for tok in sentence:
        logits, h = decode_word_step(params, prev, g, h)
        lp = pick(log_softmax(logits), tok)
        total = lp if total is None else total + lp
        prev = tok
    return total, h


def _story_log_prob_from_inputs(params, sentence_inputs, story):
    if len(story.sentences) != len(sentence_inputs):
        raise ContractError(
            f"story has {len(story.sentences)} sentences but {len(sentence_inputs)} "
            "summary steps were provided"
        )
    total = None
    h = zeros(params.dims.d_g)
    for g, sentence in zip(sentence_inputs, story.sentences):
        if not params.carry_state:
            h = zeros(params.dims.d_g)
        total, h = _teacher_force_sentence(params, g, sentence, h, total)
    return Tensor(0.0) if total is None else total


def story_log_prob(params, enc, sel, story):
    """Teacher-forced log p(story | album, selection). Each sentence starts
    implicitly at BOS and must end at EOS; the decoder state runs across
    sentence boundaries unless carry_state is off."""
    t_steps = sel.g.shape[0]
    gs = [row(sel.g, t) for t in range(t_steps)]
    return _story_log_prob_from_inputs(params, gs, story)


# ---------------------------------------------------------------------------
# beam search


@dataclass
class Hypothesis:
    tokens: tuple
    logp: float
    state: Tensor
    serial: int  # creation order; the tie-breaker after log-probability


def _beam_search(params, g, beam, max_len, h0=None):
    """Length-capped beam search over decode_word_step.

    Every step expands each active hypothesis over the whole vocabulary,
    prunes the union to the best `beam` by (log-prob, creation order), and
    moves pruned survivors ending in EOS to the completed pool (also capped
    at `beam`). At the length cap, still-active hypotheses count as
    completed. Winner: highest total log-prob, ties to the earliest
    creation (which encodes "earlier step, then lower token id"). No
    length normalization.
    """
    if beam < 1:
        raise ContractError("beam search: beam must be >= 1")
    if max_len < 1:
        raise ContractError("beam search: max_len must be >= 1")
    vocab = params.dims.vocab_size
    active = [Hypothesis((), 0.0, h0 if h0 is not None else zeros(params.dims.d_g), 0)]
    completed = []
    serial = 1
    for _ in range(max_len):
        candidates = []
        for hyp in active:
            prev = hyp.tokens[-1] if hyp.tokens else BOS_ID
            logits, h2 = decode_word_step(params, prev, g, hyp.state)
            lps = log_softmax(logits).data
            for tok in range(vocab):
                candidates.append(
                    Hypothesis(hyp.tokens + (tok,), hyp.logp + float(lps[tok]), h2, serial)
                )
                serial += 1
        candidates.sort(key=lambda c: (-c.logp, c.serial))
        active = []
        for c in candidates[:beam]:
            if c.tokens[-1] == EOS_ID:
                completed.append(c)
            else:
                active.append(c)
        completed.sort(key=lambda c: (-c.logp, c.serial))
        completed = completed[:beam]
        if not active:
            break
    pool = completed + active  # leftover actives were stopped by the cap
    return min(pool, key=lambda c: (-c.logp, c.serial))


def beam_decode(params, g, beam, max_len, h0=None):
    """Best token sequence for one sentence, given its photo summary g."""
    return list(_beam_search(params, g, beam, max_len, h0).tokens)


def generate_story(params, features, beam, max_len, oracle_indices=None):
    """Encode, select (hard mode, or oracle when indices are given), then
    beam-decode one sentence per summary step, carrying decoder state."""
    enc = encode_album(params, features)
    mode = "oracle" if oracle_indices is not None else "hard"
    sel = select_summary(params, enc, mode, oracle_indices)
    h = zeros(params.dims.d_g)
    sentences = []
    for t in range(params.dims.t_steps):
        if not params.carry_state:
            h = zeros(params.dims.d_g)
        winner = _beam_search(params, row(sel.g, t), beam, max_len, h)
        sentences.append(list(winner.tokens))
        h = winner.state
    return Story(sentences=sentences)


# ---------------------------------------------------------------------------
# baselines: plain encoder-decoder and attention encoder-decoder


def enc_dec_visual(params, enc):
    """The flat baseline's constant per-sentence visual input."""
    return vecmat(enc.final_state, params.encdec_w) + params.encdec_b


def enc_dec_log_prob(params, features, story):
    enc = encode_album(params, features)
    vis = enc_dec_visual(params, enc)
    return _story_log_prob_from_inputs(params, [vis] * params.dims.t_steps, story)


def enc_dec_generate(params, features, beam, max_len):
    enc = encode_album(params, features)
    vis = enc_dec_visual(params, enc)
    h = zeros(params.dims.d_g)
    sentences = []
    for _ in range(params.dims.t_steps):
        if not params.carry_state:
            h = zeros(params.dims.d_g)
        winner = _beam_search(params, vis, beam, max_len, h)
        sentences.append(list(winner.tokens))
        h = winner.state
    return Story(sentences=sentences)


def _attend(params, v_matrix, state):
    """Softmax attention over photos from [decoder state, v_i]."""
    n = v_matrix.shape[0]
    feats = concat([tile_rows(state, n), v_matrix], axis=1)
    scores = reshape(mlp(params.attn_mlp, feats), (n,))
    alpha = softmax(scores, axis=0)
    return alpha, vecmat(alpha, v_matrix)


def enc_attn_dec_log_prob(params, features, story):
    """Teacher-forced log-prob under the attention baseline.

    Attention is computed once per sentence from the decoder state at the
    sentence start. Returns (log_prob, attention) with attention (T, n).
    """
    enc = encode_album(params, features)
    if len(story.sentences) != params.dims.t_steps:
        raise ContractError(
            f"story has {len(story.sentences)} sentences, model expects {params.dims.t_steps}"
        )
    total = None
    h = zeros(params.dims.d_g)
    weights = []
    for sentence in story.sentences:
        if not params.carry_state:
            h = zeros(params.dims.d_g)
        alpha, vis = _attend(params, enc.v, h)
        weights.append(alpha.data.copy())
        total, h = _teacher_force_sentence(params, vis, sentence, h, total)
    return (Tensor(0.0) if total is None else total), np.stack(weights)


def enc_attn_dec_generate(params, features, beam, max_len):
    """Generate under the attention baseline; returns (story, attention)."""
    enc = encode_album(params, features)
    h = zeros(params.dims.d_g)
    sentences = []
    weights = []
    for _ in range(params.dims.t_steps):
        if not params.carry_state:
            h = zeros(params.dims.d_g)
        alpha, vis = _attend(params, enc.v, h)
        weights.append(alpha.data.copy())
        winner = _beam_search(params, vis, beam, max_len, h)
        sentences.append(list(winner.tokens))
        h = winner.state
    return Story(sentences=sentences), np.stack(weights)
