"""Losses, negative-story construction, Adam, and the training loop.

The objective is generation negative-log-likelihood plus a weighted
sentence-order ranking hinge:

    loss = -log p(S) + rank_weight * max(0, margin + log p(S') - log p(S))

where S' is the same story with its sentences shuffled. Setting
rank_weight to 0 skips negative construction entirely and the loss is
bitwise identical to the plain generation loss.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import SENTENCES_PER_STORY, Story, validate_story
from .errors import ConfigurationError, ContractError, NumericDomainError
from .model import (
    enc_attn_dec_log_prob,
    enc_dec_log_prob,
    encode_album,
    select_summary,
    story_log_prob,
)
from .tensor import Rng, Tape, backward, neg, relu

VARIANTS = ("hier", "enc_dec", "enc_attn_dec")


@dataclass
class TrainConfig:
    # model dimensions (k must match the dataset's feature width)
    k: int = 16
    d_s: int = 32
    d_g: int = 32
    d_w: int = 16
    # objective
    rank_weight: float = 1.0
    margin: float = 1.0
    printed_hinge: bool = False  # compatibility sign max(0, m - log p(S') + log p(S))
    # optimizer
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    grad_clip: float = 0.0  # global-norm clip; 0 disables
    # loop
    epochs: int = 100
    batch_size: int = 5
    seed: int = 0
    # decoding defaults used by the harness
    beam_size: int = 3
    max_sentence_len: int = 12
    # which model the loss drives
    variant: str = "hier"
    carry_state: bool = True
    # encoder-GRU init scale; < 1 starts photo representations near relu(f_i)
    enc_init_gain: float = 1.0
    min_count: int = 1

    def __post_init__(self):
        if self.rank_weight < 0:
            raise ConfigurationError("TrainConfig: rank_weight must be >= 0")
        if self.margin <= 0:
            raise ConfigurationError("TrainConfig: margin must be > 0")
        if self.learning_rate <= 0:
            raise ConfigurationError("TrainConfig: learning_rate must be > 0")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigurationError("TrainConfig: betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ConfigurationError("TrainConfig: epsilon must be > 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("TrainConfig: bad epochs/batch_size")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"TrainConfig: unknown variant {self.variant!r}")
        if self.grad_clip < 0:
            raise ConfigurationError("TrainConfig: grad_clip must be >= 0")
        if self.beam_size < 1 or self.max_sentence_len < 1:
            raise ConfigurationError("TrainConfig: bad decoding defaults")
        if self.enc_init_gain <= 0:
            raise ConfigurationError("TrainConfig: enc_init_gain must be > 0")

    def to_dict(self):
        return asdict(self)


def variant_log_prob(params, features, story, variant="hier"):
    """Teacher-forced story log-probability under one model variant.

    The full model scores under soft selection (the latent path used in
    training and retrieval)."""
    if variant == "hier":
        enc = encode_album(params, features)
        sel = select_summary(params, enc, "soft")
        return story_log_prob(params, enc, sel, story)
    if variant == "enc_dec":
        return enc_dec_log_prob(params, features, story)
    if variant == "enc_attn_dec":
        return enc_attn_dec_log_prob(params, features, story)[0]
    raise ConfigurationError(f"unknown variant {variant!r}")


def generation_loss(params, features, story, variant="hier"):
    """Negative story log-likelihood."""
    return neg(variant_log_prob(params, features, story, variant))


def ranking_loss(log_p_pos, log_p_neg, margin, printed_hinge=False):
    """Hinge on the story/shuffled-story likelihood gap.

    The working form max(0, margin + log p(S') - log p(S)) goes to zero
    once the true order beats the shuffle by the margin. `printed_hinge`
    switches to the sign-flipped variant kept for A/B comparison."""
    if margin <= 0:
        raise ContractError("ranking_loss: margin must be positive")
    if printed_hinge:
        return relu(margin - log_p_neg + log_p_pos)
    return relu(margin + log_p_neg - log_p_pos)


def make_negative(story, rng):
    """Same story, sentences in a uniformly drawn non-identity order.

    Rejection-sampled; after 100 identity draws in a row it falls back to
    deterministically swapping the first two sentences."""
    count = len(story.sentences)
    if count != SENTENCES_PER_STORY:
        raise ContractError(
            f"make_negative: story must have {SENTENCES_PER_STORY} sentences, got {count}"
        )
    identity = list(range(count))
    order = identity
    for _ in range(100):
        order = rng.permutation(count)
        if order != identity:
            break
    if order == identity:
        order = [1, 0] + identity[2:]
    return Story(
        sentences=[list(story.sentences[i]) for i in order],
        texts=[story.texts[i] for i in order] if story.texts is not None else None,
    )


def combined_loss(params, features, story, negative, cfg):
    """(total, generation part, ranking part). `negative` may be None when
    rank_weight is 0, in which case the op sequence is exactly the
    generation loss."""
    log_p_pos = variant_log_prob(params, features, story, cfg.variant)
    gen = neg(log_p_pos)
    if cfg.rank_weight == 0.0:
        return gen, gen, None
    if negative is None:
        raise ContractError("combined_loss: rank_weight > 0 needs a negative story")
    log_p_neg = variant_log_prob(params, features, negative, cfg.variant)
    rank = ranking_loss(log_p_pos, log_p_neg, cfg.margin, cfg.printed_hinge)
    return gen + cfg.rank_weight * rank, gen, rank


def total_loss(params, features, story, cfg, rng):
    """Draw a fresh negative (when needed) and return the scalar loss."""
    negative = make_negative(story, rng) if cfg.rank_weight > 0 else None
    total, _, _ = combined_loss(params, features, story, negative, cfg)
    return total


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(named_params, state, cfg):
    """One bias-corrected Adam update over (name, tensor) pairs.

    Every tensor must carry a gradient; the caller clears gradients after
    the step (they accumulate across a batch before it)."""
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    for name, p in named_params:
        if p.grad is None:
            raise ContractError(f"adam_step: missing gradient for {name}")
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = v
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.data -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


def clip_gradients(named_params, max_norm):
    """Scale all gradients so their global L2 norm is at most max_norm."""
    if max_norm <= 0:
        raise ContractError("clip_gradients: max_norm must be positive")
    total = 0.0
    for _, p in named_params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for _, p in named_params:
            if p.grad is not None:
                p.grad *= scale
    return norm


# ---------------------------------------------------------------------------
# training loop


def train(params, albums, cfg, loss_curve_path=None, log=None, early_stop=None):
    """Train in place; returns the per-epoch loss curve.

    Album/story pairs are shuffled each epoch with the config seed, each
    example runs on its own tape, gradients accumulate over a batch in
    example order (then average), and one Adam step fires per batch. The
    whole run is bitwise reproducible for a fixed config. `early_stop`,
    if given, receives each finished epoch's curve row and halts training
    by returning True."""
    examples = []
    for album in albums:
        for story in album.stories:
            validate_story(story, album.album_id)
            examples.append((album, story))
    if not examples:
        raise ContractError("train: dataset has no stories")
    trainable = params.trainable(cfg.variant)
    state = AdamState()
    rng = Rng(cfg.seed)
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(examples))
        sums = {"total": 0.0, "gen": 0.0, "rank": 0.0}
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            for ex in batch:
                album, story = examples[ex]
                negative = make_negative(story, rng) if cfg.rank_weight > 0 else None
                with Tape() as tape:
                    total, gen, rank = combined_loss(
                        params, album.features, story, negative, cfg
                    )
                    backward(tape, total)
                value = float(total.data)
                if not math.isfinite(value):
                    raise NumericDomainError(
                        f"train: non-finite loss on album {album.album_id}"
                    )
                sums["total"] += value
                sums["gen"] += float(gen.data)
                sums["rank"] += float(rank.data) if rank is not None else 0.0
            inv = 1.0 / len(batch)
            for _, p in trainable:
                if p.grad is not None:
                    p.grad *= inv
            if cfg.grad_clip > 0:
                clip_gradients(trainable, cfg.grad_clip)
            adam_step(trainable, state, cfg)
            for _, p in trainable:
                p.grad = None
        count = len(examples)
        curve.append(
            {
                "epoch": epoch,
                "mean_loss": sums["total"] / count,
                "mean_gen_loss": sums["gen"] / count,
                "mean_rank_loss": sums["rank"] / count,
            }
        )
        if log is not None and (epoch % 25 == 0 or epoch == cfg.epochs - 1):
            log(
                f"epoch {epoch}: loss={curve[-1]['mean_loss']:.4f} "
                f"gen={curve[-1]['mean_gen_loss']:.4f} rank={curve[-1]['mean_rank_loss']:.4f}"
            )
        if early_stop is not None and early_stop(curve[-1]):
            break
    if loss_curve_path is not None:
        write_loss_curve(curve, loss_curve_path)
    return curve


def write_loss_curve(curve, path):
    lines = ["epoch,mean_loss,mean_gen_loss,mean_rank_loss"]
    for rowd in curve:
        lines.append(
            f"{rowd['epoch']},{rowd['mean_loss']!r},{rowd['mean_gen_loss']!r},"
            f"{rowd['mean_rank_loss']!r}"
        )
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
