"""Finite-difference verification of the whole stack, runnable from the CLI.

Builds a tiny instance (2 photos, k=4, vocab of 7) and checks tape
gradients of each layer of the system against central differences: a few
primitives, the recurrent cells, the story likelihood, and the combined
training loss with the ranking term switched on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Story
from .layers import GruParams, MlpParams, gru_step, mlp
from .model import ModelDims, encode_album, init_model, select_summary, story_log_prob
from .tensor import (
    GradCheckReport,
    Rng,
    Tensor,
    grad_check,
    matmul,
    sigmoid,
    sum_all,
    zeros,
)
from .training import TrainConfig, combined_loss, make_negative

TOY_DIMS = dict(k=4, d_s=3, d_g=3, d_w=3, vocab_size=7)


def toy_instance(seed=0):
    """A 2-photo album, a 5-sentence story, its fixed shuffled negative,
    and a freshly initialized model.

    Selector weights are scaled 3x after initialization and photo features
    drawn from ±2: at plain Xavier scale the selection path carries
    gradients down near 1e-8, where central differences at step 1e-5 are
    pure cancellation noise and per-coordinate relative error is
    meaningless. The boost keeps every path's gradients above that floor
    without saturating the gates; the tape itself is scale-independent.
    """
    rng = Rng(seed)
    dims = ModelDims(**TOY_DIMS)
    params = init_model(dims, rng)
    features = rng.uniform(-2.0, 2.0, (2, dims.k))
    for name, tensor in params.named_tensors():
        if name.startswith("sel_"):
            tensor.data *= 3.0
    story = Story(sentences=[[4, 5, 2], [5, 6, 2], [3, 4, 2], [6, 2], [4, 6, 2]])
    negative = make_negative(story, Rng(seed + 1))
    return params, features, story, negative


def check_primitives(seed=0, step=1e-5, tol=1e-5):
    """matmul -> sigmoid -> sum exercises binary, unary, and reduction paths."""
    rng = Rng(seed)
    x = Tensor(rng.uniform(-1.0, 1.0, (3, 4)), requires_grad=True)
    w = Tensor(rng.uniform(-1.0, 1.0, (4, 2)), requires_grad=True)
    fn = lambda x, w: sum_all(sigmoid(matmul(x, w)))
    return grad_check(fn, [x, w], step=step, tol=tol, names=["x", "w"])


def check_recurrent(seed=0, step=1e-5, tol=1e-5):
    rng = Rng(seed)
    cell = GruParams.create(rng, 3, 2)
    head = MlpParams.create(rng, [2, 2, 1])
    xs = [Tensor(rng.uniform(-1.0, 1.0, 3)) for _ in range(3)]

    def fn(*tensors):
        h = zeros(2)
        for x in xs:
            h = gru_step(cell, x, h)
        return sum_all(mlp(head, h))

    tensors = [t for _, t in cell.named()] + [t for _, t in head.named()]
    names = [f"gru.{n}" for n, _ in cell.named()] + [f"mlp.{n}" for n, _ in head.named()]
    return grad_check(fn, tensors, step=step, tol=tol, names=names)


def check_story_likelihood(seed=0, step=1e-5, tol=1e-4):
    params, features, story, _ = toy_instance(seed)

    def fn(*tensors):
        enc = encode_album(params, features)
        sel = select_summary(params, enc, "soft")
        return story_log_prob(params, enc, sel, story)

    named = params.named_tensors()
    return grad_check(fn, [t for _, t in named], step=step, tol=tol, names=[n for n, _ in named])


def check_training_loss(seed=0, step=1e-5, tol=1e-4):
    """The acceptance check: combined loss with rank_weight 1 on the toy
    instance, every model tensor against central differences."""
    params, features, story, negative = toy_instance(seed)
    cfg = TrainConfig(
        k=TOY_DIMS["k"], d_s=TOY_DIMS["d_s"], d_g=TOY_DIMS["d_g"], d_w=TOY_DIMS["d_w"],
        rank_weight=1.0, margin=1.0,
    )

    def fn(*tensors):
        total, _, _ = combined_loss(params, features, story, negative, cfg)
        return total

    named = params.named_tensors()
    return grad_check(fn, [t for _, t in named], step=step, tol=tol, names=[n for n, _ in named])


@dataclass
class ModuleCheck:
    name: str
    report: GradCheckReport


def run_all(seed=0):
    return [
        ModuleCheck("primitives", check_primitives(seed)),
        ModuleCheck("recurrent", check_recurrent(seed)),
        ModuleCheck("story-likelihood", check_story_likelihood(seed)),
        ModuleCheck("training-loss", check_training_loss(seed)),
    ]
