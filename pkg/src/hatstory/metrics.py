"""Evaluation: summarization precision/recall, n-gram generation metrics
(corpus BLEU and CIDEr, both from first principles), and album retrieval
by generation likelihood."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .model import encode_album, select_summary, story_log_prob
from .training import variant_log_prob


# ---------------------------------------------------------------------------
# summarization


def summary_precision_recall(predicted, gt_sets):
    """Set overlap of 5 predicted photo ids against the union of the
    ground-truth summaries: precision = |hit| / 5, recall = |hit| / |union|."""
    predicted = list(predicted)
    if len(predicted) != 5 or len(set(predicted)) != 5:
        raise ContractError(f"summary_precision_recall: need 5 distinct ids, got {predicted}")
    union = set()
    for s in gt_sets:
        union.update(s)
    if not union:
        raise ContractError("summary_precision_recall: ground-truth union is empty")
    hits = len(set(predicted) & union)
    return hits / 5.0, hits / len(union)


def attention_aggregate_topk(attention, k=5):
    """Photo indices with the largest column sums of a (T, n) attention
    matrix; ties go to the lower index."""
    attention = np.asarray(attention, dtype=np.float64)
    if attention.ndim != 2 or attention.shape[0] < 1:
        raise ContractError(f"attention_aggregate_topk: need (T, n), got {attention.shape}")
    n = attention.shape[1]
    if n < k:
        raise ContractError(f"attention_aggregate_topk: only {n} photos for top-{k}")
    sums = attention.sum(axis=0)
    return sorted(range(n), key=lambda i: (-sums[i], i))[:k]


# ---------------------------------------------------------------------------
# corpus BLEU


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(hypotheses, references, n=3):
    """Corpus-level BLEU with clipped n-gram precision.

    `references[i]` is the list of reference token sequences for item i.
    Geometric mean of p_1..p_n over orders that have any hypothesis n-grams;
    0.0 outright if some counted order has zero matches. Brevity penalty
    exp(1 - r/c) when the hypothesis corpus is not longer than the closest
    reference lengths r (ties toward the shorter reference)."""
    if not hypotheses or len(hypotheses) != len(references):
        raise ContractError("bleu_n: need equally many hypotheses and reference lists")
    if n < 1:
        raise ContractError("bleu_n: n must be >= 1")
    matches = [0] * n
    totals = [0] * n
    hyp_len = 0
    ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        if not refs:
            raise ContractError("bleu_n: every item needs at least one reference")
        hyp = list(hyp)
        hyp_len += len(hyp)
        ref_len += min((len(r) for r in refs), key=lambda L: (abs(L - len(hyp)), L))
        for order in range(1, n + 1):
            hc = _ngrams(hyp, order)
            if not hc:
                continue
            best = Counter()
            for r in refs:
                rc = _ngrams(list(r), order)
                for gram, c in rc.items():
                    if c > best[gram]:
                        best[gram] = c
            totals[order - 1] += sum(hc.values())
            matches[order - 1] += sum(min(c, best[gram]) for gram, c in hc.items())
    precisions = []
    for m, t in zip(matches, totals):
        if t == 0:
            continue  # no hypothesis n-grams of this order anywhere in the corpus
        if m == 0:
            return 0.0
        precisions.append(m / t)
    if not precisions or hyp_len == 0:
        return 0.0
    geo = math.exp(sum(math.log(p) for p in precisions) / len(precisions))
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * geo


# ---------------------------------------------------------------------------
# CIDEr


def _tfidf_vector(tokens, order, doc_freq, num_items):
    counts = _ngrams(tokens, order)
    return {
        gram: c * (math.log(num_items) - math.log(max(doc_freq.get(gram, 0), 1)))
        for gram, c in counts.items()
    }


def _cosine(a, b):
    na = math.sqrt(sum(x * x for x in a.values()))
    nb = math.sqrt(sum(x * x for x in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    dot = sum(v * b[g] for g, v in a.items() if g in b)
    return dot / (na * nb)


def cider(hypotheses, references, max_order=4):
    """Mean over items of 10 x average over n = 1..4 of the TF-IDF cosine
    between hypothesis and each reference (averaged over references).

    IDF counts, per n-gram, the number of items whose reference set
    contains it: idf = log(N / max(df, 1)). No length penalty."""
    if not hypotheses or len(hypotheses) != len(references):
        raise ContractError("cider: need equally many hypotheses and reference lists")
    num_items = len(hypotheses)
    doc_freq = [Counter() for _ in range(max_order)]
    for refs in references:
        if not refs:
            raise ContractError("cider: every item needs at least one reference")
        for order in range(1, max_order + 1):
            seen = set()
            for r in refs:
                seen.update(_ngrams(list(r), order))
            for gram in seen:
                doc_freq[order - 1][gram] += 1
    item_scores = []
    for hyp, refs in zip(hypotheses, references):
        per_order = []
        for order in range(1, max_order + 1):
            hv = _tfidf_vector(list(hyp), order, doc_freq[order - 1], num_items)
            sims = [
                _cosine(hv, _tfidf_vector(list(r), order, doc_freq[order - 1], num_items))
                for r in refs
            ]
            per_order.append(sum(sims) / len(sims))
        item_scores.append(10.0 * sum(per_order) / max_order)
    return sum(item_scores) / num_items


# ---------------------------------------------------------------------------
# retrieval


def retrieval_scores(params, story, album_features_list, variant="hier", per_word=False):
    """Story log-likelihood against each candidate album (soft selection)."""
    if not album_features_list:
        raise ContractError("retrieval_scores: empty album pool")
    scores = []
    for features in album_features_list:
        lp = float(variant_log_prob(params, features, story, variant).data)
        if per_word:
            lp /= sum(len(s) for s in story.sentences)
        scores.append(lp)
    return scores


def rank_of(scores, true_index):
    """1-based rank of the true album under descending score; a tie counts
    the lower album index first."""
    if not 0 <= true_index < len(scores):
        raise ContractError(f"rank_of: true index {true_index} outside pool")
    s = scores[true_index]
    ahead = sum(1 for x in scores if x > s)
    tied_before = sum(1 for i, x in enumerate(scores[:true_index]) if x == s)
    return 1 + ahead + tied_before


def retrieve(params, story, album_features_list, true_index, variant="hier", per_word=False):
    scores = retrieval_scores(params, story, album_features_list, variant, per_word)
    return rank_of(scores, true_index), scores


def recall_at_k(ranks, k):
    if not ranks:
        raise ContractError("recall_at_k: no ranks")
    return sum(1 for r in ranks if r <= k) / len(ranks)


def median_rank(ranks):
    if not ranks:
        raise ContractError("median_rank: no ranks")
    ordered = sorted(ranks)
    mid = len(ordered) // 2
    if len(ordered) % 2 == 1:
        return float(ordered[mid])
    return (ordered[mid - 1] + ordered[mid]) / 2.0


# ---------------------------------------------------------------------------
# report container


@dataclass
class MetricReport:
    task: str
    aggregate: dict
    per_item: list = field(default_factory=list)
    fingerprint: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(
            {
                "task": self.task,
                "aggregate": self.aggregate,
                "per_item": self.per_item,
                "fingerprint": self.fingerprint,
            },
            sort_keys=True,
            indent=2,
        )

    def to_csv(self):
        """Flat per-item table; aggregate values appear as a final row."""
        keys = sorted({k for item in self.per_item for k in item})
        lines = [",".join(["row"] + keys)]
        for i, item in enumerate(self.per_item):
            lines.append(",".join([str(i)] + [repr(item.get(k, "")) for k in keys]))
        agg = ";".join(f"{k}={v!r}" for k, v in sorted(self.aggregate.items()))
        lines.append(f"aggregate,{agg}" + "," * max(0, len(keys) - 1))
        return "\n".join(lines) + "\n"


def hard_selection_ids(params, album):
    """Predicted summary photo ids under hard selection."""
    enc = encode_album(params, album.features)
    sel = select_summary(params, enc, "hard")
    return [album.photo_ids[i] for i in sel.indices]


def soft_story_log_prob(params, features, story):
    enc = encode_album(params, features)
    sel = select_summary(params, enc, "soft")
    return float(story_log_prob(params, enc, sel, story).data)
