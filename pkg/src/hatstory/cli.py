"""Command-line harness: dataset synthesis, training, generation, the three
evaluation tasks, and the finite-difference self-check.

Every run prints (and, where it writes a run directory, records) its fully
resolved configuration and seed; reruns with the same inputs reproduce
output files byte for byte. No command mutates its inputs.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from .checkpoint import file_sha256, load_checkpoint, save_checkpoint
from .data import SynthSpec, load_dataset, save_dataset, synth_generate
from .diagnostics import run_all
from .errors import ConfigurationError, HatstoryError
from .metrics import (
    MetricReport,
    attention_aggregate_topk,
    bleu_n,
    cider,
    hard_selection_ids,
    median_rank,
    rank_of,
    recall_at_k,
    retrieval_scores,
    summary_precision_recall,
)
from .model import (
    ModelDims,
    enc_attn_dec_generate,
    enc_dec_generate,
    generate_story,
    init_model,
)
from .tensor import Rng
from .training import TrainConfig, train


def load_config(path):
    """Read a TrainConfig from JSON whose keys mirror the field names."""
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, dict):
        raise ConfigurationError("config: top level must be a JSON object")
    known = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigurationError(f"config: unknown keys {unknown}")
    return TrainConfig(**raw)


def _fingerprint(cfg_dict, ckpt_path=None):
    fp = {"seed": cfg_dict.get("seed"), "dims": {x: cfg_dict.get(x) for x in ("k", "d_s", "d_g", "d_w")}}
    if ckpt_path is not None:
        fp["checkpoint_sha256"] = file_sha256(str(ckpt_path))
    return fp


def _write_report(report, out_dir, stem):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jpath = out_dir / f"{stem}.json"
    cpath = out_dir / f"{stem}.csv"
    jpath.write_text(report.to_json() + "\n", encoding="utf-8")
    cpath.write_text(report.to_csv(), encoding="utf-8")
    print(f"wrote {jpath} and {cpath}")


def _load_for_eval(args):
    ck = load_checkpoint(args.ckpt)
    if ck.vocab is None:
        raise ConfigurationError("checkpoint carries no vocabulary; cannot evaluate text")
    albums, _ = load_dataset(args.data, vocab=ck.vocab)
    return ck, albums


def _generate_for_album(ck, album, beam, max_len, oracle):
    variant = (ck.config or {}).get("variant", "hier")
    if oracle:
        if variant != "hier":
            raise ConfigurationError("oracle selection only applies to the full model")
        if not album.gt_summaries:
            raise ConfigurationError(f"album {album.album_id} has no ground-truth summary")
        indices = [album.photo_ids.index(pid) for pid in album.gt_summaries[0]]
        return generate_story(ck.params, album.features, beam, max_len, indices)
    if variant == "enc_dec":
        return enc_dec_generate(ck.params, album.features, beam, max_len)
    if variant == "enc_attn_dec":
        return enc_attn_dec_generate(ck.params, album.features, beam, max_len)[0]
    return generate_story(ck.params, album.features, beam, max_len)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    spec = SynthSpec(
        albums=args.albums, n=args.photos, k=args.k, classes=args.classes,
        seed=args.seed, noise_sigma=args.noise_sigma,
    )
    albums, vocab = synth_generate(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(albums, spec.k, out)
    print(f"spec: {spec}")
    print(f"wrote {len(albums)} albums, vocab size {vocab.size}, to {out}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    albums, vocab = load_dataset(args.data, min_count=cfg.min_count)
    widths = {a.features.shape[1] for a in albums}
    if widths != {cfg.k}:
        raise ConfigurationError(
            f"config k={cfg.k} does not match dataset feature width {sorted(widths)}"
        )
    run_name = args.run_name or f"run-{time.strftime('%Y%m%d-%H%M%S')}-seed{cfg.seed}"
    run_dir = Path(args.out) / run_name
    run_dir.mkdir(parents=True, exist_ok=True)
    resolved = cfg.to_dict()
    (run_dir / "resolved_config.json").write_text(
        json.dumps(resolved, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(f"run directory: {run_dir}")
    print(f"resolved config: {json.dumps(resolved, sort_keys=True)}")
    dims = ModelDims(k=cfg.k, d_s=cfg.d_s, d_g=cfg.d_g, d_w=cfg.d_w, vocab_size=vocab.size)
    params = init_model(dims, Rng(cfg.seed), carry_state=cfg.carry_state,
                        enc_init_gain=cfg.enc_init_gain)
    train(params, albums, cfg, loss_curve_path=run_dir / "loss_curve.csv", log=print)
    save_checkpoint(params, vocab, resolved, run_dir / "checkpoint.hat")
    print(f"checkpoint: {run_dir / 'checkpoint.hat'}")
    return 0


def cmd_generate(args):
    ck, albums = _load_for_eval(args)
    cfg = ck.config or {}
    max_len = int(cfg.get("max_sentence_len", 12))
    results = []
    for album in albums:
        story = _generate_for_album(ck, album, args.beam, max_len, args.oracle_selection)
        rec = {
            "album_id": album.album_id,
            "sentences": [ck.vocab.decode(s) for s in story.sentences],
            "token_ids": story.sentences,
        }
        if (cfg.get("variant", "hier")) == "hier" and not args.oracle_selection:
            rec["selected_photo_ids"] = hard_selection_ids(ck.params, album)
        results.append(rec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(results, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"generated stories for {len(results)} albums -> {out}")
    return 0


def cmd_eval_gen(args):
    ck, albums = _load_for_eval(args)
    cfg = ck.config or {}
    max_len = int(cfg.get("max_sentence_len", 12))
    hyps, refs, per_item = [], [], []
    for album in albums:
        if not album.stories:
            continue
        story = _generate_for_album(ck, album, args.beam, max_len, False)
        hyp_tokens = ck.vocab.decode(
            [t for s in story.sentences for t in s]
        ).split()
        ref_token_lists = [
            ck.vocab.decode([t for s in st.sentences for t in s]).split()
            for st in album.stories
        ]
        hyps.append(hyp_tokens)
        refs.append(ref_token_lists)
        per_item.append({"album_id": album.album_id, "hyp_len": len(hyp_tokens)})
    if not hyps:
        raise ConfigurationError("eval-gen: no albums with reference stories")
    aggregate = {
        "bleu_1": bleu_n(hyps, refs, 1),
        "bleu_2": bleu_n(hyps, refs, 2),
        "bleu_3": bleu_n(hyps, refs, 3),
        "cider": cider(hyps, refs),
        "albums": len(hyps),
        "beam": args.beam,
    }
    report = MetricReport(
        task="generation", aggregate=aggregate, per_item=per_item,
        fingerprint=_fingerprint(cfg, args.ckpt),
    )
    print(json.dumps(aggregate, sort_keys=True))
    _write_report(report, args.out, "report_generation")
    return 0


def cmd_eval_summ(args):
    ck, albums = _load_for_eval(args)
    cfg = ck.config or {}
    max_len = int(cfg.get("max_sentence_len", 12))
    per_item = []
    precisions, recalls = [], []
    for album in albums:
        if not album.gt_summaries:
            continue
        if args.baseline == "attn-agg":
            _, attn = enc_attn_dec_generate(
                ck.params, album.features, int(cfg.get("beam_size", 3)), max_len
            )
            idx = attention_aggregate_topk(attn, 5)
            pred = [album.photo_ids[i] for i in idx]
        else:
            pred = hard_selection_ids(ck.params, album)
        p, r = summary_precision_recall(pred, album.gt_summaries)
        precisions.append(p)
        recalls.append(r)
        per_item.append(
            {"album_id": album.album_id, "precision": p, "recall": r, "predicted": pred}
        )
    if not per_item:
        raise ConfigurationError("eval-summ: no albums with ground-truth summaries")
    aggregate = {
        "precision": sum(precisions) / len(precisions),
        "recall": sum(recalls) / len(recalls),
        "albums": len(per_item),
        "method": args.baseline or "hard-selection",
    }
    report = MetricReport(
        task="summarization", aggregate=aggregate, per_item=per_item,
        fingerprint=_fingerprint(cfg, args.ckpt),
    )
    print(json.dumps(aggregate, sort_keys=True))
    _write_report(report, args.out, "report_summarization")
    return 0


def cmd_eval_retrieval(args):
    ck, albums = _load_for_eval(args)
    cfg = ck.config or {}
    pool = albums[: args.pool_size] if args.pool_size else albums
    pool = [a for a in pool if a.stories]
    if not pool:
        raise ConfigurationError("eval-retrieval: no albums with stories")
    features = [a.features for a in pool]
    variant = cfg.get("variant", "hier")
    ranks = []
    per_item = []
    for i, album in enumerate(pool):
        scores = retrieval_scores(ck.params, album.stories[0], features, variant)
        r = rank_of(scores, i)
        ranks.append(r)
        per_item.append({"album_id": album.album_id, "rank": r})
    aggregate = {
        "recall_at_1": recall_at_k(ranks, 1),
        "recall_at_5": recall_at_k(ranks, 5),
        "recall_at_10": recall_at_k(ranks, 10),
        "median_rank": median_rank(ranks),
        "pool_size": len(pool),
    }
    report = MetricReport(
        task="retrieval", aggregate=aggregate, per_item=per_item,
        fingerprint=_fingerprint(cfg, args.ckpt),
    )
    print(json.dumps(aggregate, sort_keys=True))
    _write_report(report, args.out, "report_retrieval")
    return 0


def cmd_gradcheck(args):
    started = time.perf_counter()
    checks = run_all(args.seed)
    ok = True
    for check in checks:
        rep = check.report
        status = "pass" if rep.passed else "FAIL"
        print(f"{check.name}: max_rel_err={rep.max_rel_err:.3e} {status}")
        ok = ok and rep.passed
    print(f"overall: {'pass' if ok else 'FAIL'} ({time.perf_counter() - started:.1f}s)")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(
        prog="hatstory",
        description="Five-sentence album stories with learned latent photo selection.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset file")
    s.add_argument("--albums", type=int, required=True)
    s.add_argument("--photos", type=int, default=10)
    s.add_argument("--k", type=int, default=16)
    s.add_argument("--classes", type=int, default=5)
    s.add_argument("--noise-sigma", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--data", required=True)
    s.add_argument("--config", help="JSON file mirroring TrainConfig fields")
    s.add_argument("--out", required=True, help="parent directory for the run")
    s.add_argument("--run-name", help="run directory name (default: timestamp+seed)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="generate stories for every album")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--beam", type=int, choices=[1, 3], default=3)
    s.add_argument("--oracle-selection", action="store_true",
                   help="decode from the first ground-truth summary")
    s.add_argument("--out", required=True, help="output JSON path")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("eval-gen", help="BLEU and CIDEr of generated stories")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--beam", type=int, choices=[1, 3], default=3)
    s.add_argument("--out", required=True, help="report directory")
    s.set_defaults(func=cmd_eval_gen)

    s = sub.add_parser("eval-summ", help="summarization precision/recall")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--baseline", choices=["attn-agg"],
                   help="score aggregated baseline attention instead of the selector")
    s.add_argument("--out", required=True, help="report directory")
    s.set_defaults(func=cmd_eval_summ)

    s = sub.add_parser("eval-retrieval", help="album retrieval by story likelihood")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--pool-size", type=int, default=0, help="0 = all albums")
    s.add_argument("--out", required=True, help="report directory")
    s.set_defaults(func=cmd_eval_retrieval)

    s = sub.add_parser("gradcheck", help="finite-difference self-check")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HatstoryError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except IndexError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
