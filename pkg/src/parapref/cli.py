"""Unified command-line entry point.

Exit codes: 0 success, 1 usage error (with usage text), 2 data/config error
with a single machine-parsable ``parapref: error: ...`` line on stderr.

Subcommands: build-pairs, train, embed, eval-sts, eval-space, eval-gar,
plot-pca, report.  Every run appends one provenance record to
``manifests.jsonl`` next to its primary output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backend import TinyTransformer, TinyTransformerConfig, load_checkpoint, save_checkpoint
from .core import PARAPHRASE, builtin_templates, resolve_template
from .data import build_preference_pairs, load_pairs, parse_nli_csv, save_pairs, subsample
from .embedder import embed_corpus, load_embeddings, save_embeddings
from .errors import DataFormatError, ParaprefError
from .evalsuite import (
    aligned_token_report,
    append_metric_record,
    embedding_space_report,
    eval_sts,
    load_metric_records,
    load_sts_tsv,
    pca_2d,
)
from .manifest import RunManifest
from .tokenizer import vocab_from_texts
from .trainer import (
    load_flat_config,
    save_train_log,
    train_config_from_mapping,
    train_dpo,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports usage problems via exception (exit 1)."""

    def error(self, message):
        raise _UsageError(f"{self.format_usage()}parapref: {message}")


def build_parser() -> _Parser:
    parser = _Parser(prog="parapref", description=__doc__)
    parser.add_argument("--version", action="version", version=f"parapref {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)

    p = sub.add_parser("build-pairs",
                       help="turn an NLI triplet CSV into preference pairs")
    p.add_argument("--nli", required=True, help="CSV with header sent0,sent1,hard_neg")
    p.add_argument("--template", required=True, help="paraphrase template name or index")
    p.add_argument("--n", type=int, default=None, help="subsample size (default: all)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output pairs file (JSON lines)")

    env_out = os.environ.get("PARAPREF_OUT_DIR")

    p = sub.add_parser("train",
                       help="preference-train a policy against its frozen snapshot")
    p.add_argument("--pairs", required=True)
    p.add_argument("--config", required=True, help="flat key = value training config")
    p.add_argument("--out-dir", required=env_out is None, default=env_out)

    p = sub.add_parser("embed", help="embed sentences from a file")
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--template", required=True, help="extraction template name or index")
    p.add_argument("--in", dest="infile", required=True, help="sentences, one per line")
    p.add_argument("--out", required=True, help="output embedding file")
    p.add_argument("--pooling", choices=("last_token", "mean"), default="last_token")

    p = sub.add_parser("eval-sts", help="Spearman x 100 on scored pairs")
    p.add_argument("--model", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--data", required=True, nargs="+", help="TSV file(s): s1 TAB s2 TAB gold")
    p.add_argument("--pooling", choices=("last_token", "mean"), default="last_token")
    p.add_argument("--out-dir", default=env_out, help="where to append metric records")

    p = sub.add_parser("eval-space",
                       help="uniformity and isotropy of stored embeddings")
    p.add_argument("--emb", required=True)
    p.add_argument("--out-dir", default=env_out)

    p = sub.add_parser("eval-gar",
                       help="surface-token coverage of top-k aligned tokens")
    p.add_argument("--model", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out-dir", default=env_out)
    p.add_argument("--report-json", default=None, help="write the per-sentence report here")

    p = sub.add_parser("plot-pca",
                       help="project embeddings to 2-D coordinates")
    p.add_argument("--emb", required=True)
    p.add_argument("--labels", default=None, help="optional labels, one per line")
    p.add_argument("--out", required=True, help="coordinates TSV")
    p.add_argument("--image", default=None, help="optional scatter plot (needs matplotlib)")

    p = sub.add_parser("report",
                       help="aggregate metric records into a summary table")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out", default=None, help="write the text table here too")
    p.add_argument("--json", dest="json_out", default=None, help="machine-readable summary")
    return parser


# ------------------------------------------------------------------ helpers


def _load_sentences(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        sentences = [line.rstrip("\n") for line in fh]
    sentences = [s for s in sentences if s.strip()]
    if not sentences:
        raise DataFormatError(f"{path}: no sentences found")
    return sentences


def _model_from_config(raw: dict, pairs) -> TinyTransformer:
    """Start from model.checkpoint when given, else build a fresh tiny model
    (vocabulary harvested from the pairs and built-in templates unless a
    model.vocab_file is supplied)."""
    if "model.checkpoint" in raw:
        model = load_checkpoint(raw["model.checkpoint"])
        if not model.trainable:
            raise ParaprefError(f"{raw['model.checkpoint']}: checkpoint is frozen, cannot train")
        return model
    if "model.vocab_file" in raw:
        with open(raw["model.vocab_file"], "r", encoding="utf-8") as fh:
            vocab = [line.strip() for line in fh if line.strip()]
    else:
        texts = [t.pattern for t in builtin_templates()]
        for pair in pairs:
            texts.extend((pair.prompt, pair.chosen, pair.rejected))
        vocab = vocab_from_texts(texts)
    cfg = TinyTransformerConfig(
        layers=int(raw.get("model.layers", 2)),
        heads=int(raw.get("model.heads", 4)),
        hidden_dim=int(raw.get("model.hidden_dim", 64)),
        vocab=tuple(vocab),
        max_seq_len=int(raw.get("model.max_seq_len", 64)),
        seed=int(raw.get("model.seed", 0)),
        init_std=float(raw.get("model.init_std", 0.02)),
    )
    return TinyTransformer(cfg)


def _write_records(out_dir, entries) -> None:
    if out_dir is None:
        return
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    for metric, dataset, value in entries:
        append_metric_record(Path(out_dir) / "metrics.jsonl", metric, dataset, value)


# -------------------------------------------------------------- subcommands


def _cmd_build_pairs(args, argv) -> int:
    manifest = RunManifest("build-pairs", argv, vars(args), seed=args.seed)
    manifest.add_input(args.nli)
    dataset = parse_nli_csv(args.nli)
    if args.n is not None:
        dataset = subsample(dataset, args.n, seed=args.seed)
    template = resolve_template(args.template)
    if template.kind != PARAPHRASE:
        raise ParaprefError(f"template {args.template!r} is not a paraphrase template")
    pairs, dropped = build_preference_pairs(dataset, template)
    save_pairs(pairs, args.out)
    manifest.write(Path(args.out).parent)
    print(f"wrote {len(pairs)} pairs to {args.out} "
          f"(dropped {dropped} equal-response, skipped {dataset.skipped_rows} bad rows)")
    return 0


def _cmd_train(args, argv) -> int:
    raw = load_flat_config(args.config)
    config = train_config_from_mapping(raw)
    manifest = RunManifest("train", argv, {**vars(args), **raw}, seed=config.seed)
    manifest.add_input(args.pairs)
    manifest.add_input(args.config)
    pairs = load_pairs(args.pairs)
    model = _model_from_config(raw, pairs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, tlog, checkpoints = train_dpo(model, pairs, config, out_dir=str(out_dir))
    save_checkpoint(model, out_dir / "policy-final.npz")
    save_train_log(tlog, out_dir / "train_log.jsonl")
    manifest.write(out_dir)
    last = tlog.records[-1]
    print(f"trained {last.step + 1} updates over {last.samples_seen} samples; "
          f"final loss {last.loss:.4f}, mean margin {last.mean_margin:.4f}")
    print(f"policy: {out_dir / 'policy-final.npz'} (+{len(checkpoints)} checkpoints)")
    return 0


def _cmd_embed(args, argv) -> int:
    manifest = RunManifest("embed", argv, vars(args))
    manifest.add_input(args.model)
    manifest.add_input(args.infile)
    model = load_checkpoint(args.model)
    template = resolve_template(args.template)
    sentences = _load_sentences(args.infile)
    matrix = embed_corpus(model, template, sentences, pooling=args.pooling)
    save_embeddings(matrix, args.out)
    manifest.write(Path(args.out).parent)
    print(f"embedded {matrix.n} sentences (d={matrix.dim}) -> {args.out}")
    return 0


def _cmd_eval_sts(args, argv) -> int:
    manifest = RunManifest("eval-sts", argv, vars(args))
    manifest.add_input(args.model)
    model = load_checkpoint(args.model)
    template = resolve_template(args.template)
    records = []
    for data_path in args.data:
        manifest.add_input(data_path)
        pairs = load_sts_tsv(data_path)
        score = eval_sts(model, template, pairs, pooling=args.pooling)
        tag = Path(data_path).stem
        print(f"{tag}\tsts_spearman_x100\t{score:.4f}")
        records.append(("sts_spearman_x100", tag, score))
    _write_records(args.out_dir, records)
    manifest.write(args.out_dir if args.out_dir else Path(args.data[0]).parent)
    return 0


def _cmd_eval_space(args, argv) -> int:
    manifest = RunManifest("eval-space", argv, vars(args))
    manifest.add_input(args.emb)
    matrix = load_embeddings(args.emb)
    report = embedding_space_report(matrix)
    tag = Path(args.emb).stem
    print(f"{tag}\tuniformity\t{report['uniformity']:.6f}")
    print(f"{tag}\tisotropy\t{report['isotropy']:.6f}")
    if report["degenerate_spectrum"]:
        print("note: near-equal eigenvalues detected; eigenbasis is solver-chosen "
              "within degenerate clusters")
    _write_records(args.out_dir, [("uniformity", tag, report["uniformity"]),
                                  ("isotropy", tag, report["isotropy"])])
    manifest.write(args.out_dir if args.out_dir else Path(args.emb).parent)
    return 0


def _cmd_eval_gar(args, argv) -> int:
    manifest = RunManifest("eval-gar", argv, vars(args))
    manifest.add_input(args.model)
    manifest.add_input(args.infile)
    model = load_checkpoint(args.model)
    template = resolve_template(args.template)
    sentences = _load_sentences(args.infile)
    report = aligned_token_report(model, template, sentences, k=args.k)
    tag = Path(args.infile).stem
    print(f"{tag}\tgar@{args.k}\t{report['gar']:.6f}")
    if args.report_json:
        payload = {
            "k": report["k"],
            "gar": report["gar"],
            "sentences": [
                {"sentence": e["sentence"], "hits": e["hits"],
                 "top_tokens": [[t, s] for t, s in e["top_tokens"]]}
                for e in report["sentences"]
            ],
        }
        with open(args.report_json, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
    _write_records(args.out_dir, [(f"gar@{args.k}", tag, report["gar"])])
    manifest.write(args.out_dir if args.out_dir else Path(args.infile).parent)
    return 0


def _cmd_plot_pca(args, argv) -> int:
    manifest = RunManifest("plot-pca", argv, vars(args))
    manifest.add_input(args.emb)
    matrix = load_embeddings(args.emb)
    coords = pca_2d(matrix)
    labels = None
    if args.labels:
        manifest.add_input(args.labels)
        labels = _load_sentences(args.labels)
        if len(labels) != matrix.n:
            raise DataFormatError(
                f"{args.labels}: {len(labels)} labels for {matrix.n} embeddings"
            )
    with open(args.out, "w", encoding="utf-8") as fh:
        for i in range(matrix.n):
            label = labels[i] if labels else str(i)
            fh.write(f"{coords[i, 0]:.8f}\t{coords[i, 1]:.8f}\t{label}\n")
    if args.image:
        try:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError:
            raise ParaprefError("matplotlib is not installed; install parapref[plot]") from None
        fig, ax = plt.subplots(figsize=(6, 5))
        ax.scatter(coords[:, 0], coords[:, 1], s=12)
        ax.set_xlabel("pc1")
        ax.set_ylabel("pc2")
        fig.tight_layout()
        fig.savefig(args.image, dpi=150)
        plt.close(fig)
    manifest.write(Path(args.out).parent)
    print(f"wrote {matrix.n} coordinates to {args.out}")
    return 0


def _cmd_report(args, argv) -> int:
    manifest = RunManifest("report", argv, vars(args))
    metrics_path = Path(args.run_dir) / "metrics.jsonl"
    if not metrics_path.exists():
        raise DataFormatError(f"{args.run_dir}: no metrics.jsonl to aggregate")
    records = load_metric_records(metrics_path)
    if not records:
        raise DataFormatError(f"{metrics_path}: empty metric records")
    manifest.add_input(metrics_path)
    # last record wins for a (metric, dataset) cell; dataset order = first seen
    table: dict[str, dict[str, float]] = {}
    dataset_order: dict[str, list[str]] = {}
    for rec in records:
        row = table.setdefault(rec["metric"], {})
        if rec["dataset"] not in row:
            dataset_order.setdefault(rec["metric"], []).append(rec["dataset"])
        row[rec["dataset"]] = rec["value"]

    lines = []
    summary = {}
    for metric in sorted(table):
        datasets = dataset_order[metric]
        values = [table[metric][ds] for ds in datasets]
        avg = float(np.mean(values))
        summary[metric] = {"datasets": dict(zip(datasets, values)), "avg": avg}
        header = ["metric"] + datasets + ["Avg."]
        row = [metric] + [f"{v:.2f}" for v in values] + [f"{avg:.2f}"]
        widths = [max(len(h), len(r)) for h, r in zip(header, row)]
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        lines.append("  ".join(r.ljust(w) for r, w in zip(row, widths)))
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(summary, indent=2), encoding="utf-8")
    manifest.write(args.run_dir)
    return 0


_COMMANDS = {
    "build-pairs": _cmd_build_pairs,
    "train": _cmd_train,
    "embed": _cmd_embed,
    "eval-sts": _cmd_eval_sts,
    "eval-space": _cmd_eval_space,
    "eval-gar": _cmd_eval_gar,
    "plot-pca": _cmd_plot_pca,
    "report": _cmd_report,
}


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        logging.basicConfig(level=os.environ.get("PARAPREF_LOG_LEVEL", "WARNING").upper())
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        return _COMMANDS[args.command](args, argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help/--version path
        return int(exc.code or 0)
    except (ParaprefError, OSError, ValueError) as exc:
        print(f"parapref: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
