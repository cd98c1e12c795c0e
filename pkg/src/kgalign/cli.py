"""``kgalign`` command line: train, eval, synth, ablate, importance.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure. Every command writes into a staging directory next to
its output and renames it into place only on success, so a failed run
leaves nothing behind.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from .augment import PseudoPairPool
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig, apply_overrides, config_from_dict, load_config
from .encoder import EncoderConfig, PairGraph, ParameterSet, encode, importance_report
from .evaluation import evaluate_embeddings, report_from_ranks, write_rank_dump
from .graph import (ConfigError, DatasetError, GraphPair, generate_synthetic_pair, load_graph_pair,
                    write_graph_pair, write_truth)
from .trainer import TrainingDiverged, TrainResult, to_global, train

logger = logging.getLogger("kgalign")

_T0 = time.perf_counter()

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

ABLATIONS = {
    "-RA": {"relation_attention": False},
    "-RP": {"relational_projection": False},
    "-MHE": {"multi_hop": False},
    "-PAM": {"proxy_matching": False},
}
DEFAULT_VARIANTS = "full,-RA,-RP,-MHE,-PAM,loss=logsumexp,loss=tuns,loss=triplet"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; this CLI reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def elapsed() -> float:
    return time.perf_counter() - _T0


@contextmanager
def staged_output(final, overwrite: bool = False):
    """Yield a scratch directory that replaces ``final`` only if the block succeeds."""
    final = Path(final)
    if final.exists() and (not final.is_dir() or any(final.iterdir())) and not overwrite:
        raise UsageError(f"output {final} already exists; pass --overwrite to replace it")
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{final.name}.", dir=final.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final) if final.is_dir() else final.unlink()
    os.replace(tmp, final)


def print_rows(rows: Sequence[Tuple[str, object]], out=None) -> None:
    """Tab-delimited ``key<TAB>value`` block between marker lines."""
    out = out or sys.stdout
    out.write("--- begin report ---\n")
    for key, value in rows:
        if isinstance(value, float):
            value = f"{value:.6f}"
        out.write(f"{key}\t{value}\n")
    out.write("--- end report ---\n")
    out.flush()


def resolve_config(args) -> RunConfig:
    data = load_config(args.config) if getattr(args, "config", None) else {}
    overrides = list(getattr(args, "set", None) or [])
    for flag, key in (("dataset", "dataset"), ("output", "output"), ("mode", "mode"), ("rng_seed", "rng_seed")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    return config_from_dict(apply_overrides(data, overrides))


def relation_labels(pair: GraphPair, add_inverse: bool, add_self: bool) -> List[Tuple[str, str]]:
    """(raw id, name) for every row of the merged relation table."""
    rows: List[Tuple[str, str]] = []
    for side, g in ((1, pair.g1), (2, pair.g2)):
        raw = g.relation_ids or tuple(str(i) for i in range(g.relation_count))
        names = g.relation_names or tuple("" for _ in range(g.relation_count))
        base = list(zip(raw, names))
        rows.extend(base)
        if add_inverse:
            rows.extend((f"{r}^-1", f"inverse of {n or r}") for r, n in base)
        if add_self:
            rows.append((f"self-loop:{side}", f"self-loop of graph {side}"))
    return rows


def load_data(cfg: RunConfig):
    """The graph pair for a run, plus the synthetic generator output when there is one."""
    if cfg.dataset is None:
        try:
            syn = generate_synthetic_pair(cfg.synth)
        except ValueError as exc:
            raise ConfigError(f"synth: {exc}") from None
        return syn.pair, syn
    try:
        pair = load_graph_pair(cfg.dataset, cfg.train_fraction, cfg.rng_seed)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise DatasetError(f"{cfg.dataset}: {exc}") from None
    return pair, None


def evaluate_params(params: ParameterSet, pair: GraphPair, enc: EncoderConfig, graph: PairGraph,
                    opts, csls_k: Optional[int] = None, candidates: Optional[str] = None,
                    k_list: Optional[Sequence[int]] = None):
    """Test-set report (with degree buckets) and per-pair ranks."""
    n1 = pair.g1.entity_count
    test = to_global(pair.test_pairs, n1)
    k_list = tuple(k_list or opts.k_list)
    if len(test) == 0:
        logger.warning("no test pairs; metrics are empty")
        return report_from_ranks(np.zeros(0, dtype=np.int64), k_list), np.zeros(0, dtype=np.int64)
    H = encode(params.astype(np.float64), graph, enc)
    mode = candidates or opts.candidates
    cand = None if mode == "test" else np.arange(n1, graph.entity_count)
    degrees = pair.g1.degrees()[test[:, 0]]
    k = opts.csls_k if csls_k is None else csls_k
    return evaluate_embeddings(H, test, cand, k_list, k, opts.metric, source_degrees=degrees, return_ranks=True)


def check_shapes(params: ParameterSet, graph: PairGraph) -> None:
    if params.entity.shape[0] != graph.entity_count:
        raise DatasetError(f"checkpoint has {params.entity.shape[0]} entity rows, dataset needs {graph.entity_count}")
    if params.relation.shape[0] != graph.relation_count:
        raise DatasetError(
            f"checkpoint has {params.relation.shape[0]} relation rows, dataset needs {graph.relation_count}")


def pool_precision(pool: Optional[PseudoPairPool], pair: GraphPair, truth=None) -> Optional[float]:
    """Share of pseudo pairs that agree with the known alignment (None when nothing can be checked)."""
    if pool is None or len(pool) == 0:
        return None
    n1 = pair.g1.entity_count
    known = {a: b for a, b in pair.all_pairs} if truth is None else {i: int(j) for i, j in enumerate(truth)}
    checked = [(u, v - n1) for u, v in pool.as_array() if int(u) in known]
    if not checked:
        return None
    return float(np.mean([known[int(u)] == int(v) for u, v in checked]))


def epochs_to(history: Sequence[dict], threshold: float) -> Optional[int]:
    for rec in history:
        if rec.get("dev_hits1") is not None and rec["dev_hits1"] >= threshold:
            return int(rec["epoch"])
    return None


def run_training(cfg: RunConfig, pair: GraphPair, graph: PairGraph, augment: bool, on_epoch=None) -> TrainResult:
    a = cfg.augment
    return train(pair, cfg.encoder, cfg.loss, cfg.train_effective, graph=graph, augment=augment,
                 augment_every=a.every, augment_csls=a.csls, augment_start=a.start, augment_margin=a.min_margin,
                 on_epoch=on_epoch)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    t_load = time.perf_counter()
    pair, syn = load_data(cfg)
    enc = cfg.encoder
    graph = PairGraph.from_pair(pair, enc.add_inverse, enc.add_self)
    load_s = time.perf_counter() - t_load
    augment = cfg.mode == "semi" and cfg.augment.enabled and not args.no_augment
    status = EXIT_OK

    with staged_output(cfg.output, args.overwrite) as out:
        (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
        meta = {"mode": cfg.mode, "rng_seed": cfg.rng_seed,
                "relations": [list(r) for r in relation_labels(pair, enc.add_inverse, enc.add_self)]}
        if syn is not None:
            write_graph_pair(pair, out / "dataset")
            write_truth(out / "truth.tsv", syn)
            meta.update(dataset="../dataset", seed_count=len(pair.seed_pairs))
        else:
            meta.update(dataset=str(Path(cfg.dataset).resolve()), train_fraction=cfg.train_fraction)

        t_train = time.perf_counter()
        with open(out / "history.jsonl", "w", encoding="utf-8", newline="\n") as hist:
            def log_epoch(rec):
                hist.write(json.dumps(rec, sort_keys=True) + "\n")
            try:
                res = run_training(cfg, pair, graph, augment, log_epoch)
            except TrainingDiverged as exc:
                logger.error("training diverged: %s", exc)
                save_checkpoint(out / "checkpoint", exc.params, enc, dict(meta, status="diverged"))
                (out / "report.json").write_text(json.dumps({"status": "diverged", "error": str(exc)}, indent=2)
                                                 + "\n", encoding="utf-8")
                res, status = None, EXIT_NUMERIC
        if res is None:
            print_rows([("status", "diverged"), ("output", cfg.output)])
            return status
        train_s = time.perf_counter() - t_train

        meta.update(best_epoch=res.best_epoch, epochs_run=res.epochs_run)
        save_checkpoint(out / "checkpoint", res.params, enc, meta)
        # score the stored float32 weights so `eval` on the checkpoint reproduces this report
        params32, _, _ = load_checkpoint(out / "checkpoint")
        t_eval = time.perf_counter()
        report, ranks = evaluate_params(params32, pair, enc, graph, cfg.eval)
        eval_s = time.perf_counter() - t_eval

        if res.pool is not None:
            res.pool.write_tsv(out / "pseudo_pairs.tsv", list(pair.g1.entity_ids) or None,
                               list(pair.g2.entity_ids) or None, offset=pair.g1.entity_count)
        if cfg.eval.rank_dump and len(ranks):
            labels1 = list(pair.g1.entity_ids) or [str(i) for i in range(pair.g1.entity_count)]
            labels2 = list(pair.g2.entity_ids) or [str(i) for i in range(pair.g2.entity_count)]
            write_rank_dump(out / "ranks.tsv", pair.test_pairs, ranks, labels1, labels2)
        figures = []
        if cfg.eval.figures:
            from .plotting import plot_degree_hits, plot_training_curves
            figures.append(plot_training_curves(res.history, out / "figures" / "training.png", f"{cfg.mode} run"))
            if report.degree_counts:
                figures.append(plot_degree_hits(report.degree_hits1, report.degree_counts,
                                                out / "figures" / "degree_hits1.png"))

        precision = pool_precision(res.pool, pair, syn.truth if syn is not None else None)
        summary = {
            "status": "ok",
            "mode": cfg.mode,
            "augment": augment,
            "metrics": report.to_dict(),
            "best_epoch": res.best_epoch,
            "best_dev_hits1": res.best_dev_hits1,
            "epochs_run": res.epochs_run,
            "pseudo_pairs": len(res.pool) if res.pool is not None else 0,
            "pseudo_pair_precision": precision,
            "timing": {"load_s": load_s, "train_s": train_s, "eval_s": eval_s},
        }
        summary["timing"]["total_s"] = elapsed()
        (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    rows = [("mode", cfg.mode), ("test_pairs", report.count)]
    rows += [(f"hits@{k}", v) for k, v in report.hits.items()]
    rows += [("mrr", report.mrr), ("best_epoch", res.best_epoch), ("epochs_run", res.epochs_run)]
    if res.pool is not None:
        rows.append(("pseudo_pairs", len(res.pool)))
        if precision is not None:
            rows.append(("pseudo_pair_precision", precision))
    rows += [("total_s", summary["timing"]["total_s"]), ("output", cfg.output)]
    rows += [("figure", str(Path(cfg.output) / p.relative_to(p.parents[1]))) for p in figures]
    print_rows(rows)
    return status


def _checkpoint_data(args, meta: dict, ckpt: Path) -> GraphPair:
    dataset = args.dataset or meta.get("dataset")
    if dataset is None:
        raise UsageError("no dataset recorded in the checkpoint; pass --dataset")
    dpath = Path(dataset)
    if not dpath.is_absolute() and not args.dataset:
        dpath = (ckpt / dpath).resolve()
    seed_count = args.seed_count if args.seed_count is not None else meta.get("seed_count")
    fraction = args.train_fraction if args.train_fraction is not None else meta.get("train_fraction", 0.3)
    rng_seed = args.rng_seed if args.rng_seed is not None else meta.get("rng_seed", 0)
    if args.train_fraction is not None:
        seed_count = None
    try:
        return load_graph_pair(dpath, fraction, rng_seed, seed_count=seed_count)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise DatasetError(f"{dpath}: {exc}") from None


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    params, enc, meta = load_checkpoint(ckpt)
    if enc is None:
        raise CheckpointError(f"{ckpt / 'manifest.json'}: field 'encoder' is missing")
    pair = _checkpoint_data(args, meta, ckpt)
    graph = PairGraph.from_pair(pair, enc.add_inverse, enc.add_self)
    check_shapes(params, graph)
    opts = config_from_dict({}).eval
    k_list = tuple(int(k) for k in args.k.split(",")) if args.k else None
    report, ranks = evaluate_params(params, pair, enc, graph, opts, args.csls_k, args.candidates, k_list)
    payload = report.to_dict()
    payload.pop("runtime_s")  # keeps the JSON identical between runs
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text, encoding="utf-8")
    if args.rank_dump:
        write_rank_dump(args.rank_dump, pair.test_pairs, ranks,
                        list(pair.g1.entity_ids) or [str(i) for i in range(pair.g1.entity_count)],
                        list(pair.g2.entity_ids) or [str(i) for i in range(pair.g2.entity_count)])
    if args.figure and report.degree_counts:
        from .plotting import plot_degree_hits
        plot_degree_hits(report.degree_hits1, report.degree_counts, args.figure)
    sys.stdout.write(text)
    logger.info("eval finished in %.3f s", elapsed())
    return EXIT_OK


def cmd_synth(args) -> int:
    data = load_config(args.config) if args.config else {}
    data = {"synth": data.get("synth", {})}
    overrides = list(args.set or [])
    for flag, key in (("entities", "entity_count"), ("relations", "relation_count"), ("degree", "mean_degree"),
                      ("noise", "edge_noise"), ("seeds", "seed_ratio"), ("seed", "rng_seed")):
        value = getattr(args, flag)
        if value is not None:
            overrides.append(f"synth.{key}={json.dumps(value)}")
    synth = config_from_dict(apply_overrides(data, overrides)).synth
    try:
        syn = generate_synthetic_pair(synth)
    except ValueError as exc:
        raise ConfigError(f"synth: {exc}") from None
    with staged_output(args.output, args.overwrite) as out:
        write_graph_pair(syn.pair, out)
        write_truth(out / "truth.tsv", syn)
    print_rows([("entities", synth.entity_count), ("triples_1", len(syn.pair.g1.triples)),
                ("triples_2", len(syn.pair.g2.triples)), ("seed_pairs", len(syn.pair.seed_pairs)),
                ("test_pairs", len(syn.pair.test_pairs)), ("output", args.output)])
    return EXIT_OK


def parse_variants(text: str) -> List[str]:
    names = [v.strip() for v in (text or "").split(",") if v.strip()]
    out = ["full"]
    for name in names:
        if name == "full" or name in out:
            continue
        if name not in ABLATIONS and not name.startswith("loss="):
            raise UsageError(f"unknown variant {name!r}; use {', '.join(ABLATIONS)} or loss=<name>")
        out.append(name)
    return out


def variant_config(cfg: RunConfig, name: str) -> RunConfig:
    if name == "full":
        return cfg
    if name.startswith("loss="):
        return config_from_dict(apply_overrides(cfg.to_dict(), [f"train.loss={json.dumps(name[5:])}"]))
    return replace(cfg, encoder=replace(cfg.encoder, **ABLATIONS[name]))


def format_table(rows: List[dict], columns: Sequence[Tuple[str, str]]) -> str:
    """Plain aligned text table."""
    def cell(key, v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:+.4f}" if key.startswith("delta_") else f"{v:.4f}"
        return str(v)
    body = [[cell(key, r.get(key)) for key, _ in columns] for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, (_, h) in enumerate(columns)]
    lines = ["  ".join(h.ljust(w) for (_, h), w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in enumerate(zip(b, widths))) for b in body]
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    variants = parse_variants(args.variants)
    pair, _ = load_data(cfg)
    augment = cfg.mode == "semi" and cfg.augment.enabled
    rows, histories = [], {}
    for name in variants:
        vcfg = variant_config(cfg, name)
        enc = vcfg.encoder
        graph = PairGraph.from_pair(pair, enc.add_inverse, enc.add_self)
        try:
            res = run_training(vcfg, pair, graph, augment)
        except TrainingDiverged as exc:
            logger.error("variant %s diverged: %s", name, exc)
            rows.append({"variant": name, "status": "diverged"})
            continue
        report, _ = evaluate_params(res.params, pair, enc, graph, vcfg.eval)
        histories[name] = res.history
        rows.append({
            "variant": name,
            "status": "ok",
            "hits1": report.hits1,
            "hits10": report.hits.get("10"),
            "mrr": report.mrr,
            "epochs_to_threshold": epochs_to(res.history, args.threshold),
            "sec_per_epoch": float(np.median(res.epoch_seconds)) if res.epoch_seconds else None,
            "epochs_run": res.epochs_run,
        })
        logger.info("variant %s: hits@1 %.4f", name, report.hits1)
    base = rows[0] if rows and rows[0].get("status") == "ok" else None
    for r in rows:
        if base is not None and r.get("status") == "ok":
            r["delta_hits1"] = r["hits1"] - base["hits1"]
            r["delta_mrr"] = r["mrr"] - base["mrr"]
    columns = [("variant", "variant"), ("hits1", "hits@1"), ("delta_hits1", "d hits@1"), ("mrr", "mrr"),
               ("delta_mrr", "d mrr"), ("epochs_to_threshold", f"ep>={args.threshold:g}"),
               ("sec_per_epoch", "s/epoch")]
    table = format_table(rows, columns)
    with staged_output(cfg.output, args.overwrite) as out:
        (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
        doc = {"threshold": args.threshold, "mode": cfg.mode, "variants": rows}
        (out / "ablation.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out / "ablation.txt").write_text(table, encoding="utf-8")
        if cfg.eval.figures and histories:
            from .plotting import plot_ablation_curves
            plot_ablation_curves(histories, out / "figures" / "ablation.png", args.threshold)
    sys.stdout.write(table)
    sys.stdout.flush()
    return EXIT_NUMERIC if any(r.get("status") != "ok" for r in rows) else EXIT_OK


def importance_lines(params: ParameterSet, labels: Optional[List[Tuple[str, str]]]) -> List[str]:
    n = params.relation.shape[0]
    if labels is None or len(labels) != n:
        if labels is not None:
            logger.warning("relation labels do not match the checkpoint (%d vs %d rows); using indices", len(labels), n)
        labels = [(str(i), "") for i in range(n)]
    rows = importance_report(params, [f"{r}\t{name}" for r, name in labels])
    return [f"{label}\t{score!r}\t{bucket}" for label, score, bucket in rows]


def cmd_importance(args) -> int:
    params, _, meta = load_checkpoint(args.checkpoint)
    labels = meta.get("relations")
    labels = [tuple(x) for x in labels] if labels else None
    lines = importance_lines(params.astype(np.float64), labels)
    text = "".join(line + "\n" for line in lines)
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _add_run_flags(p, with_output: bool = True) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config value, e.g. --set encoder.dim=64 (repeatable)")
    p.add_argument("--dataset", help="dataset directory (default: synthetic pair from the synth section)")
    p.add_argument("--mode", choices=("basic", "semi"))
    p.add_argument("--rng-seed", dest="rng_seed", type=int)
    if with_output:
        p.add_argument("--output", help="run directory to create")
    p.add_argument("--overwrite", action="store_true", help="replace an existing output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kgalign", description="Entity alignment between two knowledge graphs.")
    parser.add_argument("--threads", type=int, default=1, help="BLAS threads (1 = deterministic)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and report test metrics")
    _add_run_flags(p)
    p.add_argument("--no-augment", action="store_true", help="in semi mode, skip pseudo labelling")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", help="dataset directory (default: the one recorded at training time)")
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--seed-count", dest="seed_count", type=int, help="first N reference pairs are seeds")
    p.add_argument("--rng-seed", dest="rng_seed", type=int)
    p.add_argument("--candidates", choices=("test", "all"))
    p.add_argument("--csls-k", dest="csls_k", type=int)
    p.add_argument("--k", help="comma separated Hits@k cut-offs, e.g. 1,5,10")
    p.add_argument("--output", help="write the JSON report here as well")
    p.add_argument("--rank-dump", dest="rank_dump", help="per-pair ranks as TSV")
    p.add_argument("--figure", help="Hits@1-by-degree bar chart (PNG)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--output", required=True)
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--entities", type=int)
    p.add_argument("--relations", type=int)
    p.add_argument("--degree", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--seeds", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ablate", help="train model variants and compare them")
    _add_run_flags(p)
    p.add_argument("--variants", default=DEFAULT_VARIANTS,
                   help=f"comma separated list (default {DEFAULT_VARIANTS}); the full model is always included")
    p.add_argument("--threshold", type=float, default=0.9, help="dev Hits@1 for the epochs-to-threshold column")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("importance", help="rank relations by learned attention preference")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", help="write the TSV here as well")
    p.set_defaults(func=cmd_importance)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (ConfigError, UsageError) as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except (DatasetError, CheckpointError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except FloatingPointError as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
