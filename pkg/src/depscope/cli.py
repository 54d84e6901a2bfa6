"""Command-line entry point: ``depscope <subcommand> [options]``.

Option precedence (lowest to highest): built-in defaults, ``--config`` JSON
file, command-line flags. ``$DEPSCOPE_SEED`` is used only when neither the
file nor ``--seed`` gives a seed.

Exit codes: 0 success, 2 config error, 3 input error, 4 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .depgraph import DepGraphError, from_dict, load_depgraphs
from .detection import (METHODS, DetectionError, DetectionResult, evaluate, extract_dbscan,
                        ground_truth_labels, optics_ordering, read_detections, run_method)
from .dot import render_dot
from .embedding import EmbeddingError, read_embeddings, train_embeddings
from .generator import GeneratorConfig, GeneratorConfigError, generate, read_labels
from .pipeline import (ConfigError, PipelineConfig, _json_text, _write, load_config,
                       read_graphs, run_pipeline)
from .rootcause import MergeError, compare, load_comparable, merge_cluster, merged_from_dict

log = logging.getLogger("depscope")

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3, 4


class InputError(Exception):
    pass


# --- option groups ---

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="RNG seed (fallback: $DEPSCOPE_SEED, then 0)")
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--out", default=".", help="output directory (default: .)")
    p.add_argument("--workers", type=int, help="embedding worker threads; 1 = deterministic")
    p.add_argument("-v", "--verbose", action="store_true")


def _embedding_opts(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("embedding")
    g.add_argument("--dimensions", type=int)
    g.add_argument("--wl-iterations", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--learning-rate", type=float)
    g.add_argument("--negative-samples", type=int)
    g.add_argument("--min-feature-count", type=int)
    g.add_argument("--duration-buckets", action="store_true", default=None)
    g.add_argument("--prune-threshold", type=float, dest="prune_threshold_pct")
    g.add_argument("--no-prune", action="store_true")


def _detection_opts(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("detection")
    g.add_argument("--eps", type=float)
    g.add_argument("--min-pts", type=int)
    g.add_argument("-k", type=int)
    g.add_argument("--knn-threshold", type=float)
    g.add_argument("--z-threshold", type=float)
    g.add_argument("--zscore-feature", choices=("duration", "centroid_distance"))


def _overrides(args: argparse.Namespace) -> dict:
    ns = vars(args)
    o = {"seed": ns.get("seed")}
    for name in ("dimensions", "wl_iterations", "epochs", "learning_rate",
                 "negative_samples", "min_feature_count", "duration_buckets", "workers"):
        o[f"embedding.{name}"] = ns.get(name)
    for name in ("eps", "min_pts", "k", "knn_threshold", "z_threshold", "zscore_feature"):
        o[f"detection.{name}"] = ns.get(name)
    o["prune_threshold_pct"] = ns.get("prune_threshold_pct")
    for name in ("ground_truth_threshold_ms", "pairing", "rootcause_method", "labels"):
        o[name] = ns.get(name)
    if ns.get("methods"):
        o["methods"] = [m.strip() for m in ns["methods"].split(",") if m.strip()]
    if ns.get("input_graphs"):
        o["input"] = ns["input_graphs"]
    return o


def _config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config, _overrides(args))
    if getattr(args, "no_prune", False):
        cfg = dataclasses.replace(cfg, prune_threshold_pct=None)
    return cfg


def _open(path: str):
    try:
        return open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc.strerror}") from exc


def _graphs(path: str):
    try:
        return read_graphs(path)
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc.strerror}") from exc


# --- subcommands ---

def cmd_generate(args) -> int:
    seed = args.seed
    if seed is None:
        try:
            seed = int(os.environ.get("DEPSCOPE_SEED", 0))
        except ValueError as exc:
            raise ConfigError("DEPSCOPE_SEED must be an integer") from exc
    fraction = args.outliers / args.n if args.outliers is not None else args.outlier_fraction
    kw = {"n_requests": args.n, "seed": seed}
    if fraction is not None:
        kw["outlier_fraction"] = fraction
    ds = generate(GeneratorConfig(**kw))
    out = Path(args.out)
    g, lab = io.StringIO(), io.StringIO()
    ds.write(g, lab)
    _write(out / "graphs.jsonl", g.getvalue())
    _write(out / "labels.csv", lab.getvalue())
    print(f"wrote {len(ds.graphs)} graphs ({sum(ds.labels)} outliers) to {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    with _open(args.input) as fp:
        graphs = load_depgraphs(fp, strict=args.strict)
    print(f"{args.input}: {len(graphs)} valid graphs")
    return EXIT_OK


def cmd_embed(args) -> int:
    cfg = _config(args)
    graphs = _graphs(args.input)
    emb = train_embeddings(graphs, cfg.embedding_config())
    out = Path(args.out)
    buf = io.StringIO()
    emb.write_csv(buf)
    _write(out / "embeddings.csv", buf.getvalue())
    buf = io.StringIO()
    emb.write_header(buf)
    _write(out / "embeddings.json", buf.getvalue())
    print(f"embedded {len(graphs)} graphs into {emb.shape[1]} dimensions "
          f"(vocabulary {emb.vocabulary_size})")
    return EXIT_OK


def _points(path: str):
    with _open(path) as fp:
        return read_embeddings(fp)


def cmd_cluster(args) -> int:
    cfg = _config(args).detection
    emb = _points(args.embeddings)
    out = Path(args.out)
    if args.method == "optics":
        order = optics_ordering(emb.vectors, cfg.eps, cfg.min_pts)
        res = extract_dbscan(order, cfg.eps)
        lines = ["position,request_id,reachability,core_distance"]
        for pos, i in enumerate(order.ordering):
            lines.append(f"{pos},{emb.request_ids[i]},{order.reachability[i]!r},"
                         f"{order.core_distances[i]!r}")
        _write(out / "optics_ordering.csv", "\n".join(lines) + "\n")
    else:
        res = run_method("dbscan", emb.vectors, None, cfg)
    buf = io.StringIO()
    res.write_csv(buf, emb.request_ids)
    _write(out / "clusters" / f"{args.method}.csv", buf.getvalue())
    print(f"{args.method}: {res.n_clusters} clusters, {res.n_outliers} noise points")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _config(args).detection
    emb = _points(args.embeddings)
    graphs = None
    if args.graphs:
        graphs = _graphs(args.graphs)
        by_id = {g.request_id: g for g in graphs}
        try:
            graphs = [by_id[rid] for rid in emb.request_ids]
        except KeyError as exc:
            raise InputError(f"graph {exc.args[0]} missing from {args.graphs}") from exc
    elif args.method == "zscore" and cfg.zscore_feature == "duration":
        raise ConfigError("--graphs is required for duration Z-score")
    res = run_method(args.method, emb.vectors, graphs, cfg)
    buf = io.StringIO()
    res.write_csv(buf, emb.request_ids)
    _write(Path(args.out) / "detections" / f"{args.method}.csv", buf.getvalue())
    flagged = [rid for rid, f in zip(emb.request_ids, res.outlier_flags) if f]
    print(f"{args.method}: {len(flagged)} outliers")
    for rid in flagged:
        print(rid)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    with _open(args.detections) as fp:
        ids, res = read_detections(fp)
    if args.labels:
        with _open(args.labels) as fp:
            by_id = read_labels(fp)
        source = "labels_file"
    elif args.graphs:
        graphs = _graphs(args.graphs)
        by_id = dict(zip([g.request_id for g in graphs],
                         ground_truth_labels(graphs, args.ground_truth_threshold_ms)))
        source = f"duration>{args.ground_truth_threshold_ms:g}ms"
    else:
        raise ConfigError("evaluate needs --labels or --graphs")
    try:
        truth = [by_id[rid] for rid in ids]
    except KeyError as exc:
        raise InputError(f"no label for {exc.args[0]}") from exc
    rep = evaluate(res.outlier_flags, truth)
    doc = {"method": res.method, "truth": source, **rep.to_dict()}
    _write(Path(args.out) / "eval" / f"{res.method}.json", _json_text(doc))
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def _select_cluster(res: DetectionResult, wanted: str) -> int:
    if wanted == "largest":
        cid = res.largest_cluster()
        if cid is None:
            raise InputError("detections contain no clusters")
        return cid
    cid = int(wanted)
    if cid not in set(res.cluster_ids or ()):
        raise InputError(f"cluster {cid} not present")
    return cid


def cmd_merge(args) -> int:
    graphs = _graphs(args.graphs)
    name = "merged"
    if args.detections:
        with _open(args.detections) as fp:
            ids, res = read_detections(fp)
        if res.cluster_ids is None:
            raise InputError(f"{args.detections} has no cluster ids")
        cid = _select_cluster(res, args.cluster)
        keep = {ids[i] for i in res.cluster_members(cid)}
        graphs = [g for g in graphs if g.request_id in keep]
        name = f"cluster{cid}"
    merged = merge_cluster(graphs)
    out = Path(args.out)
    _write(out / f"{name}.json", _json_text(merged.to_dict()))
    _write(out / f"{name}.dot", render_dot(merged, name=name))
    print(f"merged {merged.n_graphs} graphs into {len(merged.stats)} paths -> {out / name}.json")
    return EXIT_OK


def _comparable(path: str, request_id: str | None = None):
    with _open(path) as fp:
        text = fp.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        graphs = load_depgraphs(text)
        if request_id:
            graphs = [g for g in graphs if g.request_id == request_id]
        if len(graphs) != 1:
            raise InputError(f"{path}: expected one graph, found {len(graphs)} (use --request-id)")
        return graphs[0]
    return load_comparable(doc)


def cmd_compare(args) -> int:
    first = _comparable(args.first)
    second = _comparable(args.second, args.request_id)
    diff = compare(first, second)
    names = [getattr(g, "request_id", None) or Path(p).stem
             for g, p in ((first, args.first), (second, args.second))]
    out = Path(args.out)
    _write(out / "diff.json", _json_text(diff.to_dict()))
    _write(out / "diff.dot", render_dot(diff, name=f"{names[0]} vs {names[1]}"))
    print(f"{len(diff.nodes)} paths: {len(diff.dashed)} first-only (dashed), "
          f"{len(diff.dotted)} second-only (dotted)")
    for p in sorted(diff.dotted):
        print(f"  second only: {p}")
    return EXIT_OK


def cmd_render(args) -> int:
    with _open(args.input) as fp:
        doc = json.load(fp)
    if "n_graphs" in doc and "root" not in doc:
        obj = merged_from_dict(doc)
        name = Path(args.input).stem
    else:
        obj = from_dict(doc)
        name = obj.request_id
    text = render_dot(obj) if hasattr(obj, "request_id") else render_dot(obj, name=name)
    target = Path(args.out) / (Path(args.input).stem + ".dot")
    _write(target, text)
    print(target)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = dataclasses.replace(_config(args), out_dir=args.out)
    if not cfg.input:
        raise ConfigError("pipeline needs --input (or 'input' in the config file)")
    result = run_pipeline(cfg)
    for m, rep in result.reports.items():
        print(f"{m:>7}: flagged {rep.n_outliers_predicted:3d}  acc {rep.accuracy:.3f}  "
              f"prec {rep.precision:.3f}  rec {rep.recall:.3f}  f1 {rep.f1:.3f}")
    print(f"{len(result.diffs)} diff graphs written under {Path(args.out) / 'rootcause'}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args)
    graphs_path = cfg.input
    with tempfile.TemporaryDirectory() as tmp:
        graphs = None
        if not graphs_path:
            graphs = generate(GeneratorConfig(n_requests=args.n, seed=cfg.seed)).graphs
        out = Path(args.out) if args.out != "." else Path(tmp)
        result = run_pipeline(dataclasses.replace(cfg, out_dir=str(out)), graphs=graphs)
    print(result.timing.table())
    if args.out != ".":
        print(f"timing report: {Path(args.out) / 'timing.json'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depscope",
        description="Latency outlier detection and root-cause diffing over DepGraphs.",
        epilog="Flags override --config values, which override defaults.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic labeled DepGraph set")
    _common(p)
    p.add_argument("--n", type=int, default=697)
    p.add_argument("--outliers", type=int, help="exact outlier count (default 15 of 697)")
    p.add_argument("--outlier-fraction", type=float)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="check DepGraph files against the schema")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--strict", action="store_true", help="reject unknown keys")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("embed", help="train graph embeddings")
    _common(p)
    _embedding_opts(p)
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("cluster", help="density clustering of embeddings")
    _common(p)
    _detection_opts(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--method", choices=("dbscan", "optics"), default="dbscan")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("detect", help="flag outliers with one method")
    _common(p)
    _detection_opts(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--graphs", help="DepGraph file (needed for duration Z-score)")
    p.add_argument("--method", choices=METHODS, required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score detections against ground truth")
    _common(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--labels", help="labels CSV (request_id,is_outlier)")
    p.add_argument("--graphs", help="derive labels from durations instead")
    p.add_argument("--ground-truth-threshold-ms", type=float, default=200.0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("merge", help="merge a cluster of graphs into one")
    _common(p)
    p.add_argument("--graphs", required=True)
    p.add_argument("--detections", help="cluster assignments CSV")
    p.add_argument("--cluster", default="largest", help="cluster id or 'largest'")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("compare", help="diff two graphs (merged or single)")
    _common(p)
    p.add_argument("--first", required=True)
    p.add_argument("--second", required=True)
    p.add_argument("--request-id", help="pick one graph out of a multi-graph second file")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("render", help="render a DepGraph or merged graph as DOT")
    _common(p)
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_render)

    for name, func, help_ in (("pipeline", cmd_pipeline, "run every stage end to end"),
                              ("bench", cmd_bench, "time every stage of the pipeline")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        _embedding_opts(p)
        _detection_opts(p)
        p.add_argument("--input", dest="input_graphs", help="DepGraph file")
        p.add_argument("--labels")
        p.add_argument("--methods", help=f"comma list from {','.join(METHODS)}")
        p.add_argument("--pairing", choices=("largest", "nearest"))
        p.add_argument("--rootcause-method", choices=("dbscan", "optics"))
        p.add_argument("--ground-truth-threshold-ms", type=float)
        if name == "bench":
            p.add_argument("--n", type=int, default=697, help="synthetic graphs when no --input")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    stage = args.command
    try:
        return args.func(args)
    except (ConfigError, GeneratorConfigError) as exc:
        print(f"depscope {stage}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, DepGraphError, MergeError, EmbeddingError, DetectionError,
            json.JSONDecodeError, UnicodeDecodeError, KeyError) as exc:
        _mark_failed(args, stage, exc)
        print(f"depscope {stage}: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - top-level guard
        _mark_failed(args, stage, exc)
        log.debug("internal error", exc_info=True)
        print(f"depscope {stage}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def _mark_failed(args, stage: str, exc: Exception) -> None:
    if stage != "pipeline":
        return
    out = Path(args.out)
    if out.is_dir():
        (out / "FAILED").write_text(f"{stage}: {type(exc).__name__}: {exc}\n", encoding="utf-8")


if __name__ == "__main__":
    sys.exit(main())
