"""Batch command line: ingest dumps, fit the joint model, recommend, evaluate.

Flag values override entries from an optional JSON ``--config`` file,
which override built-in defaults; the effective configuration is echoed
into every output for provenance.  All randomness flows from the single
``--seed`` through NumPy's default PCG64 generator, and output files are
byte-identical across runs with equal inputs.

``QA_EXPERT_THREADS`` caps the worker threads used to parse subsite
dumps concurrently.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from types import SimpleNamespace

from . import serialize
from .coupled import JointConfig, fit_joint
from .errors import SolverDiverged, VersionMismatchError
from .ingest import build_inputs, merge_datasets, parse_dump, reputation_scores, sample_dataset
from .ranking import evaluate, rank_experts

_DEFAULTS = {
    "ingest": {
        "sample_users": None, "seed": 0, "vote_buckets": "0,1,3,10",
        "tree_s": 0.5, "tree_g": 0.5,
    },
    "fit": {
        "rank": 8, "lambda_x": 0.1, "lambda_w": 0.1, "lambda_s": 0.1,
        "lambda_t": 0.1, "lambda_site": None, "max_iters": 100,
        "tol": 1e-6, "seed": 0,
    },
    "recommend": {"k": 10},
    "evaluate": {"k_list": "1,3,5,10"},
}

SNAPSHOT_FILES = {
    "tensor": "tensor.txt",
    "site": "site_matrix.txt",
    "topic": "topic_matrix.txt",
    "tree": "tree.txt",
    "reputation": "reputation.csv",
    "manifest": "manifest.json",
}


class UsageError(Exception):
    pass


def _worker_count(n_jobs: int) -> int:
    cap = os.environ.get("QA_EXPERT_THREADS")
    if cap:
        return max(1, min(n_jobs, int(cap)))
    return max(1, min(n_jobs, os.cpu_count() or 1))


def _resolve_config(command: str, args: argparse.Namespace) -> dict:
    merged = dict(_DEFAULTS[command])
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = sorted(set(loaded) - set(merged))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
        merged.update(loaded)
    for key in _DEFAULTS[command]:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        values = [int(t) for t in str(text).split(",") if t.strip() != ""]
    except ValueError:
        raise UsageError(f"{what} must be comma-separated integers, got {text!r}")
    if not values:
        raise UsageError(f"{what} must be nonempty")
    return values


def cmd_ingest(args) -> int:
    cfg = _resolve_config("ingest", args)
    edges = _parse_int_list(cfg["vote_buckets"], "--vote-buckets")
    dirs = [d.rstrip("/") for d in args.dirs]
    names = [os.path.basename(d) for d in dirs]
    if len(set(names)) != len(names):
        raise UsageError("subsite directory basenames must be unique")
    jobs = []
    for d, name in zip(dirs, names):
        files = [os.path.join(d, f) for f in ("Posts.xml", "Votes.xml", "Users.xml")]
        for f in files:
            if not os.path.exists(f):
                raise FileNotFoundError(f"missing dump file: {f}")
        jobs.append((files, name))

    with ThreadPoolExecutor(max_workers=_worker_count(len(jobs))) as pool:
        datasets = list(pool.map(lambda j: parse_dump(*j[0], subsite_name=j[1]), jobs))
    data = merge_datasets(datasets)
    if cfg["sample_users"] is not None:
        data = sample_dataset(data, int(cfg["sample_users"]), int(cfg["seed"]))

    tables = build_inputs(
        data, bucket_edges=edges, tree_s=float(cfg["tree_s"]), tree_g=float(cfg["tree_g"])
    )
    ledger = reputation_scores(data)

    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    written = []
    try:
        targets = {k: os.path.join(out, v) for k, v in SNAPSHOT_FILES.items()}
        serialize.save_tensor(tables.tensor, targets["tensor"])
        written.append(targets["tensor"])
        serialize.save_membership(tables.site_matrix, targets["site"])
        written.append(targets["site"])
        serialize.save_membership(tables.topic_matrix, targets["topic"])
        written.append(targets["topic"])
        serialize.save_tree(tables.tree, targets["tree"])
        written.append(targets["tree"])
        serialize.save_reputation(ledger, targets["reputation"])
        written.append(targets["reputation"])
        serialize.write_manifest(targets["manifest"], tables, cfg, written)
        written.append(targets["manifest"])
    except Exception:
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        raise
    print(
        f"ingested {len(names)} subsites: {tables.tensor.nnz} tensor nonzeros, "
        f"{len(tables.questions)} questions, {len(tables.topics)} topics, "
        f"{len(tables.users)} users -> {out}"
    )
    return 0


def _snapshot_paths(snapshot_dir: str) -> dict:
    paths = {k: os.path.join(snapshot_dir, v) for k, v in SNAPSHOT_FILES.items()}
    for path in paths.values():
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing snapshot file: {path}")
    return paths


def cmd_fit(args) -> int:
    cfg = _resolve_config("fit", args)
    if int(cfg["rank"]) < 1:
        raise UsageError("--rank must be >= 1")
    paths = _snapshot_paths(args.snapshot)
    X = serialize.load_tensor(paths["tensor"])
    M = serialize.load_membership(paths["site"])
    N = serialize.load_membership(paths["topic"])
    tree = serialize.load_tree(paths["tree"])

    joint_cfg = JointConfig(
        rank=int(cfg["rank"]),
        max_iters=int(cfg["max_iters"]),
        tolerance=float(cfg["tol"]),
        lambda_x=float(cfg["lambda_x"]),
        lambda_w=float(cfg["lambda_w"]),
        lambda_s=float(cfg["lambda_s"]),
        lambda_t=float(cfg["lambda_t"]),
        lambda_site=None if cfg["lambda_site"] is None else float(cfg["lambda_site"]),
        seed=int(cfg["seed"]),
    )
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    model_path = os.path.join(out, "model.txt")
    manifest_hash = serialize.file_digest(paths["manifest"])
    try:
        model = fit_joint(X, M, N, tree, joint_cfg)
    except SolverDiverged as exc:
        if exc.last_state is not None:
            serialize.save_model(
                exc.last_state, model_path + ".diverged",
                manifest_hash=manifest_hash, config=cfg,
            )
            print(f"solver diverged; last finite state saved to {model_path}.diverged",
                  file=sys.stderr)
        else:
            print("solver diverged before any finite sweep", file=sys.stderr)
        return 1
    serialize.save_model(model, model_path, manifest_hash=manifest_hash, config=cfg)
    serialize.save_history(model.objective_history, os.path.join(out, "objective_history.csv"))
    print(
        f"fit rank {joint_cfg.rank} in {len(model.objective_history)} sweeps, "
        f"final objective {model.objective_history[-1]:.6g} -> {model_path}"
    )
    return 0


def _check_model_snapshot(meta: dict, manifest_path: str):
    manifest = serialize.load_manifest(manifest_path)
    stored = meta.get("manifest")
    actual = serialize.file_digest(manifest_path)
    if stored is None or stored != actual:
        raise VersionMismatchError(
            "model was fit against a different snapshot "
            f"(model records {stored}, snapshot is {actual})"
        )
    return manifest


def _resolve_topic(manifest: dict, query: str) -> int:
    topics = manifest["topics"]
    if query in topics:
        return topics.index(query)
    suffix = [t for t in topics if t.split("/", 1)[-1] == query]
    if len(suffix) == 1:
        return topics.index(suffix[0])
    if len(suffix) > 1:
        raise UsageError(f"topic {query!r} is ambiguous: {', '.join(suffix)}")
    near = [t for t in topics if t.startswith(query) or t.split("/", 1)[-1].startswith(query)]
    hint = f"; nearest: {', '.join(near[:8])}" if near else ""
    raise UsageError(f"unknown topic {query!r}{hint}")


def cmd_recommend(args) -> int:
    cfg = _resolve_config("recommend", args)
    if int(cfg["k"]) < 1:
        raise UsageError("--k must be >= 1")
    model, meta = serialize.load_model(args.model)
    manifest = _check_model_snapshot(meta, os.path.join(args.snapshot, SNAPSHOT_FILES["manifest"]))
    topic = _resolve_topic(manifest, args.topic)
    ranked = rank_experts(model, topic, int(cfg["k"]))
    print("# config " + json.dumps({**cfg, "topic": manifest["topics"][topic]}, sort_keys=True))
    if ranked.status != "ok":
        print(f"# status {ranked.status}")
        return 0
    users = manifest["users"]
    for position, (l, score) in enumerate(ranked.entries, start=1):
        print(f"{position},{users[l]},{score:.17g}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _resolve_config("evaluate", args)
    k_list = _parse_int_list(cfg["k_list"], "--k-list")
    model, meta = serialize.load_model(args.model)
    paths = _snapshot_paths(args.snapshot)
    manifest = _check_model_snapshot(meta, paths["manifest"])
    ledger = serialize.load_reputation(paths["reputation"])
    tables = SimpleNamespace(topics=manifest["topics"], users=manifest["users"])
    report = evaluate(model, None, ledger, k_list, tables=tables)
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    report_path = os.path.join(out, "report.csv")
    serialize.save_report(report, report_path, config=cfg)
    print(f"evaluated {report.evaluated_topics} topics "
          f"({report.skipped_topics} without reputation) -> {report_path}")
    for label, k, prec, mrr, n in report.summary:
        print(f"{label} k={k}: precision {prec:.4f}, mrr {mrr:.4f} over {n} topics")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qaexpert",
        description="Find per-topic experts in multi-community Q&A dumps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse dumps into a model-input snapshot")
    p.add_argument("dirs", nargs="+", help="subsite dump directories (basename = subsite name)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sample-users", type=int, dest="sample_users")
    p.add_argument("--seed", type=int)
    p.add_argument("--vote-buckets", dest="vote_buckets",
                   help="comma-separated question-score bucket edges")
    p.add_argument("--tree-s", type=float, dest="tree_s")
    p.add_argument("--tree-g", type=float, dest="tree_g")
    p.add_argument("--config", help="JSON file with defaults for these flags")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", help="fit the joint model on a snapshot")
    p.add_argument("snapshot", help="snapshot directory from ingest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--rank", type=int)
    p.add_argument("--lambda-x", type=float, dest="lambda_x")
    p.add_argument("--lambda-w", type=float, dest="lambda_w")
    p.add_argument("--lambda-s", type=float, dest="lambda_s")
    p.add_argument("--lambda-t", type=float, dest="lambda_t")
    p.add_argument("--max-iters", type=int, dest="max_iters")
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON file with defaults for these flags")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("recommend", help="print top-k experts for a topic")
    p.add_argument("--model", required=True)
    p.add_argument("--snapshot", required=True)
    p.add_argument("--topic", required=True, help="namespaced subsite/tag or bare tag")
    p.add_argument("--k", type=int)
    p.add_argument("--config", help="JSON file with defaults for these flags")
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("evaluate", help="score rankings against the reputation ledger")
    p.add_argument("--model", required=True)
    p.add_argument("--snapshot", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--k-list", dest="k_list")
    p.add_argument("--config", help="JSON file with defaults for these flags")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
