"""Unified command-line entry point.

Subcommands: cluster, segment, coseg, diffuse, fuse, dcds, metrics,
fixtures.  A key=value config file can preset any flag; explicit
command-line flags win.  Reports are JSON with sorted keys; --figures
renders matplotlib plots next to the delimited output.  Exit codes:
0 ok, 2 invalid input, 3 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from cdskit import (
    dcds,
    diffusion,
    fixtures,
    fusion,
    metrics as metrics_mod,
    report,
    segmentation,
    solver,
)
from cdskit.core_graph import (
    InputError,
    build_self_tuning_affinity,
    read_matrix,
    require_affinity,
    write_matrix_binary,
    write_matrix_text,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_CONVERGENCE = 3


class ConvergenceFailure(RuntimeError):
    pass


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def write_report(payload, out):
    text = json.dumps(payload, sort_keys=True, indent=2, default=_json_default)
    if out in (None, "-"):
        print(text)
    else:
        with open(out, "w") as fh:
            fh.write(text + "\n")


def read_labels(path):
    with open(path) as fh:
        return np.array([line.strip() for line in fh if line.strip()])


def parse_id_list(text):
    if not text:
        return []
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise InputError(f"bad id list {text!r}") from exc


def load_config(path):
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected key=value")
            key, _, val = line.partition("=")
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _convert_config(values, parser):
    """Coerce config-file strings with each flag's declared type."""
    types = {}
    for action in parser._actions:
        if action.dest and action.dest != "help":
            types[action.dest] = action.type
    out = {}
    for key, raw in values.items():
        if key not in types:
            continue
        typ = types[key]
        out[key] = typ(raw) if typ is not None else raw
    return out


def solver_params_from(args):
    return solver.SolverParams(
        alpha=args.alpha,
        margin=args.margin,
        max_iters=args.max_iters,
        tol=args.tol,
        multi_start=args.multi_start,
        seed=args.seed,
    )


def add_solver_flags(p):
    p.add_argument("--alpha", type=float, default=None,
                   help="regularization strength (default: spectral bound)")
    p.add_argument("--margin", type=float, default=1e-4)
    p.add_argument("--max-iters", type=int, default=10000)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--multi-start", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)


def _require_converged(results):
    bad = [r for r in results if not r.converged]
    if bad:
        raise ConvergenceFailure(
            f"{len(bad)} solve(s) did not reach stationarity")


def _cluster_payload(res):
    return {
        "support": sorted(int(i) for i in res.support),
        "membership": res.x,
        "payoff": res.payoff,
        "kkt_residual": res.kkt_residual,
        "iterations": res.iterations,
        "converged": res.converged,
    }


def cmd_cluster(args):
    A = require_affinity(read_matrix(args.affinity))
    constraints = parse_id_list(args.constraints)
    params = solver_params_from(args)
    if constraints and args.mode in (None, "peel"):
        peel = solver.peel_off_extract(A, constraints, params)
        results = peel.clusters
    elif args.mode == "enumerate" or (not constraints and args.starts > 0):
        results = solver.enumerate_solutions(A, constraints, params,
                                             starts=args.starts)
        results.sort(key=lambda r: -r.payoff)
    else:
        results = [solver.extract_cds(A, constraints, params)]
    _require_converged(results)
    payload = {
        "constraints": constraints,
        "clusters": [_cluster_payload(r) for r in results],
    }
    write_report(payload, args.out)
    if args.figures:
        for i, r in enumerate(results):
            report.render_membership(r.x, r.support, args.figures,
                                     f"membership_{i}.png")
            if r.payoff_trace is not None and len(r.payoff_trace) > 1:
                report.render_payoff_trace(r.payoff_trace, args.figures,
                                           f"payoff_trace_{i}.png")
        report.render_affinity(A, args.figures)
    return EXIT_OK


def cmd_segment(args):
    feats = read_matrix(args.features)
    adjacency = None
    if args.adjacency:
        adjacency = read_matrix(args.adjacency).astype(bool)
    pixel_counts = None
    if args.pixel_counts:
        pixel_counts = read_matrix(args.pixel_counts).ravel()
    gt = None
    if args.gt:
        gt = read_matrix(args.gt).ravel().astype(bool)
    instance = segmentation.SegmentationInstance(
        features=feats, adjacency=adjacency,
        pixel_counts=pixel_counts, ground_truth=gt)
    with open(args.annotation) as fh:
        ann_raw = json.load(fh)
    annotation = segmentation.Annotation(
        mode=ann_raw["mode"],
        ids=[int(i) for i in ann_raw["ids"]],
        labels={int(k): v for k, v in ann_raw.get("labels", {}).items()})
    params = solver_params_from(args)
    mask = segmentation.segment(instance, annotation, params)
    payload = {"mode": annotation.mode, "mask": sorted(mask)}
    if gt is not None:
        gt_ids = set(np.nonzero(gt)[0].tolist())
        payload["metrics"] = segmentation.segmentation_metrics(
            mask, gt_ids, pixel_counts,
            region=range(instance.size))
    write_report(payload, args.out)
    if args.figures:
        report.render_mask(mask, instance.size, args.figures)
    return EXIT_OK


def _load_coseg_instance(path):
    with open(path) as fh:
        raw = json.load(fh)
    return segmentation.CosegInstance(
        colors=np.asarray(raw["colors"], dtype=float),
        sift=np.asarray(raw["sift"], dtype=float),
        hog=np.asarray(raw["hog"], dtype=float),
        adjacency=np.asarray(raw["adjacency"], dtype=bool),
        objectness=np.asarray(raw["objectness"], dtype=float))


def cmd_coseg(args):
    instances = [_load_coseg_instance(p) for p in args.instance]
    params = solver_params_from(args)
    if args.scribbles:
        with open(args.scribbles) as fh:
            raw = json.load(fh)
        scribbles = {int(k): (list(map(int, v.get("fg", []))),
                              list(map(int, v.get("bg", []))))
                     for k, v in raw.items()}
        masks = segmentation.coseg_interactive(instances, scribbles, params)
    else:
        if len(instances) != 2:
            raise InputError("unsupervised co-segmentation needs two instances")
        masks = list(segmentation.coseg_unsupervised(instances, params))
    payload = {"masks": [sorted(m) for m in masks]}
    write_report(payload, args.out)
    if args.figures:
        for i, (m, inst) in enumerate(zip(masks, instances)):
            report.render_mask(m, inst.size, args.figures, f"mask_{i}.png")
    return EXIT_OK


def cmd_diffuse(args):
    A = require_affinity(read_matrix(args.affinity))
    config = diffusion.DiffusionConfig(
        iterations=args.iterations,
        init_scheme=args.init,
        transition_scheme=args.transition,
        knn=args.knn,
        teleport=args.teleport,
        solver_params=solver_params_from(args))
    V = diffusion.run_diffusion(A, config)
    payload = {
        "init": args.init,
        "transition": args.transition,
        "iterations": args.iterations,
        "rankings": [diffusion.rank(V, q)[0] for q in range(V.shape[0])],
    }
    if args.labels:
        labels = read_labels(args.labels)
        R = args.bulls_eye_r or max(
            int(np.sum(labels == lab)) for lab in np.unique(labels))
        payload["bulls_eye_R"] = R
        payload["mean_bulls_eye"] = diffusion.mean_bulls_eye(V, labels, R)
        payload["mean_bulls_eye_raw"] = diffusion.mean_bulls_eye(A, labels, R)
    write_report(payload, args.out)
    if args.matrix_out:
        write_matrix_binary(args.matrix_out, V)
    if args.figures:
        report.render_affinity(A, args.figures, "affinity_raw.png", "raw affinity")
        report.render_affinity(V, args.figures, "affinity_diffused.png",
                               "diffused affinity")
    return EXIT_OK


def cmd_fuse(args):
    channels, names = [], []
    for spec_arg in args.channel:
        name, _, path = spec_arg.partition("=")
        if not path:
            raise InputError("--channel expects NAME=FILE")
        names.append(name)
        channels.append(require_affinity(read_matrix(path)))
    if not channels:
        raise InputError("at least one --channel is required")
    config = fusion.FusionConfig(
        npc=args.npc, lambda_scale=args.lambda_scale,
        penalty=args.penalty, solver_params=solver_params_from(args))
    n = channels[0].shape[0]
    if args.all_queries:
        queries = list(range(n))
    elif args.query is not None:
        queries = [args.query]
    else:
        raise InputError("pass --query ID or --all-queries")
    results = [fusion.retrieve(q, channels, config, names) for q in queries]
    payload = {
        "queries": [
            {
                "query": r.query,
                "ranking": r.order,
                "scores": r.scores,
                "piw": {nm: w for nm, w in zip(names, r.piw)},
            }
            for r in results
        ],
    }
    if args.labels:
        labels = read_labels(args.labels)
        ranked = [r.order for r in results]
        wanted = set((args.metrics or "map,ns").split(","))
        scores = {}
        if "map" in wanted:
            scores["map"] = metrics_mod.mean_average_precision(
                ranked, labels, queries)
        if "ns" in wanted:
            scores["ns"] = metrics_mod.ns_score(ranked, labels, queries)
        payload["metrics"] = scores
    write_report(payload, args.out)
    if args.figures and results:
        report.render_ranking(results[0].scores, args.figures)
    return EXIT_OK


def _load_batch(path):
    with open(path) as fh:
        raw = json.load(fh)
    return dcds.MiniBatch(features=np.asarray(raw["features"], dtype=float),
                          labels=np.asarray(raw["labels"]))


def cmd_dcds(args):
    if args.batch:
        batch = _load_batch(args.batch)
    else:
        batch = dcds.planted_batch(seed=args.seed)
    k = min(7, batch.size - 1)
    A = build_self_tuning_affinity(batch.features, k=k)
    params = dcds.FusionParams(beta=args.beta, delta=args.delta,
                               unroll=args.unroll)
    Y = dcds.batch_cds(A, batch, params)
    target = dcds.target_matrix(batch.labels)
    rng = np.random.default_rng(args.seed)
    s_scores = rng.uniform(size=Y.shape)
    d_scores = rng.uniform(size=Y.shape)
    f_s, f_d = dcds.fuse(Y, s_scores, d_scores, params)
    same = target.astype(bool)
    payload = {
        "batch_size": batch.size,
        "unroll": args.unroll,
        "within_identity_mass": float(Y[same].mean()),
        "cross_identity_mass": float(Y[~same].mean()) if (~same).any() else 0.0,
        "loss": dcds.cross_entropy_loss(f_s, f_d, target),
    }
    if args.gradcheck:
        gc = dcds.grad_check(fixtures.random_affinity(5, seed=args.seed),
                             probe=0, steps=min(args.unroll, 20) or 10)
        payload["grad_check_max_rel_error"] = gc
    if args.expand is not None:
        ranking, scores = dcds.constraint_expansion(
            A, probe=0, k_nn=args.expand, params=solver_params_from(args))
        payload["expanded_ranking"] = ranking
    write_report(payload, args.out)
    if args.figures:
        report.render_affinity(Y, args.figures, "membership.png",
                               "membership matrix Y")
        report.render_affinity(target, args.figures, "target.png",
                               "target matrix")
    return EXIT_OK


def cmd_metrics(args):
    with open(args.ranked) as fh:
        ranked = json.load(fh)
    labels = read_labels(args.labels)
    wanted = set((args.which or "map,ns,cmc").split(","))
    queries = parse_id_list(args.queries) if args.queries else None
    payload = {}
    if "map" in wanted:
        payload["map"] = metrics_mod.mean_average_precision(ranked, labels,
                                                            queries)
    if "ns" in wanted:
        payload["ns"] = metrics_mod.ns_score(ranked, labels, queries)
    if "cmc" in wanted:
        payload["cmc"] = metrics_mod.cmc(ranked, labels, queries=queries)
    write_report(payload, args.out)
    if args.figures and "cmc" in payload:
        report.render_cmc(payload["cmc"], args.figures)
    return EXIT_OK


def cmd_fixtures(args):
    if args.name == "g8":
        A = fixtures.g8_affinity()
        labels = None
    elif args.name == "blobs":
        A, labels = fixtures.planted_blob_affinity(seed=args.seed)
    elif args.name == "channels":
        A, B, labels = fixtures.planted_channels(seed=args.seed)
        write_matrix_text(args.out + ".channelB", B)
    else:
        raise InputError(f"unknown fixture {args.name}")
    if args.binary:
        write_matrix_binary(args.out, A)
    else:
        write_matrix_text(args.out, A)
    if labels is not None:
        with open(args.out + ".labels", "w") as fh:
            for lab in labels:
                fh.write(f"{lab}\n")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cdskit",
        description="Dominant-set and constrained-dominant-set clustering "
                    "toolkit")
    parser.add_argument("--config", default=None,
                        help="key=value file; explicit flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default=None, help="JSON report path (default stdout)")
        p.add_argument("--figures", default=None,
                       help="directory for rendered figures")
        add_solver_flags(p)

    p = sub.add_parser("cluster", help="extract (constrained) dominant sets")
    p.add_argument("--affinity", required=True)
    p.add_argument("--constraints", default="",
                   help="comma-separated 0-based seed ids")
    p.add_argument("--mode", choices=["single", "peel", "enumerate"],
                   default=None)
    p.add_argument("--starts", type=int, default=16,
                   help="multi-start count for enumeration")
    common(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("segment", help="seeded superpixel segmentation")
    p.add_argument("--features", required=True)
    p.add_argument("--adjacency", default=None)
    p.add_argument("--annotation", required=True,
                   help="JSON: {mode, ids, labels}")
    p.add_argument("--pixel-counts", default=None)
    p.add_argument("--gt", default=None)
    common(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("coseg", help="two-image co-segmentation")
    p.add_argument("--instance", action="append", required=True)
    p.add_argument("--scribbles", default=None,
                   help="JSON {image_index: {fg: [...], bg: [...]}}")
    common(p)
    p.set_defaults(func=cmd_coseg)

    p = sub.add_parser("diffuse", help="similarity diffusion re-ranking")
    p.add_argument("--affinity", required=True)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--init", choices=list(diffusion.INIT_SCHEMES),
                   default="A1")
    p.add_argument("--transition", choices=list(diffusion.TRANSITION_SCHEMES),
                   default="B6")
    p.add_argument("--knn", type=int, default=5)
    p.add_argument("--teleport", type=float, default=0.85)
    p.add_argument("--labels", default=None)
    p.add_argument("--bulls-eye-r", type=int, default=None)
    p.add_argument("--matrix-out", default=None,
                   help="write the diffused matrix (binary)")
    common(p)
    p.set_defaults(func=cmd_diffuse)

    p = sub.add_parser("fuse", help="multi-channel similarity fusion")
    p.add_argument("--channel", action="append", default=[],
                   help="NAME=FILE, repeatable")
    p.add_argument("--query", type=int, default=None)
    p.add_argument("--all-queries", action="store_true")
    p.add_argument("--npc", type=float, default=0.9)
    p.add_argument("--lambda-scale", type=float, default=1.0)
    p.add_argument("--penalty", type=float, default=0.7,
                   help="weight of the geometric-mean term")
    p.add_argument("--labels", default=None)
    p.add_argument("--metrics", default="map,ns")
    common(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("dcds", help="differentiable clustering block")
    p.add_argument("--batch", default=None,
                   help="JSON {features, labels}; default planted batch")
    p.add_argument("--unroll", type=int, default=20)
    p.add_argument("--beta", type=float, default=0.9)
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--gradcheck", action="store_true")
    p.add_argument("--expand", type=int, default=None,
                   help="constraint-expansion k-NN size")
    common(p)
    p.set_defaults(func=cmd_dcds)

    p = sub.add_parser("metrics", help="retrieval metrics from ranked lists")
    p.add_argument("--ranked", required=True, help="JSON list of rankings")
    p.add_argument("--labels", required=True)
    p.add_argument("--which", default="map,ns,cmc")
    p.add_argument("--queries", default=None)
    common(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("fixtures", help="emit bundled fixture datasets")
    p.add_argument("--name", choices=["g8", "blobs", "channels"],
                   required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--binary", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fixtures)

    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    # pre-scan for --config so its values become overridable defaults
    config_path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            config_path = argv[i + 1]
        elif tok.startswith("--config="):
            config_path = tok.split("=", 1)[1]
    try:
        if config_path:
            values = load_config(config_path)
            for sp in parser._subparsers._group_actions[0].choices.values():
                sp.set_defaults(**_convert_config(values, sp))
        args = parser.parse_args(argv)
        return args.func(args)
    except (InputError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConvergenceFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except solver.SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
