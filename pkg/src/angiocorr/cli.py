"""Command-line entry points: gen-data, train, eval, trace, serve.

Global flags: --seed, --config (JSON file with per-subcommand defaults),
--verbose. Exit codes: 0 success, 2 validation failure, 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from . import harness, phantom, tracing
from .corrmodel import ModelConfig, TrainConfig, load_model, train
from .corrmodel.infer import Predictor
from .errors import (
    AngiocorrError,
    CorruptFile,
    DatasetNotFound,
    DegenerateInput,
    DomainError,
    InvalidConfig,
    ManifestMissing,
    MissingModel,
    SchemaVersionMismatch,
    SeedOutOfBounds,
    VersionMismatch,
)
from .pgm import write_pgm

log = logging.getLogger("angiocorr")

_VALIDATION_ERRORS = (
    InvalidConfig,
    DatasetNotFound,
    ManifestMissing,
    SchemaVersionMismatch,
    SeedOutOfBounds,
    DomainError,
    DegenerateInput,
    VersionMismatch,
    CorruptFile,
    MissingModel,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="angiocorr")
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    parser.add_argument("--config", type=str, default=None, help="JSON defaults file")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=1)
    p.add_argument("--image-px", type=int, default=512)
    p.add_argument("--density", type=float, default=1.0)
    p.add_argument("--split", type=str, default=None, help="train,val,test counts")

    p = sub.add_parser("train", help="train a correspondence model")
    p.add_argument("--data", required=True)
    p.add_argument("--task", choices=["p2p", "c2c"], default="p2p")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--waypoint-n", type=int, default=10)
    p.add_argument("--preset", choices=["toy", "full"], default="toy")
    p.add_argument("--input-size", type=int, default=None)
    p.add_argument("--lr-encoder", type=float, default=None)
    p.add_argument("--lr-main", type=float, default=None)
    p.add_argument("--n-queries", type=int, default=100)

    p = sub.add_parser("eval", help="evaluate checkpoints into error tables")
    p.add_argument("--data", required=True)
    p.add_argument("--p2p", required=True)
    p.add_argument("--c2c", default=None)
    p.add_argument("--c2c-alt", default=None, help="second waypoint-size checkpoint")
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    p.add_argument("--max-queries", type=int, default=64)
    p.add_argument("--pairs-limit", type=int, default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--curves", action="store_true", help="also emit the waypoint table")

    p = sub.add_parser("trace", help="one- and two-view centerline tracing")
    p.add_argument("--data", required=True)
    p.add_argument("--ref", required=True, help="reference view id, e.g. s000_lca_v00")
    p.add_argument("--tgt", required=True, help="second view id for fusion")
    p.add_argument("--branch", type=int, default=0)
    p.add_argument("--seed-a", type=int, default=None, help="arc index of the first seed")
    p.add_argument("--seed-b", type=int, default=None, help="arc index of the second seed")
    p.add_argument("--corr", choices=["gt", "p2p"], default="gt")
    p.add_argument("--p2p", default=None, help="P2P checkpoint for --corr p2p")
    p.add_argument("--weight", type=float, default=1.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--data", required=True)
    p.add_argument("--p2p", default=None)
    p.add_argument("--c2c", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--static", default=None, help="directory with the built UI")
    return parser


def _apply_config_defaults(parser, argv):
    if "--config" not in argv:
        return
    path = argv[argv.index("--config") + 1]
    defaults = json.loads(Path(path).read_text())
    for action in parser._subparsers._group_actions[0].choices.items():
        name, subparser = action
        if name in defaults:
            subparser.set_defaults(
                **{k.replace("-", "_"): v for k, v in defaults[name].items()}
            )


def cmd_gen_data(args) -> int:
    split = None
    if args.split:
        split = tuple(int(x) for x in args.split.split(","))
    cfg = phantom.DatasetConfig(
        out_dir=args.out,
        n_subjects=args.subjects,
        seed=args.seed,
        image_px=args.image_px,
        density=args.density,
        split_counts=split,
    )
    out = phantom.make_dataset(cfg)
    print(f"wrote {args.subjects} subject(s) x 126 views to {out}")
    return 0


def _model_config(args, ds) -> ModelConfig:
    if args.preset == "full":
        return ModelConfig.full(args.task, waypoint_n=args.waypoint_n)
    input_size = args.input_size or min(ds.image_px, 128)
    return ModelConfig(task=args.task, input_size=input_size, waypoint_n=args.waypoint_n)


def cmd_train(args) -> int:
    ds = ds_mod.load_dataset(args.data)
    ds.validate_sample(seed=args.seed)
    tc = TrainConfig.toy(steps=args.steps, seed=args.seed)
    overrides = {}
    if args.lr_encoder is not None:
        overrides["lr_encoder"] = args.lr_encoder
    if args.lr_main is not None:
        overrides["lr_main"] = args.lr_main
    if args.n_queries:
        overrides["n_queries"] = args.n_queries
    if overrides:
        from dataclasses import replace

        tc = replace(tc, **overrides)
    model_cfg = _model_config(args, ds)
    _, logrows = train(ds, model_cfg, tc, out_dir=args.out)
    print(
        f"trained {args.task} for {args.steps} steps; "
        f"final loss {logrows[-1]['loss']:.4f}; artifacts in {args.out}"
    )
    return 0


def cmd_eval(args) -> int:
    ds = ds_mod.load_dataset(args.data)
    pairs = ds_mod.make_eval_pairs(ds, seed=args.seed, split=args.split)
    if args.pairs_limit:
        pairs = pairs[: args.pairs_limit]
    p2p = load_model(args.p2p, expect_task="p2p")
    predictor = Predictor(p2p=p2p)
    point_method = harness.make_p2p_method(predictor)
    refined_method = None
    curve_methods = {}
    if args.c2c:
        c2c = load_model(args.c2c, expect_task="c2c")
        predictor.c2c = c2c
        refined_method = harness.make_c2cr_method(predictor)
        curve_methods[c2c.config.waypoint_n] = harness.make_curve_method(predictor)
    if args.c2c_alt:
        alt = load_model(args.c2c_alt, expect_task="c2c")
        alt_predictor = Predictor(p2p=p2p, c2c=alt)
        curve_methods[alt.config.waypoint_n] = harness.make_curve_method(alt_predictor)

    tables = [
        harness.evaluate_points(
            ds, pairs, point_method, refined_method, max_queries=args.max_queries,
            seed=args.seed,
        )
    ]
    if args.curves and curve_methods:
        tables.append(
            harness.evaluate_curves(
                ds, pairs, point_method, curve_methods, seed=args.seed
            )
        )
    text = harness.emit_report(tables, path=args.out, fmt=args.format)
    if args.out:
        print(f"report written to {args.out}")
    else:
        print(text)
    return 0


def cmd_trace(args) -> int:
    ds = ds_mod.load_dataset(args.data)
    rs, rside, rv = ds_mod.parse_view_id(args.ref)
    ts, tside, tv = ds_mod.parse_view_id(args.tgt)
    if (rs, rside) != (ts, tside):
        raise InvalidConfig("trace views must show the same tree")
    labels1 = ds.load_labels(rs, rside, rv)
    poly1 = labels1.polylines[args.branch]
    ia = args.seed_a if args.seed_a is not None else 0
    ib = args.seed_b if args.seed_b is not None else len(poly1) - 1
    seed_a = tuple(np.rint(poly1[ia]).astype(int))
    seed_b = tuple(np.rint(poly1[ib]).astype(int))

    img1 = ds.load_image(rs, rside, rv)
    img2 = ds.load_image(ts, tside, tv)
    cost1 = tracing.build_cost(tracing.frangi_vesselness(img1))
    cost2 = tracing.build_cost(tracing.frangi_vesselness(img2))

    single = tracing.dijkstra_trace(cost1, seed_a, seed_b)
    if args.corr == "gt":
        # branch-conditioned ray lift needs the 3D polyline: not stored in
        # the dataset, so transfer exact label correspondences instead
        poly2 = ds.load_labels(ts, tside, tv).polylines[args.branch]

        def corr(pixels):
            d = np.linalg.norm(
                pixels[:, None, :] - poly1[None, :, :], axis=2
            )
            return poly2[np.argmin(d, axis=1)]

    else:
        if not args.p2p:
            raise MissingModel("--corr p2p needs --p2p CKPT")
        model = load_model(args.p2p, expect_task="p2p")
        size = model.config.input_size
        mem = model.encode_pair(
            ds_mod.pool_image(img1, size), ds_mod.pool_image(img2, size)
        )
        px = float(ds.image_px)

        def corr(pixels):
            out = model.p2p_forward(mem, np.clip(pixels / px, 0.0, 1.0)).data
            return out * px

    fused = tracing.fused_trace(cost1, cost2, corr, seed_a, seed_b, weight=args.weight)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    record = {
        "ref": args.ref,
        "tgt": args.tgt,
        "branch": args.branch,
        "seeds": [list(map(int, seed_a)), list(map(int, seed_b))],
        "single": {
            "path": single.path.tolist(),
            "total_cost": single.total_cost,
        },
        "fused": {
            "path": fused.path.tolist(),
            "total_cost": fused.total_cost,
            "weight": args.weight,
            "per_step_view1": fused.per_step[:, 0].tolist(),
            "per_step_view2": fused.per_step[:, 1].tolist(),
        },
    }
    (out / "trace.json").write_text(json.dumps(record, indent=1))

    overlay1 = img1.copy()
    for x, y in fused.path:
        overlay1[y, x] = 1.0
    write_pgm(out / "overlay_ref.pgm", overlay1)
    overlay2 = img2.copy()
    mapped = corr(fused.path.astype(float))
    for x, y in np.rint(mapped).astype(int):
        if 0 <= y < overlay2.shape[0] and 0 <= x < overlay2.shape[1]:
            overlay2[y, x] = 1.0
    write_pgm(out / "overlay_tgt.pgm", overlay2)
    try:
        from .plots import trace_overlay_figure

        trace_overlay_figure(
            img1,
            {"single view": single.path, "fused": fused.path},
            out / "trace_overlay.png",
        )
    except Exception:
        pass
    print(
        f"single cost {single.total_cost:.3f}, fused cost {fused.total_cost:.3f}; "
        f"outputs in {out}"
    )
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        data_dir=args.data,
        p2p_ckpt=args.p2p,
        c2c_ckpt=args.c2c,
        static_dir=args.static,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "trace": cmd_trace,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_defaults(parser, argv)
    except (OSError, json.JSONDecodeError, IndexError) as exc:
        print(f"error: bad --config file: {exc}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return _COMMANDS[args.command](args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AngiocorrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
