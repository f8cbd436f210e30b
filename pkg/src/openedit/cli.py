"""Command-line entrypoint.

Exit codes: 0 success, 1 usage error, 2 runtime failure. With --json a single
machine-readable result object goes to stdout; progress and logs go to stderr.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .edgemap import extract_edges
from .grounding import EditInstruction
from .sampleopt import OptConfig
from .synthdata import DatasetConfig, generate_dataset
from .util import load_png, save_png, seed_all
from .pipeline import EditPipeline, RunConfig, evaluate, train_decoder, train_vse, write_report


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_home() -> str:
    return os.environ.get("OPEN_EDIT_HOME", "runs")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def build_parser() -> Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all stochastic steps")
    common.add_argument("--json", action="store_true", help="machine-readable result on stdout")
    common.add_argument("--config", default=None, help="JSON file with flag defaults")

    parser = Parser(prog="openedit", description="text-guided image editing on the shapes corpus")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.sub_map = {}
    _add_parser = sub.add_parser

    def add_parser(name, **kwargs):
        p = _add_parser(name, **kwargs)  # instances of Parser, so errors raise
        parser.sub_map[name] = p
        return p

    sub.add_parser = add_parser

    p = sub.add_parser("gen-data", parents=[common], help="generate the shapes corpus")
    p.add_argument("--out", required=True, help="corpus root directory")
    p.add_argument("--train", type=int, default=1024)
    p.add_argument("--val", type=int, default=128)
    p.add_argument("--test", type=int, default=128)
    p.add_argument("--canvas", type=int, default=64)
    p.add_argument("--two-shape-prob", type=float, default=0.5)

    p = sub.add_parser("train-vse", parents=[common], help="train the joint embedding")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None, help="run directory (default $OPEN_EDIT_HOME/vse)")
    p.add_argument("--steps", type=int, default=12000)
    p.add_argument("--batch-size", type=int, default=48)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--grid", type=int, default=8)
    p.add_argument("--margin", type=float, default=0.2)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--eval-every", type=int, default=100)
    p.add_argument("--init-from", default="", help="warm-start from an existing checkpoint")

    p = sub.add_parser("train-decoder", parents=[common], help="train the image decoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vse", default=None, help="VSE checkpoint (default $OPEN_EDIT_HOME/vse/ckpt-best.bin)")
    p.add_argument("--out", default=None, help="run directory (default $OPEN_EDIT_HOME/decoder)")
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--no-edges", action="store_true", help="ablate edge conditioning")
    p.add_argument("--lr-g", type=float, default=1e-4)
    p.add_argument("--lr-d", type=float, default=4e-4)
    p.add_argument("--lambda-vgg", type=float, default=10.0)
    p.add_argument("--lambda-fm", type=float, default=10.0)
    p.add_argument("--eval-every", type=int, default=200)

    p = sub.add_parser("edit", parents=[common], help="apply one edit instruction to an image")
    p.add_argument("--image", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--change", nargs=2, metavar=("SRC", "TGT"))
    group.add_argument("--remove", metavar="SRC")
    group.add_argument("--relative", metavar="SRC")
    p.add_argument("--sign", type=int, choices=(1, -1), default=1)
    p.add_argument("--alpha", type=float, default=1.0)
    opt = p.add_mutually_exclusive_group()
    opt.add_argument("--opt", dest="use_opt", action="store_true", default=False)
    opt.add_argument("--no-opt", dest="use_opt", action="store_false")
    p.add_argument("--opt-steps", type=int, default=100)
    p.add_argument("--vse", default=None)
    p.add_argument("--decoder", default=None)
    p.add_argument("--out", default="edited.png")
    p.add_argument("--recon-out", default=None)
    p.add_argument("--trace-out", default=None, help="write the optimization loss trace as JSONL")

    p = sub.add_parser("sweep-alpha", parents=[common], help="decode one frame per alpha value")
    p.add_argument("--image", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--change", nargs=2, metavar=("SRC", "TGT"))
    group.add_argument("--remove", metavar="SRC")
    group.add_argument("--relative", metavar="SRC")
    p.add_argument("--sign", type=int, choices=(1, -1), default=1)
    p.add_argument("--grid", default="0,0.2,0.4,0.6,0.8,1.0", help="comma-separated alpha values")
    opt = p.add_mutually_exclusive_group()
    opt.add_argument("--opt", dest="use_opt", action="store_true", default=False)
    opt.add_argument("--no-opt", dest="use_opt", action="store_false")
    p.add_argument("--opt-steps", type=int, default=100)
    p.add_argument("--vse", default=None)
    p.add_argument("--decoder", default=None)
    p.add_argument("--out", default="sweep", help="output directory for frames")

    p = sub.add_parser("edges", parents=[common], help="write the edge map of an image")
    p.add_argument("input")
    p.add_argument("output")

    p = sub.add_parser("eval", parents=[common], help="reconstruction ablations + edit-success metrics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="val", choices=("train", "val", "test"))
    p.add_argument("--cells", default="no-edge,edge,edge-opt")
    p.add_argument("--vse", default=None)
    p.add_argument("--decoder", default=None, help="edge-conditioned decoder checkpoint")
    p.add_argument("--decoder-noedge", default=None)
    p.add_argument("--limit", type=int, default=64)
    p.add_argument("--edit-cases", type=int, default=60)
    p.add_argument("--edit-alpha", type=float, default=1.0)
    p.add_argument("--opt-steps", type=int, default=100)
    p.add_argument("--out", default="eval-report")

    p = sub.add_parser("serve", parents=[common], help="run the HTTP edit service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--checkpoint-dir", default=None, help="directory holding vse/ and decoder/ runs")
    p.add_argument("--ui", action="store_true", help="also serve the built web UI")

    return parser


def _apply_config_file(parser: Parser, argv):
    """--config FILE provides defaults (keys are flag dests) for this parse."""
    if argv and "--config" in argv:
        idx = argv.index("--config")
        if idx + 1 < len(argv):
            path = argv[idx + 1]
            try:
                defaults = json.loads(Path(path).read_text())
            except FileNotFoundError:
                raise UsageError(f"--config file not found: {path}")
            except json.JSONDecodeError as e:
                raise UsageError(f"--config file is not valid JSON: {e}")
            if not isinstance(defaults, dict):
                raise UsageError("--config file must hold a JSON object")
            parser.set_defaults(**defaults)
            for sp in parser.sub_map.values():
                sp.set_defaults(**defaults)


def _checkpoints(args):
    home = Path(_default_home())
    vse = args.vse or home / "vse" / "ckpt-best.bin"
    decoder = args.decoder or home / "decoder" / "ckpt-best.bin"
    for path, flag in ((vse, "--vse"), (decoder, "--decoder")):
        if not Path(path).exists():
            raise FileNotFoundError(f"checkpoint not found: {path} (set {flag} or OPEN_EDIT_HOME)")
    return str(vse), str(decoder)


def _instruction(args) -> EditInstruction:
    if args.change:
        return EditInstruction("change", args.change[0], args.change[1], alpha=getattr(args, "alpha", 1.0))
    if args.remove:
        return EditInstruction("remove", args.remove, alpha=getattr(args, "alpha", 1.0))
    return EditInstruction("relative", args.relative, sign=args.sign, alpha=getattr(args, "alpha", 1.0))


def _cmd_gen_data(args) -> dict:
    config = DatasetConfig(
        root=args.out,
        counts={"train": args.train, "val": args.val, "test": args.test},
        canvas_size=args.canvas,
        base_seed=args.seed,
        two_shape_prob=args.two_shape_prob,
    )
    written = generate_dataset(config)
    _log(f"wrote corpus to {args.out}: {written}")
    return {"root": args.out, "counts": written}


def _cmd_train_vse(args) -> dict:
    run_dir = args.out or str(Path(_default_home()) / "vse")
    config = RunConfig(
        corpus_root=args.corpus,
        stage="vse",
        run_dir=run_dir,
        steps=args.steps,
        batch_size=args.batch_size,
        seed=args.seed,
        eval_every=args.eval_every,
        dim=args.dim,
        grid=args.grid,
        margin=args.margin,
        lr=args.lr,
        init_from=args.init_from,
    )
    ckpt = train_vse(config)
    _log(f"best checkpoint: {ckpt}")
    return {"checkpoint": str(ckpt), "run_dir": run_dir}


def _cmd_train_decoder(args) -> dict:
    home = Path(_default_home())
    vse = args.vse or home / "vse" / "ckpt-best.bin"
    run_dir = args.out or str(home / ("decoder-noedge" if args.no_edges else "decoder"))
    config = RunConfig(
        corpus_root=args.corpus,
        stage="decoder",
        run_dir=run_dir,
        steps=args.steps,
        batch_size=args.batch_size,
        seed=args.seed,
        eval_every=args.eval_every,
        vse_checkpoint=str(vse),
        use_edges=not args.no_edges,
        lr_g=args.lr_g,
        lr_d=args.lr_d,
        lambda_vgg=args.lambda_vgg,
        lambda_fm=args.lambda_fm,
    )
    ckpt = train_decoder(config)
    _log(f"best checkpoint: {ckpt}")
    return {"checkpoint": str(ckpt), "run_dir": run_dir}


def _cmd_edit(args) -> dict:
    vse_path, decoder_path = _checkpoints(args)
    pipeline = EditPipeline.from_checkpoints(vse_path, decoder_path)
    image = load_png(args.image)
    instr = _instruction(args)
    result = pipeline.edit(
        image, instr, use_opt=args.use_opt, opt_config=OptConfig(steps=args.opt_steps), seed=args.seed
    )
    save_png(result.image_out, args.out)
    if args.recon_out:
        save_png(result.reconstruction, args.recon_out)
    if args.trace_out and result.loss_trace is not None:
        with open(args.trace_out, "w") as f:
            for i, v in enumerate(result.loss_trace):
                f.write(json.dumps({"step": i, "total": v}) + "\n")
    for w in result.warnings:
        _log(f"warning: {w}")
    _log(f"wrote {args.out}")
    return {
        "out": args.out,
        "warnings": result.warnings,
        "grounding": result.grounding.tolist(),
        "loss_trace": result.loss_trace,
        "diverged": result.diverged,
    }


def _cmd_sweep_alpha(args) -> dict:
    vse_path, decoder_path = _checkpoints(args)
    pipeline = EditPipeline.from_checkpoints(vse_path, decoder_path)
    image = load_png(args.image)
    try:
        grid = [float(x) for x in str(args.grid).split(",") if x.strip() != ""]
    except ValueError:
        raise UsageError(f"--grid must be comma-separated numbers, got {args.grid!r}")
    if not grid:
        raise UsageError("--grid is empty")
    instr = _instruction(args)
    frames, _ = pipeline.sweep_alpha(
        image, instr, grid, use_opt=args.use_opt, opt_config=OptConfig(steps=args.opt_steps), seed=args.seed
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for frame in frames:
        path = out_dir / f"alpha-{frame.alpha:.2f}.png"
        save_png(frame.image, path)
        paths.append(str(path))
    _log(f"wrote {len(paths)} frames to {out_dir}")
    return {"frames": paths, "alphas": [f.alpha for f in frames]}


def _cmd_edges(args) -> dict:
    image = load_png(args.input)
    edge = extract_edges(image)
    save_png(np.repeat(edge.values[:, :, None], 3, axis=2), args.output)
    _log(f"wrote {args.output}")
    return {"out": args.output}


def _cmd_eval(args) -> dict:
    home = Path(_default_home())
    vse = args.vse or home / "vse" / "ckpt-best.bin"
    decoder = args.decoder or home / "decoder" / "ckpt-best.bin"
    decoder_noedge = args.decoder_noedge or home / "decoder-noedge" / "ckpt-best.bin"
    wanted = [c.strip() for c in args.cells.split(",") if c.strip()]
    unknown = [c for c in wanted if c not in ("no-edge", "edge", "edge-opt")]
    if unknown:
        raise UsageError(f"unknown eval cells: {unknown}")

    edge_pipeline = None
    if Path(vse).exists() and Path(decoder).exists():
        edge_pipeline = EditPipeline.from_checkpoints(vse, decoder)
    noedge_pipeline = None
    if Path(vse).exists() and Path(decoder_noedge).exists():
        noedge_pipeline = EditPipeline.from_checkpoints(vse, decoder_noedge)

    cells = {}
    for name in wanted:
        if name == "no-edge":
            cells[name] = (noedge_pipeline, False) if noedge_pipeline else None
        elif name == "edge":
            cells[name] = (edge_pipeline, False) if edge_pipeline else None
        elif name == "edge-opt":
            cells[name] = (edge_pipeline, True) if edge_pipeline else None
    report = evaluate(
        args.corpus,
        args.split,
        cells,
        limit=args.limit,
        edit_cases_limit=args.edit_cases,
        edit_alpha=args.edit_alpha,
        opt_config=OptConfig(steps=args.opt_steps),
        seed=args.seed,
    )
    write_report(report, args.out)
    _log(f"report written to {args.out}")
    return {"out": args.out, "aggregates": report.aggregates, "absent_cells": report.absent_cells}


def _cmd_serve(args) -> dict:
    import uvicorn

    from .service import create_app

    home = Path(args.checkpoint_dir or _default_home())
    app = create_app(
        vse_path=home / "vse" / "ckpt-best.bin",
        decoder_path=home / "decoder" / "ckpt-best.bin",
        corpus_root=os.environ.get("OPEN_EDIT_CORPUS"),
        serve_ui=args.ui,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return {"port": args.port}


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-vse": _cmd_train_vse,
    "train-decoder": _cmd_train_decoder,
    "edit": _cmd_edit,
    "sweep-alpha": _cmd_sweep_alpha,
    "edges": _cmd_edges,
    "eval": _cmd_eval,
    "serve": _cmd_serve,
}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        seed_all(args.seed)
        result = _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - runtime failures map to exit code 2
        print(f"error: {e}", file=sys.stderr)
        return 2
    if args.json:
        print(json.dumps(result, sort_keys=True))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
