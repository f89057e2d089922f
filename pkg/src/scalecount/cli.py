"""Command-line front end.

    scalecount synth      --out DIR --count N --profile P ...
    scalecount gt         --manifest F --mode fixed|adaptive --sigma S --beta B --k K --out DIR
    scalecount train      --config F [--loss integrated|averaged] [--mixer stochastic|fixed:V|off]
                          [--no-dense] [--G N] ... --out DIR
    scalecount eval       --checkpoint F --manifest F [--split test] --out DIR
    scalecount sweep      --checkpoint F --manifest F --ratios 1.0,0.81,... --out DIR
    scalecount cross-eval --checkpoint F --manifest F --out DIR
    scalecount gradcheck  [--seed S]
    scalecount mixer-test [--G N] [--draws M]
    scalecount export-pgm --in F.dmap --out F.pgm

Exit status: 0 success, 1 validation error (bad flags, missing or invalid
inputs), 2 runtime failure (non-finite loss, I/O failure mid-run).  Every
run writes a ``run.json`` echo of its fully resolved configuration into the
output directory, so a run is reproducible from that file alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .blocks import MixerDraw, mixer_expansion_coeffs
from .config import (
    network_config_from_dict,
    network_config_to_dict,
    train_config_from_dict,
    train_config_to_dict,
)
from .evaluation import (
    DEFAULT_AREA_RATIOS,
    cross_eval,
    evaluate,
    report_to_csv,
    scale_sweep,
    sweep_to_csv,
)
from .gradcheck import run_battery
from .groundtruth import density_adaptive, density_fixed, density_to_pgm, load_density, save_density
from .network import CheckpointError, build_network, load_params_into
from .synth import SceneParams, generate_corpus, load_corpus, save_corpus
from .training import TrainingAborted, train

__all__ = ["dispatch", "main"]


class CLIError(Exception):
    """Validation problem; maps to exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with status 2
        self.print_usage(sys.stderr)
        raise CLIError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="scalecount", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="synthesize an annotated toy corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=60, help="number of scenes")
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--profile", choices=("uniform", "top-heavy", "clustered"), default="uniform")
    p.add_argument("--min-heads", type=int, default=4)
    p.add_argument("--max-heads", type=int, default=30)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--val-frac", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gt", help="generate density maps for a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("fixed", "adaptive"), default="fixed")
    p.add_argument("--sigma", type=float, default=15.0)
    p.add_argument("--beta", type=float, default=0.3)
    p.add_argument("--k", type=int, default=3)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", default=None, help="output directory (default runs/train)")
    p.add_argument("--manifest", default=None)
    p.add_argument("--loss", choices=("integrated", "averaged"), default=None)
    p.add_argument("--mixer", default=None, help="stochastic | fixed:V | off")
    p.add_argument("--no-dense", action="store_true")
    p.add_argument("--G", type=int, default=None, help="pyramid group count")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--patch", type=int, default=None)

    for name in ("eval", "cross-eval"):
        p = sub.add_parser(name, help=f"{name} a checkpoint on a corpus")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--manifest", required=True)
        p.add_argument("--split", default="test")
        p.add_argument("--network-config", default=None, help="network.json (default: beside checkpoint)")
        p.add_argument("--out", default=None)

    p = sub.add_parser("sweep", help="evaluate across downsampled resolutions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--ratios", default=",".join(str(r) for r in DEFAULT_AREA_RATIOS))
    p.add_argument("--network-config", default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("gradcheck", help="finite-difference battery over all ops")
    p.add_argument("--seed", type=int, default=7)

    p = sub.add_parser("mixer-test", help="mixer algebra self-test")
    p.add_argument("--G", type=int, default=6)
    p.add_argument("--draws", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("export-pgm", help="render a .dmap density file as PGM")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    return parser


def _write_run_json(out_dir: Path, command: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run.json", "w", encoding="utf-8") as fh:
        json.dump({"command": command, "resolved": resolved}, fh, indent=1, default=str)


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"{what} not found: {path}")
    return p


def _cmd_synth(args) -> int:
    params = SceneParams(
        width=args.width,
        height=args.height,
        count_range=(args.min_heads, args.max_heads),
        profile=args.profile,
        noise_level=args.noise,
    )
    out = Path(args.out)
    _write_run_json(
        out,
        "synth",
        {
            "scenes": args.count,
            "params": vars(args),
        },
    )
    corpus = generate_corpus(
        args.count, params, seed=args.seed, split_fracs=(args.train_frac, args.val_frac)
    )
    manifest = save_corpus(corpus, out)
    print(f"wrote {len(corpus.items)} scenes; manifest: {manifest}")
    return 0


def _cmd_gt(args) -> int:
    manifest = _require_file(args.manifest, "manifest")
    corpus = load_corpus(manifest)
    out = Path(args.out)
    _write_run_json(out, "gt", vars(args))
    written = 0
    for item in corpus.items:
        if item.annotation is None:
            print(f"warning: {item.image_id} has no annotation, skipped", file=sys.stderr)
            continue
        if args.mode == "fixed":
            grid = density_fixed(item.annotation, args.sigma)
        else:
            grid = density_adaptive(item.annotation, beta=args.beta, k=args.k)
        save_density(out / f"{item.image_id}.dmap", grid)
        written += 1
    print(f"wrote {written} density maps to {out}")
    return 0


def _parse_mixer(text: str) -> tuple[str, float]:
    if text == "stochastic":
        return "stochastic", 1.0
    if text == "off":
        return "disabled", 1.0
    if text.startswith("fixed:"):
        try:
            return "fixed", float(text.split(":", 1)[1])
        except ValueError as exc:
            raise CLIError(f"bad --mixer value {text!r}: {exc}") from exc
    if text == "fixed":
        return "fixed", 1.0
    raise CLIError(f"--mixer must be stochastic, fixed:V, or off; got {text!r}")


def _cmd_train(args) -> int:
    config_path = _require_file(args.config, "config file")
    try:
        with open(config_path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CLIError(f"config file {config_path} is not valid JSON: {exc}") from exc

    try:
        train_cfg = train_config_from_dict(raw.get("train", {}))
        net_cfg = network_config_from_dict(raw.get("network", {}))
    except (TypeError, ValueError) as exc:
        raise CLIError(f"invalid config: {exc}") from exc

    manifest = args.manifest or raw.get("manifest")
    if manifest is None:
        raise CLIError("no manifest given (config 'manifest' key or --manifest)")
    manifest = _require_file(manifest, "manifest")

    overrides = {}
    if args.loss is not None:
        overrides["loss_mode"] = args.loss
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.lr is not None:
        overrides["lr"] = args.lr
    if args.batch is not None:
        overrides["batch_size"] = args.batch
    if args.patch is not None:
        overrides["patch_size"] = args.patch
    if overrides:
        train_cfg = replace(train_cfg, **overrides)

    block = net_cfg.block
    if args.mixer is not None:
        mode, alpha = _parse_mixer(args.mixer)
        block = replace(block, mixer_mode=mode, fixed_alpha=alpha)
    if args.G is not None:
        block = replace(block, groups=args.G)
    net_cfg = replace(net_cfg, block=block, dense=net_cfg.dense and not args.no_dense)

    out = Path(args.out) if args.out else Path("runs/train")
    resolved = {
        "manifest": str(manifest),
        "train": train_config_to_dict(train_cfg),
        "network": network_config_to_dict(net_cfg),
    }
    _write_run_json(out, "train", resolved)
    with open(out / "network.json", "w", encoding="utf-8") as fh:
        json.dump(network_config_to_dict(net_cfg), fh, indent=1)

    corpus = load_corpus(manifest)
    result = train(train_cfg, net_cfg, corpus, out_dir=out)
    final_rows = [r for r in result.metrics if r.val_mae is not None]
    if final_rows:
        print(f"final val MAE {final_rows[-1].val_mae:.4f} (iteration {final_rows[-1].iteration})")
    print(f"checkpoint: {result.final_checkpoint}")
    return 0


def _load_model_for(args):
    ckpt = _require_file(args.checkpoint, "checkpoint")
    if args.network_config:
        net_json = _require_file(args.network_config, "network config")
    else:
        candidates = [ckpt.parent / "network.json", ckpt.parent.parent / "network.json"]
        found = [c for c in candidates if c.is_file()]
        if not found:
            raise CLIError(
                f"no network.json found beside {ckpt}; pass --network-config explicitly"
            )
        net_json = found[0]
    with open(net_json, "r", encoding="utf-8") as fh:
        net_cfg = network_config_from_dict(json.load(fh))
    model = build_network(net_cfg)
    try:
        load_params_into(model, ckpt)
    except CheckpointError as exc:
        raise CLIError(str(exc)) from exc
    return model


def _split_items(args):
    corpus = load_corpus(_require_file(args.manifest, "manifest"))
    items = corpus.split(args.split)
    if not items:
        raise CLIError(f"split {args.split!r} of {args.manifest} is empty")
    return items


def _cmd_eval(args, cross: bool) -> int:
    model = _load_model_for(args)
    items = _split_items(args)
    out = Path(args.out) if args.out else Path("runs/cross-eval" if cross else "runs/eval")
    _write_run_json(out, "cross-eval" if cross else "eval", vars(args))
    if cross:
        report = cross_eval(model, items, corpus_id=str(args.manifest))
    else:
        report = evaluate(model, items, config={"checkpoint": str(args.checkpoint)})
    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    with open(out / "report.csv", "w", encoding="utf-8") as fh:
        fh.write(report_to_csv(report))
    print(f"MAE={report.mae!r} MSE={report.mse!r} ({len(report.records)} images)")
    return 0


def _cmd_sweep(args) -> int:
    model = _load_model_for(args)
    items = _split_items(args)
    try:
        ratios = [float(tok) for tok in args.ratios.split(",") if tok.strip()]
    except ValueError as exc:
        raise CLIError(f"bad --ratios list: {exc}") from exc
    if not ratios or any(not 0.0 < r <= 1.0 for r in ratios):
        raise CLIError(f"--ratios must be area fractions in (0, 1], got {args.ratios!r}")
    out = Path(args.out) if args.out else Path("runs/sweep")
    _write_run_json(out, "sweep", vars(args))
    reports = scale_sweep(model, items, area_ratios=ratios)
    for rep in reports:
        for warning in rep.warnings:
            print(f"warning: {warning}", file=sys.stderr)
    with open(out / "sweep.csv", "w", encoding="utf-8") as fh:
        fh.write(sweep_to_csv(reports))
    for rep in reports:
        print(f"area_ratio={rep.config['area_ratio']:<5} MAE={rep.mae!r} MSE={rep.mse!r}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_battery(seed=args.seed)
    all_ok = True
    for res in results:
        status = "ok" if res.passed else "FAIL"
        print(f"{res.name:<36} max_rel_err={res.error:.3e}  (tol {res.tolerance:g})  {status}")
        all_ok &= res.passed
    return 0 if all_ok else 2


def _cmd_mixer_test(args) -> int:
    if args.G < 2:
        raise CLIError(f"--G must be >= 2, got {args.G}")
    rng = np.random.default_rng(args.seed)
    n_alphas = max(args.G - 2, 0)
    worst_sum = 0.0
    worst_neg = 0.0
    for _ in range(args.draws):
        coeffs = mixer_expansion_coeffs(MixerDraw(rng.uniform(size=n_alphas)), args.G)
        worst_sum = max(worst_sum, float(np.abs(coeffs.sum(axis=1) - 1.0).max()))
        worst_neg = max(worst_neg, float(-coeffs.min()))
    mid = mixer_expansion_coeffs(MixerDraw(np.full(n_alphas, 0.5)), args.G)
    print(f"groups={args.G} draws={args.draws}")
    print(f"max |row_sum - 1| = {worst_sum:.3e}")
    print(f"max negative coefficient = {worst_neg:.3e}")
    print("alpha=0.5 final row:", np.array2string(mid[-1], precision=6))
    ok = worst_sum < 1e-12 and worst_neg <= 0.0
    return 0 if ok else 2


def _cmd_export_pgm(args) -> int:
    infile = _require_file(args.infile, "density map")
    grid = load_density(infile)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    density_to_pgm(out, grid)
    _write_run_json(out.parent, "export-pgm", {"in": str(infile), "out": str(out)})
    print(f"wrote {out}")
    return 0


def dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "gt":
            return _cmd_gt(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args, cross=False)
        if args.command == "cross-eval":
            return _cmd_eval(args, cross=True)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        if args.command == "mixer-test":
            return _cmd_mixer_test(args)
        if args.command == "export-pgm":
            return _cmd_export_pgm(args)
        raise CLIError(f"unknown command {args.command!r}")
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingAborted as exc:
        print(f"runtime failure: {exc} (last checkpoint: {exc.last_checkpoint})", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
