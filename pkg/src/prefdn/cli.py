"""Command-line entry points for the full pipeline.

Every stage runs headless: single-image denoising, band inspection,
session layout, simulated studies, training, cross-evaluation, gradient
verification, curve export, and the HTTP server. Data goes to stdout or
the named output files; diagnostics go to stderr.

Exit codes: 0 success, 1 I/O or numeric failure, 2 invalid arguments or
protocol violations.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .backprop import backprop, finite_diff_gradient, forward_tape, sample_gradcheck_case
from .errors import (
    FormatError,
    InputError,
    MissingDataError,
    NumericError,
    PrefdnError,
)
from .image import read_image, write_image
from .loss import LossVariant, read_choice_log, write_choice_log
from .pyramid import PyramidParams, decompose, denoise
from .scenario import (
    DEFAULT_CENTER,
    DEFAULT_Q,
    DEFAULT_SPREAD,
    OracleUser,
    ParamSampler,
    ScenarioResolver,
    build_manifest,
    load_manifest,
    save_manifest,
    simulate_choices,
)
from .training import (
    TrainConfig,
    evaluate,
    export_curves,
    load_checkpoint,
    make_split,
    save_checkpoint,
    train,
)

IMAGE_SUFFIXES = (".png", ".pgm")
PARAM_NAMES = ("sigma1", "sigma2", "sigma3", "eps1", "eps2", "eps3")


def triple(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"expected three comma-separated values, got {text!r}"
        )
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric value in {text!r}") from None


def _list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"image directory {directory} does not exist")
    paths = sorted(
        p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not paths:
        raise InputError(f"no images found in {directory}")
    return paths


def _info(message: str) -> None:
    print(message, file=sys.stderr)


def cmd_denoise(args) -> int:
    img = read_image(args.input)
    params = PyramidParams(args.sigma, args.eps)
    write_image(args.output, denoise(img, params))
    _info(f"denoised {args.input} -> {args.output}")
    return 0


def cmd_decompose(args) -> int:
    img = read_image(args.input)
    dec = decompose(img, args.sigma)
    arrays = {f"band{n + 1}": b for n, b in enumerate(dec.bandpass)}
    arrays["residual"] = dec.residual_lowpass
    np.savez(args.output, **arrays)
    _info(f"wrote {len(arrays)} arrays to {args.output}")
    return 0


def _sampler_from_args(args) -> ParamSampler:
    return ParamSampler(
        center=PyramidParams(args.center_sigma, args.center_eps),
        spread=args.spread,
    )


def cmd_gen_session(args) -> int:
    paths = [p.resolve() for p in _list_images(args.images)]
    manifest = build_manifest(
        paths,
        args.per_image,
        _sampler_from_args(args),
        q=args.q,
        master_seed=args.seed,
        frame_prefix=args.prefix,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_manifest(manifest, out_dir / "manifest.json")
    print(out_dir / "manifest.json")
    return 0


def cmd_simulate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.manifest is not None:
        manifest = load_manifest(args.manifest)
    else:
        if args.images is None:
            raise InputError("either --images or --manifest is required")
        paths = [p.resolve() for p in _list_images(args.images)]
        manifest = build_manifest(
            paths,
            args.per_image,
            _sampler_from_args(args),
            q=args.q,
            master_seed=args.seed,
            frame_prefix=args.prefix,
        )
    save_manifest(manifest, out_dir / "manifest.json")
    oracle = OracleUser(
        hidden_params=PyramidParams(args.oracle_sigma, args.oracle_eps),
        decision_noise=args.noise,
        user_id=args.user,
    )
    resolver = ScenarioResolver(manifest)
    records = simulate_choices(
        resolver, manifest.frame_ids(), oracle, master_seed=args.seed
    )
    write_choice_log(records, out_dir / "choices.jsonl")
    _info(f"answered {len(records)} frames as {args.user!r}")
    print(out_dir / "choices.jsonl")
    return 0


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    resolver = ScenarioResolver(manifest)
    records = read_choice_log(args.choices)
    config = TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        variant=LossVariant.parse(args.variant),
        seed=args.seed,
        log_every=args.log_every,
    )
    val_records = None
    split_id = ""
    if args.kfold is not None:
        split = make_split(
            manifest.scenarios,
            k=args.kfold,
            strata=[s.image_index for s in manifest.scenarios],
            seed=args.seed,
        )
        roles = split.role_indices(args.fold)
        frame_of = [s.frame_id for s in manifest.scenarios]
        train_frames = {frame_of[i] for i in roles["train"]}
        val_frames = {frame_of[i] for i in roles["val"]}
        val_records = [r for r in records if r.frame_id in val_frames]
        records = [r for r in records if r.frame_id in train_frames]
        split_id = split.split_id(args.fold)
    user_id = args.user if args.user else (records[0].user_id if records else "")
    checkpoint = train(
        records,
        resolver,
        config,
        val_records=val_records,
        user_id=user_id,
        split_id=split_id,
        progress=lambda epoch, loss: _info(f"epoch {epoch} loss {loss:.6g}"),
    )
    save_checkpoint(checkpoint, args.out)
    print(args.out)
    return 0


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    resolver = ScenarioResolver(manifest)
    variant = LossVariant.parse(args.variant)
    model_paths = [Path(p) for p in args.models.split(",") if p]
    test_paths = [Path(p) for p in args.tests.split(",") if p]
    if not model_paths or not test_paths:
        raise InputError("need at least one model and one test log")
    test_sets = [(p.stem, read_choice_log(p)) for p in test_paths]
    lines = ["model," + ",".join(name for name, _ in test_sets)]
    for mpath in model_paths:
        checkpoint = load_checkpoint(mpath)
        cells = [
            repr(evaluate(checkpoint, recs, resolver, variant))
            for _, recs in test_sets
        ]
        lines.append(mpath.stem + "," + ",".join(cells))
    print("\n".join(lines))
    return 0


def cmd_gradcheck(args) -> int:
    img, params, target = sample_gradcheck_case(args.seed, size=args.size)
    output, tape = forward_tape(img, params)
    grad = backprop(tape, 2.0 * (output - target) / output.size).as_vector()
    oracle = finite_diff_gradient(
        img, params, lambda o: float(np.mean((o - target) ** 2)), h=1e-5
    ).as_vector()
    scale = np.maximum(np.maximum(np.abs(grad), np.abs(oracle)), 1e-8)
    rel = np.abs(grad - oracle) / scale
    for name, r in zip(PARAM_NAMES, rel):
        print(f"{name} {r:.3e}")
    print(f"max {rel.max():.3e}")
    if rel.max() >= args.tol:
        _info(f"gradient check FAILED: {rel.max():.3e} >= {args.tol}")
        return 1
    return 0


def cmd_export_curves(args) -> int:
    checkpoint = load_checkpoint(args.model)
    text = export_curves(checkpoint)
    if args.out is not None:
        Path(args.out).write_text(text, encoding="utf-8")
        print(args.out)
    else:
        sys.stdout.write(text)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    data_dir = Path(args.data)
    data_dir.mkdir(parents=True, exist_ok=True)
    app = create_app(data_dir, master_seed=args.seed)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _env_int(name: str, fallback: int) -> int:
    value = os.environ.get(name)
    return int(value) if value else fallback


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefdn",
        description="preference-trained multi-scale denoiser pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("denoise", help="run the denoiser over one image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--sigma", type=triple, default=DEFAULT_CENTER.sigmas)
    p.add_argument("--eps", type=triple, default=DEFAULT_CENTER.epsilons)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("decompose", help="write the band decomposition as .npz")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--sigma", type=triple, default=DEFAULT_CENTER.sigmas)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("gen-session", help="lay out a session manifest over images")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-image", type=int, default=4)
    p.add_argument("--q", type=int, default=DEFAULT_Q)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", default="frame")
    p.add_argument("--spread", type=float, default=DEFAULT_SPREAD)
    p.add_argument("--center-sigma", type=triple, default=DEFAULT_CENTER.sigmas)
    p.add_argument("--center-eps", type=triple, default=DEFAULT_CENTER.epsilons)
    p.set_defaults(func=cmd_gen_session)

    p = sub.add_parser("simulate", help="answer a whole session with a scripted user")
    p.add_argument("--images")
    p.add_argument("--manifest", help="reuse an existing manifest instead of --images")
    p.add_argument("--out", required=True)
    p.add_argument("--per-image", type=int, default=4)
    p.add_argument("--q", type=int, default=DEFAULT_Q)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", default="frame")
    p.add_argument("--spread", type=float, default=DEFAULT_SPREAD)
    p.add_argument("--center-sigma", type=triple, default=DEFAULT_CENTER.sigmas)
    p.add_argument("--center-eps", type=triple, default=DEFAULT_CENTER.epsilons)
    p.add_argument("--oracle-sigma", type=triple, default=DEFAULT_CENTER.sigmas)
    p.add_argument("--oracle-eps", type=triple, default=DEFAULT_CENTER.epsilons)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--user", default="sim")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit parameters to a choice log")
    p.add_argument("--manifest", required=True)
    p.add_argument("--choices", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default="hybrid")
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--lr", type=float, default=TrainConfig.lr)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=100)
    p.add_argument("--kfold", type=int, help="stratified fold count for a train/val split")
    p.add_argument("--fold", type=int, default=0, help="which fold is held out")
    p.add_argument("--user", default="")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="cross-score models against choice logs (CSV)")
    p.add_argument("--models", required=True, help="comma-separated checkpoint paths")
    p.add_argument("--tests", required=True, help="comma-separated choice logs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--variant", default="hybrid")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare backprop against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=12)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-curves", help="dump a checkpoint's training history CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_curves)

    p = sub.add_parser("serve", help="run the study HTTP server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=_env_int("PREFDN_PORT", 8000))
    p.add_argument("--data", default=os.environ.get("PREFDN_DATA", "prefdn-data"))
    p.add_argument("--seed", type=int, default=_env_int("PREFDN_SEED", 0))
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, NumericError, MissingDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PrefdnError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
