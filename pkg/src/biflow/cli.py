"""``biflow`` command-line interface.

Every run writes ``manifest.json`` into its output directory with the full
argument list, the seed, SHA-256 hashes of input files and library versions.
``biflow replay --manifest PATH`` reruns a recorded command; CSV outputs are
bit-identical across reruns.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import datasets, diagnostics, gaussian, nonlinear
from .bidirectional import BidirectionalMap
from .exceptions import BiflowError, DataError
from .sampling import Rng, histogram, ks_statistic, write_histogram_csv, write_matrix_csv
from .training import TrainConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


class UsageError(Exception):
    pass


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("biflow", "numpy", "scipy", "scikit-learn"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _write_manifest(out: Path, args, argv, inputs=()) -> None:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    _write_json(
        out / "manifest.json",
        {
            "command": argv,
            "config": config,
            "seed": config.get("seed"),
            "inputs": {str(p): _sha256(p) for p in inputs},
            "versions": _versions(),
        },
    )


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc


# gaussian-sweep ------------------------------------------------------------


def cmd_gaussian_sweep(args, argv):
    if args.steps < 1:
        raise UsageError("--steps must be at least 1")
    if not 0 < args.sigma_min <= args.sigma_max:
        raise UsageError("need 0 < --sigma-min <= --sigma-max")
    out = _out_dir(args.out)
    sigmas = np.logspace(np.log10(args.sigma_min), np.log10(args.sigma_max), args.steps)
    table = gaussian.condition_sweep(gaussian.benchmark_problem(), sigmas)
    gaussian.write_sweep_csv(out / "sweep.csv", table)
    _write_manifest(out, args, argv)


# nonlinear -----------------------------------------------------------------


def _load_bimap(path) -> BidirectionalMap:
    d = _load_json(path)
    try:
        return BidirectionalMap.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: not a bidirectional map ({exc})") from exc


def _sign_params(bimap):
    f_check = bimap.f_check
    if isinstance(f_check, nonlinear.SignTargetMap):
        return f_check.a, f_check.b
    return None


def cmd_nonlinear_train(args, argv):
    if not (args.a > 0 and args.b > 0):
        raise UsageError("--a and --b must be positive")
    if args.samples < 2 or args.order < 1 or args.epochs < 0:
        raise UsageError("need --samples >= 2, --order >= 1, --epochs >= 0")
    out = _out_dir(args.out)
    data = nonlinear.sample_target(args.a, args.b, args.samples, seed=args.seed)
    cfg = TrainConfig(
        learning_rate=args.learning_rate, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed
    )
    pullback, report = nonlinear.fit_upper_map(data, args.order, cfg)
    bimap = nonlinear.assemble(args.a, args.b, pullback)
    _write_json(out / "model.json", bimap.to_dict())
    report.save_loss_csv(out / "loss.csv")
    _write_json(out / "train_report.json", {k: v for k, v in report.to_dict().items() if k != "loss_trace"})
    _write_manifest(out, args, argv)


def _parse_condition(text):
    name, sep, value = text.partition("=")
    if not sep or name not in ("u", "f"):
        raise UsageError("--condition must look like u=VALUE or f=VALUE")
    try:
        return name, float(value)
    except ValueError:
        raise UsageError(f"--condition value {value!r} is not a number") from None


def cmd_nonlinear_sample(args, argv):
    name, value = _parse_condition(args.condition)
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    out = _out_dir(args.out)
    bimap = _load_bimap(args.model)
    if name == "u":
        batch = bimap.simulate([value], args.n, seed=args.seed)
    else:
        batch = bimap.infer([value], args.n, seed=args.seed)
    write_matrix_csv(out / "samples.csv", batch.values, ["f" if name == "u" else "u"])
    counts, edges = histogram(batch.values.ravel(), 48, nonlinear.ORACLE_RANGE)
    write_histogram_csv(out / "histogram.csv", counts, edges)
    _write_manifest(out, args, argv, [args.model])


def cmd_nonlinear_evaluate(args, argv):
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    out = _out_dir(args.out)
    bimap = _load_bimap(args.model)
    report = {}
    params = _sign_params(bimap)
    if params is not None:
        a, b = params
        f_samples = bimap.simulate([0.5], args.n, seed=args.seed).values.ravel()
        u_samples = bimap.infer([1.0], args.n, seed=args.seed).values.ravel()
        report["ks_likelihood_u0.5"] = ks_statistic(f_samples, nonlinear.likelihood_cdf(0.5, b))
        report["tv_posterior_f1"] = nonlinear.posterior_tv(u_samples, 1.0, a, b)
        data = nonlinear.sample_target(a, b, 2 * args.mmd_samples, seed=Rng(args.seed, 0xE7A1))
        losses = diagnostics.j_losses(bimap, data, args.mmd_samples, seed=args.seed, permutations=args.permutations)
        for i, est in enumerate(losses, start=1):
            report[f"mmd_J{i}"] = est.to_dict()
    grid = nonlinear.condition_grid(bimap)
    write_matrix_csv(out / "condition_grid.csv", grid, nonlinear.CONDITION_HEADER)
    medians = np.median(grid[:, 2:], axis=0)
    report["median_kappa"] = dict(zip(("lower", "upper", "s"), medians.tolist()))
    _write_json(out / "diagnostics.json", report)
    _write_manifest(out, args, argv, [args.model])


# inpaint -------------------------------------------------------------------


def _load_images(path, factor):
    batch = datasets.load_idx(path)
    if not isinstance(batch, datasets.ImageBatch):
        raise DataError(f"{path}: holds labels, not images")
    return datasets.downscale(batch, factor) if factor > 1 else batch


def cmd_inpaint_fit(args, argv):
    if args.ridge < 0 or args.noise < 0 or args.n_train < 2 or args.downscale < 1:
        raise UsageError("need --ridge >= 0, --noise >= 0, --n-train >= 2, --downscale >= 1")
    out = _out_dir(args.out)
    images = _load_images(args.images, args.downscale)
    if images.count < args.n_train:
        raise DataError(f"{args.images} holds {images.count} images, --n-train asks for {args.n_train}")
    op = datasets.MaskOperator.from_name(args.mask, images.height, images.width)
    train = images.flatten()[: args.n_train]
    pairs = datasets.build_pairs(train, op, args.noise, Rng(args.seed, 0x1F))
    model = datasets.fit_empirical_gaussian(pairs, args.ridge)
    datasets.affine_bidirectional(model)  # fail here, not at sampling time
    _write_json(
        out / "model.json",
        {
            "kind": "inpaint_affine",
            "height": images.height,
            "width": images.width,
            "downscale": args.downscale,
            "noise": args.noise,
            "mask": op.to_dict(),
            "gaussian": model.to_dict(),
            "train_mean_image": train.mean(axis=0).tolist(),
        },
    )
    _write_manifest(out, args, argv, [args.images])


def _load_inpaint(path):
    d = _load_json(path)
    if d.get("kind") != "inpaint_affine":
        raise DataError(f"{path}: not an inpainting model")
    model = datasets.EmpiricalGaussian.from_dict(d["gaussian"])
    return d, datasets.MaskOperator.from_dict(d["mask"]), datasets.affine_bidirectional(model)


def _held_out_image(args, d):
    images = _load_images(args.images, d["downscale"])
    if (images.height, images.width) != (d["height"], d["width"]):
        raise DataError("image size does not match the fitted model")
    if not 0 <= args.index < images.count:
        raise UsageError(f"--index must lie in [0, {images.count})")
    return images.flatten()[args.index]


def cmd_inpaint_simulate(args, argv):
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    out = _out_dir(args.out)
    d, op, bimap = _load_inpaint(args.model)
    u = _held_out_image(args, d)
    f = bimap.simulate(u, args.n, seed=args.seed).values
    write_matrix_csv(out / "measurements.csv", f, [f"obs_{j}" for j in range(op.n_observed)])
    h, w = d["height"], d["width"]
    datasets.write_pgm(out / "truth.pgm", u, h, w)
    datasets.write_pgm(out / "measurement.pgm", datasets.embed(op, f[0]), h, w)
    _write_manifest(out, args, argv, [args.model, args.images])


def cmd_inpaint_infer(args, argv):
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    out = _out_dir(args.out)
    d, op, bimap = _load_inpaint(args.model)
    u = _held_out_image(args, d)
    f = datasets.apply_mask(op, u) + d["noise"] * Rng(args.seed, 0x0B5).normal(op.n_observed)
    post = bimap.infer(f, args.n, seed=args.seed).values
    mean, std = post.mean(axis=0), post.std(axis=0, ddof=1)
    write_matrix_csv(out / "measurement.csv", f[None], [f"obs_{j}" for j in range(op.n_observed)])
    write_matrix_csv(out / "posterior_samples.csv", post, [f"pixel_{i}" for i in range(post.shape[1])])
    stats = np.column_stack([np.arange(post.shape[1]), mean, std, u])
    write_matrix_csv(out / "posterior_stats.csv", stats, ["pixel", "mean", "std", "truth"])
    h, w = d["height"], d["width"]
    datasets.write_pgm(out / "truth.pgm", u, h, w)
    datasets.write_pgm(out / "measurement.pgm", datasets.embed(op, f), h, w)
    datasets.write_pgm(out / "posterior_mean.pgm", mean, h, w)
    datasets.write_pgm(out / "posterior_std.pgm", std / max(std.max(), 1e-12), h, w)
    for i, sample in enumerate(post[: min(args.n, 16)]):
        datasets.write_pgm(out / f"sample_{i:02d}.pgm", sample, h, w)
    _write_manifest(out, args, argv, [args.model, args.images])


# selftest / replay ---------------------------------------------------------


def cmd_selftest(args, argv):
    from .selftest import run_selftest

    results = run_selftest(fast=args.fast, seed=args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else EXIT_OK


def cmd_replay(args, argv):
    manifest = _load_json(args.manifest)
    command = list(manifest.get("command") or [])
    if not command or command[0] == "replay":
        raise DataError(f"{args.manifest}: no replayable command recorded")
    if args.out is not None:
        if "--out" not in command:
            raise DataError("recorded command has no --out to redirect")
        command[command.index("--out") + 1] = args.out
    return main(command)


# parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biflow", description="Bidirectional transport maps for inverse problems.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gaussian-sweep", help="condition numbers of F and S against the noise level")
    p.add_argument("--sigma-min", type=float, default=1e-6)
    p.add_argument("--sigma-max", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gaussian_sweep)

    nl = sub.add_parser("nonlinear", help="sign-likelihood example").add_subparsers(dest="action", required=True)
    p = nl.add_parser("train")
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--b", type=float, default=0.5)
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=1e-2)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_nonlinear_train)

    p = nl.add_parser("sample")
    p.add_argument("--model", required=True)
    p.add_argument("--condition", required=True, help="u=VALUE (simulate) or f=VALUE (infer)")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_nonlinear_sample)

    p = nl.add_parser("evaluate")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--mmd-samples", type=int, default=1000)
    p.add_argument("--permutations", type=int, default=diagnostics.DEFAULT_PERMUTATIONS)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_nonlinear_evaluate)

    ip = sub.add_parser("inpaint", help="MNIST inpainting with an affine map").add_subparsers(
        dest="action", required=True
    )
    p = ip.add_parser("fit")
    p.add_argument("--images", required=True)
    p.add_argument("--ridge", type=float, default=1e-3)
    p.add_argument("--mask", choices=["bottom-half"], default="bottom-half")
    p.add_argument("--downscale", type=int, default=2)
    p.add_argument("--n-train", type=int, default=5000)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_inpaint_fit)
    for name, func in (("simulate", cmd_inpaint_simulate), ("infer", cmd_inpaint_infer)):
        p = ip.add_parser(name)
        p.add_argument("--model", required=True)
        p.add_argument("--images", required=True)
        p.add_argument("--index", type=int, required=True)
        p.add_argument("--n", type=int, default=16)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)

    p = sub.add_parser("selftest", help="run the invariant suite")
    p.add_argument("--fast", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        code = args.func(args, argv)
    except UsageError as exc:
        print(f"biflow: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BiflowError as exc:
        print(f"biflow: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"biflow: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
