"""Command-line entry points.

Subcommands: simulate, pairgen, train, denoise, eval, gradcheck.
Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 gradient-check threshold failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import datasets, network, tensorio
from .config import ConfigError, load_config
from .metrics import MetricReport, paired_t_test
from .pairs import empirical_noise_correlation, make_training_pair, split_channels
from .train import TrainConfig, denoise, denoise_image, train

GRADCHECK_TOL = 1e-4


def _build_parser():
    parser = argparse.ArgumentParser(prog="c2c", description="Self-supervised phased-array denoising")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=Path, required=True, help="output directory")
        if config:
            p.add_argument("--config", type=Path, default=None, help="run config file")

    p = sub.add_parser("simulate", help="emit phantom, sensitivities, covariance, noisy stack")
    add_common(p)
    p.add_argument("--sigma", type=float, default=None, help="override noise level")

    p = sub.add_parser("pairgen", help="emit a training pair plus whitening diagnostics")
    add_common(p)
    p.add_argument("--no-whiten", action="store_true")
    p.add_argument("--realizations", type=int, default=2000, help="Monte-Carlo size for the diagnostic")

    p = sub.add_parser("train", help="train a denoiser on a simulated dataset")
    add_common(p)

    p = sub.add_parser("denoise", help="denoise a stack or a pre-combined image")
    add_common(p, config=False)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--stack", type=Path, default=None)
    p.add_argument("--sens", type=Path, default=None)
    p.add_argument("--image", type=Path, default=None, help="pre-combined magnitude image")
    p.add_argument("--mask", type=Path, default=None)

    p = sub.add_parser("eval", help="pSNR/SSIM report and paired t-test")
    add_common(p, config=False)
    p.add_argument("--ref", type=Path, required=True)
    p.add_argument("--mask", type=Path, required=True)
    p.add_argument("--images", type=str, required=True, help="comma-separated test image tensors")
    p.add_argument("--images-b", type=str, default=None, help="second image set for the paired t-test")

    p = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])


def _cmd_simulate(args):
    cfg = load_config(args.config)
    rng = np.random.default_rng(args.seed)
    data = datasets.simulate_slice(cfg, rng, sigma=args.sigma)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    tensorio.write_tensor(out / "phantom.c2t", data.phantom)
    tensorio.write_tensor(out / "sens.c2t", data.sens)
    tensorio.write_tensor(out / "psi.c2t", data.psi)
    tensorio.write_tensor(out / "mask.c2t", data.mask)
    tensorio.write_tensor(out / "stack.c2t", data.stack)
    tensorio.write_tensor(out / "clean_stack.c2t", data.sens * data.phantom[None])
    tensorio.write_tensor(out / "clean.c2t", data.clean)
    print(f"simulate: wrote {data.stack.shape[0]}-channel {data.stack.shape[1]}x{data.stack.shape[2]} acquisition to {out}")
    return 0


def _cmd_pairgen(args):
    cfg = load_config(args.config)
    rng = np.random.default_rng(args.seed)
    data = datasets.simulate_slice(cfg, rng)
    split = split_channels(data.stack.shape[0], rng)
    whiten = not args.no_whiten
    pair = make_training_pair(data.stack, data.sens, data.psi, split, data.mask, whiten=whiten)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    tensorio.write_tensor(out / "input.c2t", pair.image_in)
    tensorio.write_tensor(out / "label.c2t", pair.image_label)
    tensorio.write_tensor(out / "sens_in.c2t", pair.sens_in)
    tensorio.write_tensor(out / "sens_label.c2t", pair.sens_label)
    tensorio.write_tensor(out / "mask.c2t", pair.mask)

    corr_on = empirical_noise_correlation(
        data.phantom, data.sens, data.psi, split, data.mask, args.realizations,
        np.random.default_rng(args.seed + 1), whiten=True,
    )
    corr_off = empirical_noise_correlation(
        data.phantom, data.sens, data.psi, split, data.mask, args.realizations,
        np.random.default_rng(args.seed + 1), whiten=False,
    )
    _write_csv(
        out / "diagnostics.csv",
        ["metric", "value"],
        [
            ("noise_correlation_whitened", corr_on),
            ("noise_correlation_raw", corr_off),
            ("fallback_voxels", pair.n_fallback),
            ("coverage_j", pair.coverage_j),
            ("coverage_k", pair.coverage_k),
        ],
    )
    print(f"pairgen: correlation whitened={corr_on:.4f} raw={corr_off:.4f}")
    return 0


def _cmd_train(args):
    cfg = load_config(args.config)
    t = cfg["training"]
    n = cfg["network"]
    net_config = network.NetworkConfig(
        depth=n["depth"],
        features=n["features"],
        kernel_size=n["kernel_size"],
        leaky_slope=n["leaky_slope"],
        bn_momentum=n["bn_momentum"],
        bn_eps=n["bn_eps"],
    )
    train_config = TrainConfig(
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        base_lr=t["base_lr"],
        lr_decay=t["lr_decay"],
        mode=t["mode"],
        whiten=t["whiten"],
        normalize=t["normalize"],
        seed=args.seed,
        validate_every=t["validate_every"],
    )
    slices = datasets.simulate_dataset(cfg, t["slices"], args.seed, with_second=t["mode"] == "N2N")
    val = datasets.simulate_dataset(cfg, t["val_slices"], args.seed + 10_000) if t["val_slices"] else None
    params, log, _ = train(slices, net_config, train_config, val_slices=val)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    tensorio.save_checkpoint(out / "checkpoint.c2k", params)
    _write_csv(out / "trainlog.csv", ["epoch", "loss", "lr", "val_psnr"], log.rows())
    # wall times are inherently nondeterministic, so they live outside the CSV
    with open(out / "timing.txt", "w") as f:
        for e, wt in enumerate(log.wall_times):
            f.write(f"epoch {e}: {wt:.3f} s\n")
    print(f"train: {train_config.mode}, final loss {log.losses[-1]:.6g}, checkpoint in {out}")
    return 0


def _cmd_denoise(args):
    params = tensorio.load_checkpoint(args.checkpoint)
    mask = tensorio.read_tensor(args.mask).astype(bool) if args.mask else None
    if args.image is not None:
        img = tensorio.read_tensor(args.image).astype(np.float64)
        result = denoise_image(params, img, mask=mask)
    elif args.stack is not None and args.sens is not None:
        stack = tensorio.read_tensor(args.stack).astype(np.complex128)
        sens = tensorio.read_tensor(args.sens).astype(np.complex128)
        result = denoise(params, stack, sens, mask=mask)
    else:
        print("denoise: need either --image or both --stack and --sens", file=sys.stderr)
        return 1
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    tensorio.write_tensor(out / "denoised.c2t", result)
    tensorio.write_pgm(out / "denoised.pgm", result, mask=mask)
    print(f"denoise: wrote {out / 'denoised.c2t'}")
    return 0


def _cmd_eval(args):
    ref = tensorio.read_tensor(args.ref).astype(np.float64)
    mask = tensorio.read_tensor(args.mask).astype(bool)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    def report_for(paths):
        rep = MetricReport()
        for p in paths:
            rep.add(tensorio.read_tensor(Path(p)).astype(np.float64), ref, mask)
        return rep

    paths_a = args.images.split(",")
    rep_a = report_for(paths_a)
    rows = [("a", i, p, s) for i, p, s in rep_a.rows()]
    t_rows = []
    if args.images_b:
        paths_b = args.images_b.split(",")
        rep_b = report_for(paths_b)
        rows += [("b", i, p, s) for i, p, s in rep_b.rows()]
        for name, va, vb in (
            ("psnr", rep_a.psnr_values, rep_b.psnr_values),
            ("ssim", rep_a.ssim_values, rep_b.ssim_values),
        ):
            t, p = paired_t_test(va, vb)
            t_rows.append((name, t, p))
    _write_csv(out / "metrics.csv", ["set", "index", "psnr_db", "ssim"], rows)
    if t_rows:
        _write_csv(out / "ttest.csv", ["metric", "t", "p"], t_rows)
    s = rep_a.summary()
    print(f"eval: pSNR {s['psnr_mean']:.2f} +/- {s['psnr_std']:.2f} dB, SSIM {s['ssim_mean']:.4f} +/- {s['ssim_std']:.4f}")
    return 0


def _cmd_gradcheck(args):
    err = network.gradient_check(rng=np.random.default_rng(args.seed))
    print(f"gradcheck: max relative error {err:.3e} (tolerance {GRADCHECK_TOL:.0e})")
    return 0 if err <= GRADCHECK_TOL else 3


_COMMANDS = {
    "simulate": _cmd_simulate,
    "pairgen": _cmd_pairgen,
    "train": _cmd_train,
    "denoise": _cmd_denoise,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
}


def cli_main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
