"""Command-line interface: one executable, five subcommands.

    perfq gen-dro   simulate the digital phantom into a dataset file
    perfq fit       estimate parameter maps (four PINN variants or NLLS)
    perfq eval      score estimated maps against a dataset's ground truth
    perfq render    export parameter-map heatmaps (PGM + PNG figure)
    perfq convert   plasma -> blood unit conversion on stdout

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure. All randomness derives from the single --seed; every output file
embeds the effective configuration and seed.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from .config import METHOD_VARIANTS, METHODS, RunConfig, load_config
from .errors import FormatError, InvalidInputError, NumericalFailureError
from .formats import (Dataset, export_heatmap, read_dataset, read_maps,
                      write_dataset, write_maps, write_metrics_csv)
from .kinetics import to_blood_units
from .metrics import compare_maps
from .nlls import fit_volume
from .phantom import generate_dro
from .pinn import train
from .seeds import derive_seed

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="perfq", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="global seed (overrides config)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--threads", type=int,
                       help="worker threads (0 = all cores)")

    p = sub.add_parser("gen-dro", help="generate the digital phantom")
    common(p)
    p.add_argument("--out", required=True, help="output dataset (.pqd)")
    p.add_argument("--snr", type=float, help="signal-to-noise ratio (inf = noiseless)")
    p.add_argument("--aif-t0", type=float, help="AIF onset delay, min")
    p.add_argument("--aif-alpha", type=float, help="AIF shape")
    p.add_argument("--aif-beta", type=float, help="AIF timescale, min")
    p.add_argument("--aif-peak", type=float, help="AIF peak concentration, M")

    p = sub.add_parser("fit", help="fit kinetic parameter maps")
    common(p)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--in", dest="infile", required=True, help="input dataset (.pqd)")
    p.add_argument("--out", required=True, help="output maps (.pqm)")

    p = sub.add_parser("eval", help="score maps against ground truth")
    common(p)
    p.add_argument("--est", required=True, help="estimated maps (.pqm)")
    p.add_argument("--gt-dataset", required=True, help="dataset with GT maps (.pqd)")
    p.add_argument("--out", required=True, help="output metrics CSV")

    p = sub.add_parser("render", help="render a parameter map to images")
    common(p)
    p.add_argument("--maps", required=True, help="maps file (.pqm)")
    p.add_argument("--param", required=True, choices=["Fp", "vp", "ve", "PS"])
    p.add_argument("--out", required=True, help="output image (PGM)")
    p.add_argument("--range", nargs=2, type=float, metavar=("LO", "HI"),
                   help="fixed scaling range")
    p.add_argument("--slice", dest="z_slice", type=int, default=0,
                   help="z-slice index (default 0)")
    p.add_argument("--no-png", action="store_true",
                   help="skip the PNG figure next to the PGM")

    p = sub.add_parser("convert", help="plasma -> blood unit conversion")
    common(p)
    p.add_argument("--fp", type=float, required=True, help="plasma flow, mL/min/mL")
    p.add_argument("--vp", type=float, default=0.0, help="plasma volume fraction")
    p.add_argument("--hct", type=float, help="haematocrit (default from config)")
    p.add_argument("--rho", type=float, help="tissue density g/mL (default from config)")
    return parser


def _effective_config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.threads is not None:
        overrides.append(f"threads={args.threads}")
    if getattr(args, "snr", None) is not None:
        overrides.append(f"phantom.snr={args.snr}")
    for flag, key in (("aif_t0", "t0"), ("aif_alpha", "alpha"),
                      ("aif_beta", "beta"), ("aif_peak", "peak")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"phantom.aif.{key}={value}")
    return RunConfig(load_config(args.config, overrides))


def _threads(cfg: RunConfig) -> int:
    n = cfg.threads
    return os.cpu_count() or 1 if n <= 0 else n


def _cmd_gen_dro(args) -> int:
    cfg = _effective_config(args)
    dro = generate_dro(
        aif=cfg.aif(),
        snr=cfg.raw["phantom"]["snr"],
        seed=derive_seed(cfg.seed, "phantom-noise"),
        lattice=cfg.lattice(),
        grid=cfg.time_grid(),
        substeps=int(cfg.raw["phantom"]["substeps"]),
        snr_mode=cfg.raw["phantom"]["snr_mode"],
    )
    metadata = dro.metadata()
    metadata["config"] = cfg.echo_text()
    metadata["cli_seed"] = cfg.seed
    write_dataset(args.out, dro.dims, dro.grid, dro.aif_values, dro.curves,
                  dro.gt_maps, metadata)
    x, y, z = dro.dims
    print(f"wrote {args.out}: {x}x{y}x{z} pixels, {dro.grid.n} time points, "
          f"snr={dro.snr}")
    return EXIT_OK


def _fit_pinn(dataset: Dataset, method: str, cfg: RunConfig):
    from .pinn import FitResult  # local import keeps CLI import light

    variant = METHOD_VARIANTS[method]
    x, y, z = dataset.dims
    curves = dataset.curves_flat()
    aif = dataset.aif.astype(float)
    per_slice = x * y

    maps = {k: np.empty((x, y, z), dtype=np.float32) for k in ("fp", "vp", "ve", "ps")}
    histories = []
    for zz in range(z):
        seed = derive_seed(cfg.seed, f"pinn-slice-{zz}")
        pcfg = cfg.pinn_config(variant, seed)
        rows = slice(zz * per_slice, (zz + 1) * per_slice)
        result = train(curves[rows], aif, dataset.grid, pcfg,
                       mesh_shape=(x, y) if variant.uses_mesh else None)
        histories.append(result)
        for k in maps:
            # flat order within a slice is y-major with x fastest
            maps[k][:, :, zz] = result.maps[k].reshape(y, x).T.astype(np.float32)
    return maps, histories


def _cmd_fit(args) -> int:
    cfg = _effective_config(args)
    dataset = read_dataset(args.infile)
    method = args.method

    if method == "nlls":
        ncfg = cfg.nlls_config(derive_seed(cfg.seed, "nlls"))
        fit = fit_volume(dataset.curves_flat(), dataset.aif.astype(float),
                         dataset.grid, ncfg, threads=_threads(cfg))
        x, y, z = dataset.dims
        maps = {k: v.reshape(z, y, x).transpose(2, 1, 0).astype(np.float32)
                for k, v in fit.maps().items()}
        n_bad = int(np.sum(fit.status != "converged"))
        if n_bad:
            print(f"note: {n_bad} pixel(s) did not fully converge")
    else:
        maps, histories = _fit_pinn(dataset, method, cfg)

    write_maps(args.out, dataset.dims, maps, method, cfg.echo_text(), cfg.seed)
    print(f"wrote {args.out} [{method}]")

    if method != "nlls":
        from .plotting import save_loss_curves

        csv_path = f"{args.out}.losses.csv"
        with open(csv_path, "w") as fh:
            for i, result in enumerate(histories):
                if i == 0:
                    fh.write(result.loss_csv())
                else:  # continuation slices reuse the header
                    fh.write(result.loss_csv().split("\n", 1)[1])
        save_loss_curves(
            [rec for result in histories for rec in result.loss_history],
            f"{args.out}.losses.png")
        print(f"wrote {csv_path} and {args.out}.losses.png")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = _effective_config(args)
    est = read_maps(args.est)
    dataset = read_dataset(args.gt_dataset)
    if dataset.gt_maps is None:
        raise InvalidInputError("dataset carries no ground-truth maps")
    if est.dims != dataset.dims:
        raise InvalidInputError(
            f"dimension mismatch: maps {est.dims} vs dataset {dataset.dims}")
    comparison = compare_maps(
        {k: v.astype(float) for k, v in est.maps.items()},
        {k: v.astype(float) for k, v in dataset.gt_maps.items()})
    rows = comparison.rows(est.method)
    write_metrics_csv(args.out, rows)

    from .plotting import save_metrics_bars
    save_metrics_bars(rows, f"{args.out}.png")

    print(f"{'method':<14}{'param':<8}{'NMSE':>10}{'SSIM':>10}")
    for method, param, nm, ss in rows:
        print(f"{method:<14}{param:<8}{nm:>10.4f}{ss:>10.4f}")
    print(f"wrote {args.out} and {args.out}.png")
    return EXIT_OK


def _cmd_render(args) -> int:
    maps = read_maps(args.maps)
    key = {"Fp": "fp", "vp": "vp", "ve": "ve", "PS": "ps"}[args.param]
    volume = maps.maps[key].astype(float)
    if not (0 <= args.z_slice < volume.shape[2]):
        raise InvalidInputError(
            f"slice {args.z_slice} out of range (z={volume.shape[2]})")
    slice2d = volume[:, :, args.z_slice]
    value_range = tuple(args.range) if args.range else None
    lo, hi = export_heatmap(slice2d, args.out, value_range)
    outputs = [args.out, f"{args.out}.scale.txt"]
    if not args.no_png:
        from .plotting import save_heatmap_png
        save_heatmap_png(slice2d, f"{args.out}.png", (lo, hi),
                         label=f"{args.param} [{maps.method}]")
        outputs.append(f"{args.out}.png")
    print("wrote " + ", ".join(outputs))
    return EXIT_OK


def _cmd_convert(args) -> int:
    cfg = _effective_config(args)
    consts = cfg.conversion()
    if args.hct is not None or args.rho is not None:
        from .kinetics import ConversionConstants
        consts = ConversionConstants(
            hct=args.hct if args.hct is not None else consts.hct,
            rho=args.rho if args.rho is not None else consts.rho)
    fb, vb = to_blood_units(args.fp, args.vp, consts)
    print(f"Fb = {fb:.6g} mL/min/g")
    print(f"vb = {vb:.6g} mL/g")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen-dro": _cmd_gen_dro,
        "fit": _cmd_fit,
        "eval": _cmd_eval,
        "render": _cmd_render,
        "convert": _cmd_convert,
    }
    try:
        return handlers[args.command](args)
    except (InvalidInputError, FormatError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFailureError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
