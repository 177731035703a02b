"""Command-line entry points for the experiment drivers.

Exit codes: 0 = completed, 2 = completed with inconclusive verdicts,
1 = error.
"""

from __future__ import annotations

import argparse
import sys

from .core import MalabError
from .experiments import (
    ExperimentConfig,
    run_blowup,
    run_catalog,
    run_instability,
    run_linearized,
    run_negative_alpha,
)


def _float_list(text):
    return [float(tok) for tok in text.split(",") if tok.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="malab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("catalog", help="existence table of k-fold homogeneous profiles")
    p.add_argument("--alpha-list", type=_float_list, required=True)
    p.add_argument("--k-max", type=int, default=4)
    p.add_argument("--out", default="malab_out/catalog")

    p = sub.add_parser("instability", help="perturbed Dirichlet experiment")
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--grid", type=int, default=257)
    p.add_argument("--t-list", type=_float_list, default=None)
    p.add_argument("--out", default="malab_out/instability")

    p = sub.add_parser("negative", help="negative-exponent radial-behavior experiment")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--grid", type=int, default=257)
    p.add_argument("--boundary-amp", type=float, default=0.2)
    p.add_argument("--out", default="malab_out/negative")

    p = sub.add_parser("blowup", help="blow-up catalog-distance diagnostic")
    p.add_argument("--input", required=True, help="anchored field file")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--r-list", type=_float_list, default=None)
    p.add_argument("--k-max", type=int, default=4)
    p.add_argument("--out", default="malab_out/blowup")

    p = sub.add_parser("linearized", help="linearized-mode decay experiment")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--grid", type=int, default=256)
    p.add_argument("--out", default="malab_out/linearized")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    inconclusive = False
    try:
        if args.command == "catalog":
            cfg = ExperimentConfig(
                name="catalog", alphas=args.alpha_list, k_max=args.k_max, out=args.out
            )
            rows = run_catalog(cfg)
            print(f"catalog: {len(rows)} rows -> {args.out}")
        elif args.command == "instability":
            cfg = ExperimentConfig(
                name="instability", alpha=args.alpha, epsilon=args.eps,
                grid_n=args.grid, t_range=args.t_list, out=args.out,
            )
            rep = run_instability(cfg)
            print(
                f"instability: verdict={rep['verdict']} slope={rep['slope_last_decade']:.4f} "
                f"-> {args.out}"
            )
            inconclusive |= rep["verdict"] == "inconclusive"
        elif args.command == "negative":
            cfg = ExperimentConfig(
                name="negative_alpha", alpha=args.alpha, grid_n=args.grid,
                boundary_amp=args.boundary_amp, out=args.out,
            )
            rep = run_negative_alpha(cfg)
            print(
                f"negative: verdict={rep['verdict']} innermost ratio="
                f"{rep['innermost_ratio']:.4f} -> {args.out}"
            )
            inconclusive |= rep["verdict"] == "inconclusive"
        elif args.command == "blowup":
            cfg = ExperimentConfig(
                name="blowup", alpha=args.alpha, r_range=args.r_list,
                input_field=args.input, k_max=args.k_max, out=args.out,
            )
            rep = run_blowup(cfg)
            best = ", ".join(
                f"r={row['r']:g}: k={row['best_k']} d={row['best_distance']:.3e}"
                for row in rep["rows"]
            )
            print(f"blowup: {best} -> {args.out}")
        elif args.command == "linearized":
            cfg = ExperimentConfig(
                name="linearized", alpha=args.alpha, grid_n=args.grid, out=args.out
            )
            rep = run_linearized(cfg)
            print(
                f"linearized: rho={rep.rho_closed_form:.6f} fitted={rep.rho_fitted:.6f} "
                f"-> {args.out}"
            )
    except MalabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2 if inconclusive else 0


if __name__ == "__main__":
    sys.exit(main())
