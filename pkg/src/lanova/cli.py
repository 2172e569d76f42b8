"""Command line interface.

Subcommands
-----------
estimate   variance estimates (and optional tail correction) from a file
fit        penalized fit with a text or JSON report
test       heavy-tail diagnostic
power      closed-form power tables over a signal grid
simulate   Monte Carlo studies (special-cases, test-level, bias,
           power-agreement, misspec)
compare    estimator risk study over a distribution grid

The report subcommands write delimited output and render a PNG figure
next to it when an output base is given.  Exit codes: 0 success, 1 data
or model errors, 2 usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__, figures
from .baselines import BaselineSpec
from .inference import heavy_tail_test, power_bernoulli_normal, power_laplace
from .nuisance import (
    estimate_lower_order_variances,
    estimate_nuisance,
    kurtosis_correction,
)
from .simulate import (
    BernoulliNormal,
    ExpPower,
    Laplace,
    SimConfig,
    bernoulli_normal_grid,
    bias_study,
    exp_power_grid,
    misspecification_study,
    power_agreement_study,
    risk_study,
    special_case_rate_study,
    test_calibration_study,
)
from .solver import SolverOptions, fit_lanova, fit_lanova_full
from .tensorio import load_input, logit_transform, read_config, write_tensor_file
from .tensors import DenseTensor

__all__ = ["main", "run", "build_parser"]


# ---------------------------------------------------------------------------
# small parsing and output helpers


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _write_text(path, text: str) -> None:
    if path is None:
        print(text)
    else:
        with open(path, "w") as handle:
            handle.write(text if text.endswith("\n") else text + "\n")


def _render_kv(pairs) -> str:
    width = max(len(key) for key, _ in pairs)
    return "\n".join(f"{key:<{width}}  {value}" for key, value in pairs)


def _write_rows(path, fieldnames, rows) -> None:
    handle = sys.stdout if path is None else open(path, "w", newline="")
    try:
        writer = csv.DictWriter(handle, fieldnames=list(fieldnames), restval="")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    finally:
        if path is not None:
            handle.close()


def _output_base(output: str) -> str:
    return output[:-4] if output.lower().endswith(".csv") else output


def _load(args) -> DenseTensor:
    data = load_input(args.input, args.format)
    if args.logit:
        data = logit_transform(data)
    return data


def _nuisance_doc(est) -> dict:
    return {
        "sigma4_c_raw": est.sigma4_c_raw,
        "sigma2_c": est.sigma2_c,
        "sigma2_z": est.sigma2_z,
        "lambda_c": est.lambda_c,
        "clipped_c": est.clipped_c,
        "clipped_z": est.clipped_z,
    }


def _corrected(args, est):
    if args.kappa is None and args.pi_c is None:
        return None
    return kurtosis_correction(est, args.kappa, pi_c=args.pi_c)


def _block_name(key: tuple[int, ...]) -> str:
    return "grand_mean" if key == () else "x".join(str(m) for m in key)


# ---------------------------------------------------------------------------
# estimate / fit / test


def cmd_estimate(args) -> int:
    data = _load(args)
    est = estimate_nuisance(data)
    corrected = _corrected(args, est)
    if args.json:
        doc = {
            "input": {
                "path": args.input,
                "dims": list(data.dims),
                "cells": data.n_cells,
                "logit": bool(args.logit),
            },
            "nuisance": _nuisance_doc(est),
        }
        if corrected is not None:
            doc["corrected"] = _nuisance_doc(corrected)
        _write_text(args.output, json.dumps(doc, indent=2))
        return 0
    pairs = [
        ("dims:", " x ".join(str(d) for d in data.dims)),
        ("sigma4_c_raw:", f"{est.sigma4_c_raw:.10g}"),
        ("sigma2_c:", f"{est.sigma2_c:.10g}" + (" (clipped)" if est.clipped_c else "")),
        ("sigma2_z:", f"{est.sigma2_z:.10g}" + (" (clipped)" if est.clipped_z else "")),
        ("lambda_c:", f"{est.lambda_c:.10g}"),
    ]
    if corrected is not None:
        pairs += [
            ("corrected sigma2_c:", f"{corrected.sigma2_c:.10g}"),
            (
                "corrected sigma2_z:",
                f"{corrected.sigma2_z:.10g}"
                + (" (clipped)" if corrected.clipped_z else ""),
            ),
            ("corrected lambda_c:", f"{corrected.lambda_c:.10g}"),
        ]
    _write_text(args.output, _render_kv(pairs))
    return 0


def cmd_fit(args) -> int:
    data = _load(args)
    est = estimate_nuisance(data)
    corrected = _corrected(args, est)
    active = corrected if corrected is not None else est
    opts = SolverOptions(
        tol=args.tol,
        max_sweeps=args.max_sweeps,
        penalize_lower_order=args.penalize_main,
    )
    lower = None
    if opts.penalize_lower_order:
        lower = estimate_lower_order_variances(data)
        fit = fit_lanova_full(data, active, lower, opts)
    else:
        fit = fit_lanova(data, active, opts)

    if args.dump_interaction is not None:
        write_tensor_file(
            args.dump_interaction, DenseTensor.from_array(fit.interaction())
        )
    if args.effects_dir is not None:
        os.makedirs(args.effects_dir, exist_ok=True)
        for key, block in fit.decomposition.effects.items():
            path = os.path.join(args.effects_dir, f"block_{_block_name(key)}.tensor")
            write_tensor_file(path, DenseTensor.from_array(np.atleast_1d(block)))

    blocks = {}
    for key, block in fit.decomposition.effects.items():
        size = int(np.asarray(block).size)
        nonzero = fit.nonzero_counts[key]
        blocks[_block_name(key)] = {
            "size": size,
            "nonzero": nonzero,
            "fraction": nonzero / size,
        }
    doc = {
        "input": {
            "path": args.input,
            "dims": list(data.dims),
            "cells": data.n_cells,
            "logit": bool(args.logit),
        },
        "nuisance": _nuisance_doc(est),
        "fit": {
            "penalize_lower_order": bool(opts.penalize_lower_order),
            "iterations": fit.iterations,
            "converged": fit.converged,
            "objective": fit.objective_trace[-1] if fit.objective_trace else None,
            "blocks": blocks,
        },
    }
    if corrected is not None:
        doc["corrected"] = _nuisance_doc(corrected)
    if lower is not None:
        doc["lower_order"] = {
            "sigma2_a": lower.sigma2_a,
            "sigma2_b": lower.sigma2_b,
            "lambda_a": lower.lambda_a,
            "lambda_b": lower.lambda_b,
            "clipped_a": lower.clipped_a,
            "clipped_b": lower.clipped_b,
        }
    if args.json:
        _write_text(args.output, json.dumps(doc, indent=2))
        return 0
    state = "converged" if fit.converged else "not converged"
    pairs = [
        ("dims:", " x ".join(str(d) for d in data.dims)),
        ("iterations:", f"{fit.iterations} ({state})"),
        (
            "objective:",
            "n/a" if not fit.objective_trace else f"{fit.objective_trace[-1]:.10g}",
        ),
        ("sigma2_c:", f"{active.sigma2_c:.10g}"),
        ("sigma2_z:", f"{active.sigma2_z:.10g}"),
    ]
    lines = [_render_kv(pairs), "", "block        nonzero / size"]
    for name, info in blocks.items():
        lines.append(
            f"{name:<12} {info['nonzero']} / {info['size']}"
            f"  ({100.0 * info['fraction']:.1f}%)"
        )
    _write_text(args.output, "\n".join(lines))
    return 0


def cmd_test(args) -> int:
    data = _load(args)
    result = heavy_tail_test(data, args.alpha)
    if args.json:
        doc = {
            "input": {
                "path": args.input,
                "dims": list(data.dims),
                "cells": data.n_cells,
                "logit": bool(args.logit),
            },
            "statistic": result.statistic,
            "p_value": result.p_value,
            "alpha": result.alpha,
            "reject": result.reject,
        }
        _write_text(args.output, json.dumps(doc, indent=2))
        return 0
    pairs = [
        ("statistic:", f"{result.statistic:.6g}"),
        ("p_value:", f"{result.p_value:.6g}"),
        ("alpha:", f"{result.alpha:g}"),
        ("reject:", "yes" if result.reject else "no"),
    ]
    _write_text(args.output, _render_kv(pairs))
    return 0


# ---------------------------------------------------------------------------
# power tables


def cmd_power(args) -> int:
    rows = []
    if args.family == "laplace":
        for cells in args.cells:
            for phi2 in args.phi2:
                rows.append(
                    {
                        "family": "laplace",
                        "phi2": phi2,
                        "pi_c": "",
                        "cells": cells,
                        "alpha": args.alpha,
                        "power": power_laplace(phi2, cells, args.alpha),
                    }
                )
    else:
        for cells in args.cells:
            for pi_c in args.pi_c:
                for phi2 in args.phi2:
                    rows.append(
                        {
                            "family": "bernoulli-normal",
                            "phi2": phi2,
                            "pi_c": pi_c,
                            "cells": cells,
                            "alpha": args.alpha,
                            "power": power_bernoulli_normal(
                                phi2, pi_c, cells, args.alpha
                            ),
                        }
                    )
    fieldnames = ("family", "phi2", "pi_c", "cells", "alpha", "power")
    if args.output is None:
        _write_rows(None, fieldnames, rows)
        return 0
    base = _output_base(args.output)
    _write_rows(base + ".csv", fieldnames, rows)
    if args.json:
        _write_text(base + ".json", json.dumps({"study": "power", "rows": rows}, indent=2))
    if not args.no_figure:
        curves = []
        seen = []
        for row in rows:
            key = (row["cells"], row["pi_c"])
            if key not in seen:
                seen.append(key)
        for cells, pi_c in seen:
            label = f"cells={cells}" + (f", pi_c={pi_c}" if pi_c != "" else "")
            xs = [r["phi2"] for r in rows if (r["cells"], r["pi_c"]) == (cells, pi_c)]
            ys = [r["power"] for r in rows if (r["cells"], r["pi_c"]) == (cells, pi_c)]
            curves.append((label, xs, ys))
        figures.save_power_curves(base + ".png", curves, args.alpha)
    return 0


# ---------------------------------------------------------------------------
# simulation studies


def _resolve(args, config, key, parse, default):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return parse(config[key])
    return default


def _study_figure(base: str, result, alpha: float) -> None:
    path = base + ".png"
    if result.study == "special-cases":
        figures.save_rate_bars(path, result.rows)
    elif result.study == "test-level":
        figures.save_level_bars(path, result.rows, alpha)
    elif result.study == "bias":
        figures.save_bias_bar(path, result.rows)
    elif result.study == "power-agreement":
        figures.save_power_agreement(path, result.rows)
    elif result.study == "misspec":
        figures.save_ratio_curves(path, result.rows)
    elif result.study == "risk":
        figures.save_risk_curves(path, result)


def _emit_study(args, result, alpha: float) -> int:
    if args.output is None:
        _write_rows(None, result.fieldnames, result.rows)
        return 0
    base = _output_base(args.output)
    _write_rows(base + ".csv", result.fieldnames, result.rows)
    if args.json:
        doc = {"study": result.study, "rows": list(result.rows)}
        _write_text(base + ".json", json.dumps(doc, indent=2))
    if not args.no_figure:
        _study_figure(base, result, alpha)
    return 0


def cmd_simulate(args) -> int:
    config = read_config(args.config) if args.config else {}
    dims = _resolve(args, config, "dims", _int_list, (25, 25))
    n_reps = _resolve(args, config, "n_reps", int, 10_000)
    seed = _resolve(args, config, "seed", int, 0)
    sigma2_z = _resolve(args, config, "sigma2_z", float, 1.0)
    alpha = _resolve(args, config, "alpha", float, 0.05)
    sigma2_c = _resolve(args, config, "sigma2_c", _float_list, (0.5, 1.0, 1.5))
    q_c = _resolve(args, config, "q_c", _float_list, None)
    pi_c = _resolve(args, config, "pi_c", _float_list, None)
    tau2_c = _resolve(args, config, "tau2_c", float, 1.0)

    base_dist = Laplace(sigma2_c[0])
    cfg = SimConfig(
        dims=tuple(dims), c_dist=base_dist, sigma2_z=sigma2_z, n_reps=n_reps, seed=seed
    )
    if args.study == "special-cases":
        result = special_case_rate_study(cfg, sigma2_c)
    elif args.study == "test-level":
        result = test_calibration_study(cfg, sigma2_c, alpha)
    elif args.study == "bias":
        result = bias_study(cfg)
    elif args.study == "power-agreement":
        result = power_agreement_study(cfg, alpha=alpha)
    else:  # misspec
        grid = None
        if q_c is not None or pi_c is not None:
            parts: list = []
            if q_c is not None:
                parts += [ExpPower(sigma2_c[0], q) for q in q_c]
            if pi_c is not None:
                parts += [BernoulliNormal(pi, tau2_c) for pi in pi_c]
            grid = tuple(parts)
        result = misspecification_study(cfg, grid)
    return _emit_study(args, result, alpha)


def _parse_estimator(label: str) -> BaselineSpec:
    label = label.strip()
    if label == "mle":
        return BaselineSpec("mle")
    if label == "additive":
        return BaselineSpec("additive")
    if label.startswith("low_rank_"):
        return BaselineSpec("low_rank", rank=int(label.rsplit("_", 1)[1]))
    if label == "minimax_universal":
        return BaselineSpec("minimax", variant="universal")
    if label == "minimax_sure":
        return BaselineSpec("minimax", variant="sure")
    raise ValueError(f"unknown estimator label {label!r}")


def cmd_compare(args) -> int:
    estimators = tuple(_parse_estimator(tok) for tok in args.estimators.split(","))
    if args.family == "bernoulli-normal":
        grid = bernoulli_normal_grid(args.pi, args.tau2)
    else:
        grid = exp_power_grid(args.q, args.sigma2_c)
    cfg = SimConfig(
        dims=tuple(args.dims),
        c_dist=grid[0],
        sigma2_z=args.sigma2_z,
        n_reps=args.n_reps,
        seed=args.seed,
        estimators=estimators,
    )
    table = risk_study(cfg, grid)
    return _emit_study(args, table, 0.05)


# ---------------------------------------------------------------------------
# wiring


def _add_input_flags(parser) -> None:
    parser.add_argument("--input", "-i", required=True, help="data file to read")
    parser.add_argument(
        "--format",
        choices=("csv", "tensor"),
        default=None,
        help="input format; default sniffs from the extension",
    )
    parser.add_argument(
        "--logit",
        action="store_true",
        help="apply log(x/(1-x)) to the input; values must lie in (0, 1)",
    )


def _add_output_flags(parser) -> None:
    parser.add_argument("--output", "-o", default=None, help="write here instead of stdout")
    parser.add_argument("--json", action="store_true", help="emit JSON")


def _add_correction_flags(parser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument(
        "--kappa", type=float, default=None, help="known interaction excess kurtosis"
    )
    group.add_argument(
        "--pi-c",
        dest="pi_c",
        type=float,
        default=None,
        help="known fraction of nonzero interactions",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanova",
        description="Sparse interaction estimation for balanced multiway data.",
    )
    parser.add_argument("--version", action="version", version=f"lanova {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="variance estimates from a data file")
    _add_input_flags(p)
    _add_correction_flags(p)
    _add_output_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("fit", help="penalized interaction fit")
    _add_input_flags(p)
    _add_correction_flags(p)
    p.add_argument(
        "--penalize-main",
        action="store_true",
        help="penalize main effects too (matrices only)",
    )
    p.add_argument("--tol", type=float, default=1e-10, help="relative objective tolerance")
    p.add_argument("--max-sweeps", type=int, default=500)
    p.add_argument(
        "--dump-interaction",
        default=None,
        metavar="PATH",
        help="write the fitted interaction block as a tensor file",
    )
    p.add_argument(
        "--effects-dir",
        default=None,
        metavar="DIR",
        help="write every fitted block as a tensor file in DIR",
    )
    _add_output_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("test", help="heavy-tail diagnostic")
    _add_input_flags(p)
    p.add_argument("--alpha", type=float, default=0.05)
    _add_output_flags(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("power", help="closed-form power tables")
    p.add_argument(
        "--family",
        "--dist",
        choices=("laplace", "bernoulli-normal"),
        default="laplace",
    )
    p.add_argument(
        "--phi2",
        type=_float_list,
        default=tuple(round(0.1 * k, 1) for k in range(1, 31)),
        help="comma-separated signal-to-noise ratios",
    )
    p.add_argument(
        "--pi-c",
        dest="pi_c",
        type=_float_list,
        default=(0.1,),
        help="comma-separated nonzero fractions (bernoulli-normal only)",
    )
    p.add_argument(
        "--cells",
        "--p",
        type=_int_list,
        required=True,
        help="comma-separated total cell counts",
    )
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--no-figure", action="store_true")
    _add_output_flags(p)
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("simulate", help="Monte Carlo studies")
    p.add_argument(
        "--study",
        required=True,
        choices=("special-cases", "test-level", "bias", "power-agreement", "misspec"),
    )
    p.add_argument("--config", default=None, help="flat key = value settings file")
    p.add_argument("--dims", type=_int_list, default=None)
    p.add_argument("--n-reps", dest="n_reps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sigma2-z", dest="sigma2_z", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument(
        "--sigma2-c",
        dest="sigma2_c",
        type=_float_list,
        default=None,
        help="interaction variance grid",
    )
    p.add_argument("--q-c", dest="q_c", type=_float_list, default=None)
    p.add_argument("--pi-c", dest="pi_c", type=_float_list, default=None)
    p.add_argument("--tau2-c", dest="tau2_c", type=float, default=None)
    p.add_argument("--no-figure", action="store_true")
    _add_output_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="estimator risk study")
    p.add_argument(
        "--family",
        choices=("bernoulli-normal", "exp-power"),
        default="bernoulli-normal",
    )
    p.add_argument("--dims", type=_int_list, default=(25, 25))
    p.add_argument("--n-reps", dest="n_reps", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma2-z", dest="sigma2_z", type=float, default=1.0)
    p.add_argument(
        "--pi",
        type=_float_list,
        default=tuple(round(0.1 * k, 1) for k in range(11)),
        help="nonzero fractions (bernoulli-normal)",
    )
    p.add_argument(
        "--tau2",
        type=_float_list,
        default=(0.5, 1.0, 2.0),
        help="nonzero variances (bernoulli-normal)",
    )
    p.add_argument(
        "--q",
        type=_float_list,
        default=(0.1, 0.3, 0.5, 0.7, 0.9, 1.1, 1.3, 1.5, 1.7, 1.9),
        help="tail shapes (exp-power)",
    )
    p.add_argument(
        "--sigma2-c",
        dest="sigma2_c",
        type=_float_list,
        default=(0.5, 1.0, 2.0),
        help="interaction variances (exp-power)",
    )
    p.add_argument(
        "--estimators",
        default="mle,additive,low_rank_1,low_rank_5,minimax_universal,minimax_sure",
        help="comma-separated baseline labels",
    )
    p.add_argument("--no-figure", action="store_true")
    _add_output_flags(p)
    p.set_defaults(func=cmd_compare)

    return parser


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
