"""Command-line driver: ``dyingrelu {theory,simulate,compare,probe}``.

Every command writes plot-ready CSV files plus JSON that embeds the fully
resolved experiment spec (defaults included), which is enough to re-run the
experiment bit-identically.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import warnings
from typing import Any, Sequence

import numpy as np

from . import __version__
from .model import linspace_mu, make_model_with_activation
from .probe import BlobSpec, MlpConfig, train_and_probe
from .simulator import (
    VARIANTS,
    SimulationConfig,
    initial_weights,
    run_monte_carlo,
    time_to_threshold,
)
from .theory import (
    DEFAULT_STEP_SCALE,
    NumericalError,
    StabilityWarning,
    assemble_operator,
    averaged_error_curve,
    default_step_size,
    eigen_report,
    fixed_point,
)

logger = logging.getLogger("dyingrelu")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

SWEEP_PROBS = (0.8, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05)


class UsageError(ValueError):
    pass


def _tag(p: float) -> str:
    return f"p{p:g}"


def _dump(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)


def _write_rows(path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


# ---------------------------------------------------------------- spec handling


def resolve_signal_spec(spec: dict[str, Any]) -> dict[str, Any]:
    """Fill defaults shared by theory/simulate/compare and pick the step size."""
    s = dict(spec)
    s.setdefault("L", 11)
    s.setdefault("mu_max", 2.0)
    if s.get("mu") is None:
        s["mu"] = [float(v) for v in linspace_mu(int(s["L"]), float(s["mu_max"]))]
    s["L"] = len(s["mu"])
    s.setdefault("a", 0.5)
    s.setdefault("activation_probs", list(SWEEP_PROBS))
    s.setdefault("iters", 10000)
    s.setdefault("runs", 200)
    s.setdefault("init_std", 0.1)
    s.setdefault("seed", 0)
    s.setdefault("stride", 1)
    s.setdefault("step_scale", DEFAULT_STEP_SCALE)
    s.setdefault("workers", 1)

    if s["L"] < 3:
        raise UsageError("need L >= 3")
    if s["a"] == 0:
        raise UsageError("a must be nonzero")
    if not s["activation_probs"]:
        raise UsageError("need at least one activation probability")
    for p in s["activation_probs"]:
        if not (0.0 < p < 1.0):
            raise UsageError(f"activation probabilities must lie in (0, 1), got {p}")
    for key in ("iters", "runs", "stride"):
        if int(s[key]) < 1:
            raise UsageError(f"--{key} must be >= 1, got {s[key]}")
    if s["init_std"] < 0:
        raise UsageError("--init-std must be >= 0")

    ops = [assemble_operator(make_model_with_activation(s["mu"], s["a"], p)) for p in s["activation_probs"]]
    if s.get("eta") is None:
        s["eta"] = default_step_size(ops, s["step_scale"])
        s["eta_source"] = "default: step_scale / max E{||x_bar||^2 | d>0} over the sweep"
    else:
        s["eta_source"] = "user"
    if not (s["eta"] > 0 and math.isfinite(s["eta"])):
        raise UsageError(f"--eta must be positive, got {s['eta']}")
    return s


def _sim_config(s, p, variant) -> SimulationConfig:
    return SimulationConfig(
        model=make_model_with_activation(s["mu"], s["a"], p),
        variant=variant,
        eta=s["eta"],
        iters=int(s["iters"]),
        runs=int(s["runs"]),
        init_std=s["init_std"],
        master_seed=int(s["seed"]),
        record_stride=int(s["stride"]),
    )


def _theory_curve(s, p):
    cfg = _sim_config(s, p, "analysis")
    op = assemble_operator(cfg.model)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StabilityWarning)
        curve = averaged_error_curve(op, initial_weights(cfg), s["eta"], cfg.iters, cfg.record_stride)
    return op, curve


# ---------------------------------------------------------------- commands


def cmd_theory(spec: dict[str, Any]) -> dict[str, Any]:
    s = resolve_signal_spec(spec)
    out = s["out_dir"]
    os.makedirs(out, exist_ok=True)
    reports = {}
    for p in s["activation_probs"]:
        op, curve = _theory_curve(s, p)
        rep = eigen_report(op)
        fp = fixed_point(op)
        warn = []
        if not s["eta"] < rep.eta_max:
            warn.append(f"eta={s['eta']:g} >= 2/lambda_max={rep.eta_max:g}: mean recursion diverges")
        doc = {
            "spec": s,
            "model": op.model.to_dict(),
            "spectrum": rep.to_dict(),
            "K": op.K,
            "h": op.h,
            "fixed_point": [float(v) for v in fp],
            "eta": s["eta"],
            "eta_over_eta_max": s["eta"] / rep.eta_max,
            "stable": not warn,
            "warnings": warn,
        }
        for w in warn:
            logger.warning("%s: %s", _tag(p), w)
        _dump(os.path.join(out, f"theory_{_tag(p)}.json"), doc)
        _write_rows(os.path.join(out, f"theory_{_tag(p)}.csv"), ["iteration", "error_norm_sq"],
                    ((int(k), _fmt(v)) for k, v in zip(curve.iterations, curve.error_norm_sq)))
        reports[p] = doc
        logger.info("theory %s: u0=%.6g multiplicity=%d lambda_max=%.6g", _tag(p), rep.u0,
                    rep.multiplicity, rep.lambda_max)
    return reports


def _variants(s) -> list[str]:
    v = s.get("variant") or "both"
    return list(VARIANTS) if v == "both" else [v]


def cmd_simulate(spec: dict[str, Any]) -> dict[str, Any]:
    s = resolve_signal_spec(spec)
    s["variant"] = s.get("variant") or "both"
    out = s["out_dir"]
    os.makedirs(out, exist_ok=True)
    records = {}
    for p in s["activation_probs"]:
        for variant in _variants(s):
            rec = run_monte_carlo(_sim_config(s, p, variant), workers=int(s["workers"]))
            path = os.path.join(out, f"sim_{variant}_{_tag(p)}.csv")
            rec.write_csv(path)
            side = rec.sidecar()
            side["spec"] = s
            _dump(os.path.splitext(path)[0] + ".json", side)
            records[(variant, p)] = rec
            logger.info("simulate %s %s: update fraction %.4f", variant, _tag(p), rec.update_fraction)
    return records


def max_relative_deviation(values, reference, iterations, burn_in: int) -> float:
    values, reference = np.asarray(values), np.asarray(reference)
    keep = np.asarray(iterations) >= burn_in
    if not keep.any():
        return float("nan")
    return float(np.max(np.abs(values[keep] / reference[keep] - 1.0)))


def _strictly_increasing(seq) -> bool:
    if any(v is None for v in seq):
        return False
    return all(b > a for a, b in zip(seq, seq[1:]))


def cmd_compare(spec: dict[str, Any]) -> dict[str, Any]:
    s = resolve_signal_spec(spec)
    s.setdefault("burn_in", 100)
    s.setdefault("fraction", 0.1)
    out = s["out_dir"]
    os.makedirs(out, exist_ok=True)
    per_p = {}
    for p in s["activation_probs"]:
        op, curve = _theory_curve(s, p)
        sims = {v: run_monte_carlo(_sim_config(s, p, v), workers=int(s["workers"])) for v in VARIANTS}
        it = curve.iterations
        _write_rows(
            os.path.join(out, f"compare_{_tag(p)}.csv"),
            ["iteration", "theory", "analysis", "original"],
            ((int(k), _fmt(t), _fmt(a), _fmt(o)) for k, t, a, o in
             zip(it, curve.error_norm_sq, sims["analysis"].avg_sq_error_norm, sims["original"].avg_sq_error_norm)),
        )
        per_p[_tag(p)] = {
            "activation_prob": p,
            "u0": op.u0,
            "max_rel_dev_analysis_vs_theory": max_relative_deviation(
                sims["analysis"].avg_sq_error_norm, curve.error_norm_sq, it, s["burn_in"]),
            "max_rel_dev_original_vs_theory": max_relative_deviation(
                sims["original"].avg_sq_error_norm, curve.error_norm_sq, it, s["burn_in"]),
            "time_to_threshold": {
                "theory": time_to_threshold(curve, s["fraction"]),
                "analysis": time_to_threshold(sims["analysis"], s["fraction"]),
                "original": time_to_threshold(sims["original"], s["fraction"]),
            },
            "update_fraction": {v: r.update_fraction for v, r in sims.items()},
        }
        logger.info("compare %s: max rel dev %.4f", _tag(p), per_p[_tag(p)]["max_rel_dev_analysis_vs_theory"])

    order = sorted(s["activation_probs"], reverse=True)
    ttt = {c: [per_p[_tag(p)]["time_to_threshold"][c] for p in order] for c in ("theory", "analysis", "original")}
    summary = {
        "spec": s,
        "points": per_p,
        "probs_descending": order,
        "monotone_time_to_threshold": {c: _strictly_increasing(v) for c, v in ttt.items()},
    }
    _dump(os.path.join(out, "compare_summary.json"), summary)
    return summary


def resolve_probe_spec(spec: dict[str, Any]) -> dict[str, Any]:
    s = dict(spec)
    s.setdefault("layers", [10, 32, 32, 32, 2])
    s.setdefault("probe_eta", 0.05)
    s.setdefault("epochs", 50)
    s.setdefault("batch_size", 32)
    s.setdefault("seeds", 10)
    s.setdefault("seed", 0)
    s.setdefault("per_class", 200)
    s.setdefault("separation", 3.0)
    s.setdefault("dead_layer", None)
    if int(s["seeds"]) < 1:
        raise UsageError("--seeds must be >= 1")
    if len(s["layers"]) < 3:
        raise UsageError("--layers needs input, at least one hidden, and output sizes")
    return s


def _mlp_config(s, seed) -> MlpConfig:
    layers = [int(v) for v in s["layers"]]
    try:
        return MlpConfig(
            layer_sizes=tuple(layers),
            eta=s["probe_eta"],
            epochs=int(s["epochs"]),
            batch_size=int(s["batch_size"]),
            seed=seed,
            dataset=BlobSpec(classes=layers[-1], per_class=int(s["per_class"]), dim=layers[0],
                             separation=s["separation"]),
            dead_layer=s["dead_layer"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_probe(spec: dict[str, Any]) -> dict[str, Any]:
    s = resolve_probe_spec(spec)
    out = s["out_dir"]
    os.makedirs(out, exist_ok=True)
    results = []
    for i in range(int(s["seeds"])):
        seed = int(s["seed"]) + i
        res = train_and_probe(_mlp_config(s, seed))
        res.write_activation_csv(os.path.join(out, f"probe_seed{seed}_activation.csv"))
        res.write_loss_csv(os.path.join(out, f"probe_seed{seed}_loss.csv"))
        if res.diverged:
            logger.warning("seed %d: %s", seed, res.diagnostic)
        results.append(res)

    done = min(r.epochs_completed for r in results)
    mean = np.mean([r.activation[:done] for r in results], axis=0) if done else np.zeros((0, 0))
    _write_rows(
        os.path.join(out, "probe_mean_activation.csv"),
        ["epoch", "layer", "activation_prob"],
        ((e + 1, l + 1, _fmt(mean[e, l])) for e in range(done) for l in range(mean.shape[1])),
    )
    summary = {
        "spec": s,
        "seeds": [int(s["seed"]) + i for i in range(int(s["seeds"]))],
        "diverged": [r.diverged for r in results],
        "diagnostics": [r.diagnostic for r in results if r.diagnostic],
        "final_activation_mean": mean[-1].tolist() if done else [],
        "final_loss": [float(r.loss[-1]) for r in results],
    }
    _dump(os.path.join(out, "probe_summary.json"), summary)
    return {"summary": summary, "results": results}


# ---------------------------------------------------------------- argument parsing


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyingrelu", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", default="out")

    def signal(p):
        common(p)
        p.add_argument("--activation-probs", type=_floats, default=list(SWEEP_PROBS),
                       help="comma list of target Pr[d>0] values")
        p.add_argument("--eta", type=float, default=None,
                       help="step size (default: shared normalized step over the sweep)")
        p.add_argument("--step-scale", type=float, default=DEFAULT_STEP_SCALE)
        p.add_argument("--runs", type=_positive_int, default=200)
        p.add_argument("--iters", type=_positive_int, default=10000)
        p.add_argument("--stride", type=_positive_int, default=1)
        p.add_argument("--L", type=int, default=11)
        p.add_argument("--mu", type=_floats, default=None, help="explicit input mean vector")
        p.add_argument("--mu-max", type=float, default=2.0)
        p.add_argument("--a", type=float, default=0.5)
        p.add_argument("--init-std", type=float, default=0.1)
        p.add_argument("--workers", type=_positive_int, default=1)

    p = sub.add_parser("theory", help="spectrum of the mean-recursion operator and averaged theory curves")
    signal(p)
    p = sub.add_parser("simulate", help="Monte Carlo runs of the original and/or analysis updates")
    signal(p)
    p.add_argument("--variant", choices=list(VARIANTS) + ["both"], default="both")
    p = sub.add_parser("compare", help="theory vs both simulated variants on a shared spec")
    signal(p)
    p.add_argument("--burn-in", type=int, default=100)
    p.add_argument("--fraction", type=float, default=0.1)
    p = sub.add_parser("probe", help="per-layer Pr[y>0] of a small ReLU MLP during training")
    common(p)
    p.add_argument("--seeds", type=_positive_int, default=10, help="number of training runs")
    p.add_argument("--layers", type=_ints, default=[10, 32, 32, 32, 2])
    p.add_argument("--eta", dest="probe_eta", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=_positive_int, default=32)
    p.add_argument("--per-class", type=_positive_int, default=200)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--dead-layer", type=int, default=None,
                   help="force this 0-based hidden layer into the y<0 region")
    return parser


COMMANDS = {"theory": cmd_theory, "simulate": cmd_simulate, "compare": cmd_compare, "probe": cmd_probe}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    spec = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    try:
        result = COMMANDS[args.command](spec)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None)
        if diag:
            print(json.dumps(diag), file=sys.stderr)
        return EXIT_NUMERICAL
    if args.command == "probe" and any(result["summary"]["diverged"]):
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
