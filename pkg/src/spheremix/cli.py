"""Command-line interface.

Subcommands:

  simulate   draw a ground-truth vMF mixture and a dataset from it
  fit        fit a flow mixture (soft or hard EM) or a committee of single
             flows to a lon/lat event CSV
  evaluate   L1 distance between a fitted density and a reference density on
             a spherical quadrature grid, plus the fitted normalization
  export     regular lon/lat raster of a stored density
  replicate  end-to-end simulation study: R rounds of simulate, fit,
             evaluate, with a mean (sd) summary

Every run is deterministic given its --seed; outputs carry the resolved
configuration and contain no timestamps, so identical invocations produce
identical bytes.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from .config import (ALGORITHMS, RunConfig, build_run_config, format_config,
                     parse_config_file)
from .events import EventDataset, EventParseError, load_events, write_events
from .mixture import (MODEL_FORMAT, MixtureModel, derive_seed, fit_committee,
                      fit_hard, fit_soft, mixture_logdensity, model_from_dict,
                      save_model)
from .quadrature import (DensityField, build_grid, export_density_grid,
                         integrate, l1_distance, write_raster)
from .vmf import (TRUTH_FORMAT, SimSetting, generate_setting, mixture_density,
                  save_truth, truth_from_dict)

logger = logging.getLogger(__name__)

REPORT_FORMAT = "spheremix-report"
REPORT_VERSION = 1

_CONFIG_FLAGS = (
    ("--algorithm", dict(choices=ALGORITHMS, help="soft, hard, or committee")),
    ("--G", dict(type=int, help="number of mixture components")),
    ("--K", dict(type=int, help="flow layers per component")),
    ("--p", dict(type=int, help="potential bumps per layer")),
    ("--learning-rate", dict(type=float, dest="learning_rate")),
    ("--batch-size", dict(type=int, dest="batch_size")),
    ("--epochs-per-mstep", dict(type=int, dest="epochs_per_mstep")),
    ("--momentum", dict(type=float)),
    ("--tol", dict(type=float, help="relative log-likelihood tolerance")),
    ("--max-iters", dict(type=int, dest="max_iters")),
    ("--init-beta", dict(type=float, dest="init_beta")),
    ("--init-lloyd", dict(type=int, dest="init_lloyd")),
    ("--members", dict(type=int, help="committee size")),
    ("--member-epochs", dict(type=int, dest="member_epochs")),
    ("--grid-resolution", dict(type=int, dest="grid_resolution")),
)


def _add_config_options(parser):
    parser.add_argument("--config", metavar="FILE",
                        help="flat key = value configuration file")
    for flag, kw in _CONFIG_FLAGS:
        parser.add_argument(flag, **kw)
    parser.add_argument("--backtracking", action="store_true", default=None,
                        help="monotone full-batch M-steps with step halving")
    parser.add_argument("--no-prune", action="store_false", dest="prune",
                        default=None, help="keep empty components")


def _resolve_config(args):
    file_values = parse_config_file(args.config) if args.config else None
    names = [f.name for f in dataclasses.fields(RunConfig)]
    overrides = {name: getattr(args, name, None) for name in names}
    return build_run_config(file_values, **overrides)


def _write_keyvals(fh, pairs):
    for key, value in pairs:
        if isinstance(value, float):
            value = repr(value)
        fh.write(f"{key} = {value}\n")


def _emit_keyvals(pairs, path):
    """Print key = value pairs and, when a path is given, write them to it."""
    _write_keyvals(sys.stdout, pairs)
    if path:
        with open(path, "w") as fh:
            _write_keyvals(fh, pairs)


def load_density_file(path):
    """Open a stored density (fitted model or vMF ground truth).

    Dispatches on the file's format tag and returns (DensityField, document).
    """
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not a density file ({exc})") from exc
    fmt = doc.get("format")
    if fmt == MODEL_FORMAT:
        model = model_from_dict(doc)
        field = DensityField(
            lambda pts: np.exp(mixture_logdensity(pts, model)), label=path)
    elif fmt == TRUTH_FORMAT:
        mix = truth_from_dict(doc)
        field = DensityField(lambda pts: mixture_density(pts, mix),
                             label=path)
    else:
        raise ValueError(f"{path}: unrecognized density file format {fmt!r}")
    return field, doc


def _doc_seed(doc):
    if doc.get("seed") is not None:
        return doc["seed"]
    return doc.get("setting", {}).get("seed", "none")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _fit_data(dataset, cfg):
    """Run the configured fitter; returns (MixtureModel, report dict).

    A committee is stored as a uniform-weight mixture over its members,
    which evaluates to exactly the committee density.
    """
    sgd = cfg.sgd_config()
    if cfg.algorithm == "committee":
        member_sgd = dataclasses.replace(
            sgd, epochs_per_mstep=cfg.member_epochs)
        committee = fit_committee(dataset, cfg.members, member_sgd,
                                  K=cfg.K, p=cfg.p, init_beta=cfg.init_beta)
        members = committee.members
        model = MixtureModel(members, np.full(len(members),
                                              1.0 / len(members)))
        report = {"iterations": 0, "converged": True,
                  "nonempty_components": len(members),
                  "log_likelihood_trace": []}
    else:
        fitter = fit_soft if cfg.algorithm == "soft" else fit_hard
        model, _, fit_report = fitter(dataset, cfg.G, sgd, cfg.em_config(),
                                      K=cfg.K, p=cfg.p)
        report = {"iterations": fit_report.iterations,
                  "converged": fit_report.converged,
                  "nonempty_components": fit_report.nonempty_components,
                  "log_likelihood_trace":
                      fit_report.log_likelihood_trace.tolist()}
    report["algorithm"] = cfg.algorithm
    return model, report


def cmd_fit(args):
    cfg = _resolve_config(args)
    dataset = load_events(args.data)
    logger.info("fitting %s on %d events (G=%d, K=%d, p=%d)",
                cfg.algorithm, dataset.n, cfg.G, cfg.K, cfg.p)
    model, report = _fit_data(dataset, cfg)
    metadata = {"config": cfg.to_dict(), "data": os.path.basename(args.data),
                "report": report}
    save_model(model, args.out_model, seed=cfg.seed, metadata=metadata)
    print(f"fit {cfg.algorithm}: {model.G} components, "
          f"{report['iterations']} iterations, converged {report['converged']}")
    if args.out_report:
        doc = {"format": REPORT_FORMAT, "version": REPORT_VERSION,
               "seed": cfg.seed, "config": cfg.to_dict(), **report}
        with open(args.out_report, "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
    return 0


def cmd_simulate(args):
    setting = SimSetting(J=args.J, lam=args.lam, N=args.N, seed=args.seed)
    points, mix = generate_setting(setting)
    write_events(EventDataset(points), args.out_data)
    save_truth(mix, args.out_truth, setting=setting)
    print(f"simulated {setting.N} events from {setting.J} vMF components "
          f"(seed {setting.seed})")
    return 0


def cmd_evaluate(args):
    fitted, fitted_doc = load_density_file(args.fitted)
    reference, _ = load_density_file(args.truth)
    grid = build_grid(args.resolution)
    pairs = [
        ("l1", l1_distance(fitted, reference, grid)),
        ("normalization", integrate(fitted, grid)),
        ("grid_nodes", grid.M),
        ("seed", _doc_seed(fitted_doc)),
    ]
    _emit_keyvals(pairs, args.out)
    return 0


def cmd_export(args):
    field, _ = load_density_file(args.density)
    raster = export_density_grid(field, args.lon_steps, args.lat_steps)
    write_raster(raster, args.out)
    print(f"wrote {args.lon_steps}x{args.lat_steps} raster to {args.out}")
    return 0


def cmd_replicate(args):
    cfg = _resolve_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    grid = build_grid(cfg.grid_resolution)
    mixture_l1 = []
    committee_l1 = []
    lines = [f"J = {args.J}", f"lam = {args.lam!r}", f"N = {args.N}",
             f"replicates = {args.replicates}", "",
             format_config(cfg).rstrip("\n"), ""]
    for r in range(args.replicates):
        setting = SimSetting(J=args.J, lam=args.lam, N=args.N,
                             seed=derive_seed(cfg.seed, 7, r))
        points, mix = generate_setting(setting)
        prefix = os.path.join(args.out_dir, f"rep{r}")
        write_events(EventDataset(points), f"{prefix}-data.csv")
        save_truth(mix, f"{prefix}-truth.json", setting=setting)
        truth_field = DensityField(lambda pts, m=mix: mixture_density(pts, m))

        results = []
        jobs = [(cfg.algorithm if cfg.algorithm != "committee" else "hard",
                 derive_seed(cfg.seed, 8, r))]
        if not args.no_committee:
            jobs.append(("committee", derive_seed(cfg.seed, 9, r)))
        for algorithm, seed in jobs:
            cfg_r = dataclasses.replace(cfg, algorithm=algorithm, seed=seed)
            model, report = _fit_data(points, cfg_r)
            save_model(model, f"{prefix}-{algorithm}-model.json", seed=seed,
                       metadata={"config": cfg_r.to_dict(), "report": report})
            field = DensityField(
                lambda pts, m=model: np.exp(mixture_logdensity(pts, m)))
            results.append((algorithm, l1_distance(field, truth_field, grid)))

        line = f"rep{r}: " + ", ".join(
            f"{alg}_l1 = {val!r}" for alg, val in results)
        print(line)
        lines.append(line)
        mixture_l1.append(results[0][1])
        if len(results) > 1:
            committee_l1.append(results[1][1])

    def _mean_sd(values):
        v = np.asarray(values)
        sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
        return float(v.mean()), sd

    lines.append("")
    mean, sd = _mean_sd(mixture_l1)
    lines.append(f"mixture_l1_mean = {mean!r}")
    lines.append(f"mixture_l1_sd = {sd!r}")
    print(f"mixture l1: {mean:.4f} ({sd:.4f}) over {args.replicates} replicates")
    if committee_l1:
        mean, sd = _mean_sd(committee_l1)
        lines.append(f"committee_l1_mean = {mean!r}")
        lines.append(f"committee_l1_sd = {sd!r}")
        print(f"committee l1: {mean:.4f} ({sd:.4f})")
    with open(os.path.join(args.out_dir, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="spheremix",
        description="Mixtures of exponential-map normalizing flows on the "
                    "sphere: simulation, fitting, and evaluation.")
    parser.add_argument("--verbose", action="store_true",
                        help="log fitting progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a density to a lon/lat event CSV")
    p_fit.add_argument("--data", required=True, metavar="CSV")
    p_fit.add_argument("--seed", type=int, required=True)
    p_fit.add_argument("--out-model", required=True, metavar="JSON")
    p_fit.add_argument("--out-report", metavar="JSON")
    _add_config_options(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate",
                           help="sample a dataset from a random vMF mixture")
    p_sim.add_argument("--J", type=int, default=10,
                       help="true number of vMF components")
    p_sim.add_argument("--lam", type=float, default=1e-2,
                       help="exponential rate for concentrations")
    p_sim.add_argument("--N", type=int, default=2000, help="sample size")
    p_sim.add_argument("--seed", type=int, required=True)
    p_sim.add_argument("--out-data", required=True, metavar="CSV")
    p_sim.add_argument("--out-truth", required=True, metavar="JSON")
    p_sim.set_defaults(func=cmd_simulate)

    p_eval = sub.add_parser("evaluate",
                            help="L1 distance between two stored densities")
    p_eval.add_argument("--fitted", required=True, metavar="JSON",
                        help="density whose normalization is also reported")
    p_eval.add_argument("--truth", required=True, metavar="JSON",
                        help="reference density")
    p_eval.add_argument("--resolution", type=int, default=20000,
                        help="quadrature grid nodes")
    p_eval.add_argument("--out", metavar="FILE",
                        help="also write the metrics to this file")
    p_eval.set_defaults(func=cmd_evaluate)

    p_exp = sub.add_parser("export", help="raster a stored density to CSV")
    p_exp.add_argument("--density", required=True, metavar="JSON")
    p_exp.add_argument("--lon-steps", type=int, default=720)
    p_exp.add_argument("--lat-steps", type=int, default=360)
    p_exp.add_argument("--out", required=True, metavar="CSV")
    p_exp.set_defaults(func=cmd_export)

    p_rep = sub.add_parser(
        "replicate",
        help="simulation study: replicates of simulate, fit, evaluate")
    p_rep.add_argument("--J", type=int, default=10)
    p_rep.add_argument("--lam", type=float, default=1e-2)
    p_rep.add_argument("--N", type=int, default=2000)
    p_rep.add_argument("--replicates", type=int, default=5)
    p_rep.add_argument("--seed", type=int, required=True)
    p_rep.add_argument("--out-dir", required=True, metavar="DIR")
    p_rep.add_argument("--no-committee", action="store_true",
                       help="skip the committee baseline")
    _add_config_options(p_rep)
    p_rep.set_defaults(func=cmd_replicate)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError, EventParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
