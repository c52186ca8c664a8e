"""Command line entry point: ``metapopsim <command> --config cfg.json --out dir``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import plotting, report
from .config import FIG1_PANELS, ExperimentConfig, load_config
from .errors import MetapopError
from .landscape import BetaJumpChain, sample_path
from .meanfield import equilibrium
from .patch import build_grid
from .persistence import persistence_verdict
from .rng import derive_seed
from .simulate import init_metapop, run_occupancy

log = logging.getLogger("metapopsim")

COMMANDS = ("simulate", "equilibrium", "persistence", "fig1", "fig2")


def _out(out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def simulate_once(cfg: ExperimentConfig, n: int, seed: int, record_counts: bool = False):
    chain, traits = cfg.chain(), cfg.patch_traits()
    kernel, domain = cfg.dispersal(), cfg.spatial_domain()
    state = init_metapop(n, domain, chain, cfg.q0, seed)
    return run_occupancy(state, cfg.T_steps, traits, kernel, chain, seed,
                         burn_in=cfg.burn_in, record_counts=record_counts)


def cmd_simulate(cfg: ExperimentConfig, out_dir) -> dict:
    out = _out(out_dir)
    outputs, runs = [], []
    for k in range(cfg.replicates):
        seed = cfg.seed if k == 0 else derive_seed(cfg.seed, k)
        summary = simulate_once(cfg, cfg.n_patches, seed, record_counts=True)
        suffix = "" if cfg.replicates == 1 else f"_rep{k}"
        outputs.append(report.write_occupancy(out / f"occupancy{suffix}.csv", summary))
        outputs.append(report.write_counts(out / f"counts{suffix}.csv", summary.counts))
        runs.append({"replicate": k, "seed": seed,
                     "mean_occupancy": float(summary.proportion.mean()),
                     "max_stderr": float(np.nanmax(summary.stderr)) if summary.stderr.size else 0.0})
    outputs.append(report.write_json(out / "run.json", {"n_patches": cfg.n_patches,
                                                         "T_steps": cfg.T_steps, "runs": runs}))
    report.write_manifest(out, "simulate", cfg, outputs)
    return {"outputs": outputs, "runs": runs}


def _equilibrium(cfg: ExperimentConfig, grid_nodes: int | None = None):
    grid = build_grid(cfg.spatial_domain(), grid_nodes or cfg.grid_nodes)
    return equilibrium(cfg.chain(), cfg.patch_traits(), cfg.dispersal(), grid,
                       tol=cfg.tol, max_iter=cfg.max_iter, M=cfg.series_truncation,
                       n_paths=cfg.mc_paths, seed=cfg.seed)


def _persistence(cfg: ExperimentConfig):
    grid = build_grid(cfg.spatial_domain(), cfg.grid_nodes)
    return persistence_verdict(cfg.chain(), cfg.patch_traits(), cfg.dispersal(), grid,
                               M_trunc=cfg.series_truncation, n_paths=cfg.mc_paths, seed=cfg.seed)


def cmd_equilibrium(cfg: ExperimentConfig, out_dir) -> dict:
    out = _out(out_dir)
    eq = _equilibrium(cfg)
    pers = _persistence(cfg)
    outputs = [report.write_json(out / "equilibrium.json", eq.to_json()),
               report.write_limit(out / "occupancy_z.csv", eq),
               report.write_json(out / "persistence.json", pers.to_json())]
    if eq.q_star is not None:
        outputs.append(report.write_field(out / "field.csv", eq.q_star))
    report.write_manifest(out, "equilibrium", cfg, outputs)
    return {"outputs": outputs, "equilibrium": eq, "persistence": pers}


def cmd_persistence(cfg: ExperimentConfig, out_dir) -> dict:
    out = _out(out_dir)
    pers = _persistence(cfg)
    outputs = [report.write_json(out / "persistence.json", pers.to_json())]
    report.write_manifest(out, "persistence", cfg, outputs)
    return {"outputs": outputs, "persistence": pers}


def cmd_fig1(cfg: ExperimentConfig, out_dir) -> dict:
    out = _out(out_dir)
    T = int(cfg.fig1.get("T", 500))
    panels = cfg.fig1.get("panels", list(FIG1_PANELS))
    paths, titles = [], []
    for k, p in enumerate(panels):
        chain = BetaJumpChain.beta(p["aL"], p["bL"], p["aR"], p["bR"],
                                   p.get("p_slope", 10.0), p.get("p_knee", 0.9))
        start = float(cfg.fig1.get("theta0", 0.5))
        paths.append(sample_path(chain, start, T, derive_seed(cfg.seed, k)))
        titles.append(f"L ~ Beta({p['aL']:g},{p['bL']:g}), R ~ Beta({p['aR']:g},{p['bR']:g})")
    header = ["t"] + [f"panel_{k}" for k in range(len(paths))]
    rows = ([t] + [float(p[t]) for p in paths] for t in range(T + 1))
    csv_path = report.write_csv(out / "fig1_paths.csv", header, rows)
    svg_path = plotting.plot_paths(csv_path, out / "fig1.svg", titles)
    report.write_manifest(out, "fig1", cfg, [csv_path, svg_path])
    return {"outputs": [csv_path, svg_path], "paths": paths}


def cmd_fig2(cfg: ExperimentConfig, out_dir) -> dict:
    """Simulated per-patch occupancy for several ``n`` against the limit."""
    out = _out(out_dir)
    sizes = list(cfg.fig2.get("n_patches", [50, 250]))
    replicates = int(cfg.fig2.get("replicates", cfg.replicates))
    eq = _equilibrium(cfg)
    limit_csv = report.write_limit(out / "fig2_limit.csv", eq)
    outputs = [limit_csv]
    sim_csvs, stats = {}, {}
    for n in sizes:
        errors, bias, max_se = [], [], 0.0
        for k in range(replicates):
            seed = derive_seed(cfg.seed, 1000 * n + k)
            summary = simulate_once(cfg, n, seed)
            limit = np.interp(summary.z, eq.grid.nodes, eq.occupancy)
            errors.append(np.abs(summary.proportion - limit))
            bias.append(limit - summary.proportion)
            max_se = max(max_se, float(np.nanmax(summary.stderr)))
            if k == 0:
                path = report.write_occupancy(out / f"fig2_sim_n{n}.csv", summary)
                sim_csvs[f"n = {n}"] = path
                outputs.append(path)
        errors, bias = np.concatenate(errors), np.concatenate(bias)
        stats[str(n)] = {"median_abs_error": float(np.median(errors)),
                         "mean_limit_minus_sim": float(bias.mean()),
                         "max_stderr": max_se, "replicates": replicates}
        log.info("n=%d median |sim - limit| = %.4f", n, stats[str(n)]["median_abs_error"])
    svg = plotting.plot_occupancy(sim_csvs, limit_csv, out / "fig2.svg")
    outputs.append(svg)
    summary_json = report.write_json(out / "fig2_summary.json", {
        "T_steps": cfg.T_steps, "n_patches": sizes, "stats": stats,
        "limit_center": float(np.interp(5.0, eq.grid.nodes, eq.occupancy)),
        "limit_edge": float(eq.occupancy[0])})
    outputs.append(summary_json)
    report.write_manifest(out, "fig2", cfg, outputs)
    return {"outputs": outputs, "stats": stats, "equilibrium": eq}


HANDLERS = {"simulate": cmd_simulate, "equilibrium": cmd_equilibrium,
            "persistence": cmd_persistence, "fig1": cmd_fig1, "fig2": cmd_fig2}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metapopsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HANDLERS[name].__doc__)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--steps", type=int, default=None, help="override T_steps")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.steps is not None:
            cfg = dataclasses.replace(cfg, T_steps=args.steps)
        out = args.out or cfg.output_dir
        result = HANDLERS[args.command](cfg, out)
    except MetapopError as exc:
        print(f"metapopsim: error: {exc}", file=sys.stderr)
        return 2
    for path in result["outputs"]:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
