"""Command-line interface: ``siapm <verb> [--config PATH] [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 numerical or convergence
error, 4 input/output error.
"""

import argparse
import math
import os
import sys

import numpy as np

from . import config as cfgmod
from . import crystal, experiments, fit, motion, rbmodel, svg
from .config import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def resolve_eta(cfg):
    """Per-ion Lamb-Dicke parameter used by simulation and fitting."""
    if cfg.eta != "auto":
        return float(cfg.eta)
    if cfg.rb_targets == "one-ion":
        return motion.single_ion_lamb_dicke(cfg.trap)
    return motion.axial_modes(cfg.trap, 2)[0].lamb_dicke[0]


def noise_model(cfg):
    mode = experiments.ThermalMode((resolve_eta(cfg),), cfg.n0, cfg.delta_n, label="COM")
    return experiments.NoiseModel(
        modes=(mode,), spam_error=cfg.spam_error, dark_spam_error=cfg.dark_spam_error,
        overrotation_sigma=cfg.overrotation_sigma, dephasing_per_us=cfg.dephasing_per_us,
        step_error=cfg.step_error, d_state_decay_rate=cfg.d_state_decay_rate,
        pi2_duration=cfg.pi2_duration_s, modulation_duration=cfg.modulation_duration_s,
        fock_granularity=cfg.fock_granularity)


def _ctx(cfg):
    return cfg.trap if cfg.use_crystal_phases else None


def _write(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# -- verbs --------------------------------------------------------------------


def cmd_design(cfg, out, ions=None, pair=None, phase=None):
    ions = cfg.chain_ions if ions is None else ions
    pair_name = cfg.pair if pair is None else pair
    phase = cfg.target_phase_rad if phase is None else phase
    ctx = cfg.trap
    pair_idx = crystal.resolve_pair(pair_name if ions == 3 else (0, 1), ions)
    geom = crystal.chain_positions(ions, ctx.species, ctx.omega0)
    print(f"chain of {ions} ions at {cfg.axial_frequency_hz / 1e6:.4g} MHz, pair {pair_idx[0] + 1}-{pair_idx[1] + 1}")
    if ions == 2:
        d0 = crystal.equilibrium_separation(ctx.species, ctx.omega0)
        print(f"d0 = {d0 * 1e6:.4f} um")
    print("spacings (um): " + ", ".join(f"{s * 1e6:.4f}" for s in geom.spacings))
    print(f"target differential phase = {phase:.6g} rad")
    solutions = {}
    for branch in ("increase", "decrease"):
        try:
            x = crystal.solve_scaling_for_phase(ctx, pair_idx, ions, phase, branch)
            solutions[branch] = x
            print(f"  {branch:>8s}: dw/w0 = {x:+.4f}")
        except crystal.NoSolutionError as exc:
            print(f"  {branch:>8s}: unreachable ({exc})")
    if cfg.branch not in solutions:
        raise crystal.NoSolutionError(f"no {cfg.branch} solution for phase {phase}", math.nan)
    x = solutions[cfg.branch]
    w = motion.make_modulation_waveform(0.0, x, cfg.waveform_points, cfg.sample_rate_hz)
    _write(os.path.join(out, "waveform.csv"), w.to_csv())
    fine = motion.apply_filter(motion.upsample(w, cfg.simulation_upsample),
                               motion.FilterModel(cfg.filter_cutoff_hz))
    print("waveform dw/w0: " + ", ".join(f"{s:.4f}" for s in w.samples))
    n_raw = motion.simulate_com_excitation(motion.upsample(w, cfg.simulation_upsample),
                                           cfg.stray_field_v_per_m, ctx.species, ctx.omega0, ions)
    n_filt = motion.simulate_com_excitation(fine, cfg.stray_field_v_per_m, ctx.species,
                                            ctx.omega0, ions)
    print(f"COM excitation at {cfg.stray_field_v_per_m:g} V/m: unfiltered {n_raw:.4g}, "
          f"filtered {n_filt:.4g} phonons")
    print(f"sudden squeezing estimate: {motion.sudden_squeeze_phonons(1.0, 1.0 + x):.4g} phonons")
    return EXIT_OK


def cmd_chi(theta0, nbar, eta):
    ex = rbmodel.chi_exact(theta0, nbar, eta)
    ld = rbmodel.chi_ld(theta0, nbar, eta)
    print(f"chi_exact({theta0:.6g}, {nbar:.6g}, {eta:.6g}) = {ex:.12g}")
    print(f"chi_ld   ({theta0:.6g}, {nbar:.6g}, {eta:.6g}) = {ld:.12g}")
    return EXIT_OK


def cmd_simulate_rb(cfg, out):
    ds = experiments.run_rb(cfg.rb_lengths, cfg.rb_sequences, cfg.rb_shots, cfg.rb_targets,
                            noise_model(cfg), cfg.seed, _ctx(cfg), cfg.intensity_weights)
    _write(os.path.join(out, "rb.csv"), ds.to_csv())
    panel = svg.Panel("RB decay", "sequence length", "fidelity", 520, 340)
    for ion in ds.ions:
        rows = ds.rows_for(ion)
        panel.add([r.length for r in rows], [r.mean_fidelity for r in rows],
                  [r.sem for r in rows], f"ion {ion}")
    _write(os.path.join(out, "rb.svg"), svg.figure([panel]))
    for r in ds.rows:
        print(f"l={r.length:5d} ion {r.ion}: F = {r.mean_fidelity:.5f} +/- {r.sem:.5f}")
    return EXIT_OK


def cmd_fit_rb(cfg, out, dataset_path):
    with open(dataset_path, encoding="utf-8") as fh:
        ds = experiments.RBDataset.from_csv(fh.read())
    if not ds.rows:
        raise experiments.DatasetError(f"{dataset_path}: no data rows")
    results = fit.fit_rb(ds, resolve_eta(cfg), cfg.n0, cfg.chi_impl, cfg.step_duration_s)
    print(f"{'ion':>4s} {'eps_SPAM':>20s} {'eps_step':>20s} {'dn/step':>20s} {'quanta/ms':>16s}")
    for ion, res in results.items():
        cells = [f"{res.params[i]:.3g} ({res.stderr[i]:.2g})" for i in range(3)]
        q = f"{res.extras['quanta_per_ms']:.3g} ({res.extras['quanta_per_ms_err']:.2g})"
        print(f"{ion:>4d} {cells[0]:>20s} {cells[1]:>20s} {cells[2]:>20s} {q:>16s}")
        if not res.converged:
            print(f"  ion {ion}: fit did not converge")
        _write(os.path.join(out, f"fit_ion{ion}.csv"), res.to_csv())
    return EXIT_OK


def cmd_simulate_ramsey(cfg, out):
    phases = np.linspace(0, 2 * math.pi, cfg.ramsey_points)
    noise = noise_model(cfg)
    lines = ["phase_rad,target_ion,ion,bright_probability,bright_fraction"]
    panels = []
    for target in (0, 1):
        exact, emp = experiments.run_ramsey(target, phases, noise, cfg.ramsey_shots,
                                            cfg.seed + target, _ctx(cfg), cfg.intensity_weights)
        panel = svg.Panel(f"target ion {target + 1}", "Ramsey phase (rad)", "bright probability")
        for ion in (0, 1):
            for ph, pe, pm in zip(phases, exact[:, ion], emp[:, ion]):
                lines.append(f"{ph:.12g},{target + 1},{ion + 1},{pe:.12g},{pm:.12g}")
            panel.add(phases, emp[:, ion], label=f"ion {ion + 1}")
        panels.append(panel)
        sems = np.sqrt(np.clip(emp[:, target] * (1 - emp[:, target]), 0.25 / cfg.ramsey_shots, None)
                       / cfg.ramsey_shots)
        sampled = fit.fit_sinusoid(phases, emp[:, target], sems)
        ideal = fit.fit_sinusoid(phases, exact[:, target], sems)
        spect = emp[:, 1 - target]
        print(f"target ion {target + 1}: contrast {ideal['contrast']:.4f} (exact), "
              f"sampled {sampled['contrast']:.4f} +/- {sampled.error('contrast'):.4f}; "
              f"spectator bright fraction {spect.min():.4f}..{spect.max():.4f}")
    _write(os.path.join(out, "ramsey.csv"), "\n".join(lines) + "\n")
    _write(os.path.join(out, "ramsey.svg"), svg.figure(panels))
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="random seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    p = argparse.ArgumentParser(prog="siapm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    d = sub.add_parser("design", parents=[common], help="confinement change for a phase")
    d.add_argument("--ions", type=int, choices=(2, 3))
    d.add_argument("--pair", choices=("adjacent", "edge"))
    d.add_argument("--phase", type=float, help="differential phase (rad)")
    sub.add_parser("simulate-ramsey", parents=[common], help="SIAPM Ramsey scans")
    sub.add_parser("simulate-rb", parents=[common], help="simulated RB dataset")
    f = sub.add_parser("fit-rb", parents=[common], help="fit an RB dataset CSV")
    f.add_argument("dataset")
    c = sub.add_parser("chi", parents=[common], help="evaluate chi_exact and chi_ld")
    c.add_argument("--theta0", type=float, default=math.pi)
    c.add_argument("--nbar", type=float, required=True)
    c.add_argument("--eta", type=float, required=True)
    sub.add_parser("config", parents=[common], help="print the effective configuration")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load(args.config) if args.config else cfgmod.Config()
        over = {}
        if args.seed is not None:
            over["seed"] = args.seed
        if args.out is not None:
            over["output_dir"] = args.out
        cfg = cfg.with_overrides(**over)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read configuration: {exc}", file=sys.stderr)
        return EXIT_IO
    out = cfg.output_dir
    try:
        if args.verb == "design":
            return cmd_design(cfg, out, args.ions, args.pair, args.phase)
        if args.verb == "chi":
            return cmd_chi(args.theta0, args.nbar, args.eta)
        if args.verb == "simulate-rb":
            return cmd_simulate_rb(cfg, out)
        if args.verb == "fit-rb":
            return cmd_fit_rb(cfg, out, args.dataset)
        if args.verb == "simulate-ramsey":
            return cmd_simulate_ramsey(cfg, out)
        if args.verb == "config":
            sys.stdout.write(cfgmod.dumps(cfg))
            return EXIT_OK
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (experiments.DatasetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (crystal.NoSolutionError, fit.FitError, motion.IntegrationError,
            ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
