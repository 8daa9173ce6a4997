"""Command-line front end: ``multisym verify <config>`` and ``multisym run <config>``.

Exit codes: 0 success, 1 failed check or failed step, 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import conservation as cs
from . import integrator as it
from .errors import ConfigError, MultisymError, NewtonDiverged
from .scenarios import ScenarioConfig, load_config
from .snapshots import write_cells, write_json, write_manifest, write_snapshot
from .verify import run_checks

log = logging.getLogger("multisym")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def cmd_verify(cfg: ScenarioConfig, seed: int = 0) -> int:
    checks = run_checks(cfg, seed)
    passed = all(c.passed for c in checks)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    write_json(cfg.output_dir / "report.json", {
        "scenario": cfg.scenario, "seed": seed, "passed": passed,
        "checks": [c.to_dict() for c in checks],
    })
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.3e} (tol {c.tolerance:.1e}) {c.detail}".rstrip())
    print(f"{sum(c.passed for c in checks)}/{len(checks)} checks passed")
    return EXIT_OK if passed else EXIT_FAIL


def diagnostic_hooks(cfg: ScenarioConfig, asm: it.CellAssembly) -> dict:
    """Conservation series evaluated during a run."""
    model, grid = cfg.model, cfg.grid
    hooks = {}

    def energy(fld, k):
        return float(it.discrete_energy(asm, fld.phi[k - 1:k + 2])[0])

    hooks["energy"] = energy
    if all(grid.periodic(a) for a in range(grid.n_space)):
        hooks["momentum"] = lambda fld, k: it.discrete_momentum(asm, fld.phi[k:k + 2])[0].tolist()
    if cfg.constrained:
        hooks["constraint"] = lambda fld, k: float(np.max(np.abs(asm.J(fld.phi[k + 1]) - 1.0)))
    kind = model.energy.kind
    if kind in ("barotropic", "constant") and grid.n_space == 2 and grid.periodic(0) and grid.periodic(1):
        gen = cs.sine_stream()
        hooks["noether_divergence"] = lambda fld, k: float(np.max(np.abs(cs.noether_divergence(model, fld, grid, gen, k))))
    if kind in ("barotropic", "elastic") and not cfg.constrained:
        hooks["energy_continuity"] = lambda fld, k: float(np.max(np.abs(cs.energy_continuity_residual(model, fld, grid, k))))
    return hooks


def cmd_run(cfg: ScenarioConfig) -> int:
    model, grid = cfg.model, cfg.grid
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    lift = cfg.lift()
    asm = it.CellAssembly(model, grid, grid.n_space, lift)
    phi0, V0 = cfg.initial_state()
    report = {"scenario": cfg.scenario, "status": "ok", "n_steps": cfg.n_steps}
    try:
        init = it.initialize(model, grid, phi0, V0, lift, cfg.settings, cfg.constrained, cfg.seed_order, asm)
        traj = it.run(model, init, grid, cfg.settings, cfg.n_steps, constrained=cfg.constrained,
                      config=cfg.quadrature, hooks=diagnostic_hooks(cfg, asm), cadence=cfg.cadence)
    except NewtonDiverged as exc:
        report.update(status="failed", error=str(exc), step=exc.step, residual=exc.residual)
        write_json(out / "report.json", report)
        print(f"step {exc.step} failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except MultisymError as exc:
        if isinstance(exc, ConfigError):
            raise
        report.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        write_json(out / "report.json", report)
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAIL

    fld = traj.field
    # the last level of a run has no successor; it is still a committed level
    levels = sorted(set(range(0, fld.n_levels, cfg.snapshot_cadence)) | {fld.n_levels - 1})
    entries = []
    for k in levels:
        entry = {"level": k, "time": fld.time(k, grid), "phi": f"phi_{k:06d}.csv"}
        write_snapshot(out / entry["phi"], grid, fld.phi[k])
        if fld.lam is not None and np.all(np.isfinite(fld.lam[k])):
            entry["lam"] = f"lam_{k:06d}.csv"
            write_cells(out / entry["lam"], grid, fld.lam[k])
        entries.append(entry)
    write_json(out / "diagnostics.json", {name: [{"level": k, "value": v} for k, v in series]
                                          for name, series in traj.diagnostics.items()})
    report["newton_iterations"] = [s.iterations for s in traj.steps]
    if cfg.constrained and traj.steps:
        report["max_constraint"] = max(s.constraint for s in traj.steps)
    write_json(out / "report.json", report)
    write_manifest(out / "manifest.json", {
        "scenario": cfg.scenario, "config": cfg.raw, "grid": grid.to_dict(), "levels": entries,
        "diagnostics": "diagnostics.json", "report": "report.json",
    })
    print(f"{cfg.n_steps} steps, {len(entries)} snapshots written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multisym", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("verify", "run the invariant checks for a scenario"),
                           ("run", "integrate a scenario and write snapshots")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", type=Path, help="scenario configuration (YAML)")
        sp.add_argument("--output-dir", default=None, help="directory for reports and snapshots")
        sp.add_argument("--seed", type=int, default=0, help="seed for randomized check sampling")
        sp.add_argument("--refine", type=int, default=1, help="uniform refinement multiplier")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, refine=args.refine, output_dir=args.output_dir)
        if args.command == "verify":
            return cmd_verify(cfg, args.seed)
        return cmd_run(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
