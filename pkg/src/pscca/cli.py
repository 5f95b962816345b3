"""Command-line interface: ``pscca simulate | fit | compare``.

Settings come from an optional YAML/JSON config file and are overridden
by flags.  Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage
or validation error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import __version__
from .exceptions import PsccaError
from .io import read_count_pair, write_counts, write_json, write_matrix, write_table
from .model import Hyperparams
from .sampler import ChainConfig, psrf, run_chain
from .simulation import COMPARISON_METHODS, LossTable, ScenarioSpec, generate, run_comparison
from .summaries import export_heatmap_grid, summarize_cca, summarize_correlations

log = logging.getLogger("pscca")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
PSRF_WARN = 1.1
CONFIG_KEYS = {"seed", "out_dir", "level", "methods", "replicates", "ridge", "stein", "y1",
               "y2", "fit_d", "chain", "model", "scenario"}
CHAIN_KEYS = {"n_iter", "burn_in", "n_chains", "thin", "slice_width", "slice_max_doublings",
              "store"}
MODEL_KEYS = {"d", "k_mu", "nu_theta", "s2_theta"}
SCENARIO_KEYS = {"scenario", "d_true", "D1", "D2", "N", "cov_model", "sigma2",
                 "loading_scale", "mu_mean"}


class UsageError(ValueError):
    """Invalid configuration, flags or inputs (exit code 2)."""


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings of one command."""

    command: str
    seed: int
    out_dir: Path
    chain: ChainConfig
    model: dict = field(default_factory=dict)
    scenario: Optional[ScenarioSpec] = None
    level: float = 0.95
    methods: tuple = ("pscca", "pearson", "spearman")
    replicates: int = 20
    ridge: float = 0.1
    stein: bool = False
    fit_d: Optional[int] = None
    y1: Optional[Path] = None
    y2: Optional[Path] = None
    quiet: bool = False

    def manifest(self) -> dict:
        out = {"command": self.command, "seed": self.seed, "version": __version__}
        if self.command != "fit":
            out["scenario"] = dataclasses.asdict(self.scenario)
        if self.command != "simulate":
            out.update(chain=dataclasses.asdict(self.chain), model=self.model, level=self.level)
        if self.command == "fit":
            out.update(y1=self.y1.name, y2=self.y2.name)
        if self.command == "compare":
            out.update(methods=list(self.methods), replicates=self.replicates,
                       ridge=self.ridge, stein=self.stein, fit_d=self.fit_d)
        return out


# --------------------------------------------------------------------------
# argument parsing and config resolution
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML or JSON config file")
    common.add_argument("--seed", type=int, help="master random seed")
    common.add_argument("--out-dir", type=Path, help="output directory")
    common.add_argument("--quiet", action="store_true", help="suppress progress messages")

    chain = argparse.ArgumentParser(add_help=False)
    chain.add_argument("--chains", type=int, help="number of chains")
    chain.add_argument("--iters", type=int, help="iterations per chain")
    chain.add_argument("--burn-in", type=int, help="discarded leading iterations")
    chain.add_argument("--thin", type=int, help="keep every thin-th draw")
    chain.add_argument("--level", type=float, help="credible level of summaries")

    parser = argparse.ArgumentParser(prog="pscca", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a scenario data set")
    p.add_argument("--d", type=int, help="true latent dimension")

    p = sub.add_parser("fit", parents=[common, chain], help="fit the model to two count files")
    p.add_argument("--y1", type=Path, help="first count matrix")
    p.add_argument("--y2", type=Path, help="second count matrix")
    p.add_argument("--d", type=int, help="latent dimension")

    p = sub.add_parser("compare", parents=[common, chain],
                       help="compare methods on simulated replicates")
    p.add_argument("--d", type=int, help="latent dimension used when fitting")
    p.add_argument("--methods", type=_method_list,
                   help=f"comma-separated subset of {','.join(COMPARISON_METHODS)}")
    p.add_argument("--replicates", type=int, help="number of simulated replicates")
    return parser


def _method_list(text: str) -> tuple:
    methods = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in methods if m not in COMPARISON_METHODS]
    if bad or not methods:
        raise argparse.ArgumentTypeError(
            f"unknown method(s) {bad}; choose from {','.join(COMPARISON_METHODS)}")
    return methods


def load_config(path: Optional[Path]) -> dict:
    if path is None:
        return {}
    if not path.is_file():
        raise UsageError(f"config file {path} does not exist")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must be a mapping at top level")
    _check_keys(data, CONFIG_KEYS, "config")
    for name, keys in (("chain", CHAIN_KEYS), ("model", MODEL_KEYS),
                       ("scenario", SCENARIO_KEYS)):
        section = data.get(name, {})
        if not isinstance(section, dict):
            raise UsageError(f"config section {name!r} must be a mapping")
        _check_keys(section, keys, f"config section {name!r}")
    return data


def _check_keys(mapping, allowed, where):
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise UsageError(f"unknown key(s) {unknown} in {where}; allowed: {sorted(allowed)}")


def _pick(flag, value, default):
    return flag if flag is not None else (value if value is not None else default)


def resolve(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, config file and flags (flags win) and validate."""
    cfg = load_config(args.config)
    seed = _pick(args.seed, cfg.get("seed"), 0)
    out_dir = Path(_pick(args.out_dir, cfg.get("out_dir"), "."))
    chain_cfg = dict(cfg.get("chain", {}))
    for flag, key in (("chains", "n_chains"), ("iters", "n_iter"), ("burn_in", "burn_in"),
                      ("thin", "thin")):
        if getattr(args, flag, None) is not None:
            chain_cfg[key] = getattr(args, flag)
    if "n_iter" in chain_cfg and "burn_in" not in chain_cfg:
        chain_cfg["burn_in"] = chain_cfg["n_iter"] // 2
    model = dict(cfg.get("model", {}))
    scen = dict(cfg.get("scenario", {}))
    try:
        chain = ChainConfig(seed=seed, **chain_cfg)
        common = dict(command=args.command, seed=int(seed), out_dir=out_dir, chain=chain,
                      quiet=args.quiet, level=float(_pick(getattr(args, "level", None),
                                                          cfg.get("level"), 0.95)))
        if args.command == "simulate":
            if args.d is not None:
                scen["d_true"] = args.d
            return RunConfig(scenario=ScenarioSpec(seed=seed, **scen), **common)
        if args.command == "fit":
            if args.d is not None:
                model["d"] = args.d
            model.setdefault("d", 2)
            Hyperparams(**model)
            y1 = _pick(args.y1, cfg.get("y1"), None)
            y2 = _pick(args.y2, cfg.get("y2"), None)
            if y1 is None or y2 is None:
                raise UsageError("fit needs both --y1 and --y2 (or y1/y2 in the config)")
            y1, y2 = Path(y1), Path(y2)
            for p in (y1, y2):
                if not p.is_file():
                    raise UsageError(f"input file {p} does not exist")
            if not 0 < common["level"] < 1:
                raise UsageError("level must lie in (0, 1)")
            return RunConfig(model=model, y1=y1, y2=y2, **common)
        spec = ScenarioSpec(seed=seed, **scen)
        fit_d = _pick(args.d, cfg.get("fit_d"), model.pop("d", None))
        methods = args.methods or _method_list(",".join(cfg.get("methods", ["pscca", "pearson",
                                                                              "spearman"])))
        replicates = int(_pick(args.replicates, cfg.get("replicates"), 20))
        if replicates < 1:
            raise UsageError("replicates must be positive")
        fit_d = spec.d_true if fit_d is None else int(fit_d)
        if "pscca" in methods:
            Hyperparams(d=fit_d, **model)
        stein = cfg.get("stein", False)
        if not isinstance(stein, bool):
            raise UsageError("stein must be true or false")
        return RunConfig(scenario=spec, model=model, methods=methods, replicates=replicates,
                         ridge=float(cfg.get("ridge", 0.1)), stein=stein, fit_d=fit_d,
                         **common)
    except argparse.ArgumentTypeError as exc:
        raise UsageError(str(exc)) from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(f"invalid setting: {exc}") from None


def n_workers() -> int:
    """Worker cap from ``PSCCA_THREADS``, defaulting to the core count."""
    cores = os.cpu_count() or 1
    raw = os.environ.get("PSCCA_THREADS")
    if raw is None or raw.strip() == "":
        return cores
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"PSCCA_THREADS must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise UsageError(f"PSCCA_THREADS must be a positive integer, got {raw!r}")
    return value


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _names(prefix, n):
    return [f"{prefix}{i + 1}" for i in range(n)]


def cmd_simulate(rc: RunConfig) -> list:
    """Write y1.csv, y2.csv, the true parameters and the true correlation targets."""
    sim = generate(rc.scenario)
    d1, d2, n = sim.data.dims
    f1, f2, samples = _names("x", d1), _names("y", d2), _names("s", n)
    out = rc.out_dir
    st = sim.true_state
    truth = {name: getattr(st, name) for name in
             ("w1", "w2", "mu1", "mu2", "sigma2_1", "sigma2_2", "z", "theta1", "theta2")}
    return [
        write_counts(out / "y1.csv", sim.data.y1, f1, samples),
        write_counts(out / "y2.csv", sim.data.y2, f2, samples),
        write_json(out / "truth.json", truth),
        write_matrix(out / "true_cross_corr.csv", sim.true_cross_corr, f1, f2),
        write_table(out / "true_cca.csv", ("rank", "value"),
                    [(k + 1, float(v)) for k, v in enumerate(sim.true_cca)]),
    ]


def cmd_fit(rc: RunConfig) -> list:
    """Fit the model and write correlation, CCA and convergence summaries.

    ``timing.json`` is the only output that differs between identical runs.
    """
    data = read_count_pair(rc.y1, rc.y2)
    d1, d2, n = data.dims
    hp = Hyperparams(**rc.model)
    try:
        hp.check_dims(d1, d2)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    log.info("fitting d=%d to %d + %d features, %d samples", hp.d, d1, d2, n)
    start = time.perf_counter()
    draws = run_chain(data, hp, rc.chain, n_jobs=n_workers())
    elapsed = time.perf_counter() - start
    corr = summarize_correlations(draws, rc.level, data.feature_names_1, data.feature_names_2)
    cca = summarize_cca(draws, hp.d, rc.level)
    out = rc.out_dir
    diag = {"n_draws": len(draws), "store": draws.mode, "psrf": {}, "warnings": []}
    if draws.divergent_chains:
        diag["warnings"].append(f"non-finite log posterior in chain(s) {list(draws.divergent_chains)}")
    for name in ("sigma2_1", "sigma2_2", "tau1", "tau2"):
        try:
            value = psrf(draws, name)
        except ValueError as exc:
            diag["psrf"][name] = None
            diag["warnings"].append(f"psrf({name}) unavailable: {exc}")
            continue
        diag["psrf"][name] = value
        if not value < PSRF_WARN:
            diag["warnings"].append(f"psrf({name}) = {value:.3f} >= {PSRF_WARN}")
    for w in diag["warnings"]:
        log.warning(w)
    return [
        export_heatmap_grid(corr, out / "correlation_summary.csv"),
        write_table(out / "cca_summary.csv", ("rank", "mean", "lower", "upper"),
                    [(k + 1, float(m), float(lo), float(hi)) for k, (m, lo, hi)
                     in enumerate(zip(cca.means, cca.lower, cca.upper))]),
        write_json(out / "diagnostics.json", diag),
        write_json(out / "timing.json", {"seconds": elapsed,
                                         "seconds_per_iteration":
                                             elapsed / (rc.chain.n_iter * rc.chain.n_chains)}),
    ]


def cmd_compare(rc: RunConfig) -> list:
    """Write per-replicate losses and their aggregate summary."""
    log.info("comparing %s on %d replicate(s)", ",".join(rc.methods), rc.replicates)
    table = run_comparison(rc.scenario, rc.methods, rc.chain, n_rep=rc.replicates,
                           fit_d=rc.fit_d, ridge=rc.ridge, hp_kwargs=rc.model,
                           n_jobs=n_workers(), stein=rc.stein)
    agg = table.aggregate()
    cols = ("scenario", "model", "method", "metric", "n", "mean", "median", "se",
            "lower", "upper")
    out = rc.out_dir
    return [
        write_table(out / "losses.csv", LossTable.COLUMNS, table.rows),
        write_table(out / "loss_summary.csv", cols, [tuple(a[c] for c in cols) for a in agg]),
    ]


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "compare": cmd_compare}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(format="pscca: %(levelname)s: %(message)s",
                        level=logging.WARNING if args.quiet else logging.INFO, force=True)
    try:
        rc = resolve(args)
        rc.out_dir.mkdir(parents=True, exist_ok=True)
        if not os.access(rc.out_dir, os.W_OK):
            raise UsageError(f"output directory {rc.out_dir} is not writable")
        files = COMMANDS[rc.command](rc)
        files.append(write_json(rc.out_dir / "manifest.json", rc.manifest()))
    except (UsageError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (PsccaError, ArithmeticError, RuntimeError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    for f in files:
        log.info("wrote %s", f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
