"""Command-line front end.

Exit codes: 0 success, 2 validation failure, 3 non-convergence,
4 impossible data.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from prevsynth import diagnostics, reports
from prevsynth.dataio import RunManifest
from prevsynth.errors import ImpossibleDataError, ValidationError
from prevsynth.inference import SamplerConfig, run
from prevsynth.model import PriorSpec
from prevsynth.observation import BiasStructure, validate

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3
EXIT_IMPOSSIBLE = 4

_SAMPLER_KEYS = {"chains", "iterations", "burn_in", "thin", "mix_then_bias", "scalar_regression", "init_sd", "adapt_start"}


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _sampler_config(args, manifest: RunManifest, n_obs: int) -> SamplerConfig:
    opts = {k: v for k, v in manifest.sampler.items() if k in _SAMPLER_KEYS}
    unknown = set(manifest.sampler) - _SAMPLER_KEYS
    if unknown:
        raise ValidationError([f"manifest: unknown sampler option(s) {sorted(unknown)}"])
    if args.chains is not None:
        opts["chains"] = args.chains
    if args.iters is not None:
        opts["iterations"] = args.iters
    if args.burnin is not None:
        opts["burn_in"] = args.burnin
    opts["seed"] = args.seed if args.seed is not None else manifest.seed
    if n_obs == 0:
        # without data the regression terms are independent; single-site moves mix best
        opts.setdefault("scalar_regression", True)
    try:
        return SamplerConfig(**opts)
    except (TypeError, ValueError) as e:
        raise ValidationError([f"sampler config: {e}"]) from None


def _prior(manifest: RunManifest) -> PriorSpec:
    try:
        return PriorSpec(**manifest.prior)
    except (TypeError, ValueError) as e:
        raise ValidationError([f"prior config: {e}"]) from None


def _structure(args, manifest) -> BiasStructure:
    raw = args.bias_structure or manifest.bias_structure
    try:
        return BiasStructure.parse(raw)
    except ValueError:
        raise ValidationError([f"unknown bias structure {raw!r}"]) from None


def _load(args):
    manifest = RunManifest.load(args.manifest)
    census, obs = manifest.load_inputs()
    structure = _structure(args, manifest)
    problems = []
    try:
        obs.adjusted_to_city()
    except ValueError as e:
        problems.append(str(e))
    problems += validate(obs, structure, allow_prior_only=args.allow_prior_only)
    if len(obs) == 0 and not args.allow_prior_only:
        problems.append("no observations (use --allow-prior-only for a prior-only fit)")
    return manifest, census, obs, structure, problems


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _kinds(targets) -> str:
    """``["rho_ever[20-29]", "rho_ever[30-39]"]`` to ``"rho_ever x2"``."""
    counts = {}
    for t in targets:
        k = t.split("[")[0]
        counts[k] = counts.get(k, 0) + 1
    return ", ".join(k if n == 1 else f"{k} x{n}" for k, n in counts.items())


def cmd_validate(args) -> int:
    try:
        _, _, obs, structure, problems = _load(args)
    except ValidationError as e:
        problems, obs, structure = e.problems, None, None
    if obs is not None:
        rows = [["Source", "Level", "Information", "Biased targets", "Unbiased targets", "History"]]
        for r in obs.table1():
            rows.append([r["source"], r["level"], r["information"], _kinds(r["biased"]), _kinds(r["unbiased"]), ", ".join(r["history"])])
        print(diagnostics.format_table(rows))
        print()
    if problems:
        for p in problems:
            print(f"error: {p}")
        return EXIT_INVALID
    print(f"ok: {len(obs)} observations, bias structure {structure.value}")
    return EXIT_OK


def cmd_fit(args) -> int:
    manifest, census, obs, structure, problems = _load(args)
    if problems:
        raise ValidationError(problems)
    config = _sampler_config(args, manifest, len(obs))
    out = _out_dir(args)
    summ = run(obs, census, structure, config, _prior(manifest), check_identifiability=not args.allow_prior_only)
    summ.to_json(out / "summary.json")
    tables = reports.fit_tables(summ, census)
    diagnostics.dump_json(tables, out / "tables.json")
    reference = manifest.reference_sources or diagnostics.biased_sources(obs)
    dev = diagnostics.posterior_mean_deviance(summ, reference)
    diagnostics.dump_json(dev.to_dict(), out / "deviance.json")
    text = reports.format_fit_tables(tables)
    text += "\nPer-source posterior mean deviance\n" + reports.deviance_table(summ) + "\n"
    text += "\nConvergence (* = R-hat >= 1.05)\n" + reports.convergence_table(summ) + "\n"
    (out / "report.txt").write_text(text)
    if args.trace:
        summ.write_trace(out / "trace.csv")
    print(text)
    if not summ.converged:
        _log("warning: convergence not reached for some quantities (marked *)")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_sweep(args) -> int:
    manifest, census, obs, _, problems = _load(args)
    # each variant runs its own identifiability check
    problems = [p for p in problems if not p.startswith("identifiability")]
    if problems:
        raise ValidationError(problems)
    config = _sampler_config(args, manifest, len(obs))
    out = _out_dir(args)
    rep = diagnostics.bias_sweep(
        obs, census, config, reference=manifest.reference_sources, prior=_prior(manifest),
        progress=lambda k, v: _log(f"{k}: deviance {v.deviance.model:,.1f}"),
    )
    diagnostics.dump_json(rep.to_dict(), out / "sweep.json")
    text = "Posterior mean deviance by bias formulation (* = not converged)\n" + rep.deviance_table()
    text += "\n\nPrevalence by bias formulation, % (95% interval)\n" + rep.quantity_table() + "\n"
    (out / "sweep.txt").write_text(text)
    print(text)
    return EXIT_OK


def cmd_cv(args) -> int:
    manifest, census, obs, structure, problems = _load(args)
    if problems:
        raise ValidationError(problems)
    config = _sampler_config(args, manifest, len(obs))
    out = _out_dir(args)
    rep = diagnostics.lodo_cv(
        obs, census, structure, config, _prior(manifest),
        progress=lambda k, r: _log(f"removed {k}: converged={r.converged}"),
    )
    diagnostics.dump_json(rep.to_dict(), out / "cv.json")
    text = "Posterior mean deviance with one source removed (* = not converged)\n" + rep.deviance_table()
    text += "\n\nPrevalence with one source removed, % (95% interval; * = not converged)\n" + rep.quantity_table() + "\n"
    if rep.conflicts:
        text += "\nPotential conflicts (source deviance falls when another is removed)\n"
        text += diagnostics.format_table([["Source", "Removed", "Deviance drop"]] + [[j, k, f"{d:,.2f}"] for j, k, d in rep.conflicts]) + "\n"
    (out / "cv.txt").write_text(text)
    print(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from prevsynth import synthgen

    if args.scenario in ("facsimile", "facsimile-zero-bias"):
        scenario = synthgen.facsimile_scenario(zero_bias=args.scenario.endswith("zero-bias"))
    else:
        path = Path(args.scenario)
        if not path.exists():
            raise ValidationError([f"scenario {path} not found"])
        try:
            scenario = synthgen.TrueScenario.from_yaml(path)
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError([f"scenario {path}: {e}"]) from None
    seed = args.seed if args.seed is not None else 0
    obs = synthgen.generate_observations(scenario, seed)
    problems = validate(obs, BiasStructure.B5)
    if problems:
        raise ValidationError(problems)
    out = synthgen.write_corpus(scenario, obs, args.out, seed)
    print(f"wrote {len(obs)} observations from {len(obs.source_ids)} sources to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prevsynth", description="Stratified prevalence by Bayesian evidence synthesis.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, need_out=True):
        sp.add_argument("--manifest", required=True, help="run manifest (YAML)")
        if need_out:
            sp.add_argument("--out", required=True, help="output directory")
        else:
            sp.add_argument("--out", help="unused; accepted for symmetry")
        sp.add_argument("--seed", type=int, help="override the manifest seed")
        sp.add_argument("--bias-structure", choices=[s.value for s in BiasStructure])
        sp.add_argument("--chains", type=int)
        sp.add_argument("--iters", type=int, help="iterations per chain, burn-in included")
        sp.add_argument("--burnin", type=int)
        sp.add_argument("--allow-prior-only", action="store_true", help="waive the unbiased-information requirement")
        sp.add_argument("--trace", action="store_true", help="write retained draws to trace.csv")

    common(sub.add_parser("validate", help="check inputs and identifiability"), need_out=False)
    common(sub.add_parser("fit", help="fit one bias structure"))
    common(sub.add_parser("sweep", help="fit all seven bias structures"))
    common(sub.add_parser("cv", help="leave-one-source-out cross-validation"))
    sp = sub.add_parser("simulate", help="write a synthetic corpus with known truth")
    sp.add_argument("--scenario", default="facsimile", help="scenario YAML, 'facsimile' or 'facsimile-zero-bias'")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    return p


COMMANDS = {"validate": cmd_validate, "fit": cmd_fit, "sweep": cmd_sweep, "cv": cmd_cv, "simulate": cmd_simulate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ValidationError as e:
        for prob in e.problems:
            print(f"error: {prob}", file=sys.stderr)
        return EXIT_INVALID
    except ImpossibleDataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IMPOSSIBLE


if __name__ == "__main__":
    sys.exit(main())
