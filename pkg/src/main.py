"""PMC-variance - command-line entry point."""

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from src import __version__
from src.alignment import ScoringScheme, lcs_fast, score, score_with_substitution
from src.config import (
    ENUMERATION_CHECKS,
    FULL_SCALE_M_STOP,
    AlignConfig,
    BoundsConfig,
    EmConfig,
    ModelSpec,
    RunManifest,
    TailConfig,
    VarianceConfig,
    VerifyConfig,
    load_config,
    resolve,
    to_dict,
    utc_now,
)
from src.counters import TripletPattern, combined_lower_bound_report, lower_bound_report, upper_bound_report
from src.errors import DomainError, NotPrimitive, ValidationError
from src.experiments import (
    EM_COLUMNS,
    VARIANCE_COLUMNS,
    estimate_eps_o,
    mcdiarmid_tail_check,
    read_em_csv,
    run_em,
    run_em_combined,
    tail_check_V,
    variance_growth_fit,
    variance_scan,
    write_csv,
    write_json,
)
from src.markov_model import (
    ChainSample,
    PairState,
    check_lumpable,
    coordinate_partition,
    equal_q_conditions,
    mixing_time_bound,
    primitivity_index,
    shipped_models,
    stationary,
)
from src.oracle import DEFAULT_CAP, VerificationSuite
from src.utils import format_duration, get_error_suggestion, parse_int_list, parse_pair, parse_sequence, setup_logging

logger = logging.getLogger("PMC-variance")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_VERIFY_FAILED = 4

DEFAULT_SEED = 42


def _shared_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--output-dir", default=".", help="Directory for outputs and the run manifest")
    shared.add_argument("--seed", type=int, help=f"Master seed (default {DEFAULT_SEED})")
    shared.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="Worker processes")
    shared.add_argument("--format", choices=["csv", "json"], default="csv", help="Tabular output format")
    shared.add_argument("--config", help="JSON config file or a previous run manifest")
    shared.add_argument("--verbose", "-v", action="store_true", help="Debug logging on stderr")
    shared.add_argument("--log-file", help="Also log to this file")
    return shared


def _model_parser() -> argparse.ArgumentParser:
    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--model", choices=["ind", "max", "min", "general", "file"], help="Model family")
    model.add_argument("--p", type=float)
    model.add_argument("--q", type=float)
    model.add_argument("--eps", type=float)
    model.add_argument("--p-prime", type=float)
    model.add_argument("--q-prime", type=float)
    model.add_argument("--lambda1", type=float)
    model.add_argument("--lambda2", type=float)
    model.add_argument("--mu1", type=float)
    model.add_argument("--mu2", type=float)
    model.add_argument("--matrix", help="Transition matrix JSON (with --model file)")
    model.add_argument("--scheme", help="Scoring scheme JSON (default: LCS)")
    return model


def build_parser() -> argparse.ArgumentParser:
    """
    Build the argument parser with one subparser per subcommand.

    Every tunable flag defaults to None so that a config file or a replayed
    manifest can supply it; the dataclass defaults apply last.

    Returns:
        The configured ArgumentParser
    """
    shared, model = _shared_parser(), _model_parser()
    parser = argparse.ArgumentParser(
        prog="pmc-variance",
        description="Pairwise Markov chains: alignment scores, the random transformation and variance bounds",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("matrices", parents=[shared, model], help="Build a model and print its properties")
    p.add_argument("--list", action="store_true", help="List the shipped model presets")

    p = sub.add_parser("align", parents=[shared], help="Score two sequences")
    p.add_argument("x", nargs="?", help="First sequence ('0110' or '0,1,1,0')")
    p.add_argument("y", nargs="?", help="Second sequence")
    p.add_argument("--scheme", help="Scoring scheme JSON (default: LCS)")
    p.add_argument("--substitute", help="INDEX:x,y - also score after replacing pair INDEX (0-based)")

    p = sub.add_parser("bounds", parents=[shared, model], help="Lower and upper moment bounds")
    p.add_argument("--pattern", help="'x,y' or 'A;B;D' (default 1,1)")
    p.add_argument("--pattern2", help="Second pattern: report the combined lower bound")
    p.add_argument("--eps-o", type=float, help="default 0.4")
    p.add_argument("--r", type=float, help="Moment order (default 2)")
    p.add_argument("--n", type=int, help="default 1200")
    p.add_argument("--b-o", type=float, help="default 0.9")

    p = sub.add_parser("verify", parents=[shared], help="Exhaustive enumeration checks")
    p.add_argument("--all", action="store_true")
    p.add_argument("--a3", action="store_true")
    p.add_argument("--uv", action="store_true")
    p.add_argument("--combined", action="store_true")
    p.add_argument("--propositions", action="store_true")
    p.add_argument("--clt", action="store_true")
    p.add_argument("--n", help="Sequence lengths for the enumeration checks (default 6,9)")
    p.add_argument("--cap", type=int, help=f"default {DEFAULT_CAP}")
    p.add_argument("--clt-max", type=int, help="default 10000")

    for name, help_text in (("simulate-em", "E(m) curves for one pattern"),
                            ("simulate-em-combined", "Pooled E(m) curves for two patterns")):
        p = sub.add_parser(name, parents=[shared, model], help=help_text)
        if name == "simulate-em":
            p.add_argument("--pattern", help="'x,y' or 'A;B;D' (default 1,1)")
        else:
            p.add_argument("--pattern1", help="default 1,0")
            p.add_argument("--pattern2", help="default 0,1")
        p.add_argument("--m-start", type=int)
        p.add_argument("--m-stop", type=int)
        p.add_argument("--m-step", type=int)
        p.add_argument("--chains", type=int)
        p.add_argument("--full-scale", action="store_true", help=f"m grid up to {FULL_SCALE_M_STOP}")
        p.add_argument("--reflect", action="store_true", default=None,
                       help="Score with 3m - LCS, for patterns that lower the LCS")

    p = sub.add_parser("variance", parents=[shared, model], help="Var(L_n) scan with the sandwich bounds")
    p.add_argument("--n-grid", help="e.g. 300,600,1200,2400")
    p.add_argument("--replicates", type=int)
    p.add_argument("--pattern")
    p.add_argument("--eps-o", type=float)
    p.add_argument("--em-csv", help="E(m) CSV to estimate eps_o from")

    p = sub.add_parser("tails", parents=[shared, model], help="Concentration of V and of the score")
    p.add_argument("--pattern")
    p.add_argument("--n", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--K", type=float)
    p.add_argument("--b-o", type=float)
    return parser


def _model_flags(args) -> dict:
    return {
        "kind": args.model, "p": args.p, "q": args.q, "eps": args.eps,
        "p_prime": args.p_prime, "q_prime": args.q_prime,
        "lambda1": args.lambda1, "lambda2": args.lambda2, "mu1": args.mu1, "mu2": args.mu2,
        "path": args.matrix,
    }


def _scheme_flag(args) -> Optional[dict]:
    if not getattr(args, "scheme", None):
        return None
    return json.loads(Path(args.scheme).read_text())


def _file_values(args) -> dict:
    return load_config(args.config) if args.config else {}


def _print_json(data) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def cmd_matrices(args, out: Path) -> tuple[dict, list[Path]]:
    """
    Build one model and report its stationary law, mixing bound and lumpability.

    Args:
        args: Parsed arguments of the ``matrices`` subcommand
        out: Output directory

    Returns:
        The config for the manifest and the written files
    """
    if args.list:
        presets = {name: {"label": P.label, "display": P.display().tolist()} for name, P in shipped_models().items()}
        _print_json(presets)
        return {"list": True}, []
    file_values = _file_values(args)
    spec = ModelSpec.from_dict({**file_values.get("model", {}),
                                **{k: v for k, v in _model_flags(args).items() if v is not None}})
    P = spec.build()
    pi = stationary(P)
    result = {
        "matrix": P.to_json(),
        "stationary": pi.probs.tolist(),
        "stationary_residual": pi.residual,
        "irreducible": True,
    }
    try:
        m, p_o = primitivity_index(P)
    except NotPrimitive as e:
        result["mixing"] = {"error": str(e)}
    else:
        result["mixing"] = {"m": m, "p_o": p_o}
        try:
            bound = mixing_time_bound(P)
            result["mixing"].update({"t_mix": bound.t_mix, "rho": bound.rho, "C": bound.C, "notes": bound.notes})
        except DomainError as e:
            result["mixing"]["error"] = str(e)
    if P.k == 2:
        result["equal_q_conditions"] = equal_q_conditions(P)
    result["lumpable"] = {
        axis: check_lumpable(P, coordinate_partition(P.k, i)).lumpable for i, axis in enumerate(("x", "y"))
    }
    _print_json(result)
    path = write_json(result, out / "matrices.json")
    return {"model": asdict(spec)}, [path]


def cmd_align(args, out: Path) -> tuple[dict, list[Path]]:
    """
    Score two sequences, and optionally the pair after one substitution.

    Args:
        args: Parsed arguments of the ``align`` subcommand
        out: Output directory for ``align.json``

    Returns:
        The resolved config and the written files

    Raises:
        LengthMismatch: if the sequences differ in length
        ConfigError: if a sequence is missing from both the flags and the config file
    """
    flags = {"x": args.x, "y": args.y, "scheme": _scheme_flag(args), "substitute": args.substitute}
    config = resolve(AlignConfig, _file_values(args), flags)
    x, y = parse_sequence(config.x), parse_sequence(config.y)
    k = max(x + y, default=0) + 1
    scheme = ScoringScheme.from_json(config.scheme) if config.scheme else ScoringScheme.lcs(max(k, 2))
    value = float(lcs_fast(x, y)) if scheme.is_lcs else score(x, y, scheme)
    result = {"score": value, "n": len(x), "scheme": scheme.name}
    if config.substitute:
        index_text, pair_text = config.substitute.split(":", 1)
        states = [xi * scheme.k + yi for xi, yi in zip(x, y)]
        z = ChainSample(np.asarray(states, dtype=np.int64), 0, "input", scheme.k)
        changed = score_with_substitution(z, int(index_text), PairState(*parse_pair(pair_text)), scheme)
        result["substituted_score"] = changed
        result["change"] = changed - value
    _print_json(result)
    path = write_json(result, out / "align.json")
    return to_dict(config), [path]


def cmd_bounds(args, out: Path) -> tuple[dict, list[Path]]:
    """
    Evaluate the lower and upper moment bounds for one model.

    With a second pattern the lower bound is the combined one.

    Returns:
        The resolved config and the path of ``bounds.json``
    """
    flags = {
        "model": _model_flags(args), "pattern": args.pattern, "pattern2": args.pattern2,
        "eps_o": args.eps_o, "r": args.r, "n": args.n, "b_o": args.b_o, "scheme": _scheme_flag(args),
    }
    config = resolve(BoundsConfig, _file_values(args), flags)
    P = config.model.build()
    pattern = TripletPattern.parse(config.pattern)
    if config.pattern2:
        lower = combined_lower_bound_report(P, pattern, TripletPattern.parse(config.pattern2),
                                            config.eps_o, config.r, config.n, b_o=config.b_o)
    else:
        lower = lower_bound_report(P, pattern, config.eps_o, config.r, config.n, b_o=config.b_o)
    upper = upper_bound_report(P, config.scoring(P.k), config.r, config.n)
    result = {"lower": lower.to_dict(), "upper": upper.to_dict()}
    _print_json(result)
    path = write_json(result, out / "bounds.json")
    return to_dict(config), [path]


def _verify_config(args) -> VerifyConfig:
    selected = [name for name in ENUMERATION_CHECKS if args.all or getattr(args, name)]
    if args.clt:
        selected.append("clt")
    flags = {
        "checks": selected or None,
        "ns": parse_int_list(args.n) if args.n else None,
        "cap": args.cap,
        "clt_max": args.clt_max,
    }
    return resolve(VerifyConfig, _file_values(args), flags)


def cmd_verify(args, out: Path) -> tuple[dict, list[Path], bool]:
    """
    Run the selected exhaustive checks.

    Named check flags replace the configured list; ``--all`` names every
    enumeration check but not the CLT sweep.

    Returns:
        The resolved config, the path of ``verify.json`` and whether every check passed
    """
    config = _verify_config(args)
    suite = VerificationSuite(ns=config.ns, cap=config.cap, workers=args.workers)
    if "a3" in config.checks:
        suite.run_a3()
    if "uv" in config.checks:
        suite.run_uv()
    if "combined" in config.checks:
        suite.run_combined()
    if "propositions" in config.checks:
        suite.run_propositions()
    if "clt" in config.checks:
        suite.run_clt(config.clt_max)
    summary = suite.summary()
    path = write_json(summary, out / "verify.json")
    print(json.dumps({"passed": summary["passed"], "checks": summary["checks"], "failed": summary["failed"]},
                     indent=2, sort_keys=True))
    return to_dict(config), [path], summary["passed"]


def _write_table(records, columns: list[str], out: Path, stem: str, fmt: str) -> Path:
    if fmt == "json":
        return write_json([asdict(r) for r in records], out / f"{stem}.json")
    return write_csv(records, columns, out / f"{stem}.csv")


def _em_config(args, combined: bool) -> EmConfig:
    flags = {
        "model": _model_flags(args), "seed": args.seed, "m_start": args.m_start,
        "m_stop": FULL_SCALE_M_STOP if args.full_scale else args.m_stop,
        "m_step": args.m_step, "n_chains": args.chains, "scheme": _scheme_flag(args),
        "reflect": args.reflect,
    }
    file_values = _file_values(args)
    if combined:
        patterns = file_values.get("patterns", ["1,0", "0,1"])
        patterns = [args.pattern1 or patterns[0], args.pattern2 or patterns[1]]
        flags["patterns"] = patterns
    elif args.pattern:
        flags["patterns"] = [args.pattern]
    return resolve(EmConfig, file_values, flags)


def cmd_simulate_em(args, out: Path, combined: bool = False) -> tuple[dict, list[Path]]:
    """E(m) records for one pattern, or pooled over two with ``combined``."""
    config = _em_config(args, combined)
    runner = run_em_combined if combined else run_em
    records = runner(config, workers=args.workers)
    stem = "em_combined" if combined else "em"
    path = _write_table(records, EM_COLUMNS, out, stem, args.format)
    logger.info(f"Wrote {len(records)} records to {path}")
    return to_dict(config), [path]


def cmd_variance(args, out: Path) -> tuple[dict, list[Path]]:
    """
    Variance scan over the n grid, with the sandwich constants when they can be computed.

    eps_o is taken from the flags or config, else estimated from ``--em-csv``;
    without either the lower constant is left empty.

    Returns:
        The resolved config, the variance table and, for two or more n, ``variance_fit.json``
    """
    flags = {
        "model": _model_flags(args), "seed": args.seed, "replicates": args.replicates,
        "n_grid": parse_int_list(args.n_grid) if args.n_grid else None,
        "pattern": args.pattern, "eps_o": args.eps_o, "em_csv": args.em_csv, "scheme": _scheme_flag(args),
    }
    config = resolve(VarianceConfig, _file_values(args), flags)
    P = config.model.build()
    scheme = config.scoring(P.k)

    eps_note = "given"
    eps_o = config.eps_o
    if eps_o is None and config.em_csv:
        estimate = estimate_eps_o(read_em_csv(config.em_csv))
        eps_o = estimate.eps_o
        eps_note = f"estimated: {estimate.convention}" + (" (inconclusive)" if estimate.inconclusive else "")
    a_o = None
    if eps_o is not None:
        a_o = lower_bound_report(P, TripletPattern.parse(config.pattern), eps_o, 2.0, max(config.n_grid)).a_o
    upper = upper_bound_report(P, scheme, 2.0, max(config.n_grid))
    c2 = upper.C_r

    records = variance_scan(P, scheme, config.n_grid, config.replicates, config.seed,
                            a_o=a_o, c2=c2, workers=args.workers)
    path = _write_table(records, VARIANCE_COLUMNS, out, "variance", args.format)
    outputs = [path]
    if len(records) >= 2:
        fit = variance_growth_fit(records)
        summary = {"slope": fit.slope, "r_squared": fit.r_squared, "eps_o": eps_o,
                   "eps_o_source": eps_note, "a_o": a_o, "c2": c2}
        outputs.append(write_json(summary, out / "variance_fit.json"))
    return to_dict(config), outputs


def cmd_tails(args, out: Path) -> tuple[dict, list[Path]]:
    flags = {
        "model": _model_flags(args), "seed": args.seed, "pattern": args.pattern, "n": args.n,
        "trials": args.trials, "K": args.K, "b_o": args.b_o, "scheme": _scheme_flag(args),
    }
    config = resolve(TailConfig, _file_values(args), flags)
    P = config.model.build()
    v_report = tail_check_V(P, TripletPattern.parse(config.pattern), config.n, config.K, config.trials,
                            config.seed, b_o=config.b_o, strict=False)
    score_report = mcdiarmid_tail_check(P, config.scoring(P.k), config.n, config.trials, config.seed)
    result = {"V": v_report.to_dict(), "score": asdict(score_report)}
    path = write_json(result, out / "tails.json")
    _print_json({"V_dominated": v_report.dominated, "score_dominated": score_report.dominated})
    return to_dict(config), [path]


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse ``argv``, run the subcommand and write its manifest.

    Args:
        argv: Command-line arguments without the program name

    Returns:
        EXIT_OK, EXIT_USAGE for bad arguments, EXIT_VALIDATION for rejected input,
        EXIT_VERIFY_FAILED when a verification check fails, EXIT_INTERNAL otherwise
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK

    setup_logging(args.log_file, args.verbose)
    out = Path(args.output_dir)
    started = utc_now()
    start_time = time.monotonic()
    logger.info(f"PMC-variance {__version__}: {args.command}")

    passed = True
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "matrices":
            config, outputs = cmd_matrices(args, out)
        elif args.command == "align":
            config, outputs = cmd_align(args, out)
        elif args.command == "bounds":
            config, outputs = cmd_bounds(args, out)
        elif args.command == "verify":
            config, outputs, passed = cmd_verify(args, out)
        elif args.command == "simulate-em":
            config, outputs = cmd_simulate_em(args, out)
        elif args.command == "simulate-em-combined":
            config, outputs = cmd_simulate_em(args, out, combined=True)
        elif args.command == "variance":
            config, outputs = cmd_variance(args, out)
        else:
            config, outputs = cmd_tails(args, out)
    except ValidationError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"Error: {e}\nSuggestion: {get_error_suggestion(e)}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:
        logger.exception("Unexpected error")
        print(f"Error: {e}\nSuggestion: {get_error_suggestion(e)}", file=sys.stderr)
        return EXIT_INTERNAL

    if outputs:
        seed = config.get("seed") if isinstance(config, dict) else None
        manifest = RunManifest(args.command, config, seed, __version__, started, utc_now(),
                               [str(p) for p in outputs])
        manifest.write(out)
    logger.info(f"{args.command} finished in {format_duration(time.monotonic() - start_time)}")
    if not passed:
        logger.error("One or more verification checks failed")
        return EXIT_VERIFY_FAILED
    return EXIT_OK


def main() -> None:
    """Main entry point."""
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
