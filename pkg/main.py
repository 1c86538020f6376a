#!/usr/bin/env python3
"""
CorMotif - joint differential expression across multiple studies

Fits the correlation-motif mixture on moderated t-statistics, selects the
motif count by BIC, runs the comparison methods and scores everything on
simulated data.

Usage:
    cormotif hyper    --matrix M.tsv --design D.json
    cormotif fit      --matrix M.tsv --design D.json --k 4 --out-prefix run
    cormotif select   --matrix M.tsv --design D.json --k-range 1..10 --out-prefix run
    cormotif simulate --preset sim1 --seed 1 --out-prefix sim1
    cormotif evaluate --posterior run.posterior.tsv --truth sim1.truth.tsv --out-prefix eval
    cormotif rank     --posterior run.posterior.tsv --genes Gli1,Ptch1

Environment:
    CORMOTIF_THREADS: default worker count (otherwise all cores)
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional

# Add project root to path for imports
sys.path.insert(0, str(Path(__file__).parent))

import pandas as pd
from dotenv import load_dotenv
from pydantic import ValidationError

from core.config import load_config_file, merge_config, setup_logging
from core.errors import CorMotifError, InvalidConfigError
from core.ingest import load_expression, write_design, write_expression
from core.posterior import read_abs_tstats, read_posterior, write_posterior, write_tstats
from core.simulation import (
    PRESETS,
    ClassSpec,
    SimulationConfig,
    non_null_classes,
    preset,
    read_truth,
    simulate_model_based,
    spike_in,
    write_truth,
)
from evaluator import evaluate, print_report, rank_table
from orchestrator import AnalysisResult, run_analysis


logger = logging.getLogger("cormotif")

METHODS = ["cormotif", "separate-limma", "all-concord", "full-motif"]


def parse_k_range(text: str) -> tuple[int, int]:
    """Parse an inclusive `lo..hi` range."""
    lo_text, sep, hi_text = text.partition("..")
    try:
        if not sep:
            raise ValueError
        lo, hi = int(lo_text), int(hi_text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo..hi, got {text!r}")
    if lo < 1 or lo > hi:
        raise argparse.ArgumentTypeError(f"range must satisfy 1 <= lo <= hi, got {text!r}")
    return lo, hi


def _add_analysis_arguments(parser: argparse.ArgumentParser, with_k_range: bool = False) -> None:
    parser.add_argument("--config", type=Path, help="JSON file with run settings; flags override it")
    parser.add_argument("--matrix", type=Path, help="Expression TSV (gene_id + one column per sample)")
    parser.add_argument("--design", type=Path, help="Study design JSON")
    parser.add_argument("--method", choices=METHODS, help="Model to fit (default: cormotif)")
    parser.add_argument("--k", type=int, help="Number of motifs for cormotif fit")
    if with_k_range:
        parser.add_argument("--k-range", type=parse_k_range, help="Inclusive K range lo..hi (default: 1..10)")
    parser.add_argument("--seed", type=int, help="Master RNG seed (default: 0)")
    parser.add_argument("--restarts", type=int, help="EM restarts per K (default: 5)")
    parser.add_argument("--tol", type=float, help="Relative convergence tolerance (default: 1e-10)")
    parser.add_argument("--max-iter", type=int, help="EM iteration cap (default: 1000)")
    parser.add_argument("--w", type=float, help="Fix the effect-variance ratio for every study instead of estimating it")
    parser.add_argument("--proportion", type=float, help="Assumed differential fraction for w estimation (default: 0.01)")
    parser.add_argument("--out-prefix", help="Prefix of the output files")
    parser.add_argument("--threads", type=int, help="Worker threads (default: CORMOTIF_THREADS or all cores)")


def parse_args(argv: Optional[list[str]] = None) -> argparse.Namespace:
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(
        prog="cormotif",
        description="Correlation-motif analysis of differential expression across studies",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
    cormotif simulate --preset sim1 --seed 1 --out-prefix sim1
    cormotif select --matrix sim1.matrix.tsv --design sim1.design.json --out-prefix run
    cormotif evaluate --posterior run.posterior.tsv --truth sim1.truth.tsv --patterns sim1 --out-prefix eval
        """,
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Only log warnings and errors")
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log per-chain debug detail")

    commands = parser.add_subparsers(dest="command", required=True)

    hyper = commands.add_parser("hyper", help="Estimate per-study hyperparameters")
    _add_analysis_arguments(hyper)

    fit = commands.add_parser("fit", help="Fit one model and write posteriors")
    _add_analysis_arguments(fit)

    select = commands.add_parser("select", help="Choose K by BIC and write posteriors")
    _add_analysis_arguments(select, with_k_range=True)

    simulate = commands.add_parser("simulate", help="Generate a ground-truthed dataset")
    source = simulate.add_mutually_exclusive_group()
    source.add_argument("--preset", choices=sorted(PRESETS), help="Model-based preset layout")
    source.add_argument("--config", type=Path, help="SimulationConfig JSON")
    simulate.add_argument("--background", type=Path, help="Background matrix for a spike-in simulation")
    simulate.add_argument("--background-design", type=Path, help="Design of the background matrix")
    layout = simulate.add_mutually_exclusive_group()
    layout.add_argument("--patterns", choices=sorted(PRESETS), help="Spike the non-null classes of a preset")
    layout.add_argument("--classes", type=Path, help="JSON list of {pattern, count} classes to spike")
    simulate.add_argument("--effect-sd", type=float, default=1.0, help="Spike-in effect SD (default: 1.0)")
    simulate.add_argument("--seed", type=int, help="RNG seed (default: the config's, else 0)")
    simulate.add_argument("--out-prefix", required=True, help="Prefix of the output files")

    evaluate_cmd = commands.add_parser("evaluate", help="Score posteriors against a truth file")
    evaluate_cmd.add_argument("--posterior", type=Path, nargs="+", required=True, help="Posterior or score TSVs")
    evaluate_cmd.add_argument("--truth", type=Path, required=True, help="Truth TSV from simulate")
    evaluate_cmd.add_argument("--patterns", help="Confusion rows: a preset name or a JSON list of patterns")
    evaluate_cmd.add_argument("--tstats", type=Path, nargs="*", default=[], help="t-statistic TSVs for the |t| tie-break; without them ties keep file order")
    evaluate_cmd.add_argument("--cutoff", type=float, default=0.5, help="Call threshold (default: 0.5)")
    evaluate_cmd.add_argument("--out-prefix", required=True, help="Prefix of the output files")

    rank = commands.add_parser("rank", help="Per-study ranks of named genes")
    rank.add_argument("--posterior", type=Path, required=True, help="Posterior or score TSV")
    rank.add_argument("--genes", required=True, help="Comma-separated gene ids")
    rank.add_argument("--tstats", type=Path, help="t-statistic TSV for the |t| tie-break; without it ties keep file order")
    rank.add_argument("--out-prefix", help="Write <prefix>.ranks.tsv instead of printing")

    args = parser.parse_args(argv)
    if args.command in ("hyper", "fit", "select") and args.k is not None and args.k < 1:
        parser.error("--k must be >= 1")
    return args


def _write_json(data: Any, path: Path | str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def _run_config(args: argparse.Namespace):
    file_values = load_config_file(args.config) if args.config else {}
    flags = {
        "matrix": args.matrix,
        "design": args.design,
        "method": args.method,
        "k": args.k,
        "k_range": getattr(args, "k_range", None),
        "seed": args.seed,
        "restarts": args.restarts,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "w": args.w,
        "proportion": args.proportion,
        "out_prefix": args.out_prefix,
        "threads": args.threads,
    }
    return merge_config(file_values, flags)


def _require_prefix(prefix: Optional[str], command: str) -> str:
    if not prefix:
        raise InvalidConfigError(f"{command} needs --out-prefix")
    return prefix


def _write_analysis(result: AnalysisResult, prefix: str) -> None:
    write_posterior(result.posterior, f"{prefix}.posterior.tsv")
    _write_json(result.model_record, f"{prefix}.model.json")
    write_tstats(result.t_stats.t, result.t_stats.gene_ids, result.t_stats.study_ids, f"{prefix}.tstat.tsv")


def cmd_hyper(args: argparse.Namespace) -> int:
    config = _run_config(args)
    result = run_analysis(config, command="hyper")
    records = result.hyper_records()
    if config.out_prefix:
        _write_json(records, f"{config.out_prefix}.hyper.json")
    else:
        json.dump(records, sys.stdout, indent=2)
        sys.stdout.write("\n")
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    config = _run_config(args)
    prefix = _require_prefix(config.out_prefix, "fit")
    result = run_analysis(config, command="fit")
    _write_analysis(result, prefix)
    return 0


def cmd_select(args: argparse.Namespace) -> int:
    config = _run_config(args)
    prefix = _require_prefix(config.out_prefix, "select")
    result = run_analysis(config, command="select")
    _write_analysis(result, prefix)
    report = result.selection
    pd.DataFrame(report.bic_table()).to_csv(
        f"{prefix}.bic.tsv", sep="\t", index=False, float_format="%.10g", lineterminator="\n",
    )
    _write_json(report.to_dict(), f"{prefix}.select.json")
    logger.info("chosen_k=%d", report.chosen_k)
    return 0


def _spike_classes(args: argparse.Namespace) -> list[ClassSpec]:
    if args.patterns:
        return non_null_classes(preset(args.patterns))
    if args.classes:
        with open(args.classes, encoding="utf-8") as fh:
            raw = json.load(fh)
        return [ClassSpec.model_validate(item) for item in raw]
    raise InvalidConfigError("spike-in needs --patterns or --classes")


def _seed(args: argparse.Namespace) -> int:
    return args.seed if args.seed is not None else 0


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.background is not None:
        if args.background_design is None:
            raise InvalidConfigError("--background needs --background-design")
        background = load_expression(args.background, args.background_design)
        dataset, truth = spike_in(background, _spike_classes(args), seed=_seed(args), effect_sd=args.effect_sd)
    else:
        if args.preset:
            config = preset(args.preset, seed=_seed(args))
        elif args.config:
            with open(args.config, encoding="utf-8") as fh:
                values = json.load(fh)
            if args.seed is not None:
                values["seed"] = args.seed
            config = SimulationConfig.model_validate(values)
        else:
            raise InvalidConfigError("simulate needs --preset, --config or --background")
        dataset, truth = simulate_model_based(config)

    prefix = args.out_prefix
    write_expression(dataset, f"{prefix}.matrix.tsv")
    write_design(dataset.design, f"{prefix}.design.json")
    write_truth(truth, f"{prefix}.truth.tsv")
    return 0


def _report_patterns(spec: Optional[str]):
    if spec is None:
        return None
    if spec in PRESETS:
        return preset(spec).pattern_matrix()
    with open(spec, encoding="utf-8") as fh:
        return json.load(fh)


def cmd_evaluate(args: argparse.Namespace) -> int:
    posteriors = [read_posterior(path) for path in args.posterior]
    if args.tstats:
        if len(args.tstats) not in (1, len(posteriors)):
            raise InvalidConfigError("give one --tstats file, or one per --posterior file")
        tstat_paths = args.tstats * len(posteriors) if len(args.tstats) == 1 else args.tstats
        posteriors = [
            posterior.with_abs_t(read_abs_tstats(path, posterior))
            for posterior, path in zip(posteriors, tstat_paths)
        ]
    truth = read_truth(args.truth)
    report = evaluate(posteriors, truth, _report_patterns(args.patterns), cutoff=args.cutoff)

    prefix = args.out_prefix
    report.confusion_frame().to_csv(f"{prefix}.confusion.tsv", sep="\t", index=False, lineterminator="\n")
    report.tp_frame().to_csv(f"{prefix}.tp.tsv", sep="\t", index=False, lineterminator="\n")
    print_report(report)
    return 0


def cmd_rank(args: argparse.Namespace) -> int:
    posterior = read_posterior(args.posterior)
    if args.tstats:
        posterior = posterior.with_abs_t(read_abs_tstats(args.tstats, posterior))
    genes = [gene.strip() for gene in args.genes.split(",") if gene.strip()]
    table = rank_table(posterior, genes)
    if args.out_prefix:
        table.to_csv(f"{args.out_prefix}.ranks.tsv", sep="\t", lineterminator="\n")
    else:
        table.to_csv(sys.stdout, sep="\t", lineterminator="\n")
    return 0


COMMANDS = {
    "hyper": cmd_hyper,
    "fit": cmd_fit,
    "select": cmd_select,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "rank": cmd_rank,
}


def _error_line(name: str, message: str) -> str:
    return f"error={name} message={json.dumps(message)}"


def main(argv: Optional[list[str]] = None) -> int:
    """Main entry point."""
    # Load environment variables from .env file
    load_dotenv()

    args = parse_args(argv)
    setup_logging(-1 if args.quiet else (1 if args.verbose else 0))

    try:
        return COMMANDS[args.command](args)

    except ValidationError as e:
        message = "; ".join(
            f"{'.'.join(str(part) for part in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        print(_error_line("InvalidConfigError", message), file=sys.stderr)
        return 1

    except json.JSONDecodeError as e:
        print(_error_line("InputFormatError", f"invalid JSON: {e}"), file=sys.stderr)
        return 1

    except (CorMotifError, OSError) as e:
        print(_error_line(type(e).__name__, str(e)), file=sys.stderr)
        return 1

    except KeyboardInterrupt:
        print(_error_line("KeyboardInterrupt", "interrupted by user"), file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
