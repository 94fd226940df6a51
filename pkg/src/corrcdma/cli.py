"""Command-line frontend: experiments as subcommands with CSV and plot data.

Every subcommand resolves one experiment config from an optional config
file (flat key=value lines or a JSON object) plus flag overrides, with
flags winning. Results land in --out-dir as CSV files with a `# key=value`
header block, followed by a manifest.json naming every output; on any
failure the partial outputs are removed and the exit status is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import (
    AMPLIFICATIONS,
    bandwidth_expansion_comparison,
    binary_entropy,
    bsc_residual_error,
    fixed_load_comparison,
    inverse_binary_entropy,
)
from .detectors import local_bias
from .harness import (
    ExperimentConfig,
    default_workers,
    length_scaling_study,
    make_ber_runner,
    make_pair_runner,
    mismatch_study,
    monte_carlo,
    normalized_ber_sweep,
    read_csv_with_header,
    write_ber_csv,
    write_comparison_csv,
    write_length_csv,
    write_mismatch_csv,
    write_sweep_csv,
)
from .markov import TransitionMatrix, make_symmetric_matrix, source_stats

# Flag spelling -> config key; every config key can come from the file or
# the command line, and the command line wins.
_CONFIG_FLAGS = (
    ("--spread-factor", "spread_factor"),
    ("--n-users", "n_users"),
    ("--load", "load"),
    ("--sigma", "sigma"),
    ("--word-length", "word_length"),
    ("--lambda2", "lambda2"),
    ("--matrix", "matrix"),
    ("--variant", "variant"),
    ("--schedule", "schedule"),
    ("--blind", "blind"),
    ("--mismatch", "mismatch"),
    ("--ensemble", "ensemble"),
    ("--seed", "seed"),
    ("--max-iters", "max_iters"),
)

# A flag override displaces the file-side value of its exclusive twin, so
# "--load 0.5" beats a config file that pinned n_users.
_EXCLUSIVE_TWINS = {"lambda2": "matrix", "matrix": "lambda2",
                    "load": "n_users", "n_users": "load"}


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _load_config_file(path) -> dict:
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: JSON config must be an object")
        return data
    data = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(
                f"{path}:{lineno}: expected key=value, got {line!r}")
        data[key.strip()] = value.strip()
    return data


def _resolve_config(args) -> ExperimentConfig:
    file_data = _load_config_file(args.config) if args.config else {}
    flag_data = {key: getattr(args, key) for _, key in _CONFIG_FLAGS
                 if getattr(args, key) is not None}
    for key, twin in _EXCLUSIVE_TWINS.items():
        if key in flag_data and twin not in flag_data:
            file_data.pop(twin, None)
    file_data.update(flag_data)
    return ExperimentConfig.from_dict(file_data)


def _resolve_workers(args):
    return args.workers if args.workers is not None else default_workers()


def _parse_value_list(text, option, cast=float):
    if text is None or not str(text).strip():
        raise ValueError(f"{option} must list at least one value")
    return [cast(token) for token in str(text).replace(",", " ").split()]


class _OutputSet:
    """Files written by one command, removable as a unit on failure."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.paths = []

    def target(self, name) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / name
        self.paths.append(path)
        return path

    def discard(self):
        for path in self.paths:
            path.unlink(missing_ok=True)

    def validate(self):
        for path in self.paths:
            if not path.exists():
                raise RuntimeError(f"expected output missing: {path}")
            if path.suffix == ".csv":
                read_csv_with_header(path)


def _write_manifest(outputs: _OutputSet, command: str, config, started: str):
    names = sorted(path.name for path in outputs.paths)
    path = outputs.target("manifest.json")
    payload = {
        "command": command,
        "config": None if config is None else config.to_dict(),
        "seed": None if config is None else config.seed,
        "started": started,
        "finished": _timestamp(),
        "outputs": names,
        "version": __version__,
    }
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _print_config(config: ExperimentConfig):
    print("config valid")
    for key, value in sorted(config.to_dict().items()):
        print(f"  {key}={value}")


def _capturing_runner(outputs: _OutputSet, workers):
    """Monte-Carlo wrapper that persists each arm's per-position report."""

    def run(cfg):
        report = monte_carlo(cfg, workers)
        name = (f"ber_{cfg.variant}_lam{cfg.matrix.lambda2:g}"
                f"_L{cfg.word_length}_d{cfg.mismatch:g}.csv")
        write_ber_csv(outputs.target(name), report)
        return report

    return run


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    try:
        config = _resolve_config(args)
        workers = _resolve_workers(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.dry_run:
        _print_config(config)
        return 0
    outputs = _OutputSet(args.out_dir)
    started = _timestamp()
    try:
        report = monte_carlo(config, workers)
        write_ber_csv(outputs.target("ber.csv"), report)
        outputs.validate()
        _write_manifest(outputs, "simulate", config, started)
    except Exception as exc:
        outputs.discard()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"aggregate BER {report.aggregate:.6f} "
          f"({report.errors_total} errors / {report.bits_total} bits)")
    print(f"iterations median {report.iters_median:g} max {report.iters_max}; "
          f"unconverged positions {report.unconverged_positions}; "
          f"divergences {report.divergences}")
    print(f"wrote {outputs.out_dir / 'ber.csv'}")
    return 0


def cmd_sweep(args) -> int:
    try:
        config = _resolve_config(args)
        workers = _resolve_workers(args)
        if args.kind == "length":
            values = _parse_value_list(args.values, "--values", int)
        else:
            values = _parse_value_list(args.values, "--values", float)
        deltas = None
        if args.kind == "mismatch":
            deltas = _parse_value_list(args.deltas, "--deltas", float)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.dry_run:
        _print_config(config)
        print(f"  sweep kind={args.kind} values={values} deltas={deltas}")
        return 0
    outputs = _OutputSet(args.out_dir)
    started = _timestamp()
    capture = _capturing_runner(outputs, workers)
    try:
        if args.kind == "lambda2":
            points = normalized_ber_sweep(config, values, run_report=capture)
            write_sweep_csv(outputs.target("sweep_lambda2.csv"), config,
                            points)
            for point in points:
                print(f"lambda2 {point.lambda2:g} normalized "
                      f"{point.normalized:.4f} "
                      f"(corr {point.p_corr:.5f} / plain {point.p_plain:.5f})")
        elif args.kind == "length":
            result = length_scaling_study(config, values,
                                          args.threshold_factor,
                                          run_report=capture)
            write_length_csv(outputs.target("sweep_length.csv"), config,
                             result)
            for length, position in zip(result.lengths, result.positions):
                print(f"length {length} saturation {position:.4f}")
            print(f"log-log slope {result.slope:.4f} "
                  f"(intercept {result.intercept:.4f})")
        else:
            points = mismatch_study(config, deltas, values,
                                    run_report=capture)
            write_mismatch_csv(outputs.target("sweep_mismatch.csv"), config,
                               points)
            for point in points:
                tag = (f"normalized {point.normalized:.4f}" if point.feasible
                       else f"infeasible ({point.reason})")
                print(f"lambda2 {point.lambda2:g} delta "
                      f"{point.rel_delta:+g} {tag}")
        outputs.validate()
        _write_manifest(outputs, f"sweep-{args.kind}", config, started)
    except Exception as exc:
        outputs.discard()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(outputs.paths)} files to {outputs.out_dir}")
    return 0


def cmd_compare_compression(args) -> int:
    try:
        config = _resolve_config(args)
        workers = _resolve_workers(args)
        if args.values is None:
            values = [config.matrix.lambda2]
        else:
            values = _parse_value_list(args.values, "--values", float)
        epsilons = _parse_value_list(args.epsilon, "--epsilon", float)
        if any(eps < 0 for eps in epsilons):
            raise ValueError("--epsilon values must be >= 0")
        base_beta = config.load if args.base_beta is None else args.base_beta
        if base_beta <= 0:
            raise ValueError("--base-beta must be > 0")
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.dry_run:
        _print_config(config)
        print(f"  protocol={args.protocol} values={values} "
              f"epsilons={epsilons} base_beta={base_beta:g}")
        return 0
    outputs = _OutputSet(args.out_dir)
    started = _timestamp()
    rows = []
    try:
        if args.protocol == "bandwidth":
            run_ber = make_ber_runner(config, workers)
            print("lambda2  epsilon  p_corr    p_comp    ratio")
            for lam in values:
                matrix = make_symmetric_matrix(lam)
                entropy = source_stats(matrix).entropy_bits
                for eps in epsilons:
                    comparison = bandwidth_expansion_comparison(
                        matrix, config.spread_factor, base_beta,
                        config.sigma, eps, run_ber, args.amplification)
                    rows.append((lam, entropy, eps, comparison))
                    print(f"{lam:<8g} {eps:<8g} {comparison.p_corr:<9.5f} "
                          f"{comparison.p_comp:<9.5f} {comparison.ratio:.4f}")
            name = "comparison_bandwidth.csv"
        else:
            print("sigma  beta   lambda2  p_corr    p_comp    ratio")
            for lam in values:
                matrix = make_symmetric_matrix(lam)
                entropy = source_stats(matrix).entropy_bits
                pair = make_pair_runner(replace(config, matrix=matrix),
                                        workers)
                comparison = fixed_load_comparison(matrix, pair)
                rows.append((lam, entropy, 0.0, comparison))
                print(f"{config.sigma:<6g} {config.load:<6g} {lam:<8g} "
                      f"{comparison.p_corr:<9.5f} {comparison.p_comp:<9.5f} "
                      f"{comparison.ratio:.4f}")
            name = "comparison_fixed.csv"
        write_comparison_csv(outputs.target(name), config, rows)
        outputs.validate()
        _write_manifest(outputs, f"compare-compression-{args.protocol}",
                        config, started)
    except Exception as exc:
        outputs.discard()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {outputs.out_dir / name}")
    return 0


# ---------------------------------------------------------------------------
# plot data


_FAMILIES = {
    ("position", "relative_position", "errors", "bits", "ber", "std_err"):
        "ber_profile",
    ("lambda2", "correlation_length", "p_corr", "p_plain", "normalized",
     "errors_corr", "errors_plain", "bits_total"): "normalized_sweep",
    ("length", "saturation_position"): "length_scaling",
    ("lambda2", "rel_delta", "feasible", "reason", "p_corr", "p_plain",
     "normalized"): "mismatch_surface",
    ("lambda2", "entropy_bits", "epsilon", "p_corr", "p_comp", "ratio",
     "rate", "protocol", "ensemble", "seed"): "compression_comparison",
}


def _detect_family(path, columns) -> str:
    family = _FAMILIES.get(tuple(columns))
    if family is not None:
        return family
    # name the first column that breaks the closest known schema
    best, overlap = None, -1
    for schema in _FAMILIES:
        shared = len(set(schema) & set(columns))
        if shared > overlap:
            best, overlap = schema, shared
    missing = [c for c in best if c not in columns]
    extra = [c for c in columns if c not in best]
    offender = (missing + extra)[0]
    raise ValueError(f"{path}: unrecognized schema, offending column "
                     f"{offender!r} (closest family {_FAMILIES[best]!r})")


def _gnuplot_script(dat_name, ylabel, xlabel, logscale, clauses):
    lines = [
        'set datafile commentschars "#"',
        f'set xlabel "{xlabel}"',
        f'set ylabel "{ylabel}"',
    ]
    if logscale:
        lines.append(f"set logscale {logscale}")
    lines.append("set key top right")
    joined = ", \\\n     ".join(clauses)
    lines.append(f"plot {joined}")
    return "\n".join(lines) + "\n"


def _emit_plotdata(path, out_dir, outputs) -> list:
    header, columns, rows = read_csv_with_header(path)
    family = _detect_family(path, columns)
    stem = Path(path).stem
    dat_path = outputs.target(f"{stem}.dat")
    gp_path = outputs.target(f"{stem}.gp")
    col = {name: index for index, name in enumerate(columns)}
    blocks = []
    clauses = []

    if family == "ber_profile":
        body = [f"# relative_position ber std_err"]
        body += [f"{r[col['relative_position']]} {r[col['ber']]} "
                 f"{r[col['std_err']]}" for r in rows]
        blocks.append("\n".join(body))
        clauses = [
            f"\"{dat_path.name}\" using 1:2 with linespoints title \"BER\"",
            f"\"{dat_path.name}\" using 1:2:3 with yerrorbars notitle",
        ]
        script = _gnuplot_script(dat_path.name, "BER",
                                 "relative symbol position", "y", clauses)
    elif family == "normalized_sweep":
        main = ["# lambda2 normalized"]
        main += [f"{r[col['lambda2']]} {r[col['normalized']]}" for r in rows]
        inset = ["# correlation_length normalized"]
        inset += [f"{r[col['correlation_length']]} {r[col['normalized']]}"
                  for r in rows]
        blocks = ["\n".join(main), "\n".join(inset)]
        clauses = [f"\"{dat_path.name}\" index 0 using 1:2 with linespoints "
                   f"title \"normalized BER\""]
        script = _gnuplot_script(dat_path.name, "normalized BER",
                                 "second eigenvalue", None, clauses)
        script += (f"# inset vs correlation length:\n"
                   f"# plot \"{dat_path.name}\" index 1 using 1:2 "
                   f"with linespoints\n")
    elif family == "length_scaling":
        body = ["# length saturation_position"]
        body += [f"{r[col['length']]} {r[col['saturation_position']]}"
                 for r in rows]
        blocks.append("\n".join(body))
        clauses = [f"\"{dat_path.name}\" using 1:2 with points pointtype 7 "
                   f"title \"saturation position\""]
        script = ""
        if "slope" in header and "intercept" in header:
            script = (f"f(x) = exp({header['intercept']}) * "
                      f"x ** ({header['slope']})\n")
            clauses.append("f(x) with lines title \"fit\"")
        script += _gnuplot_script(dat_path.name, "saturation position",
                                  "word length", "xy", clauses)
    elif family == "mismatch_surface":
        deltas = []
        for row in rows:
            if row[col["feasible"]] == "true" and \
                    row[col["rel_delta"]] not in deltas:
                deltas.append(row[col["rel_delta"]])
        for delta in deltas:
            body = [f"# rel_delta={delta}", "# lambda2 normalized"]
            body += [f"{r[col['lambda2']]} {r[col['normalized']]}"
                     for r in rows
                     if r[col["rel_delta"]] == delta
                     and r[col["feasible"]] == "true"]
            blocks.append("\n".join(body))
        clauses = [f"\"{dat_path.name}\" index {i} using 1:2 with "
                   f"linespoints title \"delta={delta}\""
                   for i, delta in enumerate(deltas)]
        script = _gnuplot_script(dat_path.name, "normalized BER",
                                 "second eigenvalue", None, clauses)
    else:  # compression_comparison
        arms = []
        for row in rows:
            arm = (row[col["protocol"]], row[col["epsilon"]])
            if arm not in arms:
                arms.append(arm)
        for protocol, eps in arms:
            body = [f"# protocol={protocol} epsilon={eps}",
                    "# lambda2 ratio"]
            body += [f"{r[col['lambda2']]} {r[col['ratio']]}" for r in rows
                     if (r[col["protocol"]], r[col["epsilon"]])
                     == (protocol, eps)]
            blocks.append("\n".join(body))
        clauses = [f"\"{dat_path.name}\" index {i} using 1:2 with "
                   f"linespoints title \"{protocol} eps={eps}\""
                   for i, (protocol, eps) in enumerate(arms)]
        script = _gnuplot_script(dat_path.name,
                                 "error ratio (detection / compression)",
                                 "second eigenvalue", None, clauses)

    dat_path.write_text("\n\n\n".join(blocks) + "\n")
    gp_path.write_text(script)
    return [dat_path, gp_path]


def cmd_plotdata(args) -> int:
    outputs = _OutputSet(args.out_dir)
    started = _timestamp()
    try:
        for path in args.inputs:
            if not Path(path).exists():
                raise ValueError(f"{path}: no such input file")
        if args.dry_run:
            print(f"{len(args.inputs)} input files readable")
            return 0
        written = []
        for path in args.inputs:
            written.extend(_emit_plotdata(path, args.out_dir, outputs))
        outputs.validate()
        _write_manifest(outputs, "plotdata", None, started)
    except Exception as exc:
        outputs.discard()
        print(f"error: {exc}", file=sys.stderr)
        return 1 if not isinstance(exc, ValueError) else 2
    for path in written:
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# selftest


def _selftest_checks():
    rng = np.random.default_rng(20240817)

    def entropy_round_trip():
        points = rng.uniform(0.0, 0.5, size=200)
        back = np.array([inverse_binary_entropy(binary_entropy(p))
                         for p in points])
        return np.max(np.abs(back - points)) < 1e-9

    def residual_identity_rate():
        crossovers = rng.uniform(0.0, 0.49, size=50)
        return all(abs(bsc_residual_error(1.0, f) - f) < 1e-12
                   for f in crossovers)

    def bias_matches_enumeration():
        for _ in range(10):
            stay = rng.uniform(0.05, 0.95, size=2)
            matrix = TransitionMatrix(
                np.array([[stay[0], 1 - stay[0]], [1 - stay[1], stay[1]]]))
            probs = np.zeros((1, 3, 2))
            for left in (-1, 1):
                for right in (-1, 1):
                    probs[0, 0, (left + 1) // 2] = 1.0
                    probs[0, 0, 1 - (left + 1) // 2] = 0.0
                    probs[0, 2, (right + 1) // 2] = 1.0
                    probs[0, 2, 1 - (right + 1) // 2] = 0.0
                    probs[0, 1] = 0.5
                    got = local_bias(probs, matrix, 1)[0]
                    up = matrix.prob(left, 1) * matrix.prob(1, right)
                    down = matrix.prob(left, -1) * matrix.prob(-1, right)
                    want = (up - down) / (up + down)
                    if abs(got - want) > 1e-12:
                        return False
        return True

    def reduction_identity():
        cfg = ExperimentConfig(spread_factor=60, n_users=30, sigma=0.8,
                               word_length=10,
                               matrix=make_symmetric_matrix(0.0),
                               variant="correlated_mud", ensemble=2, seed=5)
        corr = monte_carlo(cfg)
        plain = monte_carlo(replace(cfg, variant="plain_mud"))
        return np.array_equal(corr.errors_by_position,
                              plain.errors_by_position)

    def deterministic_and_worker_free():
        cfg = ExperimentConfig(spread_factor=50, n_users=25, sigma=0.8,
                               word_length=8, ensemble=4, seed=9)
        one = monte_carlo(cfg, workers=1)
        again = monte_carlo(cfg, workers=1)
        two = monte_carlo(cfg, workers=2)
        return (np.array_equal(one.errors_by_position,
                               again.errors_by_position)
                and np.array_equal(one.errors_by_position,
                                   two.errors_by_position))

    def paired_zero_correlation():
        cfg = ExperimentConfig(spread_factor=50, n_users=25, sigma=0.8,
                               word_length=8, ensemble=2, seed=3)
        (point,) = normalized_ber_sweep(cfg, [0.0])
        return point.normalized == 1.0

    return (
        ("binary entropy inverts to 1e-9", entropy_round_trip),
        ("unit-entropy residual equals crossover", residual_identity_rate),
        ("local bias equals enumerated posterior", bias_matches_enumeration),
        ("memoryless matrix reduces to plain detector", reduction_identity),
        ("reports deterministic and worker-independent",
         deterministic_and_worker_free),
        ("zero-correlation normalized BER is exactly 1",
         paired_zero_correlation),
    )


def cmd_selftest(args) -> int:
    failures = 0
    for label, check in _selftest_checks():
        try:
            passed = bool(check())
        except Exception as exc:
            passed = False
            print(f"FAIL {label}: {exc}")
        else:
            print(("ok   " if passed else "FAIL ") + label)
        failures += not passed
    if failures:
        print(f"{failures} selftest check(s) failed")
        return 1
    print("all selftest checks passed")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(parser):
    parser.add_argument("--config", default=None,
                        help="config file: key=value lines or a JSON object")
    for flag, key in _CONFIG_FLAGS:
        parser.add_argument(flag, dest=key, default=None,
                            help=f"override config key {key}")
    parser.add_argument("--out-dir", default=".",
                        help="directory for CSV and manifest outputs")
    parser.add_argument("--workers", type=int, default=None,
                        help="parallel trial budget "
                             "(default: CORRCDMA_WORKERS or serial)")
    parser.add_argument("--dry-run", action="store_true",
                        help="validate the config and exit without running")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corrcdma",
        description="Monte-Carlo CDMA detection experiments with "
                    "Markov-correlated sources")
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser(
        "simulate", help="one operating point, per-position BER CSV")
    _add_common(simulate)
    simulate.set_defaults(func=cmd_simulate)

    sweep = commands.add_parser(
        "sweep", help="curve studies over correlation, length or mismatch")
    sweep.add_argument("kind", choices=("lambda2", "length", "mismatch"))
    _add_common(sweep)
    sweep.add_argument("--values", default=None,
                       help="comma- or space-separated sweep values "
                            "(eigenvalues, or word lengths for kind=length)")
    sweep.add_argument("--deltas", default=None,
                       help="relative perturbations for kind=mismatch")
    sweep.add_argument("--threshold-factor", type=float, default=1.2,
                       help="saturation threshold over the minimum BER")
    sweep.set_defaults(func=cmd_sweep)

    compare = commands.add_parser(
        "compare-compression",
        help="detection of correlated sources vs compress-then-transmit")
    compare.add_argument("protocol", choices=("bandwidth", "fixed"))
    _add_common(compare)
    compare.add_argument("--values", default=None,
                         help="eigenvalues to compare at "
                              "(default: the config matrix)")
    compare.add_argument("--epsilon", default="0",
                         help="rate excess values for protocol=bandwidth")
    compare.add_argument("--base-beta", type=float, default=None,
                         help="uncompressed load (default: config load)")
    compare.add_argument("--amplification", choices=AMPLIFICATIONS,
                         default="entropy",
                         help="per-source-bit error accounting variant")
    compare.set_defaults(func=cmd_compare_compression)

    plotdata = commands.add_parser(
        "plotdata", help="turn result CSVs into gnuplot data and scripts")
    plotdata.add_argument("inputs", nargs="+",
                          help="CSV files produced by this tool")
    plotdata.add_argument("--out-dir", default=".")
    plotdata.add_argument("--dry-run", action="store_true")
    plotdata.set_defaults(func=cmd_plotdata)

    selftest = commands.add_parser(
        "selftest", help="run the built-in oracle checks quickly")
    selftest.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
