"""Deterministic Monte-Carlo BER experiments over the detector variants.

Every trial's randomness is derived from (master seed, trial index, stream
id), so a report is a pure function of its config: reruns are bit-identical
regardless of worker count or completion order, and two variants run with
the same config fields see exactly the same source blocks, spreading codes
and noise. That paired-seed discipline makes every normalized quantity
(correlated over plain detection) reflect only the detectors' differences.

Per-position error counts are summed as integers, so aggregation is exact
and commutative; all rates derive from the final counts.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .baselines import fit_loglog_slope, saturation_position
from .channel import generate_spreading, transmit
from .detectors import (
    SCHEDULES,
    DetectorDivergence,
    DetectorOptions,
    correlated_mud_detect,
    correlated_sumf_detect,
    mud_detect,
    sumf_detect,
)
from .markov import (
    TransitionMatrix,
    generate_block,
    make_symmetric_matrix,
    perturb_element,
    source_stats,
)

STREAM_CHANNEL = 0
STREAM_SCHEDULE = 1

VARIANTS = ("plain_mud", "correlated_mud", "plain_sumf", "correlated_sumf")

_BOOL_KEYS = ("blind",)
_INT_KEYS = ("spread_factor", "n_users", "word_length", "ensemble", "seed",
             "max_iters")
_FLOAT_KEYS = ("sigma", "mismatch")
_STR_KEYS = ("variant", "schedule")


def _default_matrix() -> TransitionMatrix:
    return make_symmetric_matrix(0.8)


@dataclass(frozen=True)
class ExperimentConfig:
    """One fully pinned Monte-Carlo experiment.

    matrix is the generator's transition matrix; mismatch perturbs the
    detector-assumed copy only. seed is the master seed every trial stream
    derives from.
    """

    spread_factor: int = 1000
    n_users: int = 800
    sigma: float = 0.8
    word_length: int = 100
    matrix: TransitionMatrix = field(default_factory=_default_matrix)
    variant: str = "correlated_mud"
    schedule: str = "SUS"
    blind: bool = False
    mismatch: float = 0.0
    ensemble: int = 100
    seed: int = 0
    max_iters: int = 50

    def __post_init__(self):
        if self.spread_factor < 1 or self.n_users < 1:
            raise ValueError("spread_factor and n_users must be >= 1")
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.word_length < 1:
            raise ValueError("word_length must be >= 1")
        if not isinstance(self.matrix, TransitionMatrix):
            raise ValueError("matrix must be a TransitionMatrix")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.ensemble < 1:
            raise ValueError("ensemble must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.mismatch != 0.0:
            self.detector_matrix()  # fail fast on infeasible perturbations

    @property
    def load(self) -> float:
        return self.n_users / self.spread_factor

    @classmethod
    def from_load(cls, spread_factor: int, load: float, **kwargs) -> "ExperimentConfig":
        """Build with the user count rounded from a target load."""
        n_users = int(round(spread_factor * load))
        return cls(spread_factor=spread_factor, n_users=n_users, **kwargs)

    def detector_matrix(self) -> TransitionMatrix:
        if self.mismatch == 0.0:
            return self.matrix
        return perturb_element(self.matrix, self.mismatch)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.to_flat() if f.name == "matrix" else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """Build from string-or-typed key/value pairs.

        Accepts either lambda2 (symmetric matrix shorthand) or an explicit
        flat matrix, and either n_users or load (rounded against
        spread_factor). Unknown keys are rejected by name.
        """
        data = dict(data)
        kwargs = {}
        if "lambda2" in data and "matrix" in data:
            raise ValueError("config specifies both lambda2 and matrix")
        if "lambda2" in data:
            kwargs["matrix"] = make_symmetric_matrix(float(data.pop("lambda2")))
        elif "matrix" in data:
            raw = data.pop("matrix")
            kwargs["matrix"] = raw if isinstance(raw, TransitionMatrix) \
                else TransitionMatrix.from_flat(str(raw))
        if "load" in data and "n_users" in data:
            raise ValueError("config specifies both load and n_users")
        load = data.pop("load", None)
        for key in _INT_KEYS:
            if key in data:
                kwargs[key] = int(data.pop(key))
        for key in _FLOAT_KEYS:
            if key in data:
                kwargs[key] = float(data.pop(key))
        for key in _STR_KEYS:
            if key in data:
                kwargs[key] = str(data.pop(key))
        for key in _BOOL_KEYS:
            if key in data:
                kwargs[key] = _parse_bool(data.pop(key), key)
        if data:
            raise ValueError(f"unknown config key: {sorted(data)[0]}")
        if load is not None:
            spread = kwargs.get("spread_factor", cls.spread_factor)
            kwargs["n_users"] = int(round(spread * float(load)))
        return cls(**kwargs)


def _parse_bool(value, key):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"config key {key} expects a boolean, got {value!r}")


@dataclass(frozen=True)
class TrialOutcome:
    """Integer error counts and iteration stats of one ensemble sample."""

    errors_by_position: np.ndarray
    iters: np.ndarray
    unconverged_positions: int
    diverged: bool


@dataclass(frozen=True)
class BerReport:
    """Ensemble-aggregated BER with exact count bookkeeping.

    aggregate equals errors_total/bits_total exactly; per_position averages
    over users and trials; std_err is the per-position binomial
    approximation sqrt(p(1-p)/bits). unconverged_positions counts symbol
    positions that hit the iteration cap, divergences counts trials whose
    detector field blew up (their matched-filter decisions are counted).
    """

    config: ExperimentConfig
    per_position: np.ndarray
    std_err: np.ndarray
    errors_by_position: np.ndarray
    errors_total: int
    bits_total: int
    aggregate: float
    iters_median: float
    iters_max: int
    unconverged_positions: int
    divergences: int

    def summary(self) -> dict:
        return {
            "errors_total": self.errors_total,
            "bits_total": self.bits_total,
            "aggregate": self.aggregate,
            "iters_median": self.iters_median,
            "iters_max": self.iters_max,
            "unconverged_positions": self.unconverged_positions,
            "divergences": self.divergences,
        }


def _trial_rng(config: ExperimentConfig, trial_index: int, stream: int):
    seq = np.random.SeedSequence([config.seed, trial_index, stream])
    return np.random.default_rng(seq)


def _detector_options(config: ExperimentConfig, trial_index: int) -> DetectorOptions:
    schedule_rng = None
    if config.schedule == "RSUS":
        schedule_rng = _trial_rng(config, trial_index, STREAM_SCHEDULE)
    return DetectorOptions(max_iters=config.max_iters, schedule=config.schedule,
                           blind=config.blind, schedule_rng=schedule_rng)


def run_trial(config: ExperimentConfig, trial_index: int) -> TrialOutcome:
    """One ensemble sample: generate, transmit, detect, count errors.

    A deterministic function of (config.seed, trial_index). The channel
    stream is drawn in a fixed order (source block, spreading chips, noise)
    so every detector variant sees identical realizations; RSUS shuffles
    come from a separate stream so the other schedules stay untouched by
    the variant choice.
    """
    rng = _trial_rng(config, trial_index, STREAM_CHANNEL)
    block = generate_block(config.matrix, config.n_users, config.word_length, rng)
    spreading = generate_spreading(config.spread_factor, config.n_users, rng)
    received = transmit(spreading, block, config.sigma, rng)

    opts = _detector_options(config, trial_index)
    diverged = False
    try:
        if config.variant == "plain_mud":
            result = mud_detect(spreading, received, config.sigma, opts)
        elif config.variant == "correlated_mud":
            result = correlated_mud_detect(spreading, received,
                                           config.detector_matrix(),
                                           config.sigma, opts)
        elif config.variant == "correlated_sumf":
            result = correlated_sumf_detect(spreading, received,
                                            config.detector_matrix(),
                                            config.sigma, opts)
        else:
            result = sumf_detect(spreading, received)
    except DetectorDivergence:
        # The trial still counts: fall back to the matched-filter decisions.
        result = sumf_detect(spreading, received)
        diverged = True

    errors = np.asarray(result.bits != block).sum(axis=0, dtype=np.int64)
    unconverged = int(np.count_nonzero(~result.converged)) if not diverged \
        else config.word_length
    return TrialOutcome(errors_by_position=errors,
                        iters=np.asarray(result.iters, dtype=np.int64),
                        unconverged_positions=unconverged, diverged=diverged)


def _trial_worker(payload):
    config, trial_index = payload
    return run_trial(config, trial_index)


def monte_carlo(config: ExperimentConfig, workers: int | None = None) -> BerReport:
    """Aggregate run_trial over the ensemble, optionally across processes.

    Counts are integers and their summation commutative, so the report is
    bit-identical for any worker count.
    """
    if workers is not None and workers < 1:
        raise ValueError("workers must be >= 1")
    payloads = [(config, index) for index in range(config.ensemble)]
    if workers is None or workers == 1 or config.ensemble == 1:
        outcomes = [run_trial(config, index) for _, index in payloads]
    else:
        chunk = max(1, config.ensemble // (workers * 4))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_trial_worker, payloads, chunksize=chunk))

    errors = np.zeros(config.word_length, dtype=np.int64)
    iters_all = []
    unconverged = 0
    divergences = 0
    for outcome in outcomes:
        errors += outcome.errors_by_position
        iters_all.append(outcome.iters)
        unconverged += outcome.unconverged_positions
        divergences += int(outcome.diverged)

    bits_per_position = config.n_users * config.ensemble
    bits_total = bits_per_position * config.word_length
    per_position = errors / bits_per_position
    std_err = np.sqrt(per_position * (1.0 - per_position) / bits_per_position)
    iters_flat = np.concatenate(iters_all)
    errors.flags.writeable = False
    per_position.flags.writeable = False
    std_err.flags.writeable = False
    return BerReport(
        config=config, per_position=per_position, std_err=std_err,
        errors_by_position=errors, errors_total=int(errors.sum()),
        bits_total=bits_total, aggregate=int(errors.sum()) / bits_total,
        iters_median=float(np.median(iters_flat)),
        iters_max=int(iters_flat.max()), unconverged_positions=unconverged,
        divergences=divergences)


# ---------------------------------------------------------------------------
# paired studies


@dataclass(frozen=True)
class SweepPoint:
    """One correlation setting's paired correlated-vs-plain measurement."""

    lambda2: float
    correlation_length: float
    p_corr: float
    p_plain: float
    normalized: float
    errors_corr: int
    errors_plain: int
    bits_total: int


def _normalized(p_corr: float, p_plain: float) -> float:
    if p_plain == 0.0:
        return 1.0 if p_corr == 0.0 else float("inf")
    return p_corr / p_plain


def normalized_ber_sweep(config: ExperimentConfig, lambda2_values,
                         workers: int | None = None,
                         run_report=None) -> list[SweepPoint]:
    """Paired correlated-MUD over plain-MUD BER for each second eigenvalue.

    Both arms of every point run on identical realizations (same master
    seed), so at lambda2 = 0 the reduction property makes the ratio exactly
    1. config.variant is ignored; config's schedule, blind flag and
    mismatch apply to the correlated arm. run_report may wrap or replace
    the per-arm Monte-Carlo (persistence hooks, testing).
    """
    if run_report is None:
        run_report = lambda cfg: monte_carlo(cfg, workers)
    points = []
    for lam in lambda2_values:
        lam = float(lam)
        if not 0.0 <= lam < 1.0:
            raise ValueError(f"lambda2 must lie in [0, 1), got {lam}")
        base = replace(config, matrix=make_symmetric_matrix(lam))
        corr = run_report(replace(base, variant="correlated_mud"))
        plain = run_report(replace(base, variant="plain_mud", mismatch=0.0))
        points.append(SweepPoint(
            lambda2=lam,
            correlation_length=source_stats(base.matrix).correlation_length,
            p_corr=corr.aggregate, p_plain=plain.aggregate,
            normalized=_normalized(corr.aggregate, plain.aggregate),
            errors_corr=corr.errors_total, errors_plain=plain.errors_total,
            bits_total=corr.bits_total))
    return points


@dataclass(frozen=True)
class LengthScalingResult:
    """Saturation positions per word length and their log-log fit."""

    lengths: tuple
    positions: tuple
    slope: float
    intercept: float


def length_scaling_study(config: ExperimentConfig, lengths,
                         threshold_factor: float = 1.2,
                         workers: int | None = None,
                         run_report=None) -> LengthScalingResult:
    """Saturation position of the per-position BER curve vs word length.

    Runs one Monte-Carlo per length (run_report may inject a different
    report source for testing), reduces each curve to its saturation
    position, and fits a line to log(position) over log(length). Zero
    positions are excluded from the fit with a warning; fewer than two
    usable points abort with ValueError.
    """
    lengths = [int(l) for l in lengths]
    if len(set(lengths)) < 3:
        raise ValueError("need at least 3 distinct word lengths")
    if run_report is None:
        run_report = lambda cfg: monte_carlo(cfg, workers)
    positions = []
    for length in lengths:
        report = run_report(replace(config, word_length=length))
        positions.append(saturation_position(report.per_position,
                                             threshold_factor))
    slope, intercept = fit_loglog_slope(lengths, positions)
    return LengthScalingResult(lengths=tuple(lengths),
                               positions=tuple(positions),
                               slope=slope, intercept=intercept)


@dataclass(frozen=True)
class MismatchPoint:
    """Normalized BER under a detector-assumed matrix perturbation."""

    lambda2: float
    rel_delta: float
    feasible: bool
    reason: str | None
    p_corr: float
    p_plain: float
    normalized: float


def mismatch_study(config: ExperimentConfig, rel_deltas, lambda2_values,
                   workers: int | None = None,
                   run_report=None) -> list[MismatchPoint]:
    """Normalized BER surface over (perturbation, correlation) pairs.

    The generator always uses the true matrix; the correlated detector
    assumes the perturbed copy. Infeasible perturbations (an element pushed
    out of [0, 1]) are skipped with the validation message recorded.
    run_report may wrap or replace the per-arm Monte-Carlo.
    """
    if run_report is None:
        run_report = lambda cfg: monte_carlo(cfg, workers)
    points = []
    for lam in lambda2_values:
        lam = float(lam)
        matrix = make_symmetric_matrix(lam)
        plain = None
        for delta in rel_deltas:
            delta = float(delta)
            try:
                perturb_element(matrix, delta)
            except ValueError as exc:
                points.append(MismatchPoint(
                    lambda2=lam, rel_delta=delta, feasible=False,
                    reason=str(exc), p_corr=float("nan"),
                    p_plain=float("nan"), normalized=float("nan")))
                continue
            if plain is None:
                plain = run_report(replace(config, matrix=matrix,
                                           variant="plain_mud",
                                           mismatch=0.0))
            corr = run_report(replace(config, matrix=matrix,
                                      variant="correlated_mud",
                                      mismatch=delta))
            points.append(MismatchPoint(
                lambda2=lam, rel_delta=delta, feasible=True, reason=None,
                p_corr=corr.aggregate, p_plain=plain.aggregate,
                normalized=_normalized(corr.aggregate, plain.aggregate)))
    return points


# ---------------------------------------------------------------------------
# baseline-protocol plumbing


def make_ber_runner(config: ExperimentConfig, workers: int | None = None):
    """Adapt monte_carlo to the compression protocols' run_ber contract.

    The returned callable measures the aggregate BER at (matrix, n_users,
    sigma) with the correlated or the plain detector; everything else
    (spreading, word length, ensemble, master seed) is pinned by config,
    so different arms run on paired realizations.
    """
    def run_ber(matrix, n_users, sigma, correlated):
        variant = "correlated_mud" if correlated else "plain_mud"
        cfg = replace(config, matrix=matrix, n_users=int(n_users),
                      sigma=float(sigma), variant=variant, mismatch=0.0)
        return monte_carlo(cfg, workers).aggregate
    return run_ber


def make_pair_runner(config: ExperimentConfig, workers: int | None = None):
    """Adapt monte_carlo to the fixed-load protocol's run_pair contract."""
    def run_pair():
        corr = monte_carlo(replace(config, variant="correlated_mud"), workers)
        plain = monte_carlo(replace(config, variant="plain_mud",
                                    mismatch=0.0), workers)
        return corr.aggregate, plain.aggregate
    return run_pair


# ---------------------------------------------------------------------------
# CSV persistence


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_header(handle, config: ExperimentConfig | None, extra: dict | None):
    handle.write(f"# corrcdma={__version__}\n")
    items = {}
    if config is not None:
        items.update(config.to_dict())
    if extra:
        items.update(extra)
    for key in sorted(items):
        handle.write(f"# {key}={_format_cell(items[key])}\n")


def _write_csv(path, config, extra, columns, rows):
    with open(path, "w", newline="") as handle:
        _write_header(handle, config, extra)
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(cell) for cell in row])


def write_ber_csv(path, report: BerReport):
    """One row per word position, config and totals in `# key=value` lines."""
    length = report.config.word_length
    bits = report.config.n_users * report.config.ensemble
    rows = [
        (l, (l + 1) / length, int(report.errors_by_position[l]), bits,
         float(report.per_position[l]), float(report.std_err[l]))
        for l in range(length)
    ]
    _write_csv(path, report.config, report.summary(),
               ("position", "relative_position", "errors", "bits", "ber",
                "std_err"), rows)


def write_sweep_csv(path, config: ExperimentConfig, points):
    rows = [(p.lambda2, p.correlation_length, p.p_corr, p.p_plain,
             p.normalized, p.errors_corr, p.errors_plain, p.bits_total)
            for p in points]
    _write_csv(path, config, None,
               ("lambda2", "correlation_length", "p_corr", "p_plain",
                "normalized", "errors_corr", "errors_plain", "bits_total"),
               rows)


def write_length_csv(path, config: ExperimentConfig, result: LengthScalingResult):
    rows = list(zip(result.lengths, result.positions))
    _write_csv(path, config,
               {"slope": result.slope, "intercept": result.intercept},
               ("length", "saturation_position"), rows)


def write_mismatch_csv(path, config: ExperimentConfig, points):
    rows = [(p.lambda2, p.rel_delta, p.feasible, p.reason or "", p.p_corr,
             p.p_plain, p.normalized) for p in points]
    _write_csv(path, config, None,
               ("lambda2", "rel_delta", "feasible", "reason", "p_corr",
                "p_plain", "normalized"), rows)


def write_comparison_csv(path, config: ExperimentConfig, rows):
    """rows: (lambda2, entropy_bits, epsilon, CompressionComparison) tuples."""
    flat = [(lam, entropy, eps, c.p_corr, c.p_comp, c.ratio, c.rate,
             c.protocol, config.ensemble, config.seed)
            for lam, entropy, eps, c in rows]
    _write_csv(path, config, None,
               ("lambda2", "entropy_bits", "epsilon", "p_corr", "p_comp",
                "ratio", "rate", "protocol", "ensemble", "seed"), flat)


def read_csv_with_header(path):
    """Read a file written by the writers above.

    Returns (header dict, column names, rows as string lists).
    """
    header = {}
    with open(path, "r", newline="") as handle:
        text = handle.read()
    lines = text.splitlines(keepends=True)
    body_start = 0
    for line in lines:
        if not line.startswith("#"):
            break
        body_start += 1
        stripped = line[1:].strip()
        if "=" in stripped:
            key, _, value = stripped.partition("=")
            header[key.strip()] = value.strip()
    reader = csv.reader(io.StringIO("".join(lines[body_start:])))
    table = [row for row in reader if row]
    if not table:
        raise ValueError(f"{path}: no column row found")
    return header, table[0], table[1:]


def default_workers() -> int | None:
    """Worker budget from the CORRCDMA_WORKERS environment variable."""
    raw = os.environ.get("CORRCDMA_WORKERS")
    if raw is None or not raw.strip():
        return None
    value = int(raw)
    if value < 1:
        raise ValueError("CORRCDMA_WORKERS must be >= 1")
    return value
