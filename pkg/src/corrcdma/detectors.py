"""Multiuser detectors for randomly spread synchronous CDMA.

Three detector families live here:

* the single-user matched filter (SUMF), which ignores multiple-access
  interference entirely;
* an iterative belief-propagation multiuser detector that cancels
  interference through the code correlation matrix with an Onsager
  retraction term, one independent run per symbol position;
* correlation-aware variants of both, which exploit temporal memory in each
  user's symbol stream: neighbor symbol beliefs are funneled through the
  assumed transition matrix into a per-symbol prior field that is either
  added to the matched-filter statistic before slicing (SUMF variant) or
  injected inside the tanh of every MUD iteration (MUD variant).

The bias field is exactly zero when the assumed source is memoryless, so
the correlation-aware detectors reduce bit-for-bit to their plain
counterparts in that case; the reduction is load-bearing for tests and is
preserved by running both through the same engine.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channel import SpreadingMatrix
from .markov import TransitionMatrix, estimate_transition, iid_matrix

SCHEDULES = ("PUS", "SUS", "BFUS", "RSUS")


class DetectorDivergence(RuntimeError):
    """Non-finite value inside the iteration; carries the iteration index."""

    def __init__(self, iteration: int):
        super().__init__(f"detector produced non-finite values at iteration {iteration}")
        self.iteration = iteration


def hard_decisions(x: np.ndarray) -> np.ndarray:
    """Signum with the fixed tie rule sign(0) = +1, as int8."""
    return np.where(np.asarray(x) >= 0, 1, -1).astype(np.int8)


def soft_to_probs(soft: np.ndarray) -> np.ndarray:
    """Probability pairs (..., 2) from soft decisions in [-1, 1]:
    index 0 holds P(-1) = (1 - soft)/2, index 1 holds P(+1)."""
    s = np.asarray(soft, dtype=np.float64)
    return np.stack(((1.0 - s) / 2.0, (1.0 + s) / 2.0), axis=-1)


@dataclass(frozen=True)
class SoftField:
    """Per-symbol real fields and the symbol beliefs they induce.

    probs[..., 0] is the belief in -1, probs[..., 1] in +1; the pair sums
    to 1 by construction.
    """

    field: np.ndarray   # (K, L)
    probs: np.ndarray   # (K, L, 2)

    @classmethod
    def from_field(cls, field: np.ndarray) -> "SoftField":
        f = np.asarray(field, dtype=np.float64)
        return cls(f, soft_to_probs(np.tanh(f)))


@dataclass(frozen=True)
class DetectorOptions:
    """Knobs shared by all iterative detectors.

    max_iters caps both the per-position iteration count of the plain MUD
    and the outer-iteration count of the correlated variants. clamp_eps is
    the saturation cap: biases are clamped to |m| <= 1 - clamp_eps before
    atanh. pseudo_count is the additive smoothing of the blind transition
    estimator. schedule_rng feeds the RSUS shuffle only.
    """

    max_iters: int = 50
    schedule: str = "SUS"
    blind: bool = False
    clamp_eps: float = 1e-12
    pseudo_count: float = 1.0
    schedule_rng: np.random.Generator | None = None
    track_bounds: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if not 0.0 < self.clamp_eps < 1.0:
            raise ValueError("clamp_eps must lie in (0, 1)")
        if self.pseudo_count < 0.0:
            raise ValueError("pseudo_count must be >= 0")


@dataclass(frozen=True)
class DetectionResult:
    """Joint output of a detector run.

    bits is K x L of +-1; soft carries the final effective field (matched
    or iterated field plus any bias) and the beliefs it induces. iters and
    converged are per symbol position. estimated_matrix is the last blind
    estimate when blind mode ran, else None. bounds holds per-iteration
    (Q_min, Q_max, A_min, A_max, max|eta|) rows when tracking was requested.
    """

    bits: np.ndarray
    soft: SoftField
    iters: np.ndarray
    converged: np.ndarray
    outer_iterations: int
    estimated_matrix: TransitionMatrix | None = None
    bounds: list | None = None


@dataclass(frozen=True)
class DetectorState:
    """One symbol position's iteration state for the plain MUD.

    soft = tanh of the field; soft_power is its mean square over users;
    precision is the inverse effective interference-plus-noise variance;
    field_gain multiplies the matched-filter field in the update;
    interference is the running interference estimate being cancelled.
    soft_power and precision are None until the first step runs.
    """

    field: np.ndarray
    soft: np.ndarray
    matched_field: np.ndarray
    interference: np.ndarray
    field_gain: float
    iteration: int
    soft_power: float | None = None
    precision: float | None = None


def init_detector_state(matched_field: np.ndarray) -> DetectorState:
    h0 = np.asarray(matched_field, dtype=np.float64)
    return DetectorState(
        field=h0.copy(), soft=np.tanh(h0), matched_field=h0,
        interference=np.zeros_like(h0), field_gain=0.0, iteration=0)


def sumf(spreading: SpreadingMatrix, received: np.ndarray) -> SoftField:
    """Matched-filter front end.

    Correlates every received symbol column with each user's chip sequence:
    field[k, l] = (1/sqrt(N)) sum_mu received[mu, l] * chips[mu, k]. With
    unit-energy signatures the field decomposes as the own symbol plus
    code-correlation-weighted interference plus filtered noise.
    """
    y = np.asarray(received, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] != spreading.spread_factor:
        raise ValueError(
            f"received shape {y.shape} incompatible with spreading factor "
            f"{spreading.spread_factor}")
    h = (spreading.chips.astype(np.float64).T @ y) / np.sqrt(spreading.spread_factor)
    return SoftField.from_field(h)


def _bias_from_neighbors(q_prev: np.ndarray, q_next: np.ndarray,
                         matrix: TransitionMatrix) -> np.ndarray:
    """Posterior mean of a symbol given its two neighbors' beliefs.

    Chains the left belief forward and the right belief backward through
    the transition matrix: p(b) proportional to
    [sum_a q_prev(a) T_ab] * [sum_c T_bc q_next(c)], then returns
    m = 2 p(+1)/(p(+1) + p(-1)) - 1. Inputs are (K, 2) belief pairs.
    """
    t = matrix.matrix
    left = q_prev @ t          # (K, 2), entry b: sum_a q_prev(a) T_ab
    right = q_next @ t.T       # (K, 2), entry b: sum_c T_bc q_next(c)
    p = left * right
    total = p.sum(axis=-1)
    if np.any(total == 0.0):
        raise ValueError("degenerate transition matrix: both symbol hypotheses "
                         "have zero probability (zero row in the matrix)")
    return 2.0 * p[..., 1] / total - 1.0


def local_bias(probs: np.ndarray, matrix: TransitionMatrix, position: int) -> np.ndarray:
    """Local bias of one symbol column from its neighbors' beliefs.

    probs is the (K, L, 2) belief array of the whole block; position is the
    0-based column. A missing neighbor at either word edge is replaced by
    the stationary distribution of the assumed matrix. Returns the (K,)
    vector of biases in [-1, 1].
    """
    q = np.asarray(probs, dtype=np.float64)
    if q.ndim != 3 or q.shape[2] != 2:
        raise ValueError(f"probs must have shape (K, L, 2), got {q.shape}")
    n_users, word_len = q.shape[:2]
    if not 0 <= position < word_len:
        raise ValueError(f"position {position} outside word of length {word_len}")
    mu = matrix.stationary()
    q_prev = q[:, position - 1, :] if position > 0 \
        else np.broadcast_to(mu, (n_users, 2))
    q_next = q[:, position + 1, :] if position < word_len - 1 \
        else np.broadcast_to(mu, (n_users, 2))
    return _bias_from_neighbors(q_prev, q_next, matrix)


def _bias_all_positions(probs: np.ndarray, matrix: TransitionMatrix) -> np.ndarray:
    """All-column bias, every column from the same belief snapshot."""
    n_users, word_len = probs.shape[:2]
    mu = matrix.stationary()
    q_prev = np.empty_like(probs)
    q_prev[:, 0, :] = mu
    q_prev[:, 1:, :] = probs[:, :-1, :]
    q_next = np.empty_like(probs)
    q_next[:, -1, :] = mu
    q_next[:, :-1, :] = probs[:, 1:, :]
    t = matrix.matrix
    p = np.einsum("kla,ab->klb", q_prev, t) * np.einsum("klc,bc->klb", q_next, t)
    total = p.sum(axis=-1)
    if np.any(total == 0.0):
        raise ValueError("degenerate transition matrix: both symbol hypotheses "
                         "have zero probability (zero row in the matrix)")
    return 2.0 * p[..., 1] / total - 1.0


def sumf_biased_decide(field: np.ndarray, bias: np.ndarray, load: float,
                       sigma: float, clamp_eps: float = 1e-12) -> np.ndarray:
    """Matched-filter hard decision with the additive prior correction.

    Decides sign(field + (load + sigma^2) * atanh(bias)); the scale matches
    the effective interference-plus-noise variance seen by the matched
    filter, so the prior term is commensurate with the field. bias is
    clamped to |m| <= 1 - clamp_eps first.
    """
    cap = 1.0 - clamp_eps
    xi = (load + sigma * sigma) * np.arctanh(np.clip(bias, -cap, cap))
    return hard_decisions(np.asarray(field) + xi)


def _step_arrays(soft, matched, interference, gain, corr, load, sigma):
    """One synchronous MUD update for a batch of independent columns.

    soft, matched, interference are (K, M); gain is (M,). Returns the new
    field, interference, gain and the per-column soft power and precision.
    The interference sum runs over all users including the self term (unit
    diagonal of corr); the final + precision * soft adds the own tentative
    estimate back, leaving the cavity field. Without that retraction the
    update subtracts each user's own signal and the iteration oscillates
    instead of converging.
    """
    q_pow = np.mean(soft * soft, axis=0)                 # (M,)
    precision = 1.0 / (sigma * sigma + load * (1.0 - q_pow))
    carry = load * (1.0 - q_pow) * precision
    interference_new = precision * (corr @ soft) + carry * interference
    gain_new = precision + carry * gain
    field_new = gain_new * matched - interference_new + precision * soft
    return field_new, interference_new, gain_new, q_pow, precision


def mud_step(state: DetectorState, corr: np.ndarray, load: float, sigma: float,
             bias: np.ndarray | None = None) -> DetectorState:
    """Advance one symbol position's detector state by one iteration.

    corr is the K x K code correlation matrix, load = K/N. When bias is
    given it is added inside the tanh that produces the new soft decisions.
    Raises DetectorDivergence if the update leaves the finite range.
    """
    if sigma <= 0.0:
        raise ValueError("iterative detection requires sigma > 0")
    h_new, u_new, r_new, q_pow, prec = _step_arrays(
        state.soft[:, None], state.matched_field[:, None],
        state.interference[:, None], np.array([state.field_gain]),
        corr, load, sigma)
    h_new = h_new[:, 0]
    if not np.all(np.isfinite(h_new)):
        raise DetectorDivergence(state.iteration)
    eff = h_new if bias is None else h_new + bias
    return DetectorState(
        field=h_new, soft=np.tanh(eff), matched_field=state.matched_field,
        interference=u_new[:, 0], field_gain=float(r_new[0]),
        iteration=state.iteration + 1,
        soft_power=float(q_pow[0]), precision=float(prec[0]))


def _sweep_order(word_len, schedule, forward, rng):
    if schedule in ("SUS",) or (schedule == "BFUS" and forward):
        return range(word_len)
    if schedule == "BFUS":
        return range(word_len - 1, -1, -1)
    return rng.permutation(word_len)


def _bias_sweep(probs, xi, h_field, soft, assumed, schedule, forward, rng,
                scale, cap):
    """Recompute the bias correction over the block, in schedule order.

    Updates xi, soft and probs in place; columns visited later in a sweep
    see the already-refreshed beliefs of earlier columns (that is the whole
    difference between the schedules). Returns a boolean (L,) mask of
    columns whose correction changed bitwise.
    """
    word_len = probs.shape[1]
    changed = np.zeros(word_len, dtype=bool)
    if schedule == "PUS":
        m = _bias_all_positions(probs, assumed)
        xi_new = scale * np.arctanh(np.clip(m, -cap, cap))
        changed = np.any(xi_new != xi, axis=0)
        xi[:] = xi_new
        soft[:] = np.tanh(h_field + xi)
        probs[:] = soft_to_probs(soft)
        return changed
    mu = assumed.stationary()
    t = assumed.matrix
    n_users = probs.shape[0]
    edge = np.broadcast_to(mu, (n_users, 2))
    for l in _sweep_order(word_len, schedule, forward, rng):
        q_prev = probs[:, l - 1, :] if l > 0 else edge
        q_next = probs[:, l + 1, :] if l < word_len - 1 else edge
        m = _bias_from_neighbors(q_prev, q_next, assumed)
        xi_col = scale * np.arctanh(np.clip(m, -cap, cap))
        if np.any(xi_col != xi[:, l]):
            changed[l] = True
            xi[:, l] = xi_col
        s = np.tanh(h_field[:, l] + xi[:, l])
        soft[:, l] = s
        probs[:, l, 0] = (1.0 - s) / 2.0
        probs[:, l, 1] = (1.0 + s) / 2.0
    return changed


def _run_engine(spreading, received, sigma, opts, assumed=None):
    """Lockstep iterative detection of all symbol columns.

    Plain mode (assumed is None) iterates every column independently until
    its hard decisions repeat; the bias field stays identically zero.
    Correlated mode interleaves a bias sweep after each synchronous step
    and stops at a global hard-decision fixed point. Columns whose
    decisions repeated are frozen (their state stops being committed) and
    thaw again if a later sweep changes their correction; with a memoryless
    assumed matrix no correction ever changes, which makes the two modes
    produce bitwise identical results.
    """
    if sigma <= 0.0:
        raise ValueError("iterative detection requires sigma > 0")
    opts = opts or DetectorOptions()
    corr = spreading.corr
    load = spreading.n_users / spreading.spread_factor
    matched = sumf(spreading, received)
    h0 = matched.field
    n_users, word_len = h0.shape

    correlated = assumed is not None
    blind = correlated and opts.blind
    assumed_now = iid_matrix() if blind else assumed
    rng = opts.schedule_rng
    if rng is None and opts.schedule == "RSUS":
        rng = np.random.default_rng(0)
    cap = 1.0 - opts.clamp_eps

    h = h0.copy()
    xi = np.zeros_like(h)
    interference = np.zeros_like(h)
    gain = np.zeros(word_len)
    soft = np.tanh(h + xi)
    prev_dec = hard_decisions(soft)
    active = np.ones(word_len, dtype=bool)
    iters = np.zeros(word_len, dtype=np.int64)
    converged = np.zeros(word_len, dtype=bool)
    forward = True
    bounds = [] if opts.track_bounds else None
    outer = 0

    for t in range(opts.max_iters):
        h_new, u_new, g_new, q_pow, prec = _step_arrays(
            soft, h0, interference, gain, corr, load, sigma)
        if not np.all(np.isfinite(h_new[:, active])):
            raise DetectorDivergence(t)
        h[:, active] = h_new[:, active]
        interference[:, active] = u_new[:, active]
        gain[active] = g_new[active]
        iters[active] += 1
        outer = t + 1

        if correlated:
            soft = np.tanh(h + xi)
            probs = soft_to_probs(soft)
            if blind and t > 0:
                assumed_now = estimate_transition(probs, opts.pseudo_count)
            changed = _bias_sweep(probs, xi, h, soft, assumed_now,
                                  opts.schedule, forward, rng, 1.0, cap)
            if opts.schedule == "BFUS":
                forward = not forward
            thawed = changed & ~active
            if np.any(thawed):
                active |= thawed
                converged &= ~thawed

        soft = np.tanh(h + xi)
        if bounds is not None:
            bounds.append((float(q_pow.min()), float(q_pow.max()),
                           float(prec.min()), float(prec.max()),
                           float(np.abs(soft).max())))
        dec = hard_decisions(soft)
        same = np.all(dec == prev_dec, axis=0)
        newly = active & same
        converged |= newly
        active &= ~newly
        prev_dec = dec
        if same.all() or not active.any():
            break

    result_soft = SoftField(h + xi, soft_to_probs(soft))
    return DetectionResult(
        bits=prev_dec, soft=result_soft, iters=iters, converged=converged,
        outer_iterations=outer,
        estimated_matrix=assumed_now if blind else None,
        bounds=bounds)


def mud_detect(spreading: SpreadingMatrix, received: np.ndarray, sigma: float,
               opts: DetectorOptions | None = None) -> DetectionResult:
    """Iterative multiuser detection, every symbol position independently.

    Each position starts from the matched-filter field and iterates until
    its hard decisions repeat between consecutive iterations or max_iters
    is hit; non-convergence is flagged per position, never raised.
    """
    return _run_engine(spreading, received, sigma, opts, assumed=None)


def correlated_mud_detect(spreading: SpreadingMatrix, received: np.ndarray,
                          matrix: TransitionMatrix, sigma: float,
                          opts: DetectorOptions | None = None,
                          schedule: str | None = None,
                          blind: bool | None = None) -> DetectionResult:
    """Iterative multiuser detection with the neighbor-prior correction.

    After every synchronous iteration the per-symbol beliefs are refreshed
    and the correction field is recomputed from each symbol's word
    neighbors through the assumed transition matrix, in the order given by
    the schedule; the correction rides inside the tanh of the next
    iteration. In blind mode the matrix is re-estimated from the current
    beliefs each outer iteration, starting from the memoryless matrix.
    Terminates at a global hard-decision fixed point or max_iters.
    """
    opts = opts or DetectorOptions()
    overrides = {}
    if schedule is not None:
        overrides["schedule"] = schedule
    if blind is not None:
        overrides["blind"] = blind
    if overrides:
        opts = replace(opts, **overrides)
    return _run_engine(spreading, received, sigma, opts, assumed=matrix)


def correlated_sumf_detect(spreading: SpreadingMatrix, received: np.ndarray,
                           matrix: TransitionMatrix, sigma: float,
                           opts: DetectorOptions | None = None) -> DetectionResult:
    """Matched-filter detection with the neighbor-prior correction.

    The matched-filter field is computed once and never iterated; only the
    bias field is refined. Each sweep recomputes the correction
    (load + sigma^2) * atanh(m) in schedule order, refreshing each column's
    beliefs from the biased field as it goes, and decisions are
    sign(field + correction). Sweeps repeat until the hard decisions reach
    a fixed point or max_iters.
    """
    opts = opts or DetectorOptions()
    matched = sumf(spreading, received)
    h = matched.field
    load = spreading.n_users / spreading.spread_factor
    scale = load + sigma * sigma
    cap = 1.0 - opts.clamp_eps
    rng = opts.schedule_rng
    if rng is None and opts.schedule == "RSUS":
        rng = np.random.default_rng(0)

    xi = np.zeros_like(h)
    soft = np.tanh(h + xi)
    probs = soft_to_probs(soft)
    prev_dec = hard_decisions(h + xi)
    word_len = h.shape[1]
    forward = True
    passes = 0
    done = False
    for t in range(opts.max_iters):
        _bias_sweep(probs, xi, h, soft, matrix, opts.schedule, forward, rng,
                    scale, cap)
        if opts.schedule == "BFUS":
            forward = not forward
        passes = t + 1
        dec = hard_decisions(h + xi)
        if np.array_equal(dec, prev_dec):
            prev_dec = dec
            done = True
            break
        prev_dec = dec

    return DetectionResult(
        bits=prev_dec, soft=SoftField(h + xi, soft_to_probs(np.tanh(h + xi))),
        iters=np.full(word_len, passes, dtype=np.int64),
        converged=np.full(word_len, done),
        outer_iterations=passes)


def sumf_detect(spreading: SpreadingMatrix, received: np.ndarray) -> DetectionResult:
    """Plain matched-filter hard decisions, position by position."""
    matched = sumf(spreading, received)
    word_len = matched.field.shape[1]
    return DetectionResult(
        bits=hard_decisions(matched.field), soft=matched,
        iters=np.zeros(word_len, dtype=np.int64),
        converged=np.ones(word_len, dtype=bool), outer_iterations=0)
