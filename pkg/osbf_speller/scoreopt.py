"""Exact score-profile optimisation for the no-stopping and early-stopping protocols.

Every binary of the two mixed-integer programs is fixed once a score vector s
and a threshold delta are chosen, so both problems are solved by depth-first
branch-and-bound over the integer lattice of feasible (s, delta). Objective
values are always assembled from integer counts by the same scalar formula,
which keeps the search and the reference enumeration bit-for-bit comparable.

Search order is lexicographic ascending on (s_a, s_b, s_c, s_d, s_e, delta) and
an incumbent is only replaced by a strictly better value, so the returned
optimum is the lexicographically smallest one.
"""

from __future__ import annotations

import json
import logging
import time
from collections.abc import Iterator, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .scoring import ScoreProfile, ZoneTensor

logger = logging.getLogger("osbf-speller.scoreopt")

MODES = ("nostop", "earlystop")


class ScoreOptError(RuntimeError):
    pass


@dataclass(frozen=True)
class LatticeBounds:
    l: int = -10  # noqa: E741
    u: int = 10
    delta_max: int | None = None

    def validate(self) -> list[str]:
        issues: list[str] = []
        if self.u - self.l < 4:
            issues.append(f"u - l must be >= 4 to fit five decreasing scores, got l={self.l}, u={self.u}")
        elif self.u < 2:
            issues.append(f"u={self.u} leaves no room for s_c >= 0 under s_b and s_a")
        if self.delta_max is not None and self.delta_max < self.u - self.l + 1:
            issues.append(f"delta_max={self.delta_max} must be >= u - l + 1 = {self.u - self.l + 1}")
        return issues

    def effective_delta_max(self, n_iterations: int) -> int:
        if self.delta_max is not None:
            return self.delta_max
        return max(n_iterations * (self.u - self.l), self.u - self.l + 1)

    def score_vectors(self, s_a: int | None = None) -> Iterator[tuple[int, int, int, int, int]]:
        """Feasible score vectors in lexicographic ascending order, optionally for one s_a branch."""
        l, u = self.l, self.u  # noqa: E741
        tops = range(max(l + 4, 2), u + 1) if s_a is None else (s_a,)
        for a in tops:
            for b in range(max(l + 3, 1), a):
                for c in range(max(l + 2, 0), b):
                    for d in range(l + 1, c):
                        for e in range(l, d):
                            yield (a, b, c, d, e)

    def top_scores(self) -> range:
        return range(max(self.l + 4, 2), self.u + 1)


@dataclass(frozen=True)
class TimingParams:
    soa_seconds: float
    flashes_per_iteration: int
    n_trials: int
    n_iterations: int

    def validate(self) -> list[str]:
        issues: list[str] = []
        if not self.soa_seconds > 0:
            issues.append("soa_seconds must be > 0")
        for name in ("flashes_per_iteration", "n_trials", "n_iterations"):
            if getattr(self, name) < 1:
                issues.append(f"{name} must be >= 1")
        return issues

    @property
    def factor(self) -> float:
        """Weight of one charged iteration in the early-stopping objective."""
        return (100.0 * self.flashes_per_iteration / 60.0) * (self.soa_seconds / self.n_trials)


@dataclass
class OptResult:
    mode: str
    profile: ScoreProfile
    objective: float
    per_level_breakdown: dict[str, dict[str, float]]
    nodes_explored: int
    delta_max: int
    wall_seconds: float = 0.0
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "profile": self.profile.to_dict(),
            "objective": self.objective,
            "per_level_breakdown": self.per_level_breakdown,
            "nodes_explored": self.nodes_explored,
            "delta_max": self.delta_max,
            "wall_seconds": round(self.wall_seconds, 6),
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _truth_array(truth: np.ndarray | Mapping[int, Mapping[int, int]], n_k: int, n_t: int) -> np.ndarray:
    if isinstance(truth, Mapping):
        array = np.array([[truth[k + 1][t] for t in range(n_t)] for k in range(n_k)], dtype=np.int64)
    else:
        array = np.asarray(truth, dtype=np.int64)
    if array.shape != (n_k, n_t):
        raise ScoreOptError(f"truth of shape {array.shape} does not cover (n_trials, n_levels) = {(n_k, n_t)}")
    return array


class _Simulator:
    """Target and leader gaps of the running score totals for one zone tensor."""

    def __init__(self, z: ZoneTensor, truth: np.ndarray | Mapping[int, Mapping[int, int]]) -> None:
        self.n_k, self.n_r, self.n_t, self.n_f = z.shape
        if self.n_f < 2:
            raise ScoreOptError("score optimisation needs at least two flashes per level")
        self.truth = _truth_array(truth, self.n_k, self.n_t)
        if ((self.truth < 1) | (self.truth > self.n_f)).any():
            raise ScoreOptError("truth holds flash indices outside [1, n_f]")
        self.codes = z.codes.astype(np.int64)
        flashes = np.arange(self.n_f)
        self.target = flashes[None, None, None, :] == (self.truth - 1)[:, None, :, None]

    def gaps(self, s: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
        """(G, D) of shape (n_k, n_r, n_t): target minus best non-target, leader minus runner-up."""
        cum = np.cumsum(np.asarray(s, dtype=np.int64)[self.codes], axis=1)
        target = np.where(self.target, cum, 0).sum(axis=3)
        others = np.where(self.target, np.iinfo(np.int64).min, cum).max(axis=3)
        top2 = np.sort(cum, axis=3)[..., -2:]
        return target - others, top2[..., 1] - top2[..., 0]

    # counts are python ints so every objective flows through one scalar formula

    def nostop_counts(self, g: np.ndarray, deltas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = g[None] >= deltas[:, None, None, None]
        n_x = x.sum(axis=(1, 2))
        n_err = (~x[:, :, -1, :]).sum(axis=1)
        return n_err, n_x

    def earlystop_counts(self, g: np.ndarray, d: np.ndarray, deltas: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        trig = d[None] >= deltas[:, None, None, None]
        fired = trig.any(axis=2)
        first = np.argmax(trig, axis=2)
        g_first = np.take_along_axis(np.broadcast_to(g, trig.shape), first[:, :, None, :], axis=2)[:, :, 0, :]
        success = fired & (g_first >= deltas[:, None, None])
        n_err = (~success).sum(axis=1)
        stop_sum = ((first + 1) * success).sum(axis=1)
        charged = np.where(fired, first + 1, self.n_r)
        return n_err, stop_sum, charged

    def nostop_value(self, n_err: np.ndarray, n_x: np.ndarray) -> float:
        total = 0.0
        for t in range(self.n_t):
            total += (1.0 - int(n_err[t]) / self.n_k) + int(n_x[t]) / (self.n_k * self.n_r)
        return total

    def earlystop_value(self, n_err: np.ndarray, stop_sum: np.ndarray, factor: float) -> float:
        total = 0.0
        for t in range(self.n_t):
            errors = int(n_err[t])
            total += 1.0 - errors / self.n_k - factor * (int(stop_sum[t]) + self.n_r * errors)
        return total

    def ceiling(self, mode: str, factor: float) -> float:
        # one iteration can never open a gap of s_a - s_e + 1, so x vanishes at r = 1
        zeros = np.zeros(self.n_t, dtype=np.int64)
        if mode == "nostop":
            return self.nostop_value(zeros, np.full(self.n_t, self.n_k * (self.n_r - 1)))
        return self.earlystop_value(zeros, np.full(self.n_t, self.n_k * min(2, self.n_r)), factor)

    def earlystop_bound(self, g: np.ndarray, floor: int, factor: float) -> float:
        reach = g >= floor
        ever = reach.any(axis=1)
        first = np.argmax(reach, axis=1) + 1
        n_err = (~ever).sum(axis=0)
        stop_sum = (first * ever).sum(axis=0)
        return self.earlystop_value(n_err, stop_sum, factor)


def _earlystop_deltas(d: np.ndarray, floor: int, delta_max: int) -> np.ndarray:
    """Left ends of the intervals on which the early-stopping objective is constant in delta."""
    observed = np.unique(d[d >= floor]) + 1
    return np.unique(np.concatenate([[floor], observed[observed <= delta_max]])).astype(np.int64)


def _check_inputs(sim: _Simulator, bounds: LatticeBounds, mode: str, tp: TimingParams | None) -> float:
    if mode not in MODES:
        raise ScoreOptError(f"mode must be one of {MODES}, got {mode!r}")
    issues = bounds.validate()
    if issues:
        raise ScoreOptError("infeasible bounds: " + "; ".join(issues))
    if mode == "nostop":
        return 0.0
    return _check_timing(sim, tp)


def _check_timing(sim: _Simulator, tp: TimingParams | None) -> float:
    if tp is None:
        raise ScoreOptError("early-stopping optimisation needs timing parameters")
    issues = tp.validate()
    if issues:
        raise ScoreOptError("invalid timing parameters: " + "; ".join(issues))
    if tp.n_trials != sim.n_k or tp.n_iterations != sim.n_r:
        raise ScoreOptError(
            f"timing parameters describe {tp.n_trials} trials x {tp.n_iterations} iterations, "
            f"zone tensor has {sim.n_k} x {sim.n_r}"
        )
    return tp.factor


@dataclass
class _Incumbent:
    value: float = float("-inf")
    key: tuple[int, ...] | None = None
    nodes: int = 0

    def offer(self, value: float, key: tuple[int, ...]) -> None:
        if value > self.value:
            self.value = value
            self.key = key


def _search_branch(
    sim: _Simulator,
    bounds: LatticeBounds,
    mode: str,
    factor: float,
    delta_max: int,
    s_a: int,
    best: _Incumbent,
    ceiling: float,
) -> _Incumbent:
    for s in bounds.score_vectors(s_a):
        if best.value >= ceiling:
            break
        best.nodes += 1
        floor = s[0] - s[4] + 1
        g, d = sim.gaps(s)
        if mode == "nostop":
            # objective is non-increasing in delta, so the floor is the best threshold for s
            n_err, n_x = sim.nostop_counts(g, np.array([floor]))
            best.nodes += 1
            best.offer(sim.nostop_value(n_err[0], n_x[0]), (*s, floor))
            continue

        if sim.earlystop_bound(g, floor, factor) <= best.value:
            continue
        deltas = _earlystop_deltas(d, floor, delta_max)
        n_err, stop_sum, charged = sim.earlystop_counts(g, d, deltas)
        if (np.diff(charged, axis=0) < 0).any():
            raise ScoreOptError(f"stopping iteration decreased with a larger threshold for s={s}")
        for i, delta in enumerate(deltas):
            best.nodes += 1
            best.offer(sim.earlystop_value(n_err[i], stop_sum[i], factor), (*s, int(delta)))
    return best


def _branch_and_bound(
    sim: _Simulator,
    bounds: LatticeBounds,
    mode: str,
    factor: float,
    delta_max: int,
    workers: int,
) -> _Incumbent:
    ceiling = sim.ceiling(mode, factor)
    tops = list(bounds.top_scores())
    if workers <= 1:
        best = _Incumbent()
        for s_a in tops:
            _search_branch(sim, bounds, mode, factor, delta_max, s_a, best, ceiling)
        return best

    def run(s_a: int) -> _Incumbent:
        return _search_branch(sim, bounds, mode, factor, delta_max, s_a, _Incumbent(), ceiling)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        partial = list(pool.map(run, tops))
    merged = _Incumbent()
    for branch in partial:
        merged.nodes += branch.nodes
        if branch.key is not None:
            merged.offer(branch.value, branch.key)
    return merged


def _level_names(n_t: int, level_names: tuple[str, ...]) -> tuple[str, ...]:
    return tuple(level_names) if len(level_names) == n_t else tuple(f"level{t}" for t in range(n_t))


def _breakdown(
    sim: _Simulator,
    p: ScoreProfile,
    mode: str,
    level_names: tuple[str, ...],
) -> dict[str, dict[str, float]]:
    g, d = sim.gaps(p.s)
    deltas = np.array([p.delta])
    names = _level_names(sim.n_t, level_names)
    if mode == "nostop":
        n_err, n_x = sim.nostop_counts(g, deltas)
        return {
            names[t]: {"err_rate": int(n_err[0, t]) / sim.n_k, "x_sum": int(n_x[0, t])}
            for t in range(sim.n_t)
        }
    n_err, _, charged = sim.earlystop_counts(g, d, deltas)
    return {
        names[t]: {
            "err_rate": int(n_err[0, t]) / sim.n_k,
            "mean_stop_iteration": float(charged[0, :, t].mean()),
        }
        for t in range(sim.n_t)
    }


def _evaluate(sim: _Simulator, p: ScoreProfile, mode: str, factor: float) -> float:
    issues = p.validate()
    if issues:
        raise ScoreOptError("infeasible score profile: " + "; ".join(issues))
    g, d = sim.gaps(p.s)
    deltas = np.array([p.delta])
    if mode == "nostop":
        n_err, n_x = sim.nostop_counts(g, deltas)
        return sim.nostop_value(n_err[0], n_x[0])
    n_err, stop_sum, _ = sim.earlystop_counts(g, d, deltas)
    return sim.earlystop_value(n_err[0], stop_sum[0], factor)


def nostop_objective(z: ZoneTensor, truth: np.ndarray | Mapping[int, Mapping[int, int]], p: ScoreProfile) -> float:
    return _evaluate(_Simulator(z, truth), p, "nostop", 0.0)


def earlystop_objective(
    z: ZoneTensor,
    truth: np.ndarray | Mapping[int, Mapping[int, int]],
    p: ScoreProfile,
    tp: TimingParams,
) -> float:
    sim = _Simulator(z, truth)
    return _evaluate(sim, p, "earlystop", _check_timing(sim, tp))


def _optimize(
    z: ZoneTensor,
    truth: np.ndarray | Mapping[int, Mapping[int, int]],
    bounds: LatticeBounds,
    mode: str,
    tp: TimingParams | None,
    workers: int,
    level_names: tuple[str, ...],
) -> OptResult:
    started = time.perf_counter()
    sim = _Simulator(z, truth)
    factor = _check_inputs(sim, bounds, mode, tp)
    delta_max = bounds.effective_delta_max(sim.n_r)
    best = _branch_and_bound(sim, bounds, mode, factor, delta_max, workers)
    if best.key is None:
        raise ScoreOptError("score lattice is empty for the given bounds")

    profile = ScoreProfile(s=best.key[:5], delta=best.key[5], bounds=(bounds.l, bounds.u))  # type: ignore[arg-type]
    recheck = _evaluate(sim, profile, mode, factor)
    if recheck != best.value:
        raise ScoreOptError(f"objective re-check failed: search found {best.value!r}, evaluator gives {recheck!r}")
    result = OptResult(
        mode=mode,
        profile=profile,
        objective=best.value,
        per_level_breakdown=_breakdown(sim, profile, mode, level_names),
        nodes_explored=best.nodes,
        delta_max=delta_max,
        wall_seconds=time.perf_counter() - started,
    )
    logger.info(
        "Optimal %s profile s=%s delta=%d objective=%.6f (%d nodes, %.3fs)",
        mode,
        profile.s,
        profile.delta,
        result.objective,
        result.nodes_explored,
        result.wall_seconds,
    )
    return result


def optimize_nostop(
    z: ZoneTensor,
    truth: np.ndarray | Mapping[int, Mapping[int, int]],
    b: LatticeBounds,
    workers: int = 1,
    level_names: tuple[str, ...] = (),
) -> OptResult:
    return _optimize(z, truth, b, "nostop", None, workers, level_names)


def optimize_earlystop(
    z: ZoneTensor,
    truth: np.ndarray | Mapping[int, Mapping[int, int]],
    b: LatticeBounds,
    tp: TimingParams,
    workers: int = 1,
    level_names: tuple[str, ...] = (),
) -> OptResult:
    return _optimize(z, truth, b, "earlystop", tp, workers, level_names)


def exhaustive_search(
    z: ZoneTensor,
    truth: np.ndarray | Mapping[int, Mapping[int, int]],
    b: LatticeBounds,
    mode: str,
    tp: TimingParams | None = None,
) -> tuple[ScoreProfile, float, int]:
    """Evaluate every feasible (s, delta); returns the lexicographically smallest optimum and the lattice size."""
    sim = _Simulator(z, truth)
    factor = _check_inputs(sim, b, mode, tp)
    delta_max = b.effective_delta_max(sim.n_r)
    best = _Incumbent()
    for s in b.score_vectors():
        deltas = np.arange(s[0] - s[4] + 1, delta_max + 1, dtype=np.int64)
        g, d = sim.gaps(s)
        if mode == "nostop":
            n_err, n_x = sim.nostop_counts(g, deltas)
            values = [sim.nostop_value(n_err[i], n_x[i]) for i in range(deltas.size)]
        else:
            n_err, stop_sum, _ = sim.earlystop_counts(g, d, deltas)
            values = [sim.earlystop_value(n_err[i], stop_sum[i], factor) for i in range(deltas.size)]
        for delta, value in zip(deltas, values):
            best.nodes += 1
            best.offer(value, (*s, int(delta)))
    if best.key is None:
        raise ScoreOptError("score lattice is empty for the given bounds")
    profile = ScoreProfile(s=best.key[:5], delta=best.key[5], bounds=(b.l, b.u))  # type: ignore[arg-type]
    return profile, best.value, best.nodes


def _loop_cumulative(codes: np.ndarray, s: tuple[int, ...], k: int, t: int, r: int, f: int) -> int:
    return sum(s[int(codes[k, i, t, f])] for i in range(r + 1))


def check_constraints(
    z: ZoneTensor,
    truth: np.ndarray | Mapping[int, Mapping[int, int]],
    result: OptResult,
    tp: TimingParams | None = None,
) -> list[str]:
    """Audit the binaries implied by ``result`` against every program constraint, with plain loops.

    Returns the list of violated constraints; empty means the optimum is feasible
    and its objective matches the one rebuilt from the audited binaries.
    """
    sim = _Simulator(z, truth)
    p = result.profile
    s, delta = p.s, p.delta
    violations = [f"bounds/ordering: {issue}" for issue in p.validate()]
    if violations:
        return violations

    n_k, n_r, n_t, n_f = sim.n_k, sim.n_r, sim.n_t, sim.n_f
    g, d = sim.gaps(s)
    deltas = np.array([delta])
    earlystop = result.mode == "earlystop"
    if earlystop:
        n_err = sim.earlystop_counts(g, d, deltas)[0]
        fired = d >= delta
        first = np.argmax(fired, axis=1)
        x = np.zeros((n_k, n_r, n_t), dtype=np.int64)
        for k in range(n_k):
            for t in range(n_t):
                r = int(first[k, t])
                if fired[k, r, t] and g[k, r, t] >= delta:
                    x[k, r, t] = 1
    else:
        x = (g >= delta).astype(np.int64)
    err = 1 - (x.sum(axis=1) if earlystop else x[:, -1, :])

    codes = sim.codes
    for k in range(n_k):
        for t in range(n_t):
            trg = int(sim.truth[k, t]) - 1
            for r in range(n_r):
                totals = [_loop_cumulative(codes, s, k, t, r, f) for f in range(n_f)]
                target_clear = all(totals[trg] >= totals[f] + delta for f in range(n_f) if f != trg)
                if x[k, r, t] and not target_clear:
                    violations.append(f"threshold condition broken at (k={k + 1},r={r + 1},t={t})")
                if not earlystop:
                    continue
                if x[k, r, t] and x[k, :r, t].any():
                    violations.append(f"more than one stopping iteration at (k={k + 1},t={t})")
                if x[k, r, t]:
                    for r_prev in range(r + 1):
                        earlier = [_loop_cumulative(codes, s, k, t, r_prev, f) for f in range(n_f)]
                        for f in range(n_f):
                            if f == trg:
                                continue
                            if all(earlier[f] >= earlier[o] + delta for o in range(n_f) if o != f):
                                violations.append(
                                    f"non-target {f + 1} reached the threshold by r={r_prev + 1} at (k={k + 1},t={t})"
                                )
                    for r_prev in range(r):
                        earlier = [_loop_cumulative(codes, s, k, t, r_prev, f) for f in range(n_f)]
                        if all(earlier[trg] >= earlier[f] + delta for f in range(n_f) if f != trg):
                            violations.append(f"stop at r={r + 1} is not the first trigger at (k={k + 1},t={t})")
            if err[k, t] not in (0, 1):
                violations.append(f"error indicator out of range at (k={k + 1},t={t})")
            if not earlystop and err[k, t] != 1 - x[k, n_r - 1, t]:
                violations.append(f"error linkage broken at (k={k + 1},t={t})")

    if earlystop:
        factor = _check_timing(sim, tp)
        total = 0.0
        for t in range(n_t):
            errors = int(err[:, t].sum())
            stops = int(sum((r + 1) * x[k, r, t] for k in range(n_k) for r in range(n_r)))
            total += 1.0 - errors / n_k - factor * (stops + n_r * errors)
        if int(err.sum()) != int(n_err.sum()):
            violations.append("error count disagrees with the stopping simulation")
    else:
        total = 0.0
        for t in range(n_t):
            total += (1.0 - int(err[:, t].sum()) / n_k) + int(x[:, :, t].sum()) / (n_k * n_r)
    if abs(total - result.objective) > 1e-9:
        violations.append(f"objective {result.objective!r} differs from audited value {total!r}")
    return violations
