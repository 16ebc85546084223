"""Desk-scale acceptance checks run by ``osbf-speller selftest``.

Each criterion builds its own random instances from fixed seeds and compares
the library against an independent oracle. Runtime is measured and reported
next to the budget; only correctness decides pass or fail.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass
from decimal import Decimal, getcontext

import numpy as np
from scipy.optimize import minimize

from . import evaluation
from .config import PipelineConfig, SvmSection, SynthSection
from .dataset import SynthConfig, synth_dataset
from .linsvm import (
    Hyperplane,
    SvmConfig,
    TrainMatrix,
    build_train_matrix,
    dual_objective,
    kkt_residual,
    train_with_state,
)
from .pipeline import SubjectData, run_subject
from .scoreopt import (
    LatticeBounds,
    TimingParams,
    check_constraints,
    earlystop_objective,
    exhaustive_search,
    nostop_objective,
    optimize_earlystop,
    optimize_nostop,
)
from .scoring import ZoneTensor, decision_tensor, sbf_heuristic_profile

logger = logging.getLogger("osbf-speller.acceptance")

COSTS = (0.1, 1.0, 10.0)


@dataclass
class CriterionResult:
    name: str
    passed: bool
    detail: str
    seconds: float
    budget_seconds: float

    @property
    def over_budget(self) -> bool:
        return self.seconds > self.budget_seconds

    def to_dict(self) -> dict[str, object]:
        return {
            "name": self.name,
            "passed": self.passed,
            "detail": self.detail,
            "seconds": round(self.seconds, 3),
            "budget_seconds": self.budget_seconds,
        }


def dense_dual_oracle(rows: np.ndarray, upper: np.ndarray, diag: np.ndarray) -> float:
    """Minimum of 1/2 a'(RR' + D)a - e'a over 0 <= a <= upper, by projected FISTA polished with L-BFGS-B."""
    active = upper > 0
    r = rows[active]
    q = r @ r.T + np.diag(diag[active])
    ub = upper[active]
    if q.size == 0:
        return 0.0

    def value(a: np.ndarray) -> float:
        return float(0.5 * a @ q @ a - a.sum())

    lipschitz = float(np.linalg.eigvalsh(q)[-1]) or 1.0
    x = np.zeros(q.shape[0])
    y = x.copy()
    t = 1.0
    for _ in range(20000):
        x_next = np.clip(y - (q @ y - 1.0) / lipschitz, 0.0, ub)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_next + ((t - 1.0) / t_next) * (x_next - x)
        if np.max(np.abs(x_next - x)) < 1e-14:
            x = x_next
            break
        x, t = x_next, t_next

    polished = minimize(
        lambda a: (value(a), q @ a - 1.0),
        x,
        jac=True,
        method="L-BFGS-B",
        bounds=[(0.0, None if np.isinf(b) else float(b)) for b in ub],
        options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 20000},
    )
    return min(value(x), float(polished.fun))


def random_train_matrix(rng: np.random.Generator, max_points: int = 30, max_dim: int = 8) -> TrainMatrix:
    while True:
        n_trials = int(rng.integers(1, 3))
        n_iterations = int(rng.integers(1, 3))
        n_flashes = int(rng.integers(2, 6))
        if n_trials * n_iterations * n_flashes <= max_points:
            break
    cfg = SynthConfig(
        n_trials=n_trials,
        n_iterations=n_iterations,
        n_flashes=n_flashes,
        feature_dim=int(rng.integers(2, max_dim + 1)),
        target_shift=1.5,
        seed=int(rng.integers(0, 2**31)),
    )
    return build_train_matrix(synth_dataset(cfg)[0])


def random_zone_tensor(rng: np.random.Generator) -> tuple[ZoneTensor, np.ndarray]:
    n_k, n_r = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    n_t, n_f = int(rng.integers(1, 3)), int(rng.integers(2, 5))
    codes = rng.integers(1, 5, size=(n_k, n_r, n_t, n_f))
    for k, r, t in np.ndindex(n_k, n_r, n_t):
        if rng.random() < 0.5:
            codes[k, r, t, rng.integers(n_f)] = 0
    truth = rng.integers(1, n_f + 1, size=(n_k, n_t))
    return ZoneTensor(codes=codes.astype(np.int8)), truth


def _timing_for(z: ZoneTensor) -> TimingParams:
    n_k, n_r, n_t, n_f = z.shape
    return TimingParams(soa_seconds=0.25, flashes_per_iteration=n_f * n_t, n_trials=n_k, n_iterations=n_r)


def _solver_vs_oracle() -> str:
    rng = np.random.default_rng(101)
    worst_gap, worst_kkt = 0.0, 0.0
    for i in range(50):
        m = random_train_matrix(rng)
        cfg = SvmConfig(
            loss=("L1", "L2")[i % 2],
            c1=float(rng.choice(COSTS)),
            c2=float(rng.choice(COSTS)),
            tol=1e-8,
            max_epochs=50000,
            shuffle_seed=i,
        )
        _, state = train_with_state(m, cfg)
        ours = dual_objective(m, state, cfg)
        oracle = dense_dual_oracle(m.rows(cfg.bias_scale), state.upper, state.diag)
        residual = kkt_residual(m, state, cfg)
        worst_gap = max(worst_gap, abs(ours - oracle))
        worst_kkt = max(worst_kkt, residual)
        if abs(ours - oracle) > 1e-6:
            raise AssertionError(f"instance {i}: dual objective {ours!r} vs oracle {oracle!r}")
        if residual > cfg.tol:
            raise AssertionError(f"instance {i}: KKT residual {residual:.3e} > tol")
    return f"50 instances, max |objective - oracle| = {worst_gap:.2e}, max KKT residual = {worst_kkt:.2e}"


def msvm_reduction_instance() -> TrainMatrix:
    """Overlapping two-level subject with many sequences, so the trajectory runs for many epochs."""
    cfg = SynthConfig(n_trials=4, n_iterations=3, n_flashes=5, n_levels=2, feature_dim=6, target_shift=0.5, seed=202)
    return build_train_matrix(synth_dataset(cfg)[0])


def _msvm_reduction() -> str:
    m = msvm_reduction_instance()
    cfg = SvmConfig(loss="L1", c1=1.0, c2=0.0, tol=1e-6, max_epochs=2000, shuffle_seed=7)
    msvm_trace: list[np.ndarray] = []
    std_trace: list[np.ndarray] = []
    h_msvm, _ = train_with_state(m, cfg, trace=msvm_trace)
    h_std, _ = train_with_state(m.without_zpoints(), cfg, trace=std_trace)
    if len(msvm_trace) != len(std_trace):
        raise AssertionError(f"epoch counts differ: {len(msvm_trace)} vs {len(std_trace)}")
    for epoch, (a, b) in enumerate(zip(msvm_trace, std_trace), start=1):
        if not np.array_equal(a[: m.l1], b) or np.any(a[m.l1 :] != 0.0):
            raise AssertionError(f"dual trajectories diverge at epoch {epoch}")
    if not (np.array_equal(h_msvm.w, h_std.w) and h_msvm.b == h_std.b):
        raise AssertionError("hyperplanes differ")
    if len(std_trace) < 5:
        raise AssertionError(f"solver stopped after {len(std_trace)} epochs; the instance is too easy")
    return f"{len(std_trace)} epochs, bitwise identical trajectory over {m.l1} sign points and {m.l2} zeroed z-points"


def _augmentation_equivalence() -> str:
    rng = np.random.default_rng(303)
    worst = 0.0
    for i in range(20):
        m = random_train_matrix(rng)
        loss = ("L1", "L2")[i % 2]
        c1, c2 = float(rng.choice(COSTS)), float(rng.choice(COSTS))
        msvm_cfg = SvmConfig(loss=loss, c1=c1, c2=c2, tol=1e-9, max_epochs=50000, shuffle_seed=i, bias_scale=1.0)
        _, msvm_state = train_with_state(m, msvm_cfg)

        stacked = TrainMatrix(
            x=np.vstack([np.hstack([m.x, np.ones((m.l1, 1))]), np.hstack([m.z, np.zeros((m.l2, 1))])]),
            y=np.concatenate([m.y, np.ones(m.l2)]),
            z=np.zeros((0, m.dim + 1)),
            point_index=np.vstack([m.point_index, m.z_index]),
            z_index=np.zeros((0, 4), dtype=np.int64),
        )
        std_cfg = SvmConfig(loss=loss, c1=c1, c2=0.0, tol=1e-9, max_epochs=50000, shuffle_seed=i, bias_scale=0.0)
        costs = np.concatenate([np.full(m.l1, c1), np.full(m.l2, c2)])
        _, std_state = train_with_state(stacked, std_cfg, point_costs=costs)

        gap = abs(dual_objective(m, msvm_state, msvm_cfg) - dual_objective(stacked, std_state, std_cfg))
        worst = max(worst, gap)
        if gap > 1e-8:
            raise AssertionError(f"instance {i}: objectives differ by {gap:.3e}")
    return f"20 instances, max objective difference {worst:.2e}"


def _milp_instances() -> list[tuple[ZoneTensor, np.ndarray]]:
    rng = np.random.default_rng(404)
    return [random_zone_tensor(rng) for _ in range(20)]


def _milp_exactness() -> str:
    bounds = LatticeBounds(l=-3, u=3)
    nodes = 0
    for i, (z, truth) in enumerate(_milp_instances()):
        tp = _timing_for(z)
        for mode in ("nostop", "earlystop"):
            if mode == "nostop":
                found = optimize_nostop(z, truth, bounds)
            else:
                found = optimize_earlystop(z, truth, bounds, tp)
            profile, value, size = exhaustive_search(z, truth, bounds, mode, tp)
            if found.profile != profile or found.objective != value:
                raise AssertionError(
                    f"instance {i} {mode}: branch-and-bound {found.profile}/{found.objective!r} "
                    f"vs enumeration {profile}/{value!r}"
                )
            nodes += found.nodes_explored
    return f"20 instances x 2 programs match enumeration; {nodes} nodes explored"


def _milp_feasibility() -> str:
    bounds = LatticeBounds(l=-3, u=3)
    audited = 0
    for i, (z, truth) in enumerate(_milp_instances()):
        tp = _timing_for(z)
        for found in (optimize_nostop(z, truth, bounds), optimize_earlystop(z, truth, bounds, tp)):
            violations = check_constraints(z, truth, found, tp)
            if violations:
                raise AssertionError(f"instance {i} {found.mode}: {violations[0]}")
            audited += 1
    return f"{audited} optima pass the constraint audit"


def _decimal_bitrate(n: int, p: str) -> float:
    getcontext().prec = 60
    big_n, big_p = Decimal(n), Decimal(p)
    one = Decimal(1)
    bits = big_n.ln() + big_p * big_p.ln() + (one - big_p) * ((one - big_p) / (big_n - one)).ln()
    return float(bits / Decimal(2).ln())


def _metric_identities() -> str:
    checks = [
        (evaluation.bitrate(36, 1.0), float(np.log2(36)), 1e-12, "bitrate(36, 1)"),
        (evaluation.bitrate(36, 0.95), _decimal_bitrate(36, "0.95"), 1e-9, "bitrate(36, 0.95)"),
    ]
    checks += [(evaluation.bitrate(n, 1.0 / n), 0.0, 1e-12, f"bitrate({n}, 1/{n})") for n in (2, 6, 36)]
    for got, expected, tol, label in checks:
        if abs(got - expected) > tol:
            raise AssertionError(f"{label} = {got!r}, expected {expected!r}")
    duration, _ = evaluation.itr(1.0, 0.25, 12, 8)
    if duration != 0.4:
        raise AssertionError(f"trial duration {duration!r} != 0.4")
    return "bitrate and trial-duration identities hold"


def _commutation() -> str:
    rng = np.random.default_rng(707)
    for i in range(100):
        cfg = SynthConfig(
            n_trials=int(rng.integers(1, 6)),
            n_iterations=int(rng.integers(1, 6)),
            n_flashes=int(rng.integers(2, 7)),
            n_levels=int(rng.integers(1, 3)),
            feature_dim=int(rng.integers(1, 9)),
            target_shift=float(rng.uniform(0, 3)),
            seed=i,
        )
        d = synth_dataset(cfg)[1]
        h = Hyperplane(w=rng.standard_normal(cfg.feature_dim), b=float(rng.standard_normal()))
        by_dv = evaluation.predict_dv_med(decision_tensor(h, d), d)
        by_erp = evaluation.predict_erp_avg(h, d)
        if [p.flashes for p in by_dv] != [p.flashes for p in by_erp]:
            raise AssertionError(f"instance {i}: ERP averaging and decision-value averaging disagree")
    return "100 instances agree"


def solver_note(section: SvmSection, hyperplanes: dict[str, Hyperplane]) -> str:
    converged = sorted(c for c, h in hyperplanes.items() if h.diagnostics.converged)
    pending = sorted(c for c, h in hyperplanes.items() if not h.diagnostics.converged)
    state = []
    if converged:
        state.append(f"converged: {', '.join(converged)}")
    if pending:
        state.append(f"not converged: {', '.join(pending)}")
    return f"solver tol={section.tol:g}, max_epochs={section.max_epochs}; " + "; ".join(state)


def _synthetic_pipeline() -> str:
    cfg = PipelineConfig(
        synth=SynthSection(n_trials=40, n_test_trials=40, n_iterations=8, n_flashes=6, n_levels=1, target_shift=5.0, noise_sd=1.0),
        # looser than the SvmSection defaults; the detail line reports whether each hyperplane converged
        svm=SvmSection(tol=1e-2, max_epochs=200),
    )
    train_set, test_set = synth_dataset(cfg.synth.synth_config(0))  # type: ignore[union-attr]
    result = run_subject(SubjectData("synth01", "synthetic", train_set, test_set), cfg, logger)
    by_key = {(r.method, r.mode): r for r in result.reports}
    dv = by_key[("dv_med", "nostop")]
    osbf = by_key[("osbf", "nostop")]
    early = by_key[("osbf", "earlystop")]
    if dv.accuracy < 0.95 or osbf.accuracy < 0.95:
        raise AssertionError(f"no-stopping accuracy too low: DV-med {dv.accuracy:.3f}, OSBF {osbf.accuracy:.3f}")
    if early.mean_iterations > 4 or early.accuracy < 0.90:
        raise AssertionError(
            f"early stopping: accuracy {early.accuracy:.3f}, mean stop iteration {early.mean_iterations:.2f}"
        )
    return (
        f"DV-med {dv.accuracy:.3f}, OSBF {osbf.accuracy:.3f}, "
        f"early OSBF {early.accuracy:.3f} at {early.mean_iterations:.2f} iterations "
        f"({solver_note(cfg.svm, result.hyperplanes)})"
    )


def _optimizer_dominance() -> str:
    bounds = LatticeBounds(l=-3, u=3)
    sbf = sbf_heuristic_profile()
    for i, (z, truth) in enumerate(_milp_instances()):
        tp = _timing_for(z)
        if optimize_nostop(z, truth, bounds).objective < nostop_objective(z, truth, sbf):
            raise AssertionError(f"instance {i}: no-stopping optimum below SBF")
        if optimize_earlystop(z, truth, bounds, tp).objective < earlystop_objective(z, truth, sbf, tp):
            raise AssertionError(f"instance {i}: early-stopping optimum below SBF")
    return "optimum >= SBF objective on every instance"


CRITERIA: list[tuple[str, Callable[[], str], float]] = [
    ("solver_correctness", _solver_vs_oracle, 30.0),
    ("msvm_reduction", _msvm_reduction, 5.0),
    ("augmentation_equivalence", _augmentation_equivalence, 30.0),
    ("milp_exactness", _milp_exactness, 60.0),
    ("milp_feasibility", _milp_feasibility, 60.0),
    ("metric_identities", _metric_identities, 1.0),
    ("classifier_commutation", _commutation, 30.0),
    ("synthetic_pipeline", _synthetic_pipeline, 120.0),
    ("optimizer_dominance", _optimizer_dominance, 60.0),
]


def run_acceptance(only: list[str] | None = None) -> list[CriterionResult]:
    results: list[CriterionResult] = []
    for name, check, budget in CRITERIA:
        if only and name not in only:
            continue
        started = time.perf_counter()
        try:
            detail = check()
            passed = True
        except Exception as exc:
            detail = f"{type(exc).__name__}: {exc}"
            passed = False
        seconds = time.perf_counter() - started
        result = CriterionResult(name=name, passed=passed, detail=detail, seconds=seconds, budget_seconds=budget)
        if result.over_budget:
            logger.warning("%s took %.1fs, over its %.0fs budget", name, seconds, budget)
        logger.info("%s %s (%.2fs): %s", "PASS" if passed else "FAIL", name, seconds, detail)
        results.append(result)
    return results
