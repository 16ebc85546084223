"""Linear SVM and M-SVM training by dual coordinate descent.

The dual variables are laid out as one block per sign point (lambda) followed
by one block per z-point (rho). Bias is folded into the weights by augmenting
every sign point with the constant ``bias_scale``; z-points get a zero in that
coordinate because the bias cancels in a target-minus-non-target difference.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import Dataset, DatasetError

logger = logging.getLogger("osbf-speller.linsvm")

LOSSES = ("L1", "L2")


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SvmConfig:
    loss: str = "L1"
    c1: float = 1.0
    c2: float = 1.0
    tol: float = 1e-4
    max_epochs: int = 1000
    shuffle_seed: int = 0
    bias_scale: float = 1.0

    def validate(self) -> list[str]:
        issues: list[str] = []
        if self.loss not in LOSSES:
            issues.append(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if not self.c1 > 0:
            issues.append("c1 must be > 0")
        if self.c2 < 0:
            issues.append("c2 must be >= 0")
        if not self.tol > 0:
            issues.append("tol must be > 0")
        if self.max_epochs < 1:
            issues.append("max_epochs must be >= 1")
        if self.bias_scale < 0:
            issues.append("bias_scale must be >= 0")
        return issues


@dataclass(frozen=True, eq=False)
class TrainMatrix:
    """Sign points ``x`` with labels ``y`` and z-points ``z``, all bias-free.

    ``point_index`` and ``z_index`` map rows back to (k, r, t, f) using the
    dataset conventions (1-based trial, iteration and flash, 0-based level).
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    point_index: np.ndarray
    z_index: np.ndarray

    @property
    def l1(self) -> int:
        return int(self.x.shape[0])

    @property
    def l2(self) -> int:
        return int(self.z.shape[0])

    @property
    def dim(self) -> int:
        return int(self.x.shape[1])

    def without_zpoints(self) -> TrainMatrix:
        return replace(
            self,
            z=np.zeros((0, self.dim)),
            z_index=np.zeros((0, 4), dtype=np.int64),
        )

    def rows(self, bias_scale: float) -> np.ndarray:
        """Rows of the dual's data matrix: y*[x, B] for sign points, [z, 0] for z-points."""
        signed = self.y[:, None] * np.hstack([self.x, np.full((self.l1, 1), float(bias_scale))])
        zrows = np.hstack([self.z, np.zeros((self.l2, 1))])
        return np.vstack([signed, zrows])


@dataclass
class DualState:
    alpha: np.ndarray
    w: np.ndarray
    upper: np.ndarray
    diag: np.ndarray
    l1: int

    @property
    def lam(self) -> np.ndarray:
        return self.alpha[: self.l1]

    @property
    def rho(self) -> np.ndarray:
        return self.alpha[self.l1 :]


@dataclass(frozen=True)
class TrainingDiagnostics:
    epochs_run: int = 0
    final_max_projected_gradient: float = float("nan")
    dual_objective: float = float("nan")
    converged: bool = False
    skipped_points: int = 0


@dataclass(frozen=True, eq=False)
class Hyperplane:
    w: np.ndarray
    b: float
    bias_scale: float = 1.0
    diagnostics: TrainingDiagnostics = field(default_factory=TrainingDiagnostics)

    @property
    def dim(self) -> int:
        return int(self.w.shape[0])


def build_train_matrix(d: Dataset) -> TrainMatrix:
    dim = d.feature_dim
    positives = (d.labels == 1).sum(axis=3)
    if (positives != 1).any():
        k, r, t = (int(v) for v in np.argwhere(positives != 1)[0])
        raise SolverError(f"missing or ambiguous target at (k={k + 1},r={r + 1},t={t})")

    index = np.indices(d.labels.shape).reshape(4, -1).T.astype(np.int64)
    index[:, [0, 1, 3]] += 1
    x = d.features.reshape(-1, dim)
    y = d.labels.reshape(-1).astype(np.float64)

    target_pos = np.argmax(d.labels, axis=3)[..., None, None]
    target_x = np.take_along_axis(d.features, target_pos, axis=3)
    nontarget = (d.labels == -1).reshape(-1)
    z = (target_x - d.features).reshape(-1, dim)[nontarget]
    return TrainMatrix(
        x=np.ascontiguousarray(x),
        y=y,
        z=np.ascontiguousarray(z),
        point_index=index,
        z_index=index[nontarget],
    )


def _box(m: TrainMatrix, cfg: SvmConfig, point_costs: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    costs = np.full(m.l1, cfg.c1) if point_costs is None else np.asarray(point_costs, dtype=np.float64)
    if costs.shape != (m.l1,):
        raise SolverError(f"point_costs must have {m.l1} entries, got shape {costs.shape}")
    if (costs < 0).any():
        raise SolverError("point_costs must be >= 0")
    costs = np.concatenate([costs, np.full(m.l2, cfg.c2)])
    if cfg.loss == "L1":
        return costs, np.zeros_like(costs)
    active = costs > 0
    upper = np.where(active, np.inf, 0.0)
    diag = np.zeros_like(costs)
    diag[active] = 1.0 / (2.0 * costs[active])
    return upper, diag


def _projected_gradient(g: float, alpha: float, upper: float) -> float:
    if alpha <= 0.0:
        return min(g, 0.0)
    if alpha >= upper:
        return max(g, 0.0)
    return g


def _max_projected_gradient(rows: np.ndarray, state: DualState, coords: np.ndarray) -> float:
    if coords.size == 0:
        return 0.0
    g = rows[coords] @ state.w - 1.0 + state.diag[coords] * state.alpha[coords]
    a = state.alpha[coords]
    pg = np.where(a <= 0.0, np.minimum(g, 0.0), np.where(a >= state.upper[coords], np.maximum(g, 0.0), g))
    return float(np.max(np.abs(pg)))


def _trainable(rows: np.ndarray, upper: np.ndarray, diag: np.ndarray) -> tuple[np.ndarray, int]:
    q = np.einsum("ij,ij->i", rows, rows) + diag
    active = np.flatnonzero(upper > 0)
    usable = active[q[active] > 0]
    return usable, int(active.size - usable.size)


def solve_dual(
    rows: np.ndarray,
    upper: np.ndarray,
    diag: np.ndarray,
    cfg: SvmConfig,
    l1: int,
    trace: list[np.ndarray] | None = None,
) -> tuple[DualState, TrainingDiagnostics]:
    """Coordinate descent on min 1/2 a'(RR' + D)a - e'a subject to 0 <= a <= upper.

    ``trace``, when given, receives a copy of the dual vector after every epoch.
    """
    n_rows = rows.shape[0]
    state = DualState(alpha=np.zeros(n_rows), w=np.zeros(rows.shape[1]), upper=upper, diag=diag, l1=l1)
    q = np.einsum("ij,ij->i", rows, rows) + diag
    coords, skipped = _trainable(rows, upper, diag)
    if skipped:
        logger.warning("Skipping %d zero-norm training points", skipped)

    rng = np.random.default_rng(cfg.shuffle_seed)
    alpha, w = state.alpha, state.w
    epochs_run = 0
    max_pg = 0.0
    converged = False
    for epoch in range(1, cfg.max_epochs + 1):
        epochs_run = epoch
        max_pg = 0.0
        for i in rng.permutation(coords):
            g = float(rows[i] @ w) - 1.0 + diag[i] * alpha[i]
            pg = _projected_gradient(g, alpha[i], upper[i])
            if abs(pg) > max_pg:
                max_pg = abs(pg)
            if pg != 0.0:
                old = alpha[i]
                alpha[i] = min(max(old - g / q[i], 0.0), upper[i])
                w += (alpha[i] - old) * rows[i]
        if trace is not None:
            trace.append(alpha.copy())
        logger.debug("epoch %d: max projected gradient %.3e", epoch, max_pg)
        if max_pg <= cfg.tol:
            max_pg = _max_projected_gradient(rows, state, coords)
            if max_pg <= cfg.tol:
                converged = True
                break

    if not converged:
        logger.warning(
            "Dual coordinate descent hit max_epochs=%d with max projected gradient %.3e > tol=%.1e",
            cfg.max_epochs,
            max_pg,
            cfg.tol,
        )

    exact = alpha @ rows
    scale = max(1.0, float(np.linalg.norm(exact)))
    if not np.allclose(w, exact, rtol=1e-8, atol=1e-8 * scale):
        raise SolverError("incremental weight vector drifted from its dual expansion")

    objective = _objective(state)
    diagnostics = TrainingDiagnostics(
        epochs_run=epochs_run,
        final_max_projected_gradient=max_pg,
        dual_objective=objective,
        converged=converged,
        skipped_points=skipped,
    )
    return state, diagnostics


def _objective(state: DualState) -> float:
    return float(0.5 * state.w @ state.w - state.alpha.sum() + 0.5 * np.sum(state.diag * state.alpha**2))


def train_with_state(
    m: TrainMatrix,
    cfg: SvmConfig,
    point_costs: np.ndarray | None = None,
    trace: list[np.ndarray] | None = None,
) -> tuple[Hyperplane, DualState]:
    issues = cfg.validate()
    if issues:
        raise SolverError("invalid SVM config: " + "; ".join(issues))
    if m.l1 == 0:
        raise SolverError("training matrix has no points")
    rows = m.rows(cfg.bias_scale)
    if not np.isfinite(rows).all():
        raise SolverError("non-finite feature values in training matrix")

    upper, diag = _box(m, cfg, point_costs)
    state, diagnostics = solve_dual(rows, upper, diag, cfg, l1=m.l1, trace=trace)
    logger.info(
        "Trained %s-loss SVM on %d points + %d z-points: %d epochs, max PG %.2e, dual objective %.6g%s",
        cfg.loss,
        m.l1,
        m.l2 if cfg.c2 > 0 else 0,
        diagnostics.epochs_run,
        diagnostics.final_max_projected_gradient,
        diagnostics.dual_objective,
        "" if diagnostics.converged else " (not converged)",
    )
    hyperplane = Hyperplane(
        w=state.w[: m.dim].copy(),
        b=float(state.w[m.dim] * cfg.bias_scale),
        bias_scale=cfg.bias_scale,
        diagnostics=diagnostics,
    )
    return hyperplane, state


def train(m: TrainMatrix, cfg: SvmConfig) -> Hyperplane:
    return train_with_state(m, cfg)[0]


def _check_state(m: TrainMatrix, s: DualState) -> None:
    if s.alpha.shape != (m.l1 + m.l2,) or s.w.shape != (m.dim + 1,):
        raise SolverError(
            f"dual state of shape alpha={s.alpha.shape}, w={s.w.shape} does not match "
            f"a matrix with {m.l1}+{m.l2} rows of dimension {m.dim}"
        )


def dual_objective(m: TrainMatrix, s: DualState, cfg: SvmConfig) -> float:
    """Minimisation form 1/2 ||w||^2 - sum(alpha), plus the diagonal term for L2 loss."""
    _check_state(m, s)
    return _objective(s)


def kkt_residual(m: TrainMatrix, s: DualState, cfg: SvmConfig) -> float:
    _check_state(m, s)
    rows = m.rows(cfg.bias_scale)
    coords, _ = _trainable(rows, s.upper, s.diag)
    return _max_projected_gradient(rows, s, coords)


def duality_gap(m: TrainMatrix, s: DualState, cfg: SvmConfig) -> float:
    """Primal hinge objective at w(alpha) plus the minimisation-form dual; zero at the optimum."""
    _check_state(m, s)
    rows = m.rows(cfg.bias_scale)
    slack = np.maximum(0.0, 1.0 - rows @ s.w)
    active = s.upper > 0
    if cfg.loss == "L1":
        loss = float(np.sum(s.upper[active] * slack[active]))
    else:
        costs = 1.0 / (2.0 * s.diag[active])
        loss = float(np.sum(costs * slack[active] ** 2))
    primal = 0.5 * float(s.w @ s.w) + loss
    return primal + _objective(s)


def decision_value(h: Hyperplane, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (h.dim,):
        raise SolverError(f"dimension mismatch: hyperplane has {h.dim} weights, vector has shape {x.shape}")
    return float(h.w @ x + h.b)


def save_hyperplane(h: Hyperplane, path: str | Path) -> Path:
    path = Path(path)
    lines = [str(h.dim), repr(float(h.bias_scale)), repr(float(h.b))]
    lines.extend(repr(float(v)) for v in h.w)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_hyperplane(path: str | Path) -> Hyperplane:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Hyperplane file not found: {path}")
    values = [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    try:
        dim = int(values[0])
        bias_scale = float(values[1])
        b = float(values[2])
        w = np.array([float(v) for v in values[3:]])
    except (IndexError, ValueError) as exc:
        raise DatasetError(f"malformed hyperplane file {path}: {exc}") from exc
    if w.shape != (dim,):
        raise DatasetError(f"hyperplane file {path} declares dimension {dim} but holds {w.size} weights")
    return Hyperplane(w=w, b=b, bias_scale=bias_scale)
