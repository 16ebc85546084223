"""Decision values, training quartiles, zone labels and score profiles."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import GROUPINGS, Dataset, default_grouping
from .linsvm import Hyperplane

logger = logging.getLogger("osbf-speller.scoring")

ZONES = ("a", "b", "c", "d", "e")
ZONE_A, ZONE_B, ZONE_C, ZONE_D, ZONE_E = range(5)
DEFAULT_SBF_SCORES = (2, 1, 0, -1, -2)


class ScoringError(RuntimeError):
    pass


def group_layout(
    n_levels: int,
    n_flashes: int,
    grouping: str,
    row_split: int | None = None,
    level_names: tuple[str, ...] = (),
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Quartile group of every (level, flash) cell and the group names.

    A single-level per_level layout splits flashes at ``row_split`` (default
    n_f // 2) into a rows group and a columns group; 0 keeps one group.
    """
    if grouping not in GROUPINGS:
        raise ScoringError(f"grouping must be one of {GROUPINGS}, got {grouping!r}")
    ids = np.zeros((n_levels, n_flashes), dtype=np.int64)
    if grouping == "pooled":
        return ids, ("pooled",)
    if n_levels > 1:
        ids[:] = np.arange(n_levels)[:, None]
        names = level_names or tuple(f"level{t}" for t in range(n_levels))
        return ids, tuple(names)
    split = n_flashes // 2 if row_split is None else row_split
    if split < 0 or split >= n_flashes:
        raise ScoringError(f"row_split must lie in [0, {n_flashes - 1}], got {split}")
    if split == 0:
        return ids, (level_names[0] if level_names else "level0",)
    ids[0, split:] = 1
    return ids, ("rows", "columns")


@dataclass(frozen=True, eq=False)
class DvTensor:
    values: np.ndarray
    grouping: str
    group_ids: np.ndarray
    group_names: tuple[str, ...]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return tuple(int(v) for v in self.values.shape)  # type: ignore[return-value]

    def regrouped(self, grouping: str, row_split: int | None = None) -> DvTensor:
        _, _, n_t, n_f = self.values.shape
        ids, names = group_layout(n_t, n_f, grouping, row_split)
        return DvTensor(values=self.values, grouping=grouping, group_ids=ids, group_names=names)


@dataclass(frozen=True, eq=False)
class Quartiles:
    grouping: str
    group_ids: np.ndarray
    group_names: tuple[str, ...]
    # (n_groups, 3) rows of q1, q2, q3
    values: np.ndarray

    def as_dict(self) -> dict[str, list[float]]:
        return {name: [float(v) for v in row] for name, row in zip(self.group_names, self.values)}


@dataclass(frozen=True, eq=False)
class ZoneTensor:
    codes: np.ndarray

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return tuple(int(v) for v in self.codes.shape)  # type: ignore[return-value]

    @property
    def n_iterations(self) -> int:
        return int(self.codes.shape[1])

    def letters(self) -> np.ndarray:
        return np.array(ZONES)[self.codes]


@dataclass(frozen=True)
class ScoreProfile:
    s: tuple[int, int, int, int, int]
    delta: int
    bounds: tuple[int, int]

    @property
    def floor(self) -> int:
        return self.s[0] - self.s[4] + 1

    def validate(self) -> list[str]:
        issues: list[str] = []
        if len(self.s) != 5:
            return ["score vector must have 5 entries (a, b, c, d, e)"]
        lower, upper = self.bounds
        if self.s[0] > upper:
            issues.append(f"s_a={self.s[0]} exceeds upper bound {upper}")
        if self.s[4] < lower:
            issues.append(f"s_e={self.s[4]} is below lower bound {lower}")
        if any(a - b < 1 for a, b in zip(self.s, self.s[1:])):
            issues.append(f"scores {self.s} must be strictly decreasing")
        if self.s[2] < 0:
            issues.append(f"s_c={self.s[2]} must be >= 0")
        if self.delta < self.floor:
            issues.append(f"delta={self.delta} must be >= s_a - s_e + 1 = {self.floor}")
        return issues

    def score_array(self) -> np.ndarray:
        return np.array(self.s, dtype=np.int64)

    def to_dict(self) -> dict[str, object]:
        return {"s": list(self.s), "delta": self.delta, "bounds": list(self.bounds)}

    @classmethod
    def from_dict(cls, raw: dict[str, object]) -> ScoreProfile:
        s = tuple(int(v) for v in raw["s"])  # type: ignore[union-attr]
        bounds = raw.get("bounds") or (min(s), max(s))
        return cls(s=s, delta=int(raw["delta"]), bounds=tuple(int(v) for v in bounds))  # type: ignore[arg-type]


def decision_tensor(
    h: Hyperplane,
    d: Dataset,
    grouping: str | None = None,
    row_split: int | None = None,
) -> DvTensor:
    if h.dim != d.feature_dim:
        raise ScoringError(f"dimension mismatch: hyperplane has {h.dim} weights, dataset has {d.feature_dim} features")
    values = d.features @ h.w + h.b
    grouping = grouping or default_grouping(d.meta)
    ids, names = group_layout(d.n_levels, d.n_flashes, grouping, row_split, d.meta.levels)
    return DvTensor(values=values, grouping=grouping, group_ids=ids, group_names=names)


def quartiles(dv: DvTensor, grouping: str | None = None) -> Quartiles:
    if grouping is not None and grouping != dv.grouping:
        dv = dv.regrouped(grouping)
    n_groups = len(dv.group_names)
    values = np.zeros((n_groups, 3))
    for g in range(n_groups):
        members = dv.values[:, :, dv.group_ids == g]
        if members.size == 0:
            raise ScoringError(f"quartile group {dv.group_names[g]!r} is empty")
        values[g] = np.quantile(members, [0.25, 0.5, 0.75], method="linear")
    return Quartiles(grouping=dv.grouping, group_ids=dv.group_ids, group_names=dv.group_names, values=values)


def assign_zones(dv: DvTensor, q: Quartiles) -> ZoneTensor:
    if q.grouping != dv.grouping or not np.array_equal(q.group_ids, dv.group_ids):
        raise ScoringError(f"quartiles grouped {q.grouping!r} do not match decision values grouped {dv.grouping!r}")
    cell = q.values[dv.group_ids]
    v = dv.values
    q1, q2, q3 = cell[..., 0], cell[..., 1], cell[..., 2]
    codes = np.where(v < q1, ZONE_E, np.where(v < q2, ZONE_D, np.where(v < q3, ZONE_C, ZONE_B)))

    top = v.max(axis=3, keepdims=True)
    unique_top = (v == top).sum(axis=3, keepdims=True) == 1
    is_a = (codes == ZONE_B) & (v > 0) & (v == top) & unique_top
    codes = np.where(is_a, ZONE_A, codes).astype(np.int8)
    return ZoneTensor(codes=codes)


def cumulative_tensor(z: ZoneTensor, p: ScoreProfile) -> np.ndarray:
    """Running score totals of shape (n_k, n_r, n_t, n_f)."""
    return np.cumsum(p.score_array()[z.codes], axis=1)


def cumulative_scores(z: ZoneTensor, p: ScoreProfile, k: int, t: int, upto_r: int) -> np.ndarray:
    n_k, n_r, n_t, _ = z.shape
    if not (1 <= k <= n_k and 0 <= t < n_t and 1 <= upto_r <= n_r):
        raise ScoringError(f"index (k={k},t={t},upto_r={upto_r}) out of range for zone tensor of shape {z.shape}")
    return p.score_array()[z.codes[k - 1, :upto_r, t, :]].sum(axis=0)


def sbf_heuristic_profile(
    scores: tuple[int, ...] | None = None,
    delta: int | None = None,
) -> ScoreProfile:
    s = tuple(int(v) for v in (scores or DEFAULT_SBF_SCORES))
    if len(s) != 5:
        raise ScoringError(f"SBF score vector must have 5 entries, got {len(s)}")
    profile = ScoreProfile(
        s=s,  # type: ignore[arg-type]
        delta=s[0] - s[4] + 1 if delta is None else int(delta),
        bounds=(s[4], s[0]),
    )
    issues = profile.validate()
    if issues:
        raise ScoringError("invalid SBF profile: " + "; ".join(issues))
    return profile


def save_zones_csv(z: ZoneTensor, path: str | Path) -> Path:
    path = Path(path)
    letters = z.letters()
    lines = ["k,r,t,f,zone"]
    for k, r, t, f in np.ndindex(*z.shape):
        lines.append(f"{k + 1},{r + 1},{t},{f + 1},{letters[k, r, t, f]}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@dataclass(frozen=True, eq=False)
class ScoredSubject:
    """Zones of one split together with the quartiles they were assigned against."""

    dv: DvTensor
    quartiles: Quartiles
    zones: ZoneTensor


def score_split(
    h: Hyperplane,
    d: Dataset,
    q: Quartiles | None = None,
    grouping: str | None = None,
    row_split: int | None = None,
) -> ScoredSubject:
    """Decision values and zones for ``d``; quartiles are computed from ``d`` unless frozen ones are given."""
    dv = decision_tensor(h, d, grouping=grouping, row_split=row_split)
    frozen = q if q is not None else quartiles(dv)
    zones = assign_zones(dv, frozen)
    logger.debug("Zone counts for %s split: %s", d.split, np.bincount(zones.codes.ravel(), minlength=5).tolist())
    return ScoredSubject(dv=dv, quartiles=frozen, zones=zones)
