"""Speller dataset model, on-disk text format, preprocessing and a synthetic generator.

A dataset is the full grid of stimuli indexed by (trial k, iteration r, level t,
flash f). Trials, iterations and flashes are 1-based; levels are 0-based
positions in ``ProtocolMeta.levels``. Feature vectors are channel-major: the
first ``samples_per_channel`` values belong to channel 0, and so on.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

logger = logging.getLogger("osbf-speller.dataset")

SPLITS = ("train", "test")
GROUPINGS = ("per_level", "pooled")

_REQUIRED_HEADER_KEYS = (
    "n_trials",
    "n_iterations",
    "levels",
    "n_flashes",
    "n_channels",
    "samples_per_channel",
    "soa",
    "n_symbols",
    "overhead",
    "split",
)


class DatasetError(ValueError):
    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class ProtocolMeta:
    n_symbols: int
    levels: tuple[str, ...]
    n_flashes: int
    max_iterations: int
    soa_seconds: float
    flashes_per_iteration: int
    overhead_seconds: float
    n_channels: int
    samples_per_channel: int
    # Quartile grouping the protocol calls for; None falls back to default_grouping().
    grouping: str | None = None

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def feature_dim(self) -> int:
        return self.n_channels * self.samples_per_channel

    def validate(self) -> list[str]:
        issues: list[str] = []
        if not self.levels:
            issues.append("levels must not be empty")
        if len(set(self.levels)) != len(self.levels):
            issues.append("level identifiers must be unique")
        if self.n_flashes < 2:
            issues.append("n_flashes must be >= 2")
        if self.max_iterations < 1:
            issues.append("max_iterations must be >= 1")
        if not self.soa_seconds > 0:
            issues.append("soa must be positive")
        if self.levels and self.flashes_per_iteration != self.n_flashes * len(self.levels):
            issues.append(
                f"flashes_per_iteration={self.flashes_per_iteration} must equal "
                f"n_flashes x |levels| = {self.n_flashes * len(self.levels)}"
            )
        if self.levels and self.n_symbols > self.n_flashes ** len(self.levels):
            issues.append(f"n_symbols={self.n_symbols} exceeds n_flashes^|levels|")
        if self.n_symbols < 1:
            issues.append("n_symbols must be >= 1")
        if self.n_channels < 1 or self.samples_per_channel < 1:
            issues.append("n_channels and samples_per_channel must be >= 1")
        if self.grouping is not None and self.grouping not in GROUPINGS:
            issues.append(f"grouping must be one of {GROUPINGS}")
        return issues


def default_grouping(meta: ProtocolMeta) -> str:
    """Quartile grouping for a protocol when no configuration overrides it."""
    if meta.grouping is not None:
        return meta.grouping
    return "per_level" if meta.n_levels == 1 else "pooled"


@dataclass(frozen=True)
class StimulusRecord:
    trial: int
    iteration: int
    level: int
    flash: int
    label: int
    features: np.ndarray


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable labeled feature tensor.

    ``features`` has shape (n_k, n_r, n_t, n_f, dim), ``labels`` (n_k, n_r, n_t, n_f)
    with values in {-1, +1}, and ``truth`` (n_k, n_t) holds the 1-based target flash
    of every (trial, level).
    """

    meta: ProtocolMeta
    features: np.ndarray
    labels: np.ndarray
    truth: np.ndarray
    split: str = "train"

    def __post_init__(self) -> None:
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int8)
        truth = np.array(self.truth, dtype=np.int64)
        for array in (features, labels, truth):
            array.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "truth", truth)
        _check_invariants(self)

    @property
    def n_trials(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_iterations(self) -> int:
        return int(self.features.shape[1])

    @property
    def n_levels(self) -> int:
        return int(self.features.shape[2])

    @property
    def n_flashes(self) -> int:
        return int(self.features.shape[3])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[4])

    @property
    def n_records(self) -> int:
        return int(self.labels.size)

    def records(self) -> Iterator[StimulusRecord]:
        for k, r, t, f in np.ndindex(*self.labels.shape):
            yield StimulusRecord(
                trial=k + 1,
                iteration=r + 1,
                level=t,
                flash=f + 1,
                label=int(self.labels[k, r, t, f]),
                features=self.features[k, r, t, f],
            )

    def truth_map(self) -> dict[int, dict[int, int]]:
        return {
            k + 1: {t: int(self.truth[k, t]) for t in range(self.n_levels)}
            for k in range(self.n_trials)
        }

    def with_features(self, features: np.ndarray, meta: ProtocolMeta) -> Dataset:
        return Dataset(meta=meta, features=features, labels=self.labels, truth=self.truth, split=self.split)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.meta == other.meta
            and self.split == other.split
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.truth, other.truth)
        )

    __hash__ = None  # type: ignore[assignment]


def _check_invariants(d: Dataset) -> None:
    issues = d.meta.validate()
    if issues:
        raise DatasetError("invalid protocol metadata: " + "; ".join(issues))
    if d.split not in SPLITS:
        raise DatasetError(f"split must be one of {SPLITS}, got {d.split!r}")
    if d.features.ndim != 5:
        raise DatasetError(f"features must have 5 axes (k, r, t, f, dim), got shape {d.features.shape}")
    n_k, n_r, n_t, n_f, dim = d.features.shape
    if d.labels.shape != (n_k, n_r, n_t, n_f):
        raise DatasetError(f"labels shape {d.labels.shape} does not match features {d.features.shape[:4]}")
    if d.truth.shape != (n_k, n_t):
        raise DatasetError(f"truth shape {d.truth.shape} does not match (n_trials, n_levels) = {(n_k, n_t)}")
    if n_t != d.meta.n_levels or n_f != d.meta.n_flashes or n_r != d.meta.max_iterations:
        raise DatasetError("tensor shape disagrees with protocol metadata (levels, flashes or iterations)")
    if dim != d.meta.feature_dim:
        raise DatasetError(
            f"dimension mismatch: feature dimension {dim} != n_channels x samples_per_channel "
            f"= {d.meta.feature_dim}"
        )
    if not np.isin(d.labels, (-1, 1)).all():
        raise DatasetError("labels must be -1 or +1")

    positives = (d.labels == 1).sum(axis=3)
    for k, r, t in zip(*np.nonzero(positives != 1)):
        kind = "multiple targets" if positives[k, r, t] > 1 else "no target"
        raise DatasetError(f"{kind} at (k={k + 1},r={r + 1},t={t})")
    target_flash = np.argmax(d.labels, axis=3) + 1
    mismatch = target_flash != d.truth[:, None, :]
    for k, r, t in zip(*np.nonzero(mismatch)):
        raise DatasetError(
            f"target flash {target_flash[k, r, t]} at (k={k + 1},r={r + 1},t={t}) "
            f"disagrees with truth {d.truth[k, t]}"
        )


def _parse_int(value: str, line: int, what: str) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise DatasetError(f"cannot parse {what} {value!r} as integer", line) from exc


def _meta_from_header(header: dict[str, str]) -> tuple[ProtocolMeta, int, str]:
    missing = [key for key in _REQUIRED_HEADER_KEYS if key not in header]
    if missing:
        raise DatasetError(f"missing header keys: {', '.join(missing)}")
    try:
        levels = tuple(item.strip() for item in header["levels"].split(",") if item.strip())
        n_flashes = int(header["n_flashes"])
        meta = ProtocolMeta(
            n_symbols=int(header["n_symbols"]),
            levels=levels,
            n_flashes=n_flashes,
            max_iterations=int(header["n_iterations"]),
            soa_seconds=float(header["soa"]),
            flashes_per_iteration=int(header.get("flashes_per_iteration", n_flashes * len(levels))),
            overhead_seconds=float(header["overhead"]),
            n_channels=int(header["n_channels"]),
            samples_per_channel=int(header["samples_per_channel"]),
            grouping=header.get("grouping") or None,
        )
        n_trials = int(header["n_trials"])
    except ValueError as exc:
        raise DatasetError(f"malformed header value: {exc}") from exc
    issues = meta.validate()
    if issues:
        raise DatasetError("invalid protocol metadata: " + "; ".join(issues))
    return meta, n_trials, header["split"]


@dataclass
class _RecordBuffers:
    meta: ProtocolMeta
    split: str
    features: np.ndarray
    labels: np.ndarray
    seen: np.ndarray
    truth: np.ndarray

    @classmethod
    def allocate(cls, header: dict[str, str]) -> _RecordBuffers:
        meta, n_trials, split = _meta_from_header(header)
        shape = (n_trials, meta.max_iterations, meta.n_levels, meta.n_flashes)
        return cls(
            meta=meta,
            split=split,
            features=np.zeros(shape + (meta.feature_dim,)),
            labels=np.zeros(shape, dtype=np.int8),
            seen=np.zeros(shape, dtype=bool),
            truth=np.zeros((n_trials, meta.n_levels), dtype=np.int64),
        )

    def add_record(self, fields: list[str], lineno: int) -> None:
        if len(fields) < 6:
            raise DatasetError("record needs k,r,t,f,y and at least one feature", lineno)
        k, r, t, f, y = (_parse_int(v, lineno, name) for v, name in zip(fields[:5], "krtfy"))
        values = fields[5:]
        dim = self.meta.feature_dim
        if len(values) != dim:
            raise DatasetError(f"dimension mismatch: {len(values)} features, expected {dim}", lineno)
        n_k, n_r, n_t, n_f = self.seen.shape
        if not (1 <= k <= n_k and 1 <= r <= n_r and 0 <= t < n_t and 1 <= f <= n_f):
            raise DatasetError(f"index (k={k},r={r},t={t},f={f}) out of range", lineno)
        if y not in (-1, 1):
            raise DatasetError(f"label must be -1 or +1, got {y}", lineno)
        index = (k - 1, r - 1, t, f - 1)
        if self.seen[index]:
            raise DatasetError(f"duplicate record (k={k},r={r},t={t},f={f})", lineno)
        try:
            self.features[index] = [float(v) for v in values]
        except ValueError as exc:
            raise DatasetError(f"cannot parse feature value: {exc}", lineno) from exc
        self.labels[index] = y
        self.seen[index] = True

    def add_truth(self, fields: list[str], lineno: int) -> None:
        if len(fields) != 3:
            raise DatasetError("TRUTH lines must be k,t,f_target", lineno)
        k, t, f = (_parse_int(v, lineno, name) for v, name in zip(fields, "ktf"))
        n_k, n_t = self.truth.shape
        if not (1 <= k <= n_k and 0 <= t < n_t and 1 <= f <= self.meta.n_flashes):
            raise DatasetError(f"truth entry (k={k},t={t},f={f}) out of range", lineno)
        self.truth[k - 1, t] = f

    def finish(self) -> Dataset:
        if not self.seen.all():
            k, r, t, f = (int(v) for v in np.argwhere(~self.seen)[0])
            raise DatasetError(
                f"record count {int(self.seen.sum())} != expected {self.seen.size}; "
                f"first missing (k={k + 1},r={r + 1},t={t},f={f + 1})"
            )
        if (self.truth == 0).any():
            k, t = (int(v) for v in np.argwhere(self.truth == 0)[0])
            raise DatasetError(f"TRUTH section has no entry for (k={k + 1},t={t})")
        return Dataset(meta=self.meta, features=self.features, labels=self.labels, truth=self.truth, split=self.split)


def load_dataset(path: str | Path) -> Dataset:
    """Parse a dataset file; raises DatasetError naming the offending line or (k,r,t)."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Dataset file not found: {path}")

    header: dict[str, str] = {}
    in_truth = False
    buffers: _RecordBuffers | None = None

    try:
        with path.open(encoding="utf-8") as handle:
            for lineno, raw in enumerate(handle, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if buffers is None and "=" in line:
                    key, _, value = line.partition("=")
                    header[key.strip()] = value.strip()
                    continue
                if buffers is None:
                    buffers = _RecordBuffers.allocate(header)
                if line == "TRUTH":
                    in_truth = True
                    continue
                fields = [item.strip() for item in line.split(",")]
                if in_truth:
                    buffers.add_truth(fields, lineno)
                else:
                    buffers.add_record(fields, lineno)
    except UnicodeDecodeError as exc:
        raise DatasetError(f"{path} is not UTF-8 text: {exc}") from exc
    except IsADirectoryError as exc:
        raise DatasetError(f"Dataset path is a directory: {path}") from exc

    if buffers is None:
        raise DatasetError(f"no records found in {path}")
    dataset = buffers.finish()
    logger.debug("Loaded %s: %d trials, %d records, dim=%d", path, dataset.n_trials, dataset.n_records, dataset.feature_dim)
    return dataset


def save_dataset(d: Dataset, path: str | Path) -> Path:
    path = Path(path)
    meta = d.meta
    lines = [
        f"n_trials={d.n_trials}",
        f"n_iterations={d.n_iterations}",
        f"levels={','.join(meta.levels)}",
        f"n_flashes={meta.n_flashes}",
        f"n_channels={meta.n_channels}",
        f"samples_per_channel={meta.samples_per_channel}",
        f"soa={meta.soa_seconds!r}",
        f"n_symbols={meta.n_symbols}",
        f"overhead={meta.overhead_seconds!r}",
        f"flashes_per_iteration={meta.flashes_per_iteration}",
        f"split={d.split}",
    ]
    if meta.grouping is not None:
        lines.append(f"grouping={meta.grouping}")
    for record in d.records():
        values = ",".join(repr(float(v)) for v in record.features)
        lines.append(f"{record.trial},{record.iteration},{record.level},{record.flash},{record.label},{values}")
    lines.append("TRUTH")
    for k in range(d.n_trials):
        for t in range(d.n_levels):
            lines.append(f"{k + 1},{t},{int(d.truth[k, t])}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def decimate(d: Dataset, k: int) -> Dataset:
    """Replace every k consecutive samples of each channel by their mean; a trailing remainder is dropped."""
    spc = d.meta.samples_per_channel
    if k < 1:
        raise DatasetError(f"decimation factor must be >= 1, got {k}")
    if k > spc:
        raise DatasetError(f"decimation factor {k} exceeds samples_per_channel={spc}")
    if k == 1:
        return d
    kept = (spc // k) * k
    lead = d.features.shape[:4]
    blocks = d.features.reshape(lead + (d.meta.n_channels, spc))[..., :kept]
    reduced = blocks.reshape(lead + (d.meta.n_channels, spc // k, k)).mean(axis=-1)
    meta = replace(d.meta, samples_per_channel=spc // k)
    return d.with_features(reduced.reshape(lead + (meta.feature_dim,)), meta)


def select_channels(d: Dataset, keep: Iterable[int]) -> Dataset:
    """Restrict features to the kept channel blocks, in original channel order."""
    channels = sorted(set(int(c) for c in keep))
    if not channels:
        raise DatasetError("channel keep-set must not be empty")
    bad = [c for c in channels if c < 0 or c >= d.meta.n_channels]
    if bad:
        raise DatasetError(f"channel indices {bad} out of range for n_channels={d.meta.n_channels}")
    if len(channels) == d.meta.n_channels:
        return d
    lead = d.features.shape[:4]
    blocks = d.features.reshape(lead + (d.meta.n_channels, d.meta.samples_per_channel))
    selected = blocks[..., channels, :]
    meta = replace(d.meta, n_channels=len(channels))
    return d.with_features(selected.reshape(lead + (meta.feature_dim,)), meta)


@dataclass(frozen=True)
class SynthConfig:
    n_trials: int = 40
    n_iterations: int = 8
    n_flashes: int = 6
    n_levels: int = 1
    feature_dim: int = 16
    target_shift: float = 5.0
    noise_sd: float = 1.0
    seed: int = 0
    n_test_trials: int | None = None
    n_channels: int = 1
    soa_seconds: float = 0.25
    level_names: tuple[str, ...] = field(default_factory=tuple)
    n_symbols: int | None = None
    overhead_seconds: float = 0.0
    grouping: str | None = None

    def validate(self) -> list[str]:
        issues: list[str] = []
        if self.n_flashes < 2:
            issues.append("degenerate config: n_flashes must be >= 2")
        for name in ("n_trials", "n_iterations", "n_levels", "feature_dim", "n_channels"):
            if getattr(self, name) < 1:
                issues.append(f"{name} must be >= 1")
        if self.n_test_trials is not None and self.n_test_trials < 1:
            issues.append("n_test_trials must be >= 1")
        if self.target_shift < 0:
            issues.append("target_shift must be >= 0")
        if not self.noise_sd > 0:
            issues.append("noise_sd must be > 0")
        if self.n_channels >= 1 and self.feature_dim % self.n_channels:
            issues.append("feature_dim must be a multiple of n_channels")
        if self.level_names and len(self.level_names) != self.n_levels:
            issues.append("level_names must have n_levels entries")
        if self.n_symbols is not None and not 1 <= self.n_symbols <= self.n_flashes**self.n_levels:
            issues.append("n_symbols must lie in [1, n_flashes^n_levels]")
        if self.grouping is not None and self.grouping not in GROUPINGS:
            issues.append(f"grouping must be one of {GROUPINGS}")
        return issues

    def protocol(self) -> ProtocolMeta:
        levels = self.level_names or tuple(f"level{t}" for t in range(self.n_levels))
        return ProtocolMeta(
            n_symbols=self.n_symbols or self.n_flashes**self.n_levels,
            levels=tuple(levels),
            n_flashes=self.n_flashes,
            max_iterations=self.n_iterations,
            soa_seconds=self.soa_seconds,
            flashes_per_iteration=self.n_flashes * self.n_levels,
            overhead_seconds=self.overhead_seconds,
            n_channels=self.n_channels,
            samples_per_channel=self.feature_dim // self.n_channels,
            grouping=self.grouping,
        )


def planted_direction(cfg: SynthConfig) -> np.ndarray:
    """Unit vector along which target features are shifted for this config's seed."""
    rng = np.random.default_rng([cfg.seed, 0])
    direction = rng.standard_normal(cfg.feature_dim)
    return direction / np.linalg.norm(direction)


def _synth_split(cfg: SynthConfig, meta: ProtocolMeta, n_trials: int, split: str, rng: np.random.Generator) -> Dataset:
    shape = (n_trials, cfg.n_iterations, cfg.n_levels, cfg.n_flashes)
    truth = rng.integers(1, cfg.n_flashes + 1, size=(n_trials, cfg.n_levels))
    flash_ids = np.arange(1, cfg.n_flashes + 1)
    is_target = flash_ids[None, None, None, :] == truth[:, None, :, None]
    is_target = np.broadcast_to(is_target, shape)
    labels = np.where(is_target, 1, -1)
    noise = rng.standard_normal(shape + (cfg.feature_dim,)) * cfg.noise_sd
    features = noise + is_target[..., None] * (cfg.target_shift * planted_direction(cfg))
    return Dataset(meta=meta, features=features, labels=labels, truth=truth, split=split)


def synth_dataset(cfg: SynthConfig) -> tuple[Dataset, Dataset]:
    """Deterministic train/test pair with a single planted discriminant direction."""
    issues = cfg.validate()
    if issues:
        raise DatasetError("invalid synthetic config: " + "; ".join(issues))
    meta = cfg.protocol()
    rng = np.random.default_rng([cfg.seed, 1])
    train = _synth_split(cfg, meta, cfg.n_trials, "train", rng)
    test = _synth_split(cfg, meta, cfg.n_test_trials or cfg.n_trials, "test", rng)
    logger.info(
        "Generated synthetic subject seed=%d: %d train / %d test trials, dim=%d, shift=%.3g, noise=%.3g",
        cfg.seed,
        train.n_trials,
        test.n_trials,
        cfg.feature_dim,
        cfg.target_shift,
        cfg.noise_sd,
    )
    return train, test
