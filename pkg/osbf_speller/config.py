from __future__ import annotations

import hashlib
import json
import os
import types
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Union, get_args, get_origin, get_type_hints

from dotenv import load_dotenv

from .dataset import GROUPINGS, SynthConfig
from .evaluation import METHODS
from .linsvm import SvmConfig
from .presets import PRESETS, get_preset
from .scoreopt import MODES, LatticeBounds

CLASSIFIERS = ("l1", "l2", "msvm")


class ConfigError(ValueError):
    pass


@dataclass
class Settings:
    log_level: str
    output_dir: Path
    jobs: int
    seed: int
    config_path: Path | None


def load_settings() -> Settings:
    load_dotenv()

    try:
        jobs = int(os.getenv("OSBF_JOBS", "1"))
        seed = int(os.getenv("OSBF_SEED", "0"))
    except ValueError as exc:
        raise ConfigError(f"OSBF_JOBS and OSBF_SEED must be integers: {exc}") from exc
    config_path = os.getenv("OSBF_CONFIG", "").strip()
    return Settings(
        log_level=os.getenv("OSBF_LOG_LEVEL", "INFO").upper(),
        output_dir=Path(os.getenv("OSBF_OUTPUT_DIR", "results")),
        jobs=jobs,
        seed=seed,
        config_path=Path(config_path) if config_path else None,
    )


@dataclass
class PreprocessConfig:
    decimation: int = 1
    channels: list[int] | None = None


@dataclass
class SvmSection:
    loss: str = "L1"
    c1: float = 1.0
    c2: float = 1.0
    tol: float = 1e-4
    max_epochs: int = 1000
    seed: int = 0
    bias_scale: float = 1.0
    classifiers: list[str] = field(default_factory=lambda: ["msvm"])

    def svm_config(self, classifier: str) -> SvmConfig:
        """l1/l2 train a standard SVM with that loss; msvm uses the configured loss and c2."""
        loss = {"l1": "L1", "l2": "L2"}.get(classifier, self.loss)
        return SvmConfig(
            loss=loss,
            c1=self.c1,
            c2=self.c2 if classifier == "msvm" else 0.0,
            tol=self.tol,
            max_epochs=self.max_epochs,
            shuffle_seed=self.seed,
            bias_scale=self.bias_scale,
        )


@dataclass
class ScoringSection:
    grouping: str | None = None
    row_split: int | None = None
    sbf_scores: list[int] | None = None
    sbf_delta: int | None = None


@dataclass
class ScoreOptSection:
    l: int = -10  # noqa: E741
    u: int = 10
    delta_max: int | None = None
    modes: list[str] = field(default_factory=lambda: list(MODES))
    workers: int = 1

    def bounds(self) -> LatticeBounds:
        return LatticeBounds(l=self.l, u=self.u, delta_max=self.delta_max)


@dataclass
class EvalSection:
    methods: list[str] = field(default_factory=lambda: list(METHODS))


@dataclass
class SubjectSpec:
    name: str
    train: str
    test: str
    dataset: str = ""


@dataclass
class SynthSection:
    n_subjects: int = 1
    n_trials: int = 40
    n_test_trials: int | None = None
    n_iterations: int = 8
    n_flashes: int = 6
    n_levels: int = 1
    feature_dim: int = 16
    n_channels: int = 1
    target_shift: float = 5.0
    noise_sd: float = 1.0
    soa_seconds: float = 0.25
    preset: str | None = None

    def synth_config(self, seed: int) -> SynthConfig:
        if self.preset is not None:
            return get_preset(self.preset).synth_config(
                seed,
                n_trials=self.n_trials,
                n_test_trials=self.n_test_trials,
                feature_dim=self.feature_dim,
                n_channels=self.n_channels,
                target_shift=self.target_shift,
                noise_sd=self.noise_sd,
            )
        return SynthConfig(
            n_trials=self.n_trials,
            n_iterations=self.n_iterations,
            n_flashes=self.n_flashes,
            n_levels=self.n_levels,
            feature_dim=self.feature_dim,
            target_shift=self.target_shift,
            noise_sd=self.noise_sd,
            seed=seed,
            n_test_trials=self.n_test_trials,
            n_channels=self.n_channels,
            soa_seconds=self.soa_seconds,
        )


@dataclass
class PipelineConfig:
    subjects: list[SubjectSpec] = field(default_factory=list)
    synth: SynthSection | None = None
    dataset: str = "synthetic"
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    svm: SvmSection = field(default_factory=SvmSection)
    scoring: ScoringSection = field(default_factory=ScoringSection)
    scoreopt: ScoreOptSection = field(default_factory=ScoreOptSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output_dir: str = "results"
    seed: int = 0
    jobs: int = 1

    def validate(self) -> list[str]:
        issues: list[str] = []
        if not self.subjects and self.synth is None:
            issues.append("config needs either subjects (dataset paths) or a synth section")
        names = [s.name for s in self.subjects]
        if len(set(names)) != len(names):
            issues.append("subject names must be unique")
        for spec in self.subjects:
            if not spec.name or not spec.train or not spec.test:
                issues.append(f"subject {spec.name!r} needs name, train and test paths")

        if self.preprocess.decimation < 1:
            issues.append("preprocess.decimation must be >= 1")
        if self.preprocess.channels is not None and not self.preprocess.channels:
            issues.append("preprocess.channels must not be empty when given")

        issues.extend(f"svm.{issue}" for issue in self.svm.svm_config("msvm").validate())
        unknown = sorted(set(self.svm.classifiers) - set(CLASSIFIERS))
        if unknown or not self.svm.classifiers:
            issues.append(f"svm.classifiers must be a non-empty subset of {CLASSIFIERS}, got {self.svm.classifiers}")

        if self.scoring.grouping is not None and self.scoring.grouping not in GROUPINGS:
            issues.append(f"scoring.grouping must be one of {GROUPINGS}")
        if self.scoring.sbf_scores is not None and len(self.scoring.sbf_scores) != 5:
            issues.append("scoring.sbf_scores must have 5 entries")

        issues.extend(f"scoreopt.{issue}" for issue in self.scoreopt.bounds().validate())
        unknown = sorted(set(self.scoreopt.modes) - set(MODES))
        if unknown or not self.scoreopt.modes:
            issues.append(f"scoreopt.modes must be a non-empty subset of {MODES}")
        if self.scoreopt.workers < 1:
            issues.append("scoreopt.workers must be >= 1")

        unknown = sorted(set(self.eval.methods) - set(METHODS))
        if unknown or not self.eval.methods:
            issues.append(f"eval.methods must be a non-empty subset of {METHODS}")
        if self.jobs < 1:
            issues.append("jobs must be >= 1")
        if self.seed < 0:
            issues.append("seed must be >= 0")
        if self.synth is not None:
            if self.synth.n_subjects < 1:
                issues.append("synth.n_subjects must be >= 1")
            if self.synth.preset is not None and self.synth.preset not in PRESETS:
                issues.append(f"synth.preset must be one of {sorted(PRESETS)}")
                return issues
            issues.extend(f"synth.{issue}" for issue in self.synth.synth_config(self.seed).validate())
        return issues

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> PipelineConfig:
        try:
            return cls(
                subjects=[_section(SubjectSpec, item) for item in raw.get("subjects", [])],
                synth=_section(SynthSection, raw["synth"]) if raw.get("synth") is not None else None,
                dataset=str(raw.get("dataset", "synthetic")),
                preprocess=_section(PreprocessConfig, raw.get("preprocess", {})),
                svm=_section(SvmSection, raw.get("svm", {})),
                scoring=_section(ScoringSection, raw.get("scoring", {})),
                scoreopt=_section(ScoreOptSection, raw.get("scoreopt", {})),
                eval=_section(EvalSection, raw.get("eval", {})),
                output_dir=str(raw.get("output_dir", "results")),
                seed=int(raw.get("seed", 0)),
                jobs=int(raw.get("jobs", 1)),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed pipeline config: {exc}") from exc


def _matches(value: Any, hint: Any) -> bool:
    origin = get_origin(hint)
    if origin in (Union, types.UnionType):
        return any(_matches(value, arg) for arg in get_args(hint))
    if origin is list:
        (item,) = get_args(hint)
        return isinstance(value, list) and all(_matches(v, item) for v in value)
    if hint is type(None):
        return value is None
    if isinstance(value, bool):
        return hint is bool
    if hint is float:
        return isinstance(value, (int, float))
    return isinstance(value, hint)


def _section(cls: type, raw: Any) -> Any:
    if not isinstance(raw, dict):
        raise ConfigError(f"{cls.__name__} must be a JSON object, got {type(raw).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    missing = [f.name for f in fields(cls) if f.default is MISSING and f.default_factory is MISSING and f.name not in raw]
    if missing:
        raise ConfigError(f"{cls.__name__} is missing {', '.join(missing)}")
    hints = get_type_hints(cls)
    for name, value in raw.items():
        if not _matches(value, hints[name]):
            raise ConfigError(f"{cls.__name__}.{name} has the wrong type: {value!r}")
    return cls(**raw)


def load_pipeline_config(
    path: str | Path | None,
    settings: Settings,
    out: str | None = None,
    seed: int | None = None,
    mode: str | None = None,
    methods: list[str] | None = None,
    jobs: int | None = None,
) -> PipelineConfig:
    """Resolve the effective config: flag > file > environment > default."""
    raw: dict[str, Any] = {}
    path = path or settings.config_path
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")

    raw.setdefault("output_dir", str(settings.output_dir))
    raw.setdefault("seed", settings.seed)
    raw.setdefault("jobs", settings.jobs)
    if not raw.get("subjects") and raw.get("synth") is None:
        raw["synth"] = {}
    cfg = PipelineConfig.from_dict(raw)
    if "seed" not in raw.get("svm", {}):
        cfg.svm.seed = cfg.seed

    if out is not None:
        cfg.output_dir = out
    if seed is not None:
        cfg.seed = seed
        cfg.svm.seed = seed
    if mode is not None:
        cfg.scoreopt.modes = [mode]
    if methods:
        cfg.eval.methods = list(dict.fromkeys(methods))
    if jobs is not None:
        cfg.jobs = jobs

    issues = cfg.validate()
    if issues:
        raise ConfigError("invalid pipeline config: " + "; ".join(issues))
    return cfg


def config_hash(cfg: PipelineConfig) -> str:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
