from __future__ import annotations

import json
import logging
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, PipelineConfig, config_hash
from .dataset import Dataset, decimate, load_dataset, save_dataset, select_channels, synth_dataset
from .evaluation import (
    EvalReport,
    MetricError,
    TrialPrediction,
    build_report,
    class_split,
    predict_dv_med,
    predict_erp_avg,
    predict_scorebased,
    write_results_csv,
)
from .linsvm import Hyperplane, build_train_matrix, load_hyperplane, save_hyperplane, train
from .scoreopt import (
    OptResult,
    ScoreOptError,
    TimingParams,
    earlystop_objective,
    nostop_objective,
    optimize_earlystop,
    optimize_nostop,
)
from .scoring import ScoreProfile, sbf_heuristic_profile, score_split

STAGES = ("train", "optimize", "evaluate")


@dataclass
class SubjectData:
    name: str
    dataset: str
    train: Dataset
    test: Dataset


@dataclass
class SubjectResult:
    name: str
    dataset: str
    reports: list[EvalReport] = field(default_factory=list)
    profiles: dict[tuple[str, str], OptResult] = field(default_factory=dict)
    hyperplanes: dict[str, Hyperplane] = field(default_factory=dict)
    sbf_objectives: dict[tuple[str, str], float] = field(default_factory=dict)


@dataclass
class PipelineOutcome:
    subjects: list[SubjectResult]
    output_dir: Path
    files: list[Path]

    @property
    def reports(self) -> list[EvalReport]:
        return [report for subject in self.subjects for report in subject.reports]


def preprocess(d: Dataset, cfg: PipelineConfig) -> Dataset:
    if cfg.preprocess.channels is not None:
        d = select_channels(d, cfg.preprocess.channels)
    return decimate(d, cfg.preprocess.decimation)


def load_subjects(cfg: PipelineConfig) -> list[SubjectData]:
    subjects = [
        SubjectData(
            name=spec.name,
            dataset=spec.dataset or cfg.dataset,
            train=load_dataset(spec.train),
            test=load_dataset(spec.test),
        )
        for spec in cfg.subjects
    ]
    if cfg.synth is not None:
        for i in range(cfg.synth.n_subjects):
            train_set, test_set = synth_dataset(cfg.synth.synth_config(cfg.seed + i))
            subjects.append(SubjectData(name=f"synth{i + 1:02d}", dataset=cfg.dataset, train=train_set, test=test_set))
    return subjects


def _timing(d: Dataset) -> TimingParams:
    return TimingParams(
        soa_seconds=d.meta.soa_seconds,
        flashes_per_iteration=d.meta.flashes_per_iteration,
        n_trials=d.n_trials,
        n_iterations=d.n_iterations,
    )


def _sbf_in_lattice(sbf: ScoreProfile, result: OptResult) -> bool:
    lower, upper = result.profile.bounds
    return sbf.s[4] >= lower and sbf.s[0] <= upper and sbf.delta <= result.delta_max


def run_subject(
    subject: SubjectData,
    cfg: PipelineConfig,
    logger: logging.Logger,
    stage: str = "evaluate",
    hyperplanes: dict[str, Hyperplane] | None = None,
) -> SubjectResult:
    """Runs one subject up to ``stage``; hyperplanes passed in are reused instead of retrained."""
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
    train_set = preprocess(subject.train, cfg)
    test_set = preprocess(subject.test, cfg)
    logger.info(
        "Subject %s: %d train / %d test trials, %d features after preprocessing",
        subject.name,
        train_set.n_trials,
        test_set.n_trials,
        train_set.feature_dim,
    )
    result = SubjectResult(name=subject.name, dataset=subject.dataset)
    matrix = build_train_matrix(train_set)
    sbf = sbf_heuristic_profile(
        tuple(cfg.scoring.sbf_scores) if cfg.scoring.sbf_scores else None,
        cfg.scoring.sbf_delta,
    )
    methods = cfg.eval.methods
    evaluate = stage == "evaluate"
    level_names = train_set.meta.levels

    for classifier in cfg.svm.classifiers:
        hyperplane = (hyperplanes or {}).get(classifier)
        if hyperplane is None:
            svm_cfg = cfg.svm.svm_config(classifier)
            hyperplane = train(matrix if svm_cfg.c2 > 0 else matrix.without_zpoints(), svm_cfg)
        elif hyperplane.dim != train_set.feature_dim:
            raise MetricError(
                f"hyperplane for {subject.name} ({classifier}) has {hyperplane.dim} weights, "
                f"preprocessed data has {train_set.feature_dim} features"
            )
        result.hyperplanes[classifier] = hyperplane
        if stage == "train":
            continue

        scored_train = score_split(hyperplane, train_set, grouping=cfg.scoring.grouping, row_split=cfg.scoring.row_split)
        scored_test = score_split(
            hyperplane,
            test_set,
            q=scored_train.quartiles,
            grouping=cfg.scoring.grouping,
            row_split=cfg.scoring.row_split,
        )

        def report(predictions: list[TrialPrediction], method: str, mode: str) -> None:
            result.reports.append(
                build_report(
                    predictions,
                    method,
                    mode,
                    test_set.meta,
                    classifier=classifier,
                    subject=subject.name,
                    dataset=subject.dataset,
                )
            )

        for mode in cfg.scoreopt.modes:
            if evaluate:
                # the decision-value baselines have no stopping rule
                if mode == "nostop":
                    if "dv_med" in methods:
                        report(predict_dv_med(scored_test.dv, test_set), "dv_med", mode)
                    if "erp_avg" in methods:
                        report(predict_erp_avg(hyperplane, test_set), "erp_avg", mode)
                if "sbf" in methods:
                    report(predict_scorebased(scored_test.zones, sbf, mode, truth=test_set.truth), "sbf", mode)
                if "osbf" not in methods:
                    continue

            timing = _timing(train_set)
            if mode == "nostop":
                opt = optimize_nostop(
                    scored_train.zones,
                    train_set.truth,
                    cfg.scoreopt.bounds(),
                    workers=cfg.scoreopt.workers,
                    level_names=level_names,
                )
                sbf_value = nostop_objective(scored_train.zones, train_set.truth, sbf)
            else:
                opt = optimize_earlystop(
                    scored_train.zones,
                    train_set.truth,
                    cfg.scoreopt.bounds(),
                    timing,
                    workers=cfg.scoreopt.workers,
                    level_names=level_names,
                )
                sbf_value = earlystop_objective(scored_train.zones, train_set.truth, sbf, timing)
            if _sbf_in_lattice(sbf, opt) and opt.objective < sbf_value:
                raise ScoreOptError(
                    f"optimised {mode} objective {opt.objective} is below the SBF objective {sbf_value} "
                    f"for subject {subject.name} ({classifier})"
                )
            opt.extra.update({"subject": subject.name, "classifier": classifier, "sbf_objective": sbf_value})
            result.profiles[(classifier, mode)] = opt
            result.sbf_objectives[(classifier, mode)] = sbf_value
            logger.info(
                "Subject %s %s %s: learned s=%s delta=%d objective=%.6f (SBF %.6f)",
                subject.name,
                classifier,
                mode,
                opt.profile.s,
                opt.profile.delta,
                opt.objective,
                sbf_value,
            )
            if evaluate:
                report(predict_scorebased(scored_test.zones, opt.profile, mode, truth=test_set.truth), "osbf", mode)
    return result


def _class_split_summary(subjects: list[SubjectResult], cfg: PipelineConfig) -> dict[str, Any] | None:
    standard = next((c for c in cfg.svm.classifiers if c != "msvm"), None)
    if standard is None or "msvm" not in cfg.svm.classifiers:
        return None
    method = "osbf" if "osbf" in cfg.eval.methods else cfg.eval.methods[0]
    mode = "nostop" if "nostop" in cfg.scoreopt.modes else cfg.scoreopt.modes[0]

    def pick(classifier: str) -> dict[str, EvalReport]:
        return {
            f"{s.dataset}/{s.name}": r
            for s in subjects
            for r in s.reports
            if r.classifier == classifier and r.method == method and r.mode == mode
        }

    split = class_split(pick(standard), pick("msvm"))
    return {"standard_classifier": standard, "method": method, "mode": mode, **split}


def _write_json(path: Path, payload: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_outputs(subjects: list[SubjectResult], cfg: PipelineConfig) -> list[Path]:
    out = Path(cfg.output_dir)
    files: list[Path] = []
    for subject in subjects:
        for r in subject.reports:
            name = f"{subject.name}__{r.classifier}__{r.method}__{r.mode}.json"
            files.append(_write_json(out / "reports" / name, r.to_dict()))
        for (classifier, mode), opt in subject.profiles.items():
            files.append(_write_json(out / "profiles" / f"{subject.name}__{classifier}__{mode}.json", opt.to_dict()))
        for classifier, h in subject.hyperplanes.items():
            files.append(save_hyperplane(h, hyperplane_path(out, subject.name, classifier)))

    reports = [r for s in subjects for r in s.reports]
    if reports:
        files.append(write_results_csv(reports, out / "results.csv"))
        split = _class_split_summary(subjects, cfg)
        if split is not None:
            files.append(_write_json(out / "class_split.json", split))
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "seeds": {"pipeline": cfg.seed, "svm_shuffle": cfg.svm.seed},
        "versions": {
            "osbf_speller": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "subjects": [s.name for s in subjects],
    }
    files.append(_write_json(out / "manifest.json", manifest))
    return files


def hyperplane_path(out: Path, subject: str, classifier: str) -> Path:
    return out / "hyperplanes" / f"{subject}__{classifier}.txt"


def load_hyperplanes(directory: str | Path, subject: str, classifiers: list[str]) -> dict[str, Hyperplane]:
    base = Path(directory)
    return {c: load_hyperplane(base / f"{subject}__{c}.txt") for c in classifiers}


def run_pipeline(
    cfg: PipelineConfig,
    logger: logging.Logger,
    stage: str = "evaluate",
    hyperplane_dir: str | Path | None = None,
) -> PipelineOutcome:
    subjects = load_subjects(cfg)
    logger.info(
        "Running %s on %d subject(s) with %d worker(s); config hash %s",
        stage,
        len(subjects),
        cfg.jobs,
        config_hash(cfg)[:12],
    )

    def one(s: SubjectData) -> SubjectResult:
        saved = load_hyperplanes(hyperplane_dir, s.name, cfg.svm.classifiers) if hyperplane_dir else None
        return run_subject(s, cfg, logger, stage=stage, hyperplanes=saved)

    if cfg.jobs > 1 and len(subjects) > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(one, subjects))
    else:
        results = [one(s) for s in subjects]
    files = write_outputs(results, cfg)
    logger.info("Wrote %d files to %s", len(files), cfg.output_dir)
    return PipelineOutcome(subjects=results, output_dir=Path(cfg.output_dir), files=files)


def write_synth(cfg: PipelineConfig, logger: logging.Logger) -> list[Path]:
    """Saves every synthetic subject as dataset files plus a config that runs on them."""
    if cfg.synth is None:
        raise ConfigError("synth needs a synth section in the config")
    out = Path(cfg.output_dir)
    files: list[Path] = []
    subjects = []
    for subject in load_subjects(replace(cfg, subjects=[])):
        train_path = save_dataset(subject.train, out / "data" / f"{subject.name}_train.txt")
        test_path = save_dataset(subject.test, out / "data" / f"{subject.name}_test.txt")
        files += [train_path, test_path]
        subjects.append({"name": subject.name, "train": str(train_path), "test": str(test_path)})

    derived = cfg.to_dict()
    derived.update({"subjects": subjects, "synth": None})
    files.append(_write_json(out / "synth_config.json", derived))
    logger.info("Wrote %d synthetic subject(s) to %s", len(subjects), out / "data")
    return files
