from __future__ import annotations

import json
import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from osbf_speller import config


def _settings(**overrides: object) -> config.Settings:
    values: dict[str, object] = {
        "log_level": "INFO",
        "output_dir": Path("results"),
        "jobs": 1,
        "seed": 0,
        "config_path": None,
    }
    values.update(overrides)
    return config.Settings(**values)  # type: ignore[arg-type]


class SettingsTests(unittest.TestCase):
    def test_load_settings_reads_env(self) -> None:
        env = {
            "OSBF_LOG_LEVEL": "debug",
            "OSBF_OUTPUT_DIR": "out/run1",
            "OSBF_JOBS": "4",
            "OSBF_SEED": "17",
            "OSBF_CONFIG": " configs/synthetic.json ",
        }
        with patch.dict(os.environ, env, clear=True), patch("osbf_speller.config.load_dotenv"):
            settings = config.load_settings()

        self.assertEqual(settings.log_level, "DEBUG")
        self.assertEqual(settings.output_dir, Path("out/run1"))
        self.assertEqual(settings.jobs, 4)
        self.assertEqual(settings.seed, 17)
        self.assertEqual(settings.config_path, Path("configs/synthetic.json"))

    def test_defaults(self) -> None:
        with patch.dict(os.environ, {}, clear=True), patch("osbf_speller.config.load_dotenv"):
            settings = config.load_settings()
        self.assertEqual(settings.log_level, "INFO")
        self.assertEqual(settings.output_dir, Path("results"))
        self.assertIsNone(settings.config_path)

    def test_non_integer_jobs(self) -> None:
        with patch.dict(os.environ, {"OSBF_JOBS": "many"}, clear=True), patch("osbf_speller.config.load_dotenv"):
            with self.assertRaises(config.ConfigError):
                config.load_settings()


class PipelineConfigTests(unittest.TestCase):
    def _write(self, tmp: str, payload: object) -> Path:
        path = Path(tmp) / "cfg.json"
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    def test_no_file_falls_back_to_synthetic_run(self) -> None:
        cfg = config.load_pipeline_config(None, _settings(output_dir=Path("envout"), seed=5))
        self.assertIsNotNone(cfg.synth)
        self.assertEqual(cfg.output_dir, "envout")
        self.assertEqual(cfg.seed, 5)
        self.assertEqual(cfg.svm.seed, 5)

    def test_flags_override_file_and_env(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = self._write(tmp, {"output_dir": "fileout", "seed": 3, "jobs": 2, "svm": {"seed": 9}})
            from_file = config.load_pipeline_config(path, _settings(output_dir=Path("envout")))
            flagged = config.load_pipeline_config(
                path,
                _settings(output_dir=Path("envout")),
                out="flagout",
                seed=11,
                mode="earlystop",
                methods=["osbf", "sbf", "osbf"],
                jobs=3,
            )
        self.assertEqual((from_file.output_dir, from_file.seed, from_file.jobs, from_file.svm.seed), ("fileout", 3, 2, 9))
        self.assertEqual(flagged.output_dir, "flagout")
        self.assertEqual((flagged.seed, flagged.svm.seed), (11, 11))
        self.assertEqual(flagged.scoreopt.modes, ["earlystop"])
        self.assertEqual(flagged.eval.methods, ["osbf", "sbf"])
        self.assertEqual(flagged.jobs, 3)

    def test_settings_config_path_is_used(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = self._write(tmp, {"dataset": "demo"})
            cfg = config.load_pipeline_config(None, _settings(config_path=path))
        self.assertEqual(cfg.dataset, "demo")

    def test_unknown_key_is_rejected(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = self._write(tmp, {"svm": {"gamma": 1.0}})
            with self.assertRaises(config.ConfigError) as ctx:
                config.load_pipeline_config(path, _settings())
        self.assertIn("gamma", str(ctx.exception))

    def test_invalid_values_are_collected(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = self._write(tmp, {"scoreopt": {"l": 0, "u": 3}, "svm": {"c1": -1}, "eval": {"methods": ["swlda"]}})
            with self.assertRaises(config.ConfigError) as ctx:
                config.load_pipeline_config(path, _settings())
        message = str(ctx.exception)
        self.assertIn("scoreopt.", message)
        self.assertIn("svm.c1", message)
        self.assertIn("eval.methods", message)

    def test_wrongly_typed_values_are_config_errors(self) -> None:
        for payload, name in (
            ({"svm": {"c1": "big"}}, "SvmSection.c1"),
            ({"svm": {"max_epochs": 2.5}}, "SvmSection.max_epochs"),
            ({"eval": {"methods": "osbf"}}, "EvalSection.methods"),
            ({"scoreopt": {"workers": True}}, "ScoreOptSection.workers"),
            ({"svm": 3}, "SvmSection"),
            ({"subjects": [{"name": "s01", "train": "a.txt"}]}, "SubjectSpec"),
        ):
            with self.subTest(payload=payload), tempfile.TemporaryDirectory() as tmp:
                path = self._write(tmp, payload)
                with self.assertRaises(config.ConfigError) as ctx:
                    config.load_pipeline_config(path, _settings())
                self.assertIn(name, str(ctx.exception))

    def test_integer_accepted_for_float_field(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            cfg = config.load_pipeline_config(self._write(tmp, {"svm": {"c1": 2, "tol": 0.001}}), _settings())
        self.assertEqual(cfg.svm.c1, 2)

    def test_missing_and_malformed_files(self) -> None:
        with self.assertRaises(config.ConfigError):
            config.load_pipeline_config("/nonexistent/cfg.json", _settings())
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "cfg.json"
            path.write_text("{not json", encoding="utf-8")
            with self.assertRaises(config.ConfigError):
                config.load_pipeline_config(path, _settings())
            path.write_text("[1, 2]", encoding="utf-8")
            with self.assertRaises(config.ConfigError):
                config.load_pipeline_config(path, _settings())

    def test_svm_config_per_classifier(self) -> None:
        section = config.SvmSection(loss="L2", c1=2.0, c2=0.5)
        self.assertEqual(section.svm_config("l1").loss, "L1")
        self.assertEqual(section.svm_config("l1").c2, 0.0)
        self.assertEqual(section.svm_config("l2").loss, "L2")
        msvm = section.svm_config("msvm")
        self.assertEqual((msvm.loss, msvm.c1, msvm.c2), ("L2", 2.0, 0.5))

    def test_synth_preset(self) -> None:
        section = config.SynthSection(preset="ALSP300Speller", n_trials=3, feature_dim=4)
        synth = section.synth_config(seed=2)
        self.assertEqual(synth.level_names, ("row", "column"))
        self.assertEqual(synth.n_iterations, 10)
        cfg = config.PipelineConfig(synth=config.SynthSection(preset="Nope"))
        self.assertTrue(any("synth.preset" in issue for issue in cfg.validate()))

    def test_round_trip_and_hash(self) -> None:
        cfg = config.load_pipeline_config(None, _settings())
        again = config.PipelineConfig.from_dict(cfg.to_dict())
        self.assertEqual(config.config_hash(again), config.config_hash(cfg))
        again.svm.c1 = 5.0
        self.assertNotEqual(config.config_hash(again), config.config_hash(cfg))


if __name__ == "__main__":
    unittest.main()
