"""Tests for experiment configuration and the staged pipeline."""

from __future__ import annotations

import copy
import json
import shutil
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from delone_heat.exceptions import ConfigError, InvalidInputError, StageInputError, VerificationFailure
from delone_heat.exports import read_csv_rows, read_json
from delone_heat.geometry.neighbors import RelationKind
from delone_heat.pipeline import (
    FILES,
    STAGES,
    Check,
    ExperimentConfig,
    Pipeline,
    RunReport,
    config_schema,
    default_s_grid,
    load_config,
    read_envelope_samples,
)

CONFIGS = Path(__file__).parent.parent / "configs"

SQUARE: dict[str, Any] = {
    "name": "square-small",
    "generator": {"kind": "lattice", "lattice": "square", "spacing": 1.0, "half_width": 16.0},
    "relation": {"kind": "voronoi"},
    "window": {"analysis_margin": 4.0, "heat_margin": 1.0},
    "heat": {"times": [2.0, 3.0, 4.0], "target_radius": 3},
    "analysis": {
        "n2_samples": 100,
        "axiom_seed": 1,
        "equivalence_samples": 50,
        "equivalence_seed": 1,
        "centers": 5,
        "center_seed": 1,
    },
}

METRIC: dict[str, Any] = {
    "name": "square-metric",
    "generator": {"kind": "lattice", "lattice": "square", "spacing": 1.0, "half_width": 5.0},
    "relation": {"kind": "max", "R": 0.5},
    "window": {"analysis_margin": 2.0, "heat_margin": 0.0},
    "heat": {"times": [2.0, 3.0, 4.0], "target_radius": 2, "metric": True, "delta_max": 0.25, "metric_times": [1.0, 2.0]},
    "analysis": {
        "tiling": False,
        "spaces": ["discrete", "metric"],
        "n2_samples": 50,
        "axiom_seed": 2,
        "equivalence_samples": 30,
        "equivalence_seed": 2,
        "centers": 3,
        "center_seed": 2,
        "max_spread": None,
    },
}


def _config(base: dict[str, Any], **sections: dict[str, Any]) -> ExperimentConfig:
    data = copy.deepcopy(base)
    for key, update in sections.items():
        data[key] = {**data.get(key, {}), **update}
    return ExperimentConfig.model_validate(data)


@pytest.fixture(scope="module")
def square_run(tmp_path_factory: pytest.TempPathFactory) -> tuple[Pipeline, RunReport]:
    out = tmp_path_factory.mktemp("square")
    pipeline = Pipeline(_config(SQUARE), out)
    return pipeline, pipeline.run()


class TestConfig:
    """Validation of experiment descriptions."""

    def test_defaults(self):
        cfg = _config(SQUARE)
        assert cfg.relation.kind is RelationKind.VORONOI
        assert cfg.operator.weights == "unit"
        assert cfg.heat.certificate

    def test_stochastic_generator_needs_seed(self):
        with pytest.raises(ValueError, match="seed"):
            _config(SQUARE, generator={"kind": "jittered", "delta": 0.2})

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="extra"):
            _config(SQUARE, heat={"tmes": [1.0]})

    def test_nonpositive_times_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            _config(SQUARE, heat={"times": [1.0, -2.0]})

    def test_enabled_checks_need_seeds(self):
        data = copy.deepcopy(SQUARE)
        del data["analysis"]["center_seed"]
        with pytest.raises(ValueError, match="center_seed"):
            ExperimentConfig.model_validate(data)

    def test_voronoi_weights_need_tiling(self):
        with pytest.raises(ValueError, match="Voronoi weights"):
            _config(METRIC, operator={"weights": "voronoi"})

    def test_metric_envelope_needs_metric_kernels(self):
        with pytest.raises(ValueError, match="heat.metric"):
            _config(METRIC, heat={"metric": False})

    def test_ingest_needs_edges(self):
        with pytest.raises(ValueError, match="edges"):
            _config(SQUARE, relation={"kind": "ingest"})

    def test_with_seed_replaces_every_seed(self):
        cfg = _config(SQUARE, generator={"kind": "jittered", "delta": 0.1, "seed": 3}).with_seed(99)
        assert cfg.generator.seed == 99
        assert cfg.heat.source_seed == 99
        assert (cfg.analysis.axiom_seed, cfg.analysis.equivalence_seed, cfg.analysis.center_seed) == (99, 99, 99)

    def test_load_config_errors(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            load_config(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(bad)
        invalid = tmp_path / "invalid.json"
        invalid.write_text(json.dumps({"generator": {"kind": "hexagonal"}}), encoding="utf-8")
        with pytest.raises(ConfigError, match="invalid config"):
            load_config(invalid)

    @pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
    def test_shipped_configs_load(self, name):
        cfg = load_config(CONFIGS / name)
        assert cfg.name

    def test_schema_lists_sections(self):
        schema = config_schema()
        assert {"generator", "relation", "window", "operator", "heat", "analysis"} <= set(schema["properties"])

    def test_default_s_grid(self):
        assert default_s_grid(6.0) == [1.0, 2.0]
        assert default_s_grid(16.0) == [1.0, 2.0, 4.0, 8.0]
        with pytest.raises(InvalidInputError):
            default_s_grid(1.0)


class TestRunReport:
    """Pass/fail summary."""

    def test_summary_and_failures(self):
        report = RunReport("demo", [Check("delone", True, "r=0.5"), Check("vd[discrete]", False, "nu_hat=9")])
        assert not report.passed
        assert [c.name for c in report.failed] == ["vd[discrete]"]
        text = report.summary()
        assert "FAIL" in text
        assert text.splitlines()[-1] == "result: FAIL (1/2 checks)"
        with pytest.raises(VerificationFailure, match=r"vd\[discrete\]"):
            report.raise_for_failures()

    def test_all_pass(self):
        report = RunReport("demo", [Check("delone", True, "")])
        report.raise_for_failures()
        assert report.to_dict()["passed"] is True


class TestStages:
    """Stages read the files of the stages before them."""

    def test_missing_upstream_file_names_the_stage(self, tmp_path):
        pipeline = Pipeline(_config(SQUARE), tmp_path)
        with pytest.raises(StageInputError, match="run stage 'generate' first") as info:
            pipeline.run_stage("heat")
        assert "stage 'heat'" in str(info.value)
        assert info.value.exit_code == 2

    def test_unknown_stage(self, tmp_path):
        with pytest.raises(InvalidInputError):
            Pipeline(_config(SQUARE), tmp_path).run_stage("plot")

    def test_jitter_too_large(self, tmp_path):
        cfg = _config(SQUARE, generator={"kind": "jittered", "delta": 0.5, "seed": 1})
        with pytest.raises(InvalidInputError, match="jitter"):
            Pipeline(cfg, tmp_path).run_stage("generate")

    def test_full_run_passes(self, square_run):
        pipeline, report = square_run
        assert report.passed, report.summary()
        names = [c.name for c in report.checks]
        assert names == ["delone", "tiling", "axioms", "degree", "C-bound", "vd[discrete]", "pi[discrete]", "ge[discrete]"]

    def test_artifacts_written(self, square_run):
        pipeline, _ = square_run
        for key in ("config", "points", "cells", "adjacency", "relation", "validation", "heat", "analysis", "report", "provenance"):
            assert pipeline.path(key).is_file(), FILES[key]
        assert (pipeline.out / "ge_scatter_discrete.csv").is_file()
        assert [r["stage"] for r in read_json(pipeline.path("provenance"))] == list(STAGES)

    def test_kernel_file(self, square_run):
        pipeline, _ = square_run
        rows = read_csv_rows(pipeline.path("heat"))
        # 25 targets within three hops at three times, one source
        assert len(rows) == 75
        assert {"d", "mu", "truncated", "regime", "certificate"} <= set(rows[0])
        assert max(float(r["certificate"]) for r in rows) < 1e-6
        samples = read_envelope_samples(pipeline.path("heat"))
        assert sum(s.t > max(1.0, s.d) for s in samples) == 43

    def test_analysis_file(self, square_run):
        pipeline, _ = square_run
        analysis = read_json(pipeline.path("analysis"))
        assert analysis["s_grid"] == [1.0, 2.0]
        assert analysis["discrete"]["ge"]["admitted"] == 43
        assert analysis["discrete"]["vd"]["excluded"] == 0

    def test_stages_one_by_one_match_full_run(self, square_run, tmp_path):
        full, _ = square_run
        pipeline = Pipeline(_config(SQUARE), tmp_path)
        for stage in STAGES:
            pipeline.run_stage(stage)
        for key in ("points", "relation", "validation", "heat", "analysis", "report"):
            assert pipeline.path(key).read_bytes() == full.path(key).read_bytes(), key

    def test_analyze_subset(self, square_run, tmp_path):
        full, _ = square_run
        out = shutil.copytree(full.out, tmp_path / "copy")
        pipeline = Pipeline(_config(SQUARE), out)
        result = pipeline.analyze({"vd"})
        assert set(result["discrete"]) == {"vd"}

    def test_failed_threshold_reported(self, square_run, tmp_path):
        full, _ = square_run
        out = shutil.copytree(full.out, tmp_path / "copy")
        report = Pipeline(_config(SQUARE, analysis={"max_nu": 0.5}), out).report()
        assert [c.name for c in report.failed] == ["vd[discrete]"]
        assert read_json(out / "report.json")["passed"] is False
        with pytest.raises(VerificationFailure):
            report.raise_for_failures()


class TestMetricRun:
    """Discrete and metric spaces side by side."""

    def test_metric_run(self, tmp_path):
        pipeline = Pipeline(_config(METRIC), tmp_path)
        report = pipeline.run()
        assert report.passed, report.summary()
        assert "ge[metric]" in [c.name for c in report.checks]
        assert "tiling" not in [c.name for c in report.checks]
        analysis = read_json(pipeline.path("analysis"))
        assert analysis["slope_ratio"] > 0
        assert analysis["metric"]["vd"]["passed"]
        for key in ("heat_metric", "mesh", "metric_edges"):
            assert pipeline.path(key).is_file()
        rows = read_csv_rows(pipeline.path("heat_metric"))
        # 13 vertices within path length 2 at two times
        assert len(rows) == 26
        ratio = analysis["slope_ratio"]
        strict = Pipeline(_config(METRIC, analysis={"slope_ratio_bounds": [ratio / 4.0, ratio / 2.0]}), tmp_path).report()
        assert [c.name for c in strict.failed] == ["slope-ratio"]
        loose = Pipeline(_config(METRIC, analysis={"slope_ratio_bounds": [ratio / 2.0, ratio * 2.0]}), tmp_path).report()
        assert loose.passed

    def test_krylov_heat_matches_spectral(self, tmp_path):
        values = {}
        for method in ("spectral", "krylov"):
            pipeline = Pipeline(_config(METRIC, heat={"metric_method": method, "metric_tol": 1e-10}), tmp_path / method)
            for stage in ("generate", "relation", "heat"):
                pipeline.run_stage(stage)
            values[method] = [float(row["p"]) for row in read_csv_rows(pipeline.path("heat_metric"))]
        assert len(values["krylov"]) == 26
        assert np.allclose(values["krylov"], values["spectral"], atol=1e-7)

    def test_slope_ratio_bounds_ordered(self):
        with pytest.raises(ValueError, match="slope_ratio_bounds"):
            _config(METRIC, analysis={"slope_ratio_bounds": [2.0, 1.0]})
