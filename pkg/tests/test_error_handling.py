"""Tests for error handling in delone-heat.

This test suite verifies that failures map onto the documented exit codes and
that artifacts round through the export helpers unchanged.
"""

import math
from unittest.mock import MagicMock

import numpy as np
import pytest
import structlog
from pytest_mock import MockerFixture

from delone_heat import utils
from delone_heat.exceptions import (
    BoundaryCellError,
    ConfigError,
    DeloneHeatException,
    EigensolverError,
    ExportError,
    InsufficientEigenpairsError,
    InsufficientSamplesError,
    InvalidInputError,
    InvalidPointSetError,
    KrylovConvergenceError,
    NumericalError,
    PenroseGenerationError,
    RelationAxiomError,
    StageInputError,
    VerificationFailure,
    WindowTooSmallError,
)
from delone_heat.exports import export_to_csv, export_to_json, format_cell, read_csv_rows, read_json
from delone_heat.logging import bind_run, plain_numbers
from delone_heat.utils import format_error_message, log_exception, monitor_long_running, track_performance


class TestExceptions:
    """Exit codes follow the exception family."""

    @pytest.mark.parametrize(
        "exc",
        [
            InvalidPointSetError("coincident points"),
            WindowTooSmallError("margin"),
            BoundaryCellError("no cell"),
            InsufficientSamplesError("3 samples"),
            ConfigError("bad"),
            ExportError("disk full"),
        ],
    )
    def test_invalid_input_family(self, exc):
        assert isinstance(exc, InvalidInputError)
        assert exc.exit_code == 2

    @pytest.mark.parametrize(
        "exc",
        [
            PenroseGenerationError("offsets"),
            KrylovConvergenceError("stalled", residual=0.1),
            EigensolverError("arpack"),
            InsufficientEigenpairsError("budget", achieved_bound=1e-3),
        ],
    )
    def test_numerical_family(self, exc):
        assert isinstance(exc, NumericalError)
        assert exc.exit_code == 3

    def test_verification_failure(self):
        exc = VerificationFailure("vd[discrete]")
        assert isinstance(exc, DeloneHeatException)
        assert not isinstance(exc, InvalidInputError)
        assert exc.exit_code == 1

    def test_attributes(self):
        assert RelationAxiomError("too long", pair=(1, 2), distance=3.5).pair == (1, 2)
        assert KrylovConvergenceError("x", residual=0.25).residual == 0.25
        assert InsufficientEigenpairsError("x", achieved_bound=0.5).achieved_bound == 0.5

    def test_stage_input_message(self):
        exc = StageInputError("heat", "missing points.csv; run stage 'generate' first")
        assert exc.stage == "heat"
        assert str(exc) == "stage 'heat': missing points.csv; run stage 'generate' first"


class TestErrorFormatting:
    def test_with_context(self):
        assert format_error_message(ValueError("boom"), context="heat") == "heat: boom"

    def test_without_context(self):
        assert format_error_message(ValueError("boom")) == "boom"

    def test_log_exception(self, mocker: MockerFixture):
        fake = mocker.patch.object(utils, "logger")
        log_exception(ConfigError("bad key"), context="run")
        fake.error.assert_called_once_with(
            "operation failed", context="run", error_type="ConfigError", error="bad key", exit_code=2
        )


class TestLogging:
    def test_numpy_values_become_builtins(self):
        event = plain_numbers(None, "info", {"n": np.int64(3), "x": np.float32(0.5), "v": np.arange(3), "big": np.zeros((5, 5))})
        assert event["n"] == 3 and type(event["n"]) is int
        assert event["x"] == 0.5 and type(event["x"]) is float
        assert event["v"] == [0, 1, 2]
        assert event["big"] == "<array shape=(5, 5)>"

    def test_bind_run_scopes_context(self):
        with bind_run("z2", "heat"):
            assert structlog.contextvars.get_contextvars() == {"experiment": "z2", "stage": "heat"}
        assert "stage" not in structlog.contextvars.get_contextvars()


class TestDecorators:
    def test_track_performance_passes_through(self):
        @track_performance
        def square(x):
            return x * x

        assert square(3) == 9
        assert square.__name__ == "square"

    def test_track_performance_reraises(self):
        @track_performance
        def fails():
            raise WindowTooSmallError("empty")

        with pytest.raises(WindowTooSmallError):
            fails()

    def test_long_running_warning(self, mocker: MockerFixture):
        clock = MagicMock()
        clock.perf_counter.side_effect = [0.0, 12.0]
        mocker.patch.object(utils, "time", clock)
        fake = mocker.patch.object(utils, "logger")

        @monitor_long_running(threshold_seconds=5.0)
        def slow():
            return "done"

        assert slow() == "done"
        fake.warning.assert_called_once()
        assert fake.warning.call_args.kwargs["seconds"] == 12.0

    def test_fast_call_is_quiet(self, mocker: MockerFixture):
        clock = MagicMock()
        clock.perf_counter.side_effect = [0.0, 1.0]
        mocker.patch.object(utils, "time", clock)
        fake = mocker.patch.object(utils, "logger")

        @monitor_long_running(threshold_seconds=5.0)
        def quick():
            return 1

        quick()
        fake.warning.assert_not_called()


class TestExports:
    """JSON and CSV artifacts."""

    def test_cell_formatting(self):
        assert format_cell(True) == "true"
        assert format_cell(False) == "false"
        assert format_cell(0.1) == "0.10000000000000001"
        assert format_cell(np.int64(7)) == "7"
        assert format_cell(np.float64(2.5)) == "2.5"

    def test_csv_round_trip(self, tmp_path):
        path = tmp_path / "nested" / "rows.csv"
        export_to_csv([{"id": 0, "x": 1.0 / 3.0, "ok": True}], path)
        rows = read_csv_rows(path)
        assert rows == [{"id": "0", "x": f"{1.0 / 3.0:.17g}", "ok": "true"}]
        assert float(rows[0]["x"]) == 1.0 / 3.0

    def test_csv_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        export_to_csv([], path, fieldnames=["a", "b"])
        assert path.read_text(encoding="utf-8") == "a,b\n"

    def test_csv_without_header_source(self, tmp_path):
        with pytest.raises(ExportError):
            export_to_csv([], tmp_path / "x.csv")

    def test_json_sorted_with_infinities(self, tmp_path):
        path = tmp_path / "report.json"
        export_to_json({"b": math.inf, "a": [np.float64(0.5), -math.inf]}, path)
        text = path.read_text(encoding="utf-8")
        assert text.index('"a"') < text.index('"b"')
        assert read_json(path) == {"a": [0.5, "-inf"], "b": "inf"}

    def test_unreadable_files(self, tmp_path):
        with pytest.raises(ExportError):
            read_json(tmp_path / "missing.json")
        with pytest.raises(ExportError):
            read_csv_rows(tmp_path / "missing.csv")
