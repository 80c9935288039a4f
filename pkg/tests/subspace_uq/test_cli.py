import json
import logging
import sys
from collections.abc import Iterator
from pathlib import Path

import pytest
from typer.testing import CliRunner

import subspace_uq.logs
from subspace_uq.__about__ import __title__, __version__
from subspace_uq.cli import app, merge_study_config
from subspace_uq.study_config import SEED_ENV_VAR, ModelSection, StudyConfig

runner = CliRunner()

SMALL_MODEL = ["--d1", "20", "--d2", "15", "--r", "2"]


@pytest.fixture(autouse=True)
def _isolated_logging(
    tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> Iterator[None]:
    monkeypatch.setattr(subspace_uq.logs, "LOGS_DIR", tmp_path / "logs")
    monkeypatch.setattr(sys, "excepthook", sys.excepthook)
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)
    root_logger = logging.getLogger()
    level = root_logger.level
    yield
    for handler in subspace_uq.logs._installed_handlers:
        root_logger.removeHandler(handler)
        handler.close()
    subspace_uq.logs._installed_handlers.clear()
    root_logger.setLevel(level)


def _bias_table(output_dir: Path, *extra: str) -> list[str]:
    return [
        "bias-table",
        *SMALL_MODEL,
        "--lambda",
        "10:11:1",
        "--orders",
        "1..2",
        "--reps",
        "20",
        "-o",
        str(output_dir),
        *extra,
    ]


def test_version() -> None:
    result = runner.invoke(app, ["--version"])
    assert result.exit_code == 0
    assert f"{__title__} {__version__}" in result.output


def test_no_args_shows_help() -> None:
    result = runner.invoke(app, [])
    assert "bias-table" in result.output


class TestBiasTable:
    def test_writes_table(self, tmp_path: Path) -> None:
        result = runner.invoke(app, _bias_table(tmp_path, "--seed", "1"))
        assert result.exit_code == 0, result.output
        lines = (tmp_path / "bias_table.csv").read_text(encoding="UTF-8").splitlines()
        assert lines[0] == "lambda,order,B,mc_mean,mc_se,signed_err"
        assert [line.split(",")[:2] for line in lines[1:]] == [
            [lambda_base, order]
            for lambda_base in ("10", "11")
            for order in ("1", "2", "inf")
        ]
        assert (tmp_path / "logs" / subspace_uq.logs.MAIN_LOG_FILE_NAME).exists()

    def test_rerun_is_byte_identical(self, tmp_path: Path) -> None:
        first, second = tmp_path / "first", tmp_path / "second"
        assert runner.invoke(app, _bias_table(first, "--seed", "4")).exit_code == 0
        assert runner.invoke(
            app, _bias_table(second, "--seed", "4", "--workers", "3")
        ).exit_code == 0
        assert (first / "bias_table.csv").read_bytes() == (
            second / "bias_table.csv"
        ).read_bytes()

    def test_seed_from_environment(
        self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch
    ) -> None:
        assert runner.invoke(app, _bias_table(tmp_path / "cli", "--seed", "7")).exit_code == 0
        monkeypatch.setenv(SEED_ENV_VAR, "7")
        assert runner.invoke(app, _bias_table(tmp_path / "env")).exit_code == 0
        assert (tmp_path / "cli" / "bias_table.csv").read_bytes() == (
            tmp_path / "env" / "bias_table.csv"
        ).read_bytes()

    @pytest.mark.parametrize(
        "extra",
        [
            ["--orders", "4..1"],
            ["--lambda", "a:b"],
            ["--reps", "0"],
            ["--r", "0"],
            ["--d1", "3", "--r", "5"],
            ["--workers", "0"],
        ],
    )
    def test_usage_errors(self, tmp_path: Path, extra: list[str]) -> None:
        result = runner.invoke(app, [*_bias_table(tmp_path), *extra])
        assert result.exit_code == 2
        assert not (tmp_path / "bias_table.csv").exists()


def test_clt(tmp_path: Path) -> None:
    args = [
        "clt",
        *SMALL_MODEL,
        "--lambda",
        "12",
        "--estimator",
        "empirical",
        "--order",
        "inf",
        "--reps",
        "30",
        "-o",
        str(tmp_path),
    ]
    result = runner.invoke(app, args)
    assert result.exit_code == 0, result.output
    histogram = (tmp_path / "clt_hist.csv").read_text(encoding="UTF-8").splitlines()
    assert histogram[0] == "bin_left,bin_right,density"
    assert histogram[1].startswith("-5,-4.9,")
    assert len(histogram) == 101
    summary = json.loads((tmp_path / "clt_summary.json").read_text(encoding="UTF-8"))
    assert summary["reps"] == 30
    assert summary["estimator"] == "empirical"
    assert summary["order"] == "inf"
    assert summary["svd_failures"] == 0
    assert 0 <= summary["ks"] <= 1


def test_coverage(tmp_path: Path) -> None:
    args = [
        "coverage",
        *SMALL_MODEL,
        "--lambda",
        "12",
        "--alphas",
        "0.05,0.5",
        "--reps",
        "20",
        "-o",
        str(tmp_path),
    ]
    result = runner.invoke(app, args)
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "coverage.csv").read_text(encoding="UTF-8").splitlines()
    assert lines[0] == "alpha,coverage,se,reps"
    assert [line.split(",")[0] for line in lines[1:]] == ["0.05", "0.5"]
    assert all(line.endswith(",20") for line in lines[1:])


@pytest.mark.parametrize("alphas", ["1.5", "0.05,x"])
def test_coverage_invalid_alphas(tmp_path: Path, alphas: str) -> None:
    result = runner.invoke(app, ["coverage", "--alphas", alphas, "-o", str(tmp_path)])
    assert result.exit_code == 2


class TestSeriesCheck:
    def _args(self, output_dir: Path, noise_ratio: str) -> list[str]:
        return [
            "series-check",
            "--d1",
            "10",
            "--d2",
            "10",
            "--r",
            "2",
            "--lambda",
            "2",
            "--noise-ratio",
            noise_ratio,
            "--max-order",
            "4",
            "--seeds",
            "3",
            "-o",
            str(output_dir),
        ]

    def test_writes_decay(self, tmp_path: Path) -> None:
        result = runner.invoke(app, self._args(tmp_path, "0.1"))
        assert result.exit_code == 0, result.output
        lines = (tmp_path / "series_decay.csv").read_text(encoding="UTF-8").splitlines()
        assert lines[0] == "K,frob_err,tail_bound"
        assert [line.split(",")[0] for line in lines[1:]] == ["1", "2", "3", "4"]

    def test_strong_noise_fails(self, tmp_path: Path) -> None:
        result = runner.invoke(app, self._args(tmp_path, "0.6"))
        assert result.exit_code == 1
        assert not (tmp_path / "series_decay.csv").exists()

    def test_too_large(self, tmp_path: Path) -> None:
        result = runner.invoke(
            app, ["series-check", "--d1", "150", "--d2", "100", "-o", str(tmp_path)]
        )
        assert result.exit_code == 2

    def test_order_limit(self, tmp_path: Path) -> None:
        result = runner.invoke(app, ["series-check", "--max-order", "13"])
        assert result.exit_code == 2


def test_selftest() -> None:
    result = runner.invoke(app, ["selftest", "--reps", "500", "--seed", "0"])
    assert result.exit_code == 0, result.output
    assert "exact identities" in result.output
    assert "FAILED" not in result.output


class TestInitConfig:
    def test_round_trip(self, tmp_path: Path) -> None:
        config_path = tmp_path / "study.toml"
        result = runner.invoke(app, ["init-config", str(config_path)])
        assert result.exit_code == 0, result.output
        assert "#:version 1.0" in config_path.read_text(encoding="UTF-8")

        assert runner.invoke(app, ["init-config", str(config_path)]).exit_code == 2
        assert (
            runner.invoke(app, ["init-config", "--force", str(config_path)]).exit_code
            == 0
        )

        result = runner.invoke(
            app, ["-v", *_bias_table(tmp_path / "out"), "--config", str(config_path)]
        )
        assert result.exit_code == 0, result.output
        assert (tmp_path / "out" / "bias_table.csv").exists()

    def test_config_values_are_used(self, tmp_path: Path) -> None:
        config_path = tmp_path / "study.toml"
        config_path.write_text(
            "#:version 1.0\nseed = 7\n\n[bias_table]\nreps = 20\n", encoding="UTF-8"
        )
        with_config = [
            "bias-table",
            *SMALL_MODEL,
            "--lambda",
            "10:11:1",
            "--orders",
            "1..2",
            "--config",
            str(config_path),
            "-o",
            str(tmp_path / "config"),
        ]
        assert runner.invoke(app, with_config).exit_code == 0
        assert runner.invoke(app, _bias_table(tmp_path / "cli", "--seed", "7")).exit_code == 0
        assert (tmp_path / "config" / "bias_table.csv").read_bytes() == (
            tmp_path / "cli" / "bias_table.csv"
        ).read_bytes()

    def test_bad_config(self, tmp_path: Path) -> None:
        config_path = tmp_path / "study.toml"
        config_path.write_text("#:version 9.0\n", encoding="UTF-8")
        result = runner.invoke(
            app, [*_bias_table(tmp_path), "--config", str(config_path)]
        )
        assert result.exit_code == 2


class TestLambdaOverride:
    def test_merge_clears_file_lambda_values(self) -> None:
        study = StudyConfig(model=ModelSection(r=2, lambda_values=(40.0, 20.0)))
        merged = merge_study_config(
            study, seed=None, workers=None, output_directory=None, lambda_value=12.0
        )
        assert merged.model.lambda_values is None
        kept = merge_study_config(study, seed=None, workers=None, output_directory=None)
        assert kept.model.lambda_values == (40.0, 20.0)

    def test_cli_lambda_beats_config_values(self, tmp_path: Path) -> None:
        config_path = tmp_path / "study.toml"
        config_path.write_text(
            "#:version 1.0\n\n[model]\nd1 = 20\nd2 = 15\nr = 2\n"
            "lambda_values = [40.0, 20.0]\n",
            encoding="UTF-8",
        )
        common = ["clt", "--reps", "20", "--seed", "4", "--estimator", "true"]
        runs = {
            "config": [*common, "--config", str(config_path)],
            "override": [*common, "--config", str(config_path), "--lambda", "12"],
            "cli": [*common, *SMALL_MODEL, "--lambda", "12"],
        }
        outputs = {}
        for name, args in runs.items():
            output_dir = tmp_path / name
            result = runner.invoke(app, [*args, "-o", str(output_dir)])
            assert result.exit_code == 0, result.output
            outputs[name] = sorted(
                (path.name, path.read_bytes()) for path in output_dir.iterdir()
            )
        assert outputs["override"] == outputs["cli"]
        assert outputs["override"] != outputs["config"]


class TestFullRankModel:
    def test_bias_table(self, tmp_path: Path) -> None:
        args = [
            "bias-table",
            "--d1",
            "3",
            "--d2",
            "3",
            "--r",
            "3",
            "--lambda",
            "50",
            "--orders",
            "1,inf",
            "--reps",
            "3",
            "-o",
            str(tmp_path),
        ]
        result = runner.invoke(app, args)
        assert result.exit_code == 0, result.output
        assert (tmp_path / "bias_table.csv").exists()

    @pytest.mark.parametrize("command", ["clt", "coverage"])
    def test_normalized_statistics_are_usage_errors(
        self, tmp_path: Path, command: str
    ) -> None:
        output_dir = tmp_path / "out"
        args = [command, "--d1", "3", "--d2", "3", "--r", "3", "-o", str(output_dir)]
        result = runner.invoke(app, args)
        assert result.exit_code == 2
        assert not output_dir.exists()


def test_readme_comma_lambda_list(tmp_path: Path) -> None:
    args = [
        "bias-table",
        *SMALL_MODEL,
        "--lambda",
        "30,60,120",
        "--orders",
        "1,2",
        "--reps",
        "10",
        "-o",
        str(tmp_path),
    ]
    result = runner.invoke(app, args)
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "bias_table.csv").read_text(encoding="UTF-8").splitlines()
    lambdas = [line.split(",")[0] for line in lines[1:]]
    assert lambdas == ["30"] * 3 + ["60"] * 3 + ["120"] * 3
