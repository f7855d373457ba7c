"""
Test the CLI interface of fregrad-vocoder.

This module tests the command-line interface functionality.
"""

import csv
from pathlib import Path

import numpy as np
import pytest
import yaml

from fregrad_vocoder.cli import cli
from fregrad_vocoder.container import read_matrix, write_matrix
from fregrad_vocoder.dsp import Waveform, read_wav, write_wav
from fregrad_vocoder.schedule import SCHEDULE_CSV_COLUMNS


@pytest.mark.cli
class TestCLIBasics:
    """Test basic CLI functionality."""

    def test_cli_help(self, cli_runner):
        result = cli_runner.invoke(cli, ["--help"])

        assert result.exit_code == 0
        assert "Usage:" in result.output
        for command in ("train", "sample", "evaluate", "schedule-inspect", "info"):
            assert command in result.output

    def test_cli_version(self, cli_runner):
        result = cli_runner.invoke(cli, ["--version"])

        assert result.exit_code == 0
        assert "0.1.0" in result.output

    def test_sample_needs_checkpoint(self, cli_runner, wav_dir):
        result = cli_runner.invoke(cli, ["sample", str(wav_dir / "a_220.wav")])

        assert result.exit_code == 2
        assert "--ckpt" in result.output


@pytest.mark.cli
class TestConfigErrors:
    """Configuration problems exit with code 2."""

    def test_unknown_key(self, cli_runner, temp_dir):
        path = Path(temp_dir) / "bad.yaml"
        path.write_text(yaml.safe_dump({"model": {"hiden_dim": 8}}))

        result = cli_runner.invoke(cli, ["info", "--config", str(path)])

        assert result.exit_code == 2
        assert "Error:" in result.output
        assert "Unknown key 'model.hiden_dim'" in result.output

    def test_missing_config_file(self, cli_runner, temp_dir):
        result = cli_runner.invoke(cli, ["info", "--config", str(Path(temp_dir) / "none.yaml")])

        assert result.exit_code == 2
        assert "not found" in result.output

    def test_train_without_data(self, cli_runner, temp_dir, toy_config_dict):
        path = Path(temp_dir) / "nodata.yaml"
        path.write_text(yaml.safe_dump(toy_config_dict))

        result = cli_runner.invoke(
            cli, ["train", "--config", str(path), "--out", str(Path(temp_dir) / "run")]
        )

        assert result.exit_code == 2
        assert "No dataset paths" in result.output


@pytest.mark.cli
class TestScheduleInspect:
    def test_csv_file(self, cli_runner, temp_dir):
        out = Path(temp_dir) / "schedule.csv"

        result = cli_runner.invoke(cli, ["schedule-inspect", "--out", str(out)])

        assert result.exit_code == 0
        assert "Terminal SNR after rescale" in result.output
        with open(out, newline="") as f:
            rows = list(csv.reader(f))
        assert len(rows) == 51
        assert rows[0] == SCHEDULE_CSV_COLUMNS
        assert [int(r[0]) for r in rows[1:]] == list(range(1, 51))

    def test_steps_override(self, cli_runner, temp_dir):
        out = Path(temp_dir) / "schedule.csv"

        result = cli_runner.invoke(cli, ["schedule-inspect", "--steps", "6", "--out", str(out)])

        assert result.exit_code == 0
        assert len(out.read_text().splitlines()) == 7

    def test_zero_tau(self, cli_runner):
        result = cli_runner.invoke(cli, ["schedule-inspect", "--tau", "0"])

        assert result.exit_code == 2
        assert "division by zero" in result.output


@pytest.mark.cli
class TestInfo:
    def test_default_parameter_count(self, cli_runner):
        result = cli_runner.invoke(cli, ["info"])

        assert result.exit_code == 0
        assert "Parameters: 1,782,452" in result.output
        assert "freq_dconv" in result.output

    def test_rtf(self, cli_runner, temp_dir, toy_config_dict):
        path = Path(temp_dir) / "toy.yaml"
        path.write_text(yaml.safe_dump(dict(toy_config_dict, schedule={"T": 2})))

        result = cli_runner.invoke(cli, ["info", "--config", str(path), "--rtf"])

        assert result.exit_code == 0
        assert "RTF" in result.output


@pytest.mark.cli
@pytest.mark.integration
class TestEndToEnd:
    """Train, sample and evaluate through the CLI."""

    def test_train_sample_evaluate(self, cli_runner, temp_dir, toy_config_file, wav_dir):
        run = Path(temp_dir) / "run"
        result = cli_runner.invoke(
            cli, ["train", "--config", str(toy_config_file), "--out", str(run), "--steps", "2"]
        )
        assert result.exit_code == 0, result.output
        assert "Trained steps 0..2" in result.output
        assert (run / "latest.fgr").exists()
        assert (run / "config.yaml").exists()
        assert len((run / "loss.csv").read_text().splitlines()) == 3

        resumed = cli_runner.invoke(
            cli,
            [
                "train",
                "--config",
                str(toy_config_file),
                "--out",
                str(run),
                "--steps",
                "3",
                "--ckpt",
                str(run / "latest.fgr"),
            ],
        )
        assert resumed.exit_code == 0, resumed.output
        assert "Trained steps 2..3" in resumed.output
        assert len((run / "loss.csv").read_text().splitlines()) == 4

        generated = Path(temp_dir) / "generated"
        result = cli_runner.invoke(
            cli,
            [
                "sample",
                str(wav_dir / "a_220.wav"),
                str(wav_dir / "b_330.wav"),
                "--ckpt",
                str(run / "latest.fgr"),
                "--out",
                str(generated),
                "--steps",
                "3",
            ],
        )
        assert result.exit_code == 0, result.output
        assert "RTF" in result.output
        assert len(read_wav(generated / "a_220.wav")) == 24 * 256

        metrics = Path(temp_dir) / "metrics.csv"
        result = cli_runner.invoke(
            cli, ["evaluate", str(wav_dir), str(generated), "--out", str(metrics)]
        )
        assert result.exit_code == 0, result.output
        with open(metrics, newline="") as f:
            rows = list(csv.reader(f))
        assert [r[0] for r in rows] == ["file", "a_220.wav", "b_330.wav", "mean"]

    def test_sample_rejects_other_architecture(
        self, cli_runner, temp_dir, toy_config_file, toy_config_dict, wav_dir
    ):
        run = Path(temp_dir) / "run"
        cli_runner.invoke(
            cli, ["train", "--config", str(toy_config_file), "--out", str(run), "--steps", "1"]
        )
        other = Path(temp_dir) / "other.yaml"
        model = dict(toy_config_dict["model"], hidden_dim=16)
        other.write_text(yaml.safe_dump(dict(toy_config_dict, model=model)))

        result = cli_runner.invoke(
            cli,
            [
                "sample",
                str(wav_dir / "a_220.wav"),
                "--ckpt",
                str(run / "latest.fgr"),
                "--config",
                str(other),
                "--out",
                str(Path(temp_dir) / "gen"),
            ],
        )

        assert result.exit_code == 2
        assert "model.hidden_dim" in result.output


@pytest.mark.cli
class TestEvaluate:
    def test_unmatched_files(self, cli_runner, temp_dir, wav_dir):
        generated = Path(temp_dir) / "gen"
        generated.mkdir()
        (generated / "a_220.wav").write_bytes((wav_dir / "a_220.wav").read_bytes())

        result = cli_runner.invoke(cli, ["evaluate", str(wav_dir), str(generated)])

        assert result.exit_code == 1
        assert "Unmatched files: b_330.wav" in result.output

    def test_identical_directories(self, cli_runner, wav_dir):
        result = cli_runner.invoke(cli, ["evaluate", str(wav_dir), str(wav_dir)])

        assert result.exit_code == 0
        lines = result.output.splitlines()
        start = next(i for i, line in enumerate(lines) if line.startswith("file,"))
        rows = list(csv.reader(lines[start : start + 4]))
        assert [r[0] for r in rows] == ["file", "a_220.wav", "b_330.wav", "mean"]
        assert float(rows[1][1]) == 0.0


@pytest.fixture
def toy_checkpoint(cli_runner, temp_dir, toy_config_file):
    """latest.fgr after one training step of the toy model."""
    run = Path(temp_dir) / "run"
    result = cli_runner.invoke(
        cli, ["train", "--config", str(toy_config_file), "--out", str(run), "--steps", "1"]
    )
    assert result.exit_code == 0, result.output
    return run / "latest.fgr"


@pytest.mark.cli
@pytest.mark.integration
class TestResumeFromCheckpoint:
    def test_resume_without_config(self, cli_runner, temp_dir, toy_checkpoint):
        """--ckpt alone resumes with the config stored in the checkpoint."""
        run = toy_checkpoint.parent
        result = cli_runner.invoke(
            cli, ["train", "--ckpt", str(toy_checkpoint), "--out", str(run), "--steps", "2"]
        )

        assert result.exit_code == 0, result.output
        assert "Trained steps 1..2" in result.output
        dumped = yaml.safe_load((run / "config.yaml").read_text())
        assert dumped["model"]["hidden_dim"] == 8
        assert dumped["training"]["max_steps"] == 2
        assert dumped["training"]["seed"] == 7

    def test_seed_override_applies_to_stored_config(self, cli_runner, toy_checkpoint):
        run = toy_checkpoint.parent
        result = cli_runner.invoke(
            cli,
            ["train", "--ckpt", str(toy_checkpoint), "--out", str(run), "--steps", "2", "--seed", "3"],
        )

        assert result.exit_code == 0, result.output
        assert yaml.safe_load((run / "config.yaml").read_text())["training"]["seed"] == 3


@pytest.mark.cli
@pytest.mark.integration
class TestSampleContract:
    """Determinism, output length and step count of the sample command."""

    @pytest.fixture
    def mel_file(self, temp_dir):
        path = Path(temp_dir) / "utt.fgr"
        write_matrix(path, np.random.default_rng(0).normal(-4.0, 1.0, (100, 80)))
        return path

    def _sample(self, cli_runner, inputs, checkpoint, out, *extra):
        return cli_runner.invoke(
            cli, ["sample", *map(str, inputs), "--ckpt", str(checkpoint), "--out", str(out), *extra]
        )

    def test_same_seed_gives_identical_files(self, cli_runner, temp_dir, toy_checkpoint, wav_dir):
        first, second = Path(temp_dir) / "first", Path(temp_dir) / "second"
        for out in (first, second):
            result = self._sample(
                cli_runner, [wav_dir / "a_220.wav"], toy_checkpoint, out, "--seed", "7", "--steps", "3"
            )
            assert result.exit_code == 0, result.output

        assert (first / "a_220.wav").read_bytes() == (second / "a_220.wav").read_bytes()

    def test_other_seed_gives_other_audio(self, cli_runner, temp_dir, toy_checkpoint, wav_dir):
        outputs = []
        for seed in ("7", "8"):
            out = Path(temp_dir) / f"seed_{seed}"
            result = self._sample(
                cli_runner, [wav_dir / "a_220.wav"], toy_checkpoint, out, "--seed", seed, "--steps", "3"
            )
            assert result.exit_code == 0, result.output
            outputs.append((out / "a_220.wav").read_bytes())

        assert outputs[0] != outputs[1]

    def test_mel_matrix_length(self, cli_runner, temp_dir, toy_checkpoint, mel_file):
        out = Path(temp_dir) / "gen"
        result = self._sample(cli_runner, [mel_file], toy_checkpoint, out, "--steps", "2")

        assert result.exit_code == 0, result.output
        waveform = read_wav(out / "utt.wav")
        assert len(waveform) == 100 * 256 == 25600
        assert waveform.sample_rate == 22050

    def test_steps_option_sets_schedule_length(self, cli_runner, temp_dir, toy_checkpoint, mel_file):
        trace = Path(temp_dir) / "trace"
        result = self._sample(
            cli_runner, [mel_file], toy_checkpoint, Path(temp_dir) / "gen", "--steps", "25",
            "--trace-dir", str(trace),
        )

        assert result.exit_code == 0, result.output
        names = sorted(p.name for p in (trace / "utt").iterdir())
        assert names == [f"x_{t:04d}.fgr" for t in range(26)]
        assert read_matrix(trace / "utt" / "x_0025.fgr").shape == (2, 12800)

    def test_wav_at_other_sample_rate(self, cli_runner, temp_dir, toy_checkpoint):
        path = Path(temp_dir) / "narrowband.wav"
        write_wav(path, Waveform(np.zeros(4000), 16000))

        result = self._sample(cli_runner, [path], toy_checkpoint, Path(temp_dir) / "gen")

        assert result.exit_code == 2
        assert "sample rate 16000 Hz does not match data.sample_rate 22050 Hz" in result.output
