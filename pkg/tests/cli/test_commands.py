"""Tests for the subcommand implementations and their artifacts."""

import numpy as np
import pytest

from c2f_diffusion.cli import commands
from c2f_diffusion.cli.commands import (
    EXIT_OK,
    EXIT_THRESHOLD,
    cmd_ablate,
    cmd_check,
    cmd_eval,
    cmd_forward,
    cmd_sample,
    cmd_schedule,
    cmd_train,
    load_samples,
)
from c2f_diffusion.exceptions import (
    CheckpointMismatchError,
    InvalidInputError,
    InvalidParameterError,
)
from c2f_diffusion.models.experiment import ExperimentConfig
from c2f_diffusion.utils.file_handler import FileHandler
from c2f_diffusion.utils.images import encode_pgm, read_pgm


def read_rows(path):
    return FileHandler.read_csv(path)


class TestSchedule:
    """Tests for cmd_schedule."""

    def test_tables(self, small_config):
        """One row per step 0..N with the expected columns."""
        assert cmd_schedule(small_config) == EXIT_OK
        out = small_config.output_path
        rows = read_rows(out / "schedule.csv")
        assert len(rows) == 21
        assert list(rows[0]) == ["i", "f", "F", "beta", "alpha_bar"]
        assert float(rows[0]["alpha_bar"]) == 1.0
        assert float(rows[-1]["f"]) == pytest.approx(1.0)

        quantiles = read_rows(out / "abar_quantiles.csv")
        assert list(quantiles[0]) == [
            "i",
            "abar_q0",
            "abar_q25",
            "abar_q50",
            "abar_q75",
            "abar_q100",
        ]
        assert float(quantiles[0]["abar_q0"]) == 1.0
        assert float(quantiles[-1]["abar_q0"]) <= float(quantiles[-1]["abar_q100"])

    def test_config_written(self, small_config):
        """Every command records the resolved config next to its artifacts."""
        cmd_schedule(small_config)
        saved = ExperimentConfig.from_file(small_config.output_path / "config.txt")
        assert saved == small_config


class TestForward:
    """Tests for cmd_forward."""

    def test_dataset_item(self, small_config):
        """Without an image the first dataset item is blurred."""
        assert cmd_forward(small_config) == EXIT_OK
        out = small_config.output_path
        pixels, maxval = read_pgm(out / "forward.pgm")
        assert maxval == 255
        # 5 frames of 4x4 with 1-pixel padding
        assert pixels.shape == (6, 26)
        rows = read_rows(out / "forward_bands.csv")
        assert [float(row["step"]) for row in rows] == [0.0, 5.0, 10.0, 15.0, 20.0]

    def test_image(self, small_config, tmp_path):
        """A matching PGM is used as x_0."""
        image = tmp_path / "x0.pgm"
        image.write_bytes(encode_pgm(np.arange(16, dtype=np.uint8).reshape(4, 4) * 16))
        assert cmd_forward(small_config, image) == EXIT_OK

    def test_image_shape_mismatch(self, small_config, tmp_path):
        """An image of another size is rejected."""
        image = tmp_path / "big.pgm"
        image.write_bytes(encode_pgm(np.zeros((8, 8), dtype=np.uint8)))
        with pytest.raises(InvalidInputError):
            cmd_forward(small_config, image)


class TestTrainAndSample:
    """Tests for cmd_train and cmd_sample."""

    def test_oracle_sampling(self, small_config):
        """The oracle samples without a checkpoint."""
        assert cmd_sample(small_config) == EXIT_OK
        out = small_config.output_path
        samples = load_samples(out / "samples.npy")
        assert samples.shape == (16, 4, 4)
        assert (out / "samples.pgm").exists() and (out / "trajectory.pgm").exists()
        summary = read_rows(out / "sample_summary.csv")[0]
        assert summary["model"] == "gaussian-oracle"
        assert "cluster_assignment_rate" not in summary
        bands = read_rows(out / "reverse_bands.csv")
        assert [float(row["step"]) for row in bands] == [20.0, 15.0, 10.0, 5.0, 0.0]

    def test_clustered_dataset_reports_assignment(self, small_config):
        """Datasets with centers add the assignment rate."""
        config = small_config.with_overrides({"dataset": "two-point"})
        cmd_sample(config)
        summary = read_rows(config.output_path / "sample_summary.csv")[0]
        assert 0.0 <= float(summary["cluster_assignment_rate"]) <= 1.0

    def test_sampling_is_deterministic(self, small_config, tmp_path):
        """Same config and seed give byte-identical samples."""
        other = small_config.with_overrides({"output_dir": str(tmp_path / "again")})
        cmd_sample(small_config)
        cmd_sample(other)
        first = (small_config.output_path / "samples.npy").read_bytes()
        second = (other.output_path / "samples.npy").read_bytes()
        assert first == second

    def test_linear_train_then_sample(self, small_config):
        """A fitted linear checkpoint feeds the sampler."""
        config = small_config.with_overrides({"model": "linear"})
        assert cmd_train(config) == EXIT_OK
        out = config.output_path
        summary = read_rows(out / "train_summary.csv")[0]
        assert float(summary["model_loss"]) > 0
        assert not (out / "loss.csv").exists()
        assert cmd_sample(config, out / "checkpoint.json") == EXIT_OK
        assert read_rows(out / "sample_summary.csv")[0]["model"] == "linear"

    def test_mlp_train_and_resume(self, small_config):
        """An MLP writes its loss curve and can resume from its checkpoint."""
        config = small_config.with_overrides({"model": "mlp"})
        assert cmd_train(config) == EXIT_OK
        checkpoint = config.output_path / "checkpoint.json"
        assert len(read_rows(config.output_path / "loss.csv")) == 5
        assert cmd_train(config, checkpoint) == EXIT_OK

    def test_oracle_needs_no_training(self, small_config):
        """Training the oracle is a parameter error."""
        with pytest.raises(InvalidParameterError):
            cmd_train(small_config)

    def test_linear_cannot_resume(self, small_config, tmp_path):
        """Linear models are always refitted."""
        config = small_config.with_overrides({"model": "linear"})
        with pytest.raises(InvalidParameterError):
            cmd_train(config, tmp_path / "checkpoint.json")

    def test_trained_model_needs_checkpoint(self, small_config):
        """Sampling a linear model without a checkpoint fails."""
        with pytest.raises(InvalidParameterError):
            cmd_sample(small_config.with_overrides({"model": "linear"}))

    def test_checkpoint_from_other_schedule(self, small_config):
        """A checkpoint trained under another f_end is refused."""
        config = small_config.with_overrides({"model": "linear"})
        cmd_train(config)
        changed = config.with_overrides({"f_end": 0.5})
        with pytest.raises(CheckpointMismatchError):
            cmd_sample(changed, config.output_path / "checkpoint.json")

    def test_checkpoint_of_other_model_type(self, small_config):
        """A linear checkpoint cannot be sampled as an MLP."""
        config = small_config.with_overrides({"model": "linear"})
        cmd_train(config)
        with pytest.raises(InvalidInputError):
            cmd_sample(
                config.with_overrides({"model": "mlp"}),
                config.output_path / "checkpoint.json",
            )


class TestEval:
    """Tests for cmd_eval."""

    def test_metrics_table(self, small_config):
        """eval.csv lists every metric with its threshold and status."""
        cmd_sample(small_config)
        assert cmd_eval(small_config) == EXIT_OK
        rows = read_rows(small_config.output_path / "eval.csv")
        metrics = [row["metric"] for row in rows]
        assert metrics[:3] == [
            "frechet_distance",
            "mean_max_abs_error",
            "cov_rel_frobenius_error",
        ]
        assert "sample_energy_band3" in metrics and "reference_energy_band0" in metrics
        assert all(row["passed"] == "true" for row in rows)

    def test_threshold_failure(self, small_config):
        """A zero Frechet threshold fails with exit code 2."""
        cmd_sample(small_config)
        assert cmd_eval(small_config, max_frechet=0.0) == EXIT_THRESHOLD
        rows = read_rows(small_config.output_path / "eval.csv")
        assert rows[0]["passed"] == "false" and rows[0]["threshold"] == "0.0"

    def test_identical_reference(self, small_config, tmp_path):
        """Samples compared with themselves have zero distance."""
        samples = np.random.default_rng(0).standard_normal((32, 4, 4))
        path = tmp_path / "s.npy"
        np.save(path, samples)
        assert cmd_eval(small_config, path, path, max_frechet=1e-6) == EXIT_OK

    def test_shape_mismatch(self, small_config, tmp_path):
        """Samples of another field shape are rejected."""
        path = tmp_path / "wrong.npy"
        np.save(path, np.zeros((4, 8, 8)))
        with pytest.raises(InvalidInputError):
            cmd_eval(small_config, path)

    def test_missing_samples(self, small_config):
        """Without samples.npy the command fails."""
        with pytest.raises(FileNotFoundError):
            cmd_eval(small_config)

    def test_unreadable_samples(self, small_config, tmp_path):
        """A file that is not an array is invalid input."""
        path = tmp_path / "bad.npy"
        path.write_bytes(b"not an array")
        with pytest.raises(InvalidInputError):
            load_samples(path)


class TestCheck:
    """Tests for cmd_check."""

    def test_all_checks_pass(self, small_config):
        """The default schedule satisfies every structural check."""
        assert cmd_check(small_config) == EXIT_OK
        table = read_rows(small_config.output_path / "check.csv")
        rows = {row["check"]: row for row in table}
        for name in (
            "pathwise_step_equivalence",
            "marginal_consistency",
            "variance_preservation",
            "forward_template",
            "reverse_template",
        ):
            assert rows[name]["passed"] == "true"
        assert rows["reverse_template_shifted_indexing"]["passed"] == ""

    def test_standard_diffusion_rows(self, small_config):
        """f = 0 adds the standard step comparisons."""
        config = small_config.with_overrides({"f_type": "zero"})
        assert cmd_check(config) == EXIT_OK
        checks = [row["check"] for row in read_rows(config.output_path / "check.csv")]
        assert "standard_forward" in checks and "standard_reverse" in checks

    def test_failure_exit_code(self, small_config, monkeypatch):
        """A deviation above tolerance returns exit code 2."""
        monkeypatch.setattr(commands, "_variance_deviation", lambda schedule: 1.0)
        assert cmd_check(small_config) == EXIT_THRESHOLD

    def test_large_fields_skip_dense_check(self, small_config, monkeypatch):
        """Fields above the dense limit skip the contract rows."""
        monkeypatch.setattr(commands, "CONTRACT_MAX_DIM", 4)
        assert cmd_check(small_config) == EXIT_OK
        table = read_rows(small_config.output_path / "check.csv")
        checks = [row["check"] for row in table]
        assert "forward_template" not in checks


class TestAblate:
    """Tests for cmd_ablate."""

    def test_rows(self, small_config):
        """One row per blur schedule variant."""
        assert cmd_ablate(small_config) == EXIT_OK
        rows = read_rows(small_config.output_path / "ablation.csv")
        assert [row["variant"] for row in rows] == [
            "standard",
            "log",
            "quartic",
            "quartic-fine-to-coarse",
        ]
        for row in rows:
            assert float(row["frechet_distance"]) >= 0.0
            assert float(row["mid_step"]) == 10.0


def artifacts(out):
    """Bytes of every file a command wrote, minus the config naming its directory."""
    return {
        path.name: path.read_bytes()
        for path in sorted(out.iterdir())
        if path.is_file() and path.name != "config.txt"
    }


class TestDeterminism:
    """Two runs of one config write byte-identical artifacts."""

    @pytest.mark.parametrize(
        "run",
        [
            lambda config, _: cmd_schedule(config),
            lambda config, _: cmd_forward(config),
            lambda config, _: cmd_train(config.with_overrides({"model": "mlp"})),
            lambda config, _: cmd_train(config.with_overrides({"model": "linear"})),
            lambda config, _: cmd_sample(config),
            lambda config, samples: cmd_eval(config, samples),
            lambda config, _: cmd_check(config),
            lambda config, _: cmd_ablate(config),
        ],
        ids=[
            "schedule",
            "forward",
            "train-mlp",
            "train-linear",
            "sample",
            "eval",
            "check",
            "ablate",
        ],
    )
    def test_repeat_run(self, small_config, tmp_path, run):
        """Same seed, same inputs: every artifact matches byte for byte."""
        samples = tmp_path / "samples.npy"
        np.save(samples, np.random.default_rng(0).standard_normal((32, 4, 4)))
        first = small_config.with_overrides({"output_dir": str(tmp_path / "first")})
        second = small_config.with_overrides({"output_dir": str(tmp_path / "second")})
        run(first, samples)
        run(second, samples)
        produced = artifacts(first.output_path)
        assert len(produced) >= 1
        assert produced == artifacts(second.output_path)
