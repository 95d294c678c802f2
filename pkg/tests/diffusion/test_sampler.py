"""Tests for the reverse deblurring sampler and the discretization contract."""

import numpy as np
import pytest

from c2f_diffusion.datasets import GaussianDataset, TwoPointDataset
from c2f_diffusion.diffusion.forward import Direction
from c2f_diffusion.diffusion.predictors import LinearScoreModel, MixtureScoreOracle
from c2f_diffusion.diffusion.predictors.base import ScoreModel
from c2f_diffusion.diffusion.sampler import (
    FinalStepNoise,
    SamplerConfig,
    discretization_contract_check,
    reverse_step_eps,
    reverse_step_score,
    sample,
    standard_reverse_step,
)
from c2f_diffusion.diffusion.schedule import make_schedule
from c2f_diffusion.diffusion.spectral import make_blur_operator
from c2f_diffusion.evaluation import cluster_assignment_rate
from c2f_diffusion.exceptions import InvalidParameterError, NonFiniteError


class ExplodingModel(ScoreModel):
    """Predicts infinite noise."""

    @classmethod
    def get_model_type(cls):
        return "exploding"

    def predict_eps(self, x, i):
        return x.with_spectral(np.full(x.spectral.shape, np.inf))


@pytest.fixture
def oracle_1d(schedule_1d, rng):
    return MixtureScoreOracle(schedule_1d, rng.standard_normal((4, 8)), 0.05)


@pytest.fixture
def random_linear(schedule_1d, rng):
    model = LinearScoreModel(schedule_1d)
    model.scale = rng.standard_normal(model.scale.shape)
    model.offset = rng.standard_normal(model.offset.shape)
    return model


class TestSamplerConfig:
    """Tests for SamplerConfig validation and indexing."""

    def test_defaults(self, schedule_1d, oracle_1d):
        """n_steps defaults to N and the last step is noise-free."""
        cfg = SamplerConfig(oracle_1d, schedule_1d)
        assert cfg.n_steps == 50
        assert cfg.final_step_noise is FinalStepNoise.NO_NOISE_AT_LAST_STEP
        assert not cfg.adds_noise(1) and cfg.adds_noise(2)

    def test_policy_from_string(self, schedule_1d, oracle_1d):
        """Policies are accepted by value."""
        cfg = SamplerConfig(oracle_1d, schedule_1d, final_step_noise="noise")
        assert cfg.adds_noise(1)

    @pytest.mark.parametrize(
        "kwargs",
        [{"n_steps": 49}, {"stride": 0}, {"final_step_noise": "sometimes"}],
    )
    def test_invalid(self, schedule_1d, oracle_1d, kwargs):
        """Mismatched step counts, strides and policies are rejected."""
        with pytest.raises(InvalidParameterError):
            SamplerConfig(oracle_1d, schedule_1d, **kwargs)

    def test_model_schedule_mismatch(self, schedule_1d, operator8):
        """The model must be bound to a schedule of the same length."""
        other = make_schedule(operator8, ndim=1, n_steps=10)
        with pytest.raises(InvalidParameterError):
            SamplerConfig(LinearScoreModel(other), schedule_1d)

    def test_schedule_index(self, schedule_1d, oracle_1d):
        """Shifted indexing moves by one and clamps at N."""
        same = SamplerConfig(oracle_1d, schedule_1d)
        shifted = SamplerConfig(oracle_1d, schedule_1d, shifted_indexing=True)
        assert same.schedule_index(7) == 7
        assert shifted.schedule_index(7) == 8
        assert shifted.schedule_index(50) == 50


class TestReverseStep:
    """Tests for the score and epsilon forms of the reverse step."""

    @pytest.mark.parametrize("i", [2, 25, 50])
    def test_score_and_eps_forms_agree(self, schedule_1d, random_linear, rng, i):
        """Both forms give the same state for the same noise."""
        cfg = SamplerConfig(random_linear, schedule_1d)
        x = schedule_1d.make_field(rng.standard_normal((5, 8)))
        z = rng.standard_normal((5, 8))
        np.testing.assert_allclose(
            reverse_step_score(cfg, x, i, z=z).pixel,
            reverse_step_eps(cfg, x, i, z=z).pixel,
            atol=1e-10,
        )

    def test_forms_agree_with_unit_exponent(self, operator8, rng):
        """The equivalence also holds under the -1 exponent."""
        s = make_schedule(
            operator8, ndim=1, n_steps=20, f_end=1.0, unit_score_exponent=True
        )
        model = LinearScoreModel(s)
        model.scale = rng.standard_normal(model.scale.shape)
        cfg = SamplerConfig(model, s)
        x = s.make_field(rng.standard_normal((3, 8)))
        z = rng.standard_normal((3, 8))
        np.testing.assert_allclose(
            reverse_step_score(cfg, x, 9, z=z).pixel,
            reverse_step_eps(cfg, x, 9, z=z).pixel,
            atol=1e-10,
        )

    def test_zero_blur_is_standard_reverse_step(self, zero_schedule_1d, rng):
        """With f = 0 the step is (2 - sqrt(1-beta)) x + beta s + sqrt(beta) z."""
        oracle = MixtureScoreOracle(zero_schedule_1d, rng.standard_normal((3, 8)))
        cfg = SamplerConfig(oracle, zero_schedule_1d)
        x = zero_schedule_1d.make_field(rng.standard_normal((4, 8)))
        z = rng.standard_normal((4, 8))
        beta = float(zero_schedule_1d.noise.beta(30))
        score = oracle.predict_score(x, 30).pixel
        np.testing.assert_allclose(
            reverse_step_score(cfg, x, 30, z=z).pixel,
            standard_reverse_step(x.pixel, beta, score, z),
            atol=1e-10,
        )

    def test_last_step_ignores_noise(self, schedule_1d, oracle_1d, rng):
        """By default the step producing x_0 is deterministic."""
        cfg = SamplerConfig(oracle_1d, schedule_1d)
        x = schedule_1d.make_field(rng.standard_normal(8))
        first = reverse_step_score(cfg, x, 1, z=rng.standard_normal(8))
        second = reverse_step_score(cfg, x, 1, z=rng.standard_normal(8))
        np.testing.assert_array_equal(first.pixel, second.pixel)

        noisy = SamplerConfig(oracle_1d, schedule_1d, final_step_noise="noise")
        a = reverse_step_score(noisy, x, 1, z=rng.standard_normal(8))
        b = reverse_step_score(noisy, x, 1, z=rng.standard_normal(8))
        assert not np.allclose(a.pixel, b.pixel)

    def test_requires_noise_source(self, schedule_1d, oracle_1d):
        """Noisy steps need an rng or a draw."""
        cfg = SamplerConfig(oracle_1d, schedule_1d)
        with pytest.raises(InvalidParameterError):
            reverse_step_score(cfg, schedule_1d.make_field(np.zeros(8)), 10)

    def test_noiseless_steps_contract_to_single_datum(self, operator8, rng):
        """With one datum and z = 0 the mean squared error keeps falling at the end."""
        s = make_schedule(operator8, ndim=1)
        datum = rng.standard_normal(8)
        cfg = SamplerConfig(MixtureScoreOracle(s, datum[None]), s)
        # antithetic start: the batch mean of the Gaussian init is exactly zero
        half = rng.standard_normal((256, 8))
        x = s.make_field(np.concatenate([half, -half]))
        zeros = np.zeros(x.pixel.shape)
        errors = []
        for i in range(s.n_steps, 0, -1):
            if i <= s.n_steps // 10:
                errors.append(np.mean(np.sum((x.pixel - datum) ** 2, axis=1)))
            x = reverse_step_score(cfg, x, i, z=zeros)
        errors.append(np.mean(np.sum((x.pixel - datum) ** 2, axis=1)))
        assert len(errors) == s.n_steps // 10 + 1
        assert np.all(np.diff(errors) < 0)
        assert errors[-1] < 1e-2 * errors[0]

    def test_step_out_of_range(self, schedule_1d, oracle_1d, rng):
        """i = 0 is not a reverse step."""
        cfg = SamplerConfig(oracle_1d, schedule_1d)
        with pytest.raises(InvalidParameterError):
            reverse_step_score(cfg, schedule_1d.make_field(np.zeros(8)), 0, rng=rng)


class TestSample:
    """Tests for the full reverse chain."""

    def test_recorded_steps(self, schedule_1d, oracle_1d):
        """States are kept at N and every stride down to 0."""
        cfg = SamplerConfig(oracle_1d, schedule_1d, stride=10, n_bands=2)
        trajectory = sample(cfg, 6)
        assert trajectory.direction is Direction.REVERSE
        assert trajectory.steps == [50, 40, 30, 20, 10, 0]
        assert trajectory.states[-1].pixel.shape == (6, 8)
        final = trajectory.metadata_rows()[-1]
        assert final["retention_band0"] == pytest.approx(1.0)
        assert final["retention_band1"] == pytest.approx(1.0)

    def test_deterministic_for_seed(self, schedule_1d, oracle_1d):
        """The seed fixes every draw."""
        first = sample(SamplerConfig(oracle_1d, schedule_1d, seed=3), 4)
        second = sample(SamplerConfig(oracle_1d, schedule_1d, seed=3), 4)
        other = sample(SamplerConfig(oracle_1d, schedule_1d, seed=4), 4)
        np.testing.assert_array_equal(first.pixels(), second.pixels())
        assert not np.allclose(first.states[-1].pixel, other.states[-1].pixel)

    def test_custom_init(self, schedule_1d, oracle_1d):
        """x_init replaces the Gaussian start state."""
        init = np.zeros((2, 8))
        trajectory = sample(SamplerConfig(oracle_1d, schedule_1d), 2, x_init=init)
        np.testing.assert_array_equal(trajectory.states[0].pixel, init)

    def test_non_finite_state(self, schedule_1d):
        """A diverging model stops the chain with the failing step."""
        cfg = SamplerConfig(ExplodingModel(schedule_1d), schedule_1d)
        with pytest.raises(NonFiniteError) as excinfo:
            sample(cfg, 2)
        assert excinfo.value.step == 50

    def test_invalid_batch(self, schedule_1d, oracle_1d):
        """batch_size must be positive."""
        with pytest.raises(InvalidParameterError):
            sample(SamplerConfig(oracle_1d, schedule_1d), 0)

    @pytest.mark.slow
    @pytest.mark.parametrize("ndim", [1, 2])
    def test_two_point_oracle_samples_cluster(self, ndim):
        """Oracle samples of {+a, -a} land within 10% of one of the two points."""
        operator = make_blur_operator(8, 0.4)
        s = make_schedule(operator, ndim=ndim)
        assert s.n_steps == 1000 and s.blur.f(1000) == pytest.approx(0.14)
        dataset = TwoPointDataset(operator, ndim)
        cfg = SamplerConfig(dataset.oracle(s), s, seed=1, stride=1000)
        samples = sample(cfg, 1000).states[-1].pixel
        assert cluster_assignment_rate(samples, dataset.centers) >= 0.95
        axes = tuple(range(1, ndim + 1))
        positive = np.mean(np.sum(samples * dataset.a, axis=axes) > 0)
        assert 0.4 < positive < 0.6

    @pytest.mark.slow
    def test_bands_fill_coarse_to_fine(self):
        """Low frequencies are recovered first; fine_to_coarse reverses the order."""
        operator = make_blur_operator(8, 0.4)

        def interior_retention(fine_to_coarse):
            s = make_schedule(operator, ndim=2, fine_to_coarse=fine_to_coarse)
            dataset = GaussianDataset(operator, 2, size=2)
            cfg = SamplerConfig(dataset.oracle(s), s, seed=3, stride=100, n_bands=4)
            rows = sample(cfg, 512).metadata
            interior = [row for row in rows if 0 < row["step"] < s.n_steps]
            return [
                (row["retention_band0"], row["retention_band3"]) for row in interior
            ]

        coarse_first = interior_retention(False)
        fine_first = interior_retention(True)
        assert len(coarse_first) == 9
        for low, high in coarse_first:
            assert low >= high
        for low, high in fine_first:
            assert low <= high
        assert sum(low > high for low, high in coarse_first) >= 2
        assert sum(low < high for low, high in fine_first) >= 2

    @pytest.mark.slow
    def test_gaussian_oracle_recovers_covariance(self, operator4):
        """Oracle samples of Gaussian data reproduce its covariance within 5%."""
        s = make_schedule(operator4, ndim=1, n_steps=1000, f_end=0.14)
        dataset = GaussianDataset(operator4, 1, size=2)
        cfg = SamplerConfig(dataset.oracle(s), s, seed=2, stride=1000)
        samples = sample(cfg, 10_000).states[-1].pixel
        error = np.linalg.norm(np.cov(samples, rowvar=False) - dataset.covariance)
        assert error / np.linalg.norm(dataset.covariance) < 0.05


class TestContractCheck:
    """Tests for discretization_contract_check."""

    def test_blur_schedule_matches_templates(self, schedule_1d):
        """Both step implementations follow the difference-equation template."""
        report = discretization_contract_check(schedule_1d)
        assert report.max_deviation() < 1e-10
        assert report.standard_forward is None
        assert report.steps_checked == 20

    def test_images(self, schedule_2d):
        """The check also holds on images."""
        assert discretization_contract_check(schedule_2d).max_deviation() < 1e-10

    def test_shifted_indexing_deviates(self, schedule_1d):
        """Shifting the schedule index by one breaks the template."""
        report = discretization_contract_check(schedule_1d)
        assert report.reverse_shifted_indexing > 1e-6
        checks = [row["check"] for row in report.rows()]
        assert "reverse_template_shifted_indexing" in checks

    def test_zero_blur_matches_standard_steps(self, zero_schedule_1d):
        """For f = 0 the steps equal the standard VP steps."""
        report = discretization_contract_check(zero_schedule_1d)
        assert report.standard_forward < 1e-10
        assert report.standard_reverse < 1e-10
        assert len(report.rows()) == 5

    def test_fine_to_coarse(self, operator8):
        """The fine-to-coarse spectrum passes the same check."""
        s = make_schedule(operator8, ndim=1, n_steps=30, f_end=1.0, fine_to_coarse=True)
        assert discretization_contract_check(s).max_deviation() < 1e-10

    def test_large_fields_rejected(self):
        """Dense matrices are limited to small fields."""
        s = make_schedule(make_blur_operator(40, 0.4), ndim=2, n_steps=5)
        with pytest.raises(InvalidParameterError):
            discretization_contract_check(s)
