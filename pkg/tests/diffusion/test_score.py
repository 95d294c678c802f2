"""Tests for the score/epsilon conversion and the DSM objectives."""

import numpy as np
import pytest

from c2f_diffusion.diffusion.forward import ForwardSample, marginal_sample
from c2f_diffusion.diffusion.predictors.base import ScoreModel
from c2f_diffusion.diffusion.predictors.oracle import MixtureScoreOracle
from c2f_diffusion.diffusion.schedule import make_schedule
from c2f_diffusion.diffusion.score import (
    constant_weighting,
    eps_to_score,
    loss_dsm,
    loss_eps_simple,
    loss_eps_weighted,
    oracle_score,
    score_target,
    score_to_eps,
)
from c2f_diffusion.exceptions import InvalidInputError


class FixedEps(ScoreModel):
    """Returns a preset epsilon regardless of the input."""

    def __init__(self, schedule, eps_bar):
        super().__init__(schedule)
        self.eps_bar = eps_bar

    @classmethod
    def get_model_type(cls):
        return "fixed"

    def predict_eps(self, x, i):
        return x.with_spectral(self.eps_bar)


class ScaledInput(ScoreModel):
    """``eps_hat_bar = 0.3 x_bar``: an arbitrary imperfect predictor."""

    @classmethod
    def get_model_type(cls):
        return "scaled"

    def predict_eps(self, x, i):
        return x.with_spectral(0.3 * x.spectral)


@pytest.fixture
def batch_1d(schedule_1d, rng):
    """Marginal draws at mixed steps with their stored noise."""
    x0 = schedule_1d.make_field(rng.standard_normal((32, 8)))
    steps = rng.integers(1, schedule_1d.n_steps + 1, size=32)
    return marginal_sample(schedule_1d, x0, steps, rng=rng)


class TestConversion:
    """Tests for eps_to_score / score_to_eps."""

    def test_round_trip(self, schedule_2d, rng):
        """score_to_eps inverts eps_to_score."""
        eps = schedule_2d.make_field(rng.standard_normal((3, 4, 4)))
        back = score_to_eps(schedule_2d, eps_to_score(schedule_2d, eps, 17), 17)
        np.testing.assert_allclose(back.pixel, eps.pixel, atol=1e-12)

    def test_zero_blur_is_standard_conversion(self, zero_schedule_1d, rng):
        """With f = 0 the score is -eps / sqrt(1 - alpha_bar_i)."""
        eps = zero_schedule_1d.make_field(rng.standard_normal(8))
        abar = float(zero_schedule_1d.noise.alpha_bar(12))
        score = eps_to_score(zero_schedule_1d, eps, 12)
        np.testing.assert_allclose(
            score.pixel, -eps.pixel / np.sqrt(1 - abar), atol=1e-12
        )

    def test_unit_exponent(self, operator8, rng):
        """unit_score_exponent divides by (1 - Abar) instead of its square root."""
        s = make_schedule(
            operator8, ndim=1, n_steps=20, f_type="zero", unit_score_exponent=True
        )
        eps = s.make_field(rng.standard_normal(8))
        abar = float(s.noise.alpha_bar(5))
        np.testing.assert_allclose(
            eps_to_score(s, eps, 5).pixel, -eps.pixel / (1 - abar), atol=1e-12
        )

    def test_score_target_matches_conversion(self, schedule_1d, batch_1d):
        """The DSM target is the converted stored noise."""
        target = score_target(schedule_1d, batch_1d)
        eps = schedule_1d.make_field(batch_1d.eps)
        expected = eps_to_score(schedule_1d, eps, batch_1d.step)
        np.testing.assert_allclose(target.spectral, expected.spectral)


class TestLosses:
    """Tests for loss_dsm, loss_eps_weighted and loss_eps_simple."""

    def test_dsm_equals_weighted_eps(self, schedule_1d, batch_1d):
        """loss_dsm and loss_eps_weighted agree for any epsilon model."""
        model = ScaledInput(schedule_1d)
        assert loss_dsm(model, batch_1d) == pytest.approx(
            loss_eps_weighted(model, batch_1d), rel=1e-10
        )

    def test_perfect_predictor_has_zero_loss(self, schedule_1d, batch_1d):
        """Predicting the stored noise exactly gives zero for every loss."""
        eps_bar = schedule_1d.make_field(batch_1d.eps).spectral
        model = FixedEps(schedule_1d, eps_bar)
        assert loss_eps_simple(model, batch_1d) == pytest.approx(0.0, abs=1e-20)
        assert loss_dsm(model, batch_1d) == pytest.approx(0.0, abs=1e-16)
        assert loss_eps_weighted(model, batch_1d) == pytest.approx(0.0, abs=1e-16)

    def test_simple_loss_of_zero_predictor(self, schedule_1d, batch_1d):
        """A zero predictor scores the mean squared norm of eps."""
        model = FixedEps(schedule_1d, np.zeros((32, 8)))
        expected = np.mean(np.sum(batch_1d.eps**2, axis=1))
        assert loss_eps_simple(model, batch_1d) == pytest.approx(expected, rel=1e-12)

    def test_weighting_scales_loss(self, schedule_1d, batch_1d):
        """A constant weight of 2 doubles the loss."""
        model = ScaledInput(schedule_1d)
        plain = loss_eps_simple(model, batch_1d)
        doubled = loss_eps_simple(
            model, batch_1d, weighting=lambda steps: 2.0 * constant_weighting(steps)
        )
        assert doubled == pytest.approx(2.0 * plain)

    def test_missing_eps(self, schedule_1d):
        """Losses need the stored noise."""
        batch = ForwardSample(
            step=np.array(3), state=schedule_1d.make_field(np.zeros(8))
        )
        with pytest.raises(InvalidInputError):
            loss_dsm(ScaledInput(schedule_1d), batch)


class TestOracleScore:
    """Tests for oracle_score."""

    def test_delegates_to_oracle(self, schedule_1d, rng):
        """oracle_score is the oracle's exact score."""
        oracle = MixtureScoreOracle(schedule_1d, rng.standard_normal((3, 8)))
        x = schedule_1d.make_field(rng.standard_normal((2, 8)))
        np.testing.assert_allclose(
            oracle_score(oracle, x, 9).pixel, oracle.predict_score(x, 9).pixel
        )
