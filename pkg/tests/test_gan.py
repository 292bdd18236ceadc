import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from incident_detect import autodiff as ad
from incident_detect.data import SampleTable
from incident_detect.exceptions import (
    ConfigurationError,
    NumericDomainError,
    TrainingDivergenceError,
)
from incident_detect.gan import (
    GanConfig,
    GANOversampler,
    augment_to_ratio,
    discriminator_loss,
    generate,
    generator_loss,
    parse_ratio,
    sample_noise,
    synthetic_row_count,
    train_gan,
)

EPS = 1e-7
SMALL = dict(noise_dim=4, gen_hidden=(8,), disc_hidden=(8,), batch_size=16, epochs=3)


def gaussian_rows(n=64, seed=0):
    return np.random.default_rng(seed).normal([0.3, -0.2], [0.5, 0.4], size=(n, 2))


@pytest.fixture(scope="module")
def small_model():
    return train_gan(gaussian_rows(), GanConfig(**SMALL))


class TestConfig:
    @pytest.mark.parametrize(
        "bad",
        [dict(noise_dim=0), dict(batch_size=1), dict(gen_hidden=(0,)), dict(lr=0), dict(beta1=1.0), dict(loss_mode="x")],
    )
    def test_rejects(self, bad):
        with pytest.raises(ConfigurationError):
            GanConfig(**bad)

    def test_default_architecture(self):
        cfg = GanConfig()
        assert (cfg.noise_dim, cfg.gen_hidden, cfg.disc_hidden) == (16, (64, 64), (64, 32))


class TestLosses:
    def test_noise_determinism(self):
        a = sample_noise(5, 3, np.random.default_rng(9)).data
        b = sample_noise(5, 3, np.random.default_rng(9)).data
        np.testing.assert_array_equal(a, b)

    def test_discriminator_optimum(self):
        loss = discriminator_loss(np.ones(4), np.zeros(4)).item()
        # clamped logs leave 2 * log(1 - 1e-7) of slack
        assert 0 <= loss <= -2 * math.log(1 - EPS) + 1e-15

    def test_discriminator_at_half(self):
        loss = discriminator_loss(np.full(3, 0.5), np.full(3, 0.5)).item()
        assert abs(-loss - (-2 * math.log(2))) < 1e-12

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(0, 1), min_size=1, max_size=6),
        st.lists(st.floats(0, 1), min_size=1, max_size=6),
    )
    def test_objective_sign_nonpositive(self, real, fake):
        assert -discriminator_loss(np.array(real), np.array(fake)).item() <= 1e-12

    def test_generator_modes(self):
        half = np.full(4, 0.5)
        assert abs(generator_loss(half, "paper").item() + math.log(2)) < 1e-12
        assert abs(generator_loss(half, "non_saturating").item() - math.log(2)) < 1e-12

    def test_generator_paper_saturates_at_clamp(self):
        assert generator_loss(np.ones(3), "paper").item() == pytest.approx(math.log(EPS), rel=1e-12)

    def test_domain_and_mode_errors(self):
        with pytest.raises(NumericDomainError):
            discriminator_loss(np.array([1.2]), np.array([0.1]))
        with pytest.raises(NumericDomainError):
            generator_loss(np.array([-0.1]))
        with pytest.raises(ConfigurationError):
            generator_loss(np.array([0.5]), "wasserstein")

    def test_generator_gradient_reaches_generator_only(self):
        model = train_gan(gaussian_rows(), GanConfig(**{**SMALL, "epochs": 1}))
        d_params, g_params = model.discriminator_parameters(), model.generator_parameters()
        ad.zero_grad(d_params + g_params)
        with ad.frozen(d_params):
            d = model.discriminate(model.generate_scaled(sample_noise(4, 4, np.random.default_rng(0))))
        ad.backward(generator_loss(d))
        assert all(p.grad is None or not p.grad.any() for p in d_params)
        assert any(p.grad is not None and p.grad.any() for p in g_params)


class TestTraining:
    def test_history_shape(self, small_model):
        assert [r["epoch"] for r in small_model.history] == [0, 1, 2]
        for rec in small_model.history:
            assert set(rec) == {"epoch", "loss_d", "loss_g", "mean_d_real", "mean_d_fake"}
            assert rec["loss_d"] <= 0
            assert 0 <= rec["mean_d_real"] <= 1 and 0 <= rec["mean_d_fake"] <= 1

    def test_deterministic(self, small_model):
        again = train_gan(gaussian_rows(), GanConfig(**SMALL))
        assert again.history == small_model.history
        for k, v in small_model.state_dict().items():
            np.testing.assert_array_equal(v, again.state_dict()[k])

    def test_alternation_schedule(self):
        sides = []
        train_gan(gaussian_rows(), GanConfig(**{**SMALL, "epochs": 2, "d_steps_per_g_step": 3}), step_callback=lambda s, m: sides.append(s))
        # 4 D steps per epoch, one G step after every third D step
        assert "".join(sides) == "dddgdddgdd"

    def test_each_side_updates_only_its_own_parameters(self):
        changes = []
        prev = {}

        def callback(side, model):
            state = model.state_dict()
            if prev:
                moved = {k.split(".")[0] for k in state if not np.array_equal(state[k], prev[k])}
                changes.append((side, moved))
            prev.update(state)

        train_gan(gaussian_rows(), GanConfig(**{**SMALL, "epochs": 1, "d_steps_per_g_step": 1}), step_callback=callback)
        for side, moved in changes:
            assert moved == {"discriminator" if side == "d" else "generator"}

    def test_too_few_rows(self):
        with pytest.raises(ConfigurationError):
            train_gan(gaussian_rows(31), GanConfig(**SMALL))

    def test_divergence_names_epoch(self):
        def poison(side, model):
            if len(model.history) == 1:
                model.discriminator[0][0].data[0, 0] = np.nan

        with pytest.raises(TrainingDivergenceError) as info:
            train_gan(gaussian_rows(), GanConfig(**SMALL), step_callback=poison)
        assert info.value.epoch == 1

    def test_generate(self, small_model):
        assert generate(small_model, 0, np.random.default_rng(0)).shape == (0, 2)
        rows = generate(small_model, 50, np.random.default_rng(0))
        lo, hi = small_model.normalizer.inverse_transform(np.array([[-1.0, -1.0], [1.0, 1.0]]))
        assert rows.shape == (50, 2)
        assert np.all((rows >= lo - 1e-9) & (rows <= hi + 1e-9))


class TestAugment:
    @pytest.mark.parametrize("ratio,k", [("1:4", 210), ("2:3", 3227), ("1:1", 5640)])
    def test_counts(self, ratio, k):
        assert synthetic_row_count(1600, 7240, ratio) == k

    def test_already_met(self):
        assert synthetic_row_count(500, 500, "1:1") == 0
        assert synthetic_row_count(600, 500, "1:1") == 0

    @pytest.mark.parametrize("bad", ["1:0", "0:3", "1-2", "a:b", "1:2:3"])
    def test_bad_ratio(self, bad):
        with pytest.raises(ConfigurationError):
            parse_ratio(bad)

    def test_real_rows_preserved(self, small_model):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(50, 2))
        y = (np.arange(50) < 10).astype(int)
        table = SampleTable(("a", "b"), X, y)
        out = augment_to_ratio(table, small_model, "1:1", np.random.default_rng(0))
        assert len(out) == 50 + 30
        np.testing.assert_array_equal(out.features[:50], X)
        np.testing.assert_array_equal(out.labels[:50], y)
        assert out.synthetic.tolist() == [0] * 50 + [1] * 30
        assert out.labels[50:].tolist() == [1] * 30

    def test_balanced_returned_unchanged(self, small_model):
        table = SampleTable(("a", "b"), np.zeros((4, 2)), np.array([0, 1, 0, 1]))
        assert augment_to_ratio(table, small_model, "1:1", np.random.default_rng(0)) is table


class TestOversampler:
    def test_fit_resample(self):
        rng = np.random.default_rng(0)
        X = np.vstack([gaussian_rows(40), rng.normal(3, 1, size=(120, 2))])
        y = np.r_[np.ones(40, dtype=int), np.zeros(120, dtype=int)]
        sampler = GANOversampler(ratio="1:2", noise_dim=4, gen_hidden=(8,), disc_hidden=(8,), batch_size=16, epochs=2)
        Xr, yr = sampler.fit_resample(X, y)
        assert len(Xr) == 160 + 20 and yr.sum() == 60
        assert sampler.synthetic_mask_.sum() == 20
        assert sampler.sample(5).shape == (5, 2)
        assert clone(sampler).get_params() == sampler.get_params()
