import json

import numpy as np
import pytest

from latentbandits import model
from latentbandits.errors import ValidationError


class TestSynthModel:
    def test_default_latent_distribution(self):
        m = model.synth_model(50, 2, 0.5, seed=7)
        assert np.allclose(m.theta_cov, np.eye(2) / 2)
        assert np.allclose(m.theta_mean, 0.0)
        assert np.abs(m.u_star.T @ m.u_star - np.eye(2)).max() < 1e-10

    def test_full_rank_square_orthogonal(self):
        m = model.synth_model(3, 3, 0.0, seed=1)
        assert np.abs(m.u_star @ m.u_star.T - np.eye(3)).max() < 1e-10

    def test_same_seed_bit_identical(self):
        a = model.synth_model(10, 2, 0.5, seed=7)
        b = model.synth_model(10, 2, 0.5, seed=7)
        assert np.array_equal(a.u_star, b.u_star)

    def test_different_seed_differs(self):
        a = model.synth_model(10, 2, 0.5, seed=7)
        b = model.synth_model(10, 2, 0.5, seed=8)
        assert not np.array_equal(a.u_star, b.u_star)

    def test_dimension_violation(self):
        with pytest.raises(ValidationError):
            model.synth_model(2, 3, 0.5, seed=0)
        with pytest.raises(ValidationError):
            model.synth_model(5, 0, 0.5, seed=0)

    def test_negative_noise_rejected(self):
        with pytest.raises(ValidationError):
            model.synth_model(5, 2, -0.1, seed=0)

    def test_noise_above_reward_bound_rejected(self):
        with pytest.raises(ValidationError):
            model.synth_model(5, 2, 3.0, seed=0, reward_bound=1.0)


class TestSampleTheta:
    def test_degenerate_covariance_returns_mean(self):
        mean = np.array([0.3, -0.7])
        m = model.LatentLinearBandit(
            u_star=np.eye(5)[:, :2],
            theta_mean=mean,
            theta_cov=np.zeros((2, 2)),
            noise_std=0.0,
            reward_bound=1.0,
            feature_universe=model.FeatureUniverse(5),
        )
        rng = np.random.default_rng(0)
        for _ in range(5):
            assert np.allclose(model.sample_theta(m, rng), mean)

    def test_monte_carlo_mean(self):
        # Independent law-of-large-numbers oracle: the empirical mean of
        # 1e5 draws from N(0, I/2) is within 0.02 of zero per coordinate.
        m = model.synth_model(10, 2, 0.5, seed=7)
        rng = np.random.default_rng(123)
        draws = np.array([model.sample_theta(m, rng) for _ in range(100_000)])
        assert np.abs(draws.mean(axis=0)).max() < 0.02
        assert np.abs(draws.var(axis=0) - 0.5).max() < 0.02

    def test_same_rng_seed_same_draw(self):
        m = model.synth_model(10, 2, 0.5, seed=7)
        a = model.sample_theta(m, np.random.default_rng(5))
        b = model.sample_theta(m, np.random.default_rng(5))
        assert np.array_equal(a, b)


class TestSampleTrajectory:
    def test_noiseless_rewards_exact(self):
        m = model.synth_model(8, 2, 0.0, seed=3)
        theta = np.array([0.4, -0.2])
        traj = model.sample_trajectory(
            m, theta, model.UniformPolicy(), 12, np.random.default_rng(0)
        )
        assert np.allclose(traj.rewards, traj.features @ (m.u_star @ theta), atol=1e-12)

    def test_length_and_unit_features(self):
        m = model.synth_model(50, 2, 0.5, seed=7)
        traj = model.sample_trajectory(
            m, np.zeros(2), model.UniformPolicy(), 20, np.random.default_rng(1)
        )
        assert traj.h == 20
        assert np.allclose(np.linalg.norm(traj.features, axis=1), 1.0)

    def test_short_horizon_rejected(self):
        m = model.synth_model(5, 2, 0.5, seed=7)
        with pytest.raises(ValidationError):
            model.sample_trajectory(m, np.zeros(2), model.UniformPolicy(), 1,
                                    np.random.default_rng(0))

    def test_noise_is_mean_zero(self):
        # Derived check: noise averages to ~0 over 1e5 steps.
        m = model.synth_model(6, 2, 0.5, seed=9)
        theta = np.array([0.1, 0.2])
        beta = m.u_star @ theta
        rng = np.random.default_rng(77)
        residuals = []
        for _ in range(100):
            traj = model.sample_trajectory(m, theta, model.UniformPolicy(), 1000, rng)
            residuals.append(traj.rewards - traj.features @ beta)
        residuals = np.concatenate(residuals)
        assert abs(residuals.mean()) < 0.01
        assert np.abs(residuals).max() <= 3 * 0.5 + 1e-12

    def test_reward_sanity_band(self):
        # With the latent norm under the reward bound, rewards stay inside
        # reward_bound + 6 * noise_std.
        m = model.synth_model(6, 2, 0.5, seed=9)
        theta = np.array([0.5, -0.5])
        rng = np.random.default_rng(4)
        traj = model.sample_trajectory(m, theta, model.UniformPolicy(), 500, rng)
        band = m.reward_bound + 6 * m.noise_std
        assert np.abs(traj.rewards).max() <= band

    def test_bit_reproducible(self):
        m = model.synth_model(10, 2, 0.5, seed=7)
        theta = np.array([1.0, -1.0])
        a = model.sample_trajectory(m, theta, model.UniformPolicy(), 20,
                                    np.random.default_rng(42))
        b = model.sample_trajectory(m, theta, model.UniformPolicy(), 20,
                                    np.random.default_rng(42))
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.rewards, b.rewards)

    def test_policy_never_sees_theta(self):
        # Identical seeds but different latent states must give identical
        # feature sequences: the behavior policy has no theta input.
        m = model.synth_model(10, 2, 0.5, seed=7)
        a = model.sample_trajectory(m, np.array([5.0, 5.0]), model.UniformPolicy(),
                                    20, np.random.default_rng(11))
        b = model.sample_trajectory(m, np.array([-5.0, 0.0]), model.UniformPolicy(),
                                    20, np.random.default_rng(11))
        assert np.array_equal(a.features, b.features)

    def test_fixed_distribution_policy(self):
        universe = model.FeatureUniverse(3, vectors=np.eye(3))
        m = model.LatentLinearBandit(
            u_star=np.eye(3)[:, :1], theta_mean=np.zeros(1), theta_cov=np.eye(1),
            noise_std=0.0, reward_bound=1.0, feature_universe=universe,
        )
        policy = model.FixedDistributionPolicy([1.0, 0.0, 0.0])
        traj = model.sample_trajectory(m, np.zeros(1), policy, 10,
                                       np.random.default_rng(0))
        assert np.allclose(traj.features, np.eye(3)[0])


class TestBestArmValue:
    def test_basis_arms(self):
        rnd = model.ActionRound(features=np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert model.best_arm_value(np.array([1.0, 0.0]), rnd) == (0, 1.0)

    def test_tie_break_lowest_index(self):
        rnd = model.ActionRound(features=np.array([[1.0, 0.0], [0.0, 1.0]]))
        idx, val = model.best_arm_value(np.zeros(2), rnd)
        assert (idx, val) == (0, 0.0)

    def test_matches_exhaustive_scan(self, rng):
        # Brute-force oracle over every arm.
        for _ in range(20):
            feats = rng.standard_normal((20, 6))
            feats /= np.linalg.norm(feats, axis=1, keepdims=True)
            beta = rng.standard_normal(6)
            rnd = model.ActionRound(features=feats)
            idx, val = model.best_arm_value(beta, rnd)
            scan = [f @ beta for f in feats]
            assert idx == int(np.argmax(scan))
            assert val == pytest.approx(max(scan), abs=1e-12)

    def test_empty_round_rejected(self):
        with pytest.raises(ValidationError):
            model.ActionRound(features=np.zeros((0, 3)))


class TestInvariants:
    def test_cauchy_schwarz_reward_bound(self, rng):
        # |phi' U theta| <= ||theta|| for unit features and orthonormal U.
        m = model.synth_model(12, 3, 0.0, seed=2)
        for _ in range(1000):
            theta = rng.standard_normal(3)
            phi = m.feature_universe.draw(rng, 1)[0]
            assert abs(phi @ (m.u_star @ theta)) <= np.linalg.norm(theta) + 1e-12


class TestModelJson:
    def test_round_trip(self, tmp_path):
        m = model.synth_model(7, 3, 0.25, seed=13)
        path = tmp_path / "model.json"
        model.save_model(m, path)
        doc = json.loads(path.read_text())
        assert set(doc) == {"d_a", "d_k", "noise_std", "reward_bound", "seed", "u_star"}
        assert doc["d_a"] == 7 and doc["d_k"] == 3 and doc["seed"] == 13
        loaded = model.load_model(path)
        assert np.array_equal(loaded.u_star, m.u_star)
        assert loaded.noise_std == m.noise_std

    def test_round_trip_byte_stable(self, tmp_path):
        m = model.synth_model(5, 2, 0.5, seed=3)
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        model.save_model(m, p1)
        model.save_model(model.load_model(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()
