import numpy as np
import pytest

from latentbandits import model


def make_synth_dataset(seed, n, d_a, d_k, sigma, h):
    """Seeded model plus n logged trajectories under the uniform policy."""
    m = model.synth_model(d_a, d_k, sigma, seed=seed)
    policy = model.UniformPolicy()
    trajs = []
    for i in range(n):
        rng = model.stream_rng(seed, model.STREAM_OFFLINE, i)
        theta = model.sample_theta(m, rng)
        trajs.append(model.sample_trajectory(m, theta, policy, h, rng))
    return m, trajs


def spanning_trajectory(beta, noise=None, repeats=2, rng=None):
    """Deterministic trajectory whose halves both span the full space.

    Interleaves two passes over the standard basis so the odd and even
    halves each contain every coordinate direction.
    """
    d = len(beta)
    feats = []
    for _ in range(repeats):
        for i in range(d):
            feats.append(np.eye(d)[i])
    feats = np.array(feats)
    if rng is not None:
        q = np.linalg.qr(rng.standard_normal((d, d)))[0]
        feats = feats @ q.T
    rewards = feats @ beta
    if noise is not None:
        rewards = rewards + noise
    return model.Trajectory(features=feats, rewards=rewards, hidden_theta=np.zeros(1))


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
