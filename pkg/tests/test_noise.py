import numpy as np
import pytest

from cimnas.errors import ConfigError
from cimnas.noise import DEPLOY, TRAIN, NoiseSpec, apply_noise, noise_map, perturb, sample_noise


def test_zero_sigma_is_zero():
    assert not sample_noise((4, 5), NoiseSpec(sigma=0.0), 3).any()


def test_moments_at_scale():
    z = sample_noise((1_000_000,), NoiseSpec(0.0, 0.04, seed=7), 0).astype(np.float64)
    assert abs(z.mean()) <= 4 * 0.04 / np.sqrt(1e6)
    assert abs(z.std() - 0.04) <= 0.01 * 0.04


def test_deterministic_per_seed_and_index():
    spec = NoiseSpec(sigma=0.04, seed=123)
    a = sample_noise((10, 10), spec, 5)
    assert a.tobytes() == sample_noise((10, 10), spec, 5).tobytes()
    assert a.tobytes() != sample_noise((10, 10), spec, 6).tobytes()
    assert a.tobytes() != sample_noise((10, 10), NoiseSpec(sigma=0.04, seed=124), 5).tobytes()
    assert a.tobytes() != sample_noise((10, 10), spec, 5, domain=TRAIN).tobytes()


def test_samples_are_uncorrelated():
    spec = NoiseSpec(sigma=1.0, seed=1)
    a = sample_noise((1_000_000,), spec, 0)
    b = sample_noise((1_000_000,), spec, 1)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.01


def test_negative_sigma_rejected():
    with pytest.raises(ConfigError):
        NoiseSpec(sigma=-0.1)
    assert NoiseSpec.from_variance(0.04).sigma == pytest.approx(0.2)


def test_perturb_sigma_zero_bitwise():
    w = {"fc.weight": np.array([[-0.0, 1.5]], np.float32), "fc.bias": np.array([2.0], np.float32)}
    out = perturb(w, NoiseSpec(sigma=0.0), 0)
    for k in w:
        assert out[k].tobytes() == w[k].tobytes()
        assert out[k] is not w[k]


def test_forced_noise_is_additive():
    out = apply_noise({"w.weight": np.array([1.0], np.float32)}, {"w.weight": np.array([0.05], np.float32)})
    assert out["w.weight"][0] == np.float32(1.0) + np.float32(0.05)


def test_perturb_does_not_mutate_and_targets_weights():
    rng = np.random.default_rng(0)
    w = {"a.weight": rng.normal(size=(3, 3)).astype(np.float32),
         "a.bias": rng.normal(size=3).astype(np.float32),
         "b.weight": rng.normal(size=(2, 3)).astype(np.float32)}
    snapshot = {k: v.tobytes() for k, v in w.items()}
    spec = NoiseSpec(sigma=0.04, seed=2)
    out = perturb(w, spec, 0)
    assert {k: v.tobytes() for k, v in w.items()} == snapshot
    assert out["a.bias"].tobytes() == w["a.bias"].tobytes()
    assert not np.array_equal(out["a.weight"], w["a.weight"])
    noises = noise_map(w, spec, 0)
    # separate streams per tensor
    assert not np.array_equal(noises["a.weight"][:2].ravel()[:6], noises["b.weight"].ravel())
    np.testing.assert_array_equal(out["b.weight"], w["b.weight"] + noises["b.weight"])


def test_monte_carlo_mean_recovers_weight():
    w = {"x.weight": np.array([0.3], np.float32)}
    spec = NoiseSpec(sigma=0.04, seed=9)
    vals = np.array([perturb(w, spec, j)["x.weight"][0] for j in range(10_000)], np.float64)
    assert abs(vals.mean() - 0.3) < 4 * 0.04 / np.sqrt(10_000)
    assert DEPLOY == 0
