import json

import numpy as np
import pytest
from scipy import stats

from cimnas.arch import load_arch
from cimnas.errors import ConfigError
from cimnas.evaluation import EvalDistribution
from cimnas.nas import Controller, SearchConfig, SearchSpace, check_termination, compute_reward, run_search
from cimnas.nas.search import load_history, random_search
from cimnas.nas.space import micro_space
from cimnas.noise import NoiseSpec


def _dist(samples):
    return EvalDistribution(list(samples), max(samples), NoiseSpec())


def test_table_space_slots():
    space = SearchSpace()
    assert len(space.slots) == 28
    assert space.cardinalities[:4] == [4, 4, 4, 7] and space.cardinalities[-2:] == [4, 7]
    assert space.size == (4 * 4 * 4 * 7) ** 6 * (4 * 7) ** 2


def test_space_validation():
    with pytest.raises(ConfigError):
        SearchSpace(channels=())
    with pytest.raises(ConfigError):
        SearchSpace(filter_sizes=(2, 3))
    with pytest.raises(ConfigError):
        SearchSpace(frac_bits=(7,))
    with pytest.raises(ConfigError):
        SearchSpace.from_dict({"conv_layers": 1, "bogus": 3})
    assert SearchSpace.from_dict(micro_space().to_dict()) == micro_space()


def test_encode_decode_round_trip():
    space = SearchSpace()
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        tokens = space.random_tokens(rng)
        arch = space.decode(tokens)
        assert space.encode(arch) == tokens
    with pytest.raises(ConfigError):
        space.decode([0] * 27)
    with pytest.raises(ConfigError):
        space.decode([9] * 28)


def test_uniform_initial_policy():
    space = micro_space()
    ctrl = Controller(space.cardinalities, seed=0)
    rng = np.random.default_rng(1)
    n = 10_000
    counts = np.zeros((len(space.cardinalities), 2))
    for _ in range(n):
        s = ctrl.sample(rng)
        counts[np.arange(len(s.tokens)), s.tokens] += 1
        assert s.log_prob == pytest.approx(len(s.tokens) * np.log(0.5), abs=1e-5)
    sd = np.sqrt(n * 0.25)
    assert np.all(np.abs(counts - n / 2) <= 3 * sd + 1)


def test_degenerate_space_log_prob_zero():
    ctrl = Controller([1, 1, 1], seed=0)
    s = ctrl.sample(np.random.default_rng(0))
    assert s.tokens == (0, 0, 0) and s.log_prob == 0.0


def test_zero_advantage_leaves_parameters():
    ctrl = Controller([3, 2], seed=0)
    ctrl.update((1, 0), 0.5)  # first reward seeds the baseline
    before = {k: v.copy() for k, v in ctrl.params.items()}
    ctrl.baseline = 0.7
    ctrl.update((2, 1), 0.7)
    assert all(np.array_equal(before[k], ctrl.params[k]) for k in before)
    assert ctrl.baseline == pytest.approx(0.7)


def test_positive_advantage_raises_sequence_probability():
    ctrl = Controller([3, 4, 2], seed=1)
    ctrl.baseline = 0.2
    tokens = (2, 0, 1)
    before = ctrl.log_prob(tokens)
    adv = ctrl.update(tokens, 0.9)
    assert adv == pytest.approx(0.7)
    assert ctrl.log_prob(tokens) > before
    assert ctrl.baseline == pytest.approx(0.95 * 0.2 + 0.05 * 0.9)


def test_head_shapes():
    ctrl = Controller(SearchSpace().cardinalities)
    for k, n in enumerate(SearchSpace().cardinalities):
        assert ctrl.params[f"head{k}.weight"].shape == (n, 64)
    assert ctrl.params["embed0"].shape == (4, 32)


def test_bandit_convergence():
    hits = 0
    for seed in range(5):
        ctrl = Controller([2], seed=seed)
        rng = np.random.default_rng(seed)
        for _ in range(200):
            s = ctrl.sample(rng)
            ctrl.update(s.tokens, 1.0 if s.tokens[0] == 0 else 0.0)
            if ctrl.probabilities(0)[0] > 0.9:
                hits += 1
                break
    assert hits >= 4


def test_compute_reward():
    assert all(compute_reward(_dist([0.7] * 4), s) == 0.7 for s in ("mean", "p95min", "max"))
    assert compute_reward(_dist([0.6, 0.8]), "mean") == pytest.approx(0.7)
    assert compute_reward(_dist([i / 100 for i in range(1, 101)]), "p95min") == 0.05


def test_check_termination():
    assert not check_termination([], 2000)
    assert check_termination([(1, 2)] * 5, 2000)
    assert not check_termination([(1, 2)] * 4 + [(2, 2)], 2000)
    assert not check_termination([(1, 2)] * 4, 2000)
    assert check_termination([(0,), (1,)], 2)


def _fake_child(space):
    """Reward = fraction of tokens equal to 1, with a per-episode jitter."""

    def run(arch, episode):
        score = np.mean(arch.tokens)
        jitter = np.random.default_rng(episode).uniform(-0.02, 0.02, 3)
        return _dist(np.clip(score * 0.9 + 0.05 + jitter, 0, 1)), 7

    return run


def test_search_smoke_and_history(tmp_path):
    space = micro_space()
    cfg = SearchConfig(episodes=20, samples=3, seed=3)
    res = run_search(space, cfg, out_dir=tmp_path, child_fn=_fake_child(space))
    assert len(res.history) == 20
    hist = load_history(tmp_path / "history.jsonl")
    assert [h.episode for h in hist] == list(range(20))
    assert all(h.reward == compute_reward(EvalDistribution.from_dict(h.eval), "mean") for h in hist)
    assert sum(h.train_batches for h in hist) == 20 * 7
    best = load_arch(tmp_path / "best_arch.json")
    assert space.encode(best) == res.best.tokens
    assert res.best.reward == max(h.reward for h in hist)


def test_search_deterministic(tmp_path):
    space = micro_space()
    cfg = SearchConfig(episodes=15, seed=9)
    a = run_search(space, cfg, out_dir=tmp_path / "a", child_fn=_fake_child(space))
    b = run_search(space, cfg, out_dir=tmp_path / "b", child_fn=_fake_child(space))
    strip = lambda p: [{k: v for k, v in json.loads(l).items() if k != "wall_time"} for l in p.read_text().splitlines()]
    assert strip(tmp_path / "a" / "history.jsonl") == strip(tmp_path / "b" / "history.jsonl")


def test_failed_child_recorded_and_search_continues():
    space = micro_space()

    def flaky(arch, episode):
        if episode % 3 == 0:
            raise FloatingPointError("loss diverged")
        return _dist([0.5, 0.5]), 1

    res = run_search(space, SearchConfig(episodes=6, seed=0), child_fn=flaky)
    assert len(res.history) == 6
    failed = [h for h in res.history if h.failed]
    assert [h.episode for h in failed] == [0, 3] and all(h.reward == 0 for h in failed)


def test_repeat_termination_stops_early():
    space = SearchSpace(conv_layers=0, fc_layers=1, int_bits=(0,), frac_bits=(0,))
    res = run_search(space, SearchConfig(episodes=50), child_fn=lambda a, e: (_dist([0.2]), 1))
    assert len(res.history) == 5


def test_rl_beats_random_on_fake_reward():
    space = micro_space()
    cfg = SearchConfig(episodes=60, seed=1)
    rl = run_search(space, cfg, child_fn=_fake_child(space))
    late = np.mean([h.reward for h in rl.history[-15:]])
    rnd = random_search(space, cfg, child_fn=_fake_child(space))
    assert late > np.mean([h.reward for h in rnd.history])


@pytest.mark.slow
def test_micro_search_with_real_children(data_dir, tmp_path):
    from cimnas.data import load_dataset, subset

    train_set = subset(load_dataset("cifar10-synthetic", data_dir, "train"), 200, 0)
    test_set = subset(load_dataset("cifar10-synthetic", data_dir, "test"), 100, 0)
    res = run_search(micro_space(), SearchConfig(episodes=3, samples=2), train_set, test_set, out_dir=tmp_path)
    assert len(res.history) == 3 and not any(h.failed for h in res.history)
    assert all(h.train_batches == 7 for h in res.history)
