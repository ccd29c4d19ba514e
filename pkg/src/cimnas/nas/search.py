"""The search loop: sample, noise-train, evaluate under noise, reward, update.

Every episode is appended to ``history.jsonl`` as it completes and the
best architecture is written to ``best_arch.json`` in the format ``train``
reads.  Seeds for each child derive from ``(master seed, episode)``, so a
search replays bit-for-bit.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..arch import build_model, save_arch
from ..data import Dataset
from ..errors import CimError, ConfigError
from ..evaluation import STATISTICS, EvalDistribution, evaluate_distribution, reduce
from ..noise import NoiseSpec
from ..training import TrainConfig, train
from .controller import Controller
from .space import SearchSpace

log = logging.getLogger(__name__)

FULL_SCALE = {"episodes": 2000, "child_epochs": 15, "samples": (5, 100)}


@dataclass(frozen=True)
class SearchConfig:
    episodes: int = 50
    child_epochs: int = 1
    samples: int = 3
    statistic: str = "mean"
    sigma: float = 0.04
    seed: int = 0
    batch_size: int = 32
    lr: float = 0.05
    quantize: bool = True
    repeat_limit: int = 5
    controller_lr: float = 5e-3
    hidden: int = 64
    embedding: int = 32
    baseline_decay: float = 0.95

    def __post_init__(self):
        if self.statistic not in STATISTICS:
            raise ConfigError(f"unknown statistic {self.statistic!r}; choose from {STATISTICS}")
        if self.episodes < 1 or self.child_epochs < 1 or self.samples < 1:
            raise ConfigError("episodes, child_epochs and samples must all be >= 1")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpisodeRecord:
    episode: int
    tokens: tuple[int, ...]
    arch: dict
    reward: float
    eval: dict | None = None
    train_batches: int = 0
    child_epochs: int = 0
    failed: bool = False
    error: str | None = None
    advantage: float | None = None
    baseline: float | None = None
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tokens"] = list(self.tokens)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeRecord":
        d = dict(d)
        d["tokens"] = tuple(d["tokens"])
        return cls(**d)


@dataclass
class SearchResult:
    best: EpisodeRecord
    history: list[EpisodeRecord] = field(default_factory=list)
    controller: Controller | None = None


ChildFn = Callable[[object, int], tuple[EvalDistribution, int]]


def compute_reward(dist: EvalDistribution, statistic: str) -> float:
    return reduce(dist.samples, statistic)


def check_termination(history, episode_limit: int, repeat: int = 5) -> bool:
    """True once ``repeat`` consecutive identical samples occur or the limit is hit."""
    if len(history) >= episode_limit:
        return True
    if repeat < 1 or len(history) < repeat:
        return False
    tail = [tuple(h.tokens if hasattr(h, "tokens") else h) for h in history[-repeat:]]
    return all(t == tail[0] for t in tail)


def child_seed(master: int, episode: int) -> int:
    return int(np.random.SeedSequence([master, episode]).generate_state(1)[0])


def make_child_fn(cfg: SearchConfig, train_set: Dataset, test_set: Dataset, master_seed: int) -> ChildFn:
    """Noise-train one child and evaluate it ``cfg.samples`` times."""

    def run(arch, episode: int) -> tuple[EvalDistribution, int]:
        seed = child_seed(master_seed, episode)
        model = build_model(arch, seed=seed, quantized=cfg.quantize)
        tc = TrainConfig(epochs=cfg.child_epochs, batch_size=cfg.batch_size, lr=cfg.lr,
                         noise=NoiseSpec(sigma=cfg.sigma, seed=seed), quantize=cfg.quantize, seed=seed)
        result = train(model, train_set, tc, eval_set=test_set)
        # deployment noise uses a seed unrelated to the training noise
        dist = evaluate_distribution(model, None, test_set, NoiseSpec(sigma=cfg.sigma, seed=seed ^ 0x5EED), cfg.samples)
        return dist, result.batches

    return run


def _episode(space: SearchSpace, tokens, episode: int, child_fn: ChildFn, cfg: SearchConfig) -> EpisodeRecord:
    start = time.perf_counter()
    arch = space.decode(tokens)
    record = EpisodeRecord(episode, tuple(tokens), arch.to_dict(), 0.0, child_epochs=cfg.child_epochs)
    try:
        dist, batches = child_fn(arch, episode)
        record.eval = dist.to_dict()
        record.train_batches = batches
        record.reward = compute_reward(dist, cfg.statistic)
    except (CimError, ArithmeticError, ValueError) as exc:
        log.warning("episode %d: child failed: %s", episode, exc)
        record.failed, record.error = True, f"{type(exc).__name__}: {exc}"
    record.wall_time = time.perf_counter() - start
    return record


class _HistoryWriter:
    def __init__(self, out_dir):
        self.path = None
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            self.path = Path(out_dir) / "history.jsonl"
            self.path.write_text("")

    def append(self, record: EpisodeRecord) -> None:
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def _finish(history: list[EpisodeRecord], space: SearchSpace, out_dir) -> EpisodeRecord:
    # earliest episode wins ties
    best = max(history, key=lambda r: (r.reward, -r.episode))
    if out_dir is not None:
        save_arch(Path(out_dir) / "best_arch.json", space.decode(best.tokens))
    return best


def run_search(space: SearchSpace, cfg: SearchConfig, train_set: Dataset | None = None,
               test_set: Dataset | None = None, out_dir=None, child_fn: ChildFn | None = None) -> SearchResult:
    if child_fn is None:
        if train_set is None or test_set is None:
            raise ConfigError("run_search needs datasets or a child_fn")
        child_fn = make_child_fn(cfg, train_set, test_set, cfg.seed)
    controller = Controller(space.cardinalities, cfg.hidden, cfg.embedding, cfg.controller_lr,
                            cfg.baseline_decay, seed=cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    writer = _HistoryWriter(out_dir)
    history: list[EpisodeRecord] = []
    while not check_termination(history, cfg.episodes, cfg.repeat_limit):
        sample = controller.sample(rng)
        record = _episode(space, sample.tokens, len(history), child_fn, cfg)
        record.advantage = controller.update(sample.tokens, record.reward)
        record.baseline = controller.baseline
        history.append(record)
        writer.append(record)
        log.info("episode %d reward %.4f tokens %s", record.episode, record.reward, record.tokens)
    return SearchResult(_finish(history, space, out_dir), history, controller)


def random_search(space: SearchSpace, cfg: SearchConfig, train_set: Dataset | None = None,
                  test_set: Dataset | None = None, out_dir=None, child_fn: ChildFn | None = None) -> SearchResult:
    """Equal-budget baseline: ``cfg.episodes`` uniformly random architectures."""
    if child_fn is None:
        if train_set is None or test_set is None:
            raise ConfigError("random_search needs datasets or a child_fn")
        child_fn = make_child_fn(cfg, train_set, test_set, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 2])
    writer = _HistoryWriter(out_dir)
    history = []
    for episode in range(cfg.episodes):
        record = _episode(space, space.random_tokens(rng), episode, child_fn, cfg)
        history.append(record)
        writer.append(record)
    return SearchResult(_finish(history, space, out_dir), history)


def load_history(path) -> list[EpisodeRecord]:
    records = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(EpisodeRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise ConfigError(f"{path}:{n}: malformed episode record: {exc}") from exc
    return records
