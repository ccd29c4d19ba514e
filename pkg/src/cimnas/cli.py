"""Command-line entry point.

Subcommands: prepare-data, train, analyze, eval, search, report, replay.
Every run except replay writes a manifest next to its outputs.  Failures
exit with status 2 and print one line ``error: <category>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .analysis import histogram_table, run_study
from .arch import CNNArch, ConvChoice, MLPArch, arch_from_dict, build_model, load_arch
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DATASETS, DESK_SUBSETS, Dataset, load_dataset, subset
from .errors import CimError, ConfigError
from .evaluation import STATISTICS, evaluate_distribution, reduce
from .manifest import RunManifest, Timer, output_hash
from .nas.search import SearchConfig, random_search, run_search
from .nas.space import SearchSpace, load_space, micro_space
from .noise import NoiseSpec
from .quant import QuantSpec
from .report import build_report
from .training import TrainConfig, train

log = logging.getLogger("cimnas")


def builtin_arch(name: str, input_shape):
    """Named desk-scale architectures, shaped for the dataset's images."""
    input_shape = tuple(input_shape)
    if name == "mlp":
        return MLPArch((256,), "relu", input_shape)
    if name == "cnn-small":
        q = QuantSpec(3, 6)
        return CNNArch((ConvChoice(8, 3, q),), (q, q), 32, input_shape)
    return None


def _resolve_arch(value: str, input_shape):
    arch = builtin_arch(value, input_shape)
    if arch is not None:
        return arch
    path = Path(value)
    if not path.exists():
        raise FileNotFoundError(f"architecture file {value} not found (built-ins: mlp, cnn-small)")
    return load_arch(path)


def _subset(ds: Dataset, n: int | None, seed: int, dataset: str, which: int) -> Dataset:
    if n is None:
        n = DESK_SUBSETS[dataset][which]
    if n >= len(ds):
        if n > len(ds):
            log.warning("%s %s split has %d examples; using all of them instead of %d", dataset, ds.split, len(ds), n)
        return ds
    return subset(ds, n, seed)


def _load_split(args, split: str, n: int | None) -> Dataset:
    ds = load_dataset(args.dataset, args.data_dir, split)
    return _subset(ds, n, args.seed, args.dataset, 0 if split == "train" else 1)


def _sidecar(checkpoint) -> Path:
    return Path(f"{checkpoint}.arch.json")


def _load_trained(checkpoint):
    if not Path(checkpoint).exists():
        raise FileNotFoundError(f"checkpoint {checkpoint} not found")
    if not _sidecar(checkpoint).exists():
        raise FileNotFoundError(f"architecture sidecar {_sidecar(checkpoint)} not found; it is written by `train`")
    side = json.loads(_sidecar(checkpoint).read_text())
    arch = arch_from_dict(side)
    model = build_model(arch, quantized=bool(side.get("quantized", False)), params=load_checkpoint(checkpoint))
    return arch, model


def _stem(path) -> str:
    p = str(path)
    return p[: -len(".json")] if p.endswith(".json") else p


# -- commands ------------------------------------------------------------------


def cmd_prepare_data(args) -> list[Path]:
    from .prepare import prepare_mnist, prepare_synthetic_cifar

    names = ["mnist", "cifar10-synthetic"] if args.dataset == "all" else [args.dataset]
    outputs = []
    for name in names:
        if name == "mnist":
            root = prepare_mnist(args.data_dir, seed=args.seed)
        elif name == "cifar10-synthetic":
            root = prepare_synthetic_cifar(args.data_dir, seed=args.seed)
        else:
            raise ConfigError(f"no offline preparation for {name!r}; place its files under {args.data_dir}")
        outputs += sorted(p for p in root.iterdir() if p.is_file())
        print(f"prepared {name} in {root}")
    return outputs


def cmd_train(args) -> list[Path]:
    train_set = _load_split(args, "train", args.train_subset)
    test_set = _load_split(args, "test", args.test_subset)
    arch = _resolve_arch(args.arch, train_set.input_shape)
    if tuple(arch.input_shape) != train_set.input_shape:
        raise ConfigError(f"architecture expects input {tuple(arch.input_shape)}, dataset gives {train_set.input_shape}")
    model = build_model(arch, seed=args.seed, quantized=args.quantize)
    cfg = TrainConfig(args.epochs, args.batch_size, args.lr, NoiseSpec(sigma=args.sigma, seed=args.seed),
                      args.quantize, args.seed)
    result = train(model, train_set, cfg, eval_set=test_set)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, model.params)
    side = _sidecar(out)
    side.write_text(json.dumps({**arch.to_dict(), "quantized": args.quantize}, indent=2, sort_keys=True) + "\n")
    curve = Path(f"{out}.train.json")
    curve.write_text(json.dumps({"kind": "train_log", "config": cfg.to_dict(), **result.to_dict(),
                                 "train_examples": len(train_set), "test_examples": len(test_set)},
                                indent=2, sort_keys=True) + "\n")
    for i, (loss, acc) in enumerate(zip(result.epoch_loss, result.clean_accuracy), 1):
        print(f"epoch {i}: loss {loss:.4f} clean accuracy {acc:.4f}")
    return [out, side, curve]


def cmd_analyze(args) -> list[Path]:
    _, model = _load_trained(args.checkpoint)
    test_set = load_dataset(args.dataset, args.data_dir, "test")
    report = run_study(model, test_set, NoiseSpec(sigma=args.sigma, seed=args.seed), K=args.samples,
                       n_bins=args.bins, input_index=args.input_index, post_softmax=args.post_softmax)
    doc = {**report.to_dict(), "label": args.label or Path(args.checkpoint).stem,
           "checkpoint": str(args.checkpoint), "checkpoint_sha256": output_hash(args.checkpoint)}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    table = Path(f"{_stem(out)}.hist.txt")
    table.write_text(histogram_table(report))
    print(f"mean chi-square {doc['mean_chi_square']}  mean MSE {doc['mean_mse']}  "
          f"degenerate elements {doc['degenerate_elements']}")
    return [out, table]


def cmd_eval(args) -> list[Path]:
    _, model = _load_trained(args.checkpoint)
    test_set = _load_split(args, "test", args.eval_subset)
    dist = evaluate_distribution(model, None, test_set, NoiseSpec(sigma=args.sigma, seed=args.seed), args.samples)
    doc = {**dist.to_dict(), "statistic": args.statistic, "reward": reduce(dist.samples, args.statistic),
           "checkpoint": str(args.checkpoint), "test_examples": len(test_set)}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"clean {dist.clean_accuracy:.4f}  mean {dist.mean:.4f}  p95min {dist.p95min:.4f}  max {dist.max:.4f}")
    return [out]


def cmd_search(args) -> list[Path]:
    if args.space in (None, "table"):
        space = SearchSpace()
    elif args.space == "micro":
        space = micro_space()
    else:
        space = load_space(args.space)
    train_set = _load_split(args, "train", args.train_subset)
    test_set = _load_split(args, "test", args.eval_subset)
    if tuple(space.input_shape) != train_set.input_shape:
        space = SearchSpace.from_dict({**space.to_dict(), "input_shape": list(train_set.input_shape)})
    cfg = SearchConfig(episodes=args.episodes, child_epochs=args.child_epochs, samples=args.samples,
                       statistic=args.statistic, sigma=args.sigma, seed=args.seed,
                       batch_size=args.batch_size, lr=args.lr)
    out_dir = Path(args.out_dir)
    runner = random_search if args.random else run_search
    result = runner(space, cfg, train_set, test_set, out_dir=out_dir)
    (out_dir / "search_config.json").write_text(json.dumps(
        {"kind": "search_config", "space": space.to_dict(), "config": cfg.to_dict(), "random": args.random,
         "train_examples": len(train_set), "test_examples": len(test_set)}, indent=2, sort_keys=True) + "\n")
    b = result.best
    print(f"best episode {b.episode} reward {b.reward:.4f} tokens {list(b.tokens)} ({len(result.history)} episodes)")
    return [out_dir / "history.jsonl", out_dir / "best_arch.json", out_dir / "search_config.json"]


def cmd_report(args) -> list[Path]:
    text, data = build_report(args.inputs)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        return [Path(args.out)]
    return []


def cmd_replay(args) -> list[Path]:
    manifest = RunManifest.load(args.manifest_path)
    prev = Path.cwd()
    os.chdir(manifest.cwd)
    try:
        status = main(manifest.argv)
    finally:
        os.chdir(prev)
    if status:
        raise ConfigError(f"replayed command exited with status {status}")
    mismatched = 0
    for path, expected in manifest.outputs.items():
        actual = output_hash(Path(manifest.cwd) / path)
        same = actual == expected
        mismatched += not same
        print(f"{'match' if same else 'MISMATCH'} {path} {actual}")
    if mismatched:
        raise DeterminismError(f"{mismatched} of {len(manifest.outputs)} outputs differ from the manifest")
    return []


class DeterminismError(CimError):
    category = "determinism"


# -- parser --------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class UsageError(CimError):
    category = "usage"


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--data-dir", default=os.environ.get("CIMNAS_DATA", "data"))
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="cimnas", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare-data", parents=[common], help="write offline datasets into --data-dir")
    p.add_argument("--dataset", default="all", choices=["all", "mnist", "cifar10-synthetic"])
    p.set_defaults(func=cmd_prepare_data, manifest=None)

    def dataset_flag(p):
        p.add_argument("--dataset", required=True, choices=sorted(DATASETS))

    def noise_flags(p, sigma=0.04):
        p.add_argument("--sigma", type=float, default=sigma)

    p = sub.add_parser("train", parents=[common], help="train a model, optionally with weight noise")
    p.add_argument("--arch", required=True, help="architecture JSON, or a built-in: mlp, cnn-small")
    dataset_flag(p)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.05)
    noise_flags(p, sigma=0.0)
    p.add_argument("--quantize", action="store_true")
    p.add_argument("--train-subset", type=int, default=None)
    p.add_argument("--test-subset", type=int, default=None)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train, manifest=lambda a: f"{a.out}.manifest.json")

    p = sub.add_parser("analyze", parents=[common], help="fit Gaussians to noise-induced output changes")
    p.add_argument("--checkpoint", required=True)
    dataset_flag(p)
    noise_flags(p)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--input-index", type=int, default=0)
    p.add_argument("--post-softmax", action="store_true")
    p.add_argument("--label", default=None, help="model name used to group reports")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze, manifest=lambda a: f"{_stem(a.out)}.manifest.json")

    p = sub.add_parser("eval", parents=[common], help="K-sample perturbed accuracy")
    p.add_argument("--checkpoint", required=True)
    dataset_flag(p)
    noise_flags(p)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--statistic", choices=STATISTICS, default="mean")
    p.add_argument("--eval-subset", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval, manifest=lambda a: f"{_stem(a.out)}.manifest.json")

    p = sub.add_parser("search", parents=[common], help="uncertainty-aware architecture search")
    p.add_argument("--space", default=None, help="space JSON, or 'table' (default) or 'micro'")
    dataset_flag(p)
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--child-epochs", type=int, default=1)
    p.add_argument("--samples", type=int, default=3)
    p.add_argument("--statistic", choices=STATISTICS, default="mean")
    noise_flags(p)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--train-subset", type=int, default=None)
    p.add_argument("--eval-subset", type=int, default=None)
    p.add_argument("--random", action="store_true", help="uniform random sampling baseline")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_search, manifest=lambda a: str(Path(a.out_dir) / "manifest.json"))

    p = sub.add_parser("report", parents=[common], help="tabulate eval, fit and history files")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", default=None, help="write the tables as JSON")
    p.set_defaults(func=cmd_report, manifest=lambda a: f"{_stem(a.out)}.manifest.json" if a.out else None)

    p = sub.add_parser("replay", help="re-run a manifest and verify its output hashes")
    p.add_argument("manifest_path", metavar="manifest")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_replay, manifest=None, seed=None)
    return parser


def _flags(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func", "manifest") and not callable(v)}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        with Timer() as timer:
            outputs = args.func(args)
        target = args.manifest(args) if callable(args.manifest) else args.manifest
        if target:
            noise = NoiseSpec(sigma=args.sigma, seed=args.seed).to_dict() if hasattr(args, "sigma") else None
            manifest = RunManifest(args.command, argv, os.getcwd(), _flags(args), {"seed": args.seed}, noise)
            manifest.record_outputs(outputs)
            manifest.wall_time = timer.elapsed
            manifest.save(target)
        return 0
    except CimError as exc:
        category, message = exc.category, str(exc)
    except FileNotFoundError as exc:
        category, message = "io", str(exc)
    except OSError as exc:
        category, message = "io", str(exc)
    print(f"error: {category}: {' '.join(message.split())}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
