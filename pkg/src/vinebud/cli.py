"""Command line entry point: the pipeline stages as subcommands.

Stages share one output directory so intermediate artifacts are plain
cacheable files: `extract` writes descriptors.vbds, `vocab` turns those
into vocab.vbvo, `train`/`tune` read both, `scan` reads the saved model.
`evaluate` and `heatmap` run the full repeated-training protocol in one
go. Every run drops a config.<subcommand>.json manifest with the fully
resolved settings next to its outputs; with fixed seeds two runs of the
same command produce byte-identical artifacts.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import bof, evaluation, reports, svm
from .bof import KMeansConfig
from .corpus import (
    LABEL_BUD,
    BalanceConfig,
    balance,
    load_manifest,
)
from .errors import VinebudError
from .evaluation import DEFAULT_CS, DEFAULT_GAMMAS, ExperimentConfig, TuningGrid
from .imaging import Rect, crop, load_gray
from .scanwin import ScanConfig, scan_classify
from .svm import SvmConfig
from . import sift

log = logging.getLogger(__name__)

ENV_CORPUS = "VINEBUD_CORPUS"

DESCRIPTORS_FILE = "descriptors.vbds"
VOCAB_FILE = "vocab.vbvo"
MODEL_FILE = "model.vbsm"


class _UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _floats_csv(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty value list")
    return values


def _pair(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    try:
        if len(parts) == 1:
            side = int(parts[0])
            pair = (side, side)
        elif len(parts) == 2:
            pair = (int(parts[0]), int(parts[1]))
        else:
            raise ValueError
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or WxH, got {text!r}")
    if pair[0] < 1 or pair[1] < 1:
        raise argparse.ArgumentTypeError(f"sides must be >= 1, got {text!r}")
    return pair


def _host_port(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    try:
        return host, int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad port in {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vinebud",
        description="Bud patch classification pipeline.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    corpus = argparse.ArgumentParser(add_help=False)
    corpus.add_argument(
        "--corpus",
        default=os.environ.get(ENV_CORPUS),
        help=f"corpus root directory (default: ${ENV_CORPUS})",
    )
    out = argparse.ArgumentParser(add_help=False)
    out.add_argument("--out", default="vinebud-run", help="output directory")
    seed = argparse.ArgumentParser(add_help=False)
    seed.add_argument("--seed", type=int, default=0)
    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument(
        "--grid-gamma",
        type=_floats_csv,
        default=None,
        help="comma-separated gamma values (single value = fixed)",
    )
    grid.add_argument(
        "--grid-c",
        type=_floats_csv,
        default=None,
        help="comma-separated C values (single value = fixed)",
    )
    rate = argparse.ArgumentParser(add_help=False)
    rate.add_argument("--balance-rate", type=_positive_int, default=1)

    p = sub.add_parser(
        "extract", parents=[corpus, out], help="extract patch descriptors"
    )
    p.add_argument("--workers", type=_positive_int, default=1)

    p = sub.add_parser("vocab", parents=[out, seed], help="build a vocabulary")
    p.add_argument("--vocab-size", type=_positive_int, default=25)

    sub.add_parser(
        "train", parents=[corpus, out, seed, grid, rate], help="train one classifier"
    )

    p = sub.add_parser(
        "tune", parents=[corpus, out, seed, grid, rate], help="grid-search gamma and C"
    )
    p.add_argument("--folds", type=_positive_int, default=5)

    for name, text in (
        ("evaluate", "run the repeated-training experiment"),
        ("heatmap", "localization sensitivity grid"),
    ):
        p = sub.add_parser(name, parents=[corpus, out, seed, grid, rate], help=text)
        p.add_argument("--vocab-size", type=_positive_int, default=25)
        p.add_argument("--repetitions", type=_positive_int, default=10)
        p.add_argument("--folds", type=_positive_int, default=5)

    p = sub.add_parser("scan", parents=[out], help="classify windows over an image")
    p.add_argument("image", help="image file to scan")
    p.add_argument("--window", type=_pair, default=(100, 100))
    p.add_argument("--stride", type=_pair, default=(50, 50))

    p = sub.add_parser("serve", parents=[corpus], help="run the annotation backend")
    p.add_argument("--listen", type=_host_port, default=("127.0.0.1", 8000))

    return parser


def _require_corpus(args) -> Path:
    if not args.corpus:
        raise _UsageError(f"--corpus is required (or set ${ENV_CORPUS})")
    root = Path(args.corpus)
    if not root.is_dir():
        raise _UsageError(f"corpus root {root} is not a directory")
    return root


def _write_config(args, out_dir: Path) -> None:
    resolved = {"format": "vinebud-run-config", "version": 1}
    for key, value in sorted(vars(args).items()):
        if isinstance(value, Path):
            value = str(value)
        resolved[key] = value
    path = out_dir / f"config.{args.subcommand}.json"
    path.write_text(json.dumps(resolved, sort_keys=True, indent=2) + "\n")


def _extract_image_job(root: str, image: str, items) -> list[tuple[str, np.ndarray]]:
    pixels = load_gray(Path(root) / image)
    out = []
    for patch_id, (x, y, w, h) in items:
        descs = sift.extract(crop(pixels, Rect(x, y, w, h)))
        if descs:
            out.append((patch_id, np.stack([d.vector for d in descs])))
        else:
            out.append((patch_id, np.zeros((0, 128))))
    return out


def _extract_all(root: Path, patches, workers: int) -> dict[str, np.ndarray]:
    if workers <= 1:
        return evaluation.extract_patch_descriptors(root, patches)
    groups: dict[str, list] = {}
    for p in patches:
        groups.setdefault(p.source_image, []).append(
            (p.id, (p.rect.x, p.rect.y, p.rect.w, p.rect.h))
        )
    results: dict[str, np.ndarray] = {}
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(_extract_image_job, str(root), image, items)
            for image, items in groups.items()
        ]
        for future in futures:
            results.update(future.result())
    return {p.id: results[p.id] for p in patches}


def _load_stage(out_dir: Path, name: str) -> Path:
    path = out_dir / name
    if not path.is_file():
        raise _UsageError(f"{path} not found; run the producing stage first")
    return path


def _single(values, default: float, flag: str) -> float:
    if values is None:
        return default
    if len(values) != 1:
        raise _UsageError(f"{flag} takes a single value here, got {len(values)}")
    return values[0]


def _cmd_extract(args, out_dir: Path) -> int:
    root = _require_corpus(args)
    corp = load_manifest(root)
    sets = _extract_all(root, corp.patches, args.workers)
    bof.save_descriptor_sets(sets, out_dir / DESCRIPTORS_FILE)
    log.info("wrote %s (%d patches)", out_dir / DESCRIPTORS_FILE, len(sets))
    return 0


def _cmd_vocab(args, out_dir: Path) -> int:
    sets = bof.load_descriptor_sets(_load_stage(out_dir, DESCRIPTORS_FILE))
    stacks = [v for v in sets.values() if v.shape[0]]
    if not stacks:
        raise VinebudError("descriptor file holds no descriptors")
    points = np.concatenate(stacks)
    vocabulary, _ = bof.kmeans(points, KMeansConfig(k=args.vocab_size, seed=args.seed))
    bof.save_vocabulary(vocabulary, out_dir / VOCAB_FILE)
    log.info("wrote %s (k=%d)", out_dir / VOCAB_FILE, vocabulary.k)
    return 0


def _load_encoded(args, out_dir: Path):
    root = _require_corpus(args)
    corp = load_manifest(root)
    sets = bof.load_descriptor_sets(_load_stage(out_dir, DESCRIPTORS_FILE))
    vocabulary = bof.load_vocabulary(_load_stage(out_dir, VOCAB_FILE))
    missing = [p.id for p in corp.patches if p.id not in sets]
    if missing:
        raise VinebudError(
            f"{len(missing)} corpus patches missing from descriptor file "
            f"(first: {missing[0]})"
        )
    return corp, sets, vocabulary


def _cmd_train(args, out_dir: Path) -> int:
    corp, sets, vocabulary = _load_encoded(args, out_dir)
    gamma = _single(args.grid_gamma, 2.0**-7, "--grid-gamma")
    c = _single(args.grid_c, 2.0**10, "--grid-c")
    picked = balance(
        corp.patches, BalanceConfig(R=args.balance_rate, seed=args.seed)
    )
    x = evaluation.encode_patches(vocabulary, sets, picked)
    y = evaluation.patch_labels(picked)
    model = svm.train(x, y, SvmConfig(C=c, gamma=gamma, seed=args.seed))
    svm.save_model(model, out_dir / MODEL_FILE)
    log.info(
        "wrote %s (%d support vectors)", out_dir / MODEL_FILE, len(model.dual_coefs)
    )
    return 0


def _cmd_tune(args, out_dir: Path) -> int:
    corp, sets, vocabulary = _load_encoded(args, out_dir)
    x = evaluation.encode_patches(vocabulary, sets, corp.patches)
    y = evaluation.patch_labels(corp.patches)
    grid = TuningGrid(
        gammas=args.grid_gamma or DEFAULT_GAMMAS,
        cs=args.grid_c or DEFAULT_CS,
        folds=args.folds,
    )
    result = evaluation.cross_validate_grid(
        x,
        y,
        grid,
        seed=args.seed,
        balance=BalanceConfig(R=args.balance_rate, seed=args.seed),
    )
    rows = []
    for i, g in enumerate(result.gammas):
        for j, c in enumerate(result.cs):
            best = g == result.best_gamma and c == result.best_c
            rows.append(
                ["%r" % g, "%r" % c, "%.6f" % result.errors[i, j], str(int(best))]
            )
    table = out_dir / "tuning.tsv"
    lines = ["# vinebud-tuning 1", "\t".join(("gamma", "c", "error", "best"))]
    lines += ["\t".join(row) for row in rows]
    table.write_text("\n".join(lines) + "\n")
    log.info(
        "wrote %s (best gamma=%g C=%g)", table, result.best_gamma, result.best_c
    )
    return 0


def _experiment_config(args) -> ExperimentConfig:
    tuning = None
    grid = TuningGrid(folds=args.folds)
    if args.grid_gamma and args.grid_c and (
        len(args.grid_gamma) == 1 and len(args.grid_c) == 1
    ):
        tuning = (args.grid_gamma[0], args.grid_c[0])
    elif args.grid_gamma or args.grid_c:
        grid = TuningGrid(
            gammas=args.grid_gamma or DEFAULT_GAMMAS,
            cs=args.grid_c or DEFAULT_CS,
            folds=args.folds,
        )
    return ExperimentConfig(
        vocab_size=args.vocab_size,
        balance_rate=args.balance_rate,
        repetitions=args.repetitions,
        seed=args.seed,
        grid=grid,
        tuning=tuning,
    )


def _cmd_evaluate(args, out_dir: Path) -> int:
    root = _require_corpus(args)
    corp = load_manifest(root)
    result = evaluation.repeated_training(root, corp, _experiment_config(args))
    paths = reports.write_metrics_report(result.per_rep, out_dir)
    bof.save_vocabulary(result.vocab, out_dir / VOCAB_FILE)
    svm.save_model(result.models[0], out_dir / MODEL_FILE)
    f_mean, f_sd = result.summary()["f_measure"]
    log.info("wrote %s (f=%.4f sd=%.4f)", paths["table"], f_mean, f_sd)
    return 0


def _cmd_heatmap(args, out_dir: Path) -> int:
    root = _require_corpus(args)
    corp = load_manifest(root)
    result = evaluation.repeated_training(root, corp, _experiment_config(args))
    by_id = {p.id: p for p in corp.patches}
    buds = [by_id[i] for i in result.test_ids if by_id[i].label == LABEL_BUD]
    hm = evaluation.heatmap_experiment(
        root, result.models, result.vocab, buds, seed=args.seed
    )
    paths = reports.write_heatmap_report(hm, out_dir)
    log.info(
        "wrote %s (%d cells populated)", paths["table"], int((~hm.discarded).sum())
    )
    return 0


def _cmd_scan(args, out_dir: Path) -> int:
    image_path = Path(args.image)
    if not image_path.is_file():
        raise _UsageError(f"image {image_path} not found")
    vocabulary = bof.load_vocabulary(_load_stage(out_dir, VOCAB_FILE))
    model = svm.load_model(_load_stage(out_dir, MODEL_FILE))
    image = load_gray(image_path)
    windows = scan_classify(
        image, vocabulary, model, ScanConfig(window=args.window, stride=args.stride)
    )
    paths = reports.write_scan_report(image, windows, out_dir)
    positives = sum(1 for w in windows if w.label == LABEL_BUD)
    log.info("wrote %s (%d/%d positive)", paths["table"], positives, len(windows))
    return 0


def _cmd_serve(args, out_dir: Path) -> int:
    import uvicorn

    from .service import create_app

    root = _require_corpus(args)
    host, port = args.listen
    uvicorn.run(create_app(root), host=host, port=port, log_level="info")
    return 0


_COMMANDS = {
    "extract": _cmd_extract,
    "vocab": _cmd_vocab,
    "train": _cmd_train,
    "tune": _cmd_tune,
    "evaluate": _cmd_evaluate,
    "heatmap": _cmd_heatmap,
    "scan": _cmd_scan,
    "serve": _cmd_serve,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    out_dir = Path(getattr(args, "out", "."))
    try:
        if args.subcommand != "serve":
            out_dir.mkdir(parents=True, exist_ok=True)
            _write_config(args, out_dir)
        return _COMMANDS[args.subcommand](args, out_dir)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (VinebudError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
