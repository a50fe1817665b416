"""Command-line entry point.

Every option can also come from a ``key = value`` config file passed with
``--config``; keys are option names with dashes or underscores. Flags on
the command line win over the file.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import formats
from .catalog import (
    FEATURE_FILE,
    SyntheticSpec,
    catalog_from_ids,
    generate_synthetic,
    load_catalog,
    query_reference_split,
    save_catalog,
)
from .encoder import CatalogView, EncoderSpec, TrainConfig, encoder_forward, train
from .errors import ProtocoverError
from .evalmetrics import evaluate_lookup, r_precision, write_per_query, write_report
from .liveid import WindowingConfig, identify, write_candidates, write_timeline
from .metric import TripletConfig
from .pitchrep import PreprocessConfig, SalienceMatrix, pitch_histogram, preprocess, retained_frames
from .retrieval import CLASSES, SAMPLES, build_store


class UsageError(ProtocoverError):
    pass


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _positive_int(text) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _int_list(text) -> tuple:
    text = str(text).strip()
    return tuple(_positive_int(t) for t in text.split(",") if t.strip()) if text else ()


def _float_list(text) -> tuple:
    return tuple(float(t) for t in str(text).split(","))


def read_config(path) -> Dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    values = {}
    with open(path, encoding="utf-8") as f:
        for n, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


# -- option table -------------------------------------------------------------

_SHARED = [
    ("--config", dict(type=str, help="key = value config file")),
    ("--seed", dict(type=_nonneg_int, default=0, help="seed for all randomness")),
    ("--threads", dict(type=_positive_int, default=1, help="worker thread cap")),
    ("--out", dict(type=str, default=".", help="output directory")),
]

_PREPROCESS = [
    ("--n-octaves", dict(type=_positive_int, default=5)),
    ("--target-frames", dict(type=_positive_int, default=1024)),
    ("--max-seconds", dict(type=float, default=180.0)),
]

COMMANDS = {
    "synth": [
        ("--works", dict(type=_positive_int, default=200)),
        ("--dim", dict(type=_positive_int, default=32)),
        ("--separation", dict(type=float, default=1.0)),
        ("--noise", dict(type=float, default=0.1)),
        ("--transposition-max", dict(type=_nonneg_int, default=0)),
        ("--cover-weights", dict(type=_float_list, default=(1.0, 1.0, 1.0))),
    ],
    "train": [
        ("--catalog", dict(type=str, required=True)),
        ("--loss", dict(choices=["standard", "prototypical"], default="prototypical")),
        ("--margin", dict(type=float, default=1.0)),
        ("--mining", dict(choices=["semi_hard", "all_valid"], default="semi_hard")),
        ("--steps", dict(type=_nonneg_int, default=1000)),
        ("--lr", dict(type=float, default=0.01)),
        ("--momentum", dict(type=float, default=0.9)),
        ("--batch-classes", dict(type=_positive_int, default=12)),
        ("--samples-per-class", dict(type=_positive_int, default=3)),
        ("--embed-dim", dict(type=_positive_int, default=32)),
        ("--hidden", dict(type=_int_list, default=())),
        ("--nonlinearity", dict(choices=["rectifier", "tanh"], default="rectifier")),
        ("--normalize", dict(type=_bool, default=False)),
        *_PREPROCESS,
    ],
    "embed": [
        ("--catalog", dict(type=str, required=True)),
        ("--model", dict(type=str, required=True)),
        *_PREPROCESS,
    ],
    "eval-lookup": [
        ("--embeddings", dict(type=str, required=True)),
        ("--mode", dict(choices=["samples", "classes", "both"], default="both")),
        ("--k", dict(type=_positive_int, default=10)),
    ],
    "live-id": [
        ("--concert", dict(type=str, required=True)),
        ("--embeddings", dict(type=str, required=True)),
        ("--model", dict(type=str, required=True)),
        ("--truth", dict(type=str, default="", help="comma-separated ground-truth track ids")),
        ("--window-seconds", dict(type=float, default=180.0)),
        ("--hop-seconds", dict(type=float, default=30.0)),
        ("--min-consecutive", dict(type=_positive_int, default=3)),
        *_PREPROCESS,
    ],
    "histogram": [
        ("--inputs", dict(type=str, nargs="+", required=True, help="SAL1 files")),
    ],
    "preprocess": [
        ("--inputs", dict(type=str, nargs="+", required=True, help="SAL1 files")),
        *_PREPROCESS,
    ],
}


def build_parser():
    parser = argparse.ArgumentParser(prog="protocover", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {}
    for name, options in COMMANDS.items():
        p = sub.add_parser(name)
        specs[name] = {}
        for flag, kw in _SHARED + options:
            kw = dict(kw)
            dest = flag[2:].replace("-", "_")
            specs[name][dest] = (kw.pop("default", None), kw.pop("required", False), kw)
            p.add_argument(flag, dest=dest, default=None, **kw)
    return parser, specs


def _convert(key, raw, kw):
    conv = kw.get("type", str)
    try:
        if kw.get("nargs") == "+":
            value = [conv(v) for v in raw.replace(",", " ").split()]
        else:
            value = conv(raw)
    except (ValueError, argparse.ArgumentTypeError) as e:
        raise UsageError(f"config key {key!r}: {e}") from None
    if "choices" in kw and value not in kw["choices"]:
        raise UsageError(f"config key {key!r}: {raw!r} not in {kw['choices']}")
    return value


def resolve(args, specs) -> argparse.Namespace:
    """Merge flags over config-file values over defaults."""
    table = specs[args.command]
    file_values = read_config(args.config) if args.config else {}
    for key, raw in file_values.items():
        if key not in table or key == "config":
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        if getattr(args, key) is None:
            setattr(args, key, _convert(key, raw, table[key][2]))
    for dest, (default, required, _) in table.items():
        if getattr(args, dest) is None:
            if required:
                raise UsageError(f"--{dest.replace('_', '-')} is required")
            setattr(args, dest, default)
    return args


# -- helpers ------------------------------------------------------------------

def _preprocess_cfg(args) -> PreprocessConfig:
    return PreprocessConfig(n_octaves=args.n_octaves, target_frames=args.target_frames,
                            max_seconds=args.max_seconds)


def load_features(catalog, base_dir, pcfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Resolve every track locator to a flat feature row.

    ``file#row`` selects a row of an EMB1 matrix; any other locator is a
    SAL1 salience file that gets preprocessed and flattened.
    """
    base_dir = Path(base_dir)
    matrices = {}
    rows = []
    for t in catalog.tracks:
        if "#" in t.path:
            name, row = t.path.rsplit("#", 1)
            if name not in matrices:
                matrices[name] = formats.read_embeddings(base_dir / name)
            rows.append(matrices[name][int(row)])
        else:
            rows.append(preprocess(formats.read_salience(base_dir / t.path), pcfg).data.ravel())
    return np.array(rows)


def _set_threads(n):
    try:
        import numba
    except ImportError:  # pragma: no cover
        return
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands -----------------------------------------------------------------

def cmd_synth(args) -> None:
    spec = SyntheticSpec(n_works=args.works, cover_weights=args.cover_weights, feature_dim=args.dim,
                         work_separation=args.separation, cover_noise=args.noise,
                         transposition_max=args.transposition_max, seed=args.seed)
    catalog, features = generate_synthetic(spec)
    out = _out_dir(args)
    save_catalog(catalog, out / "catalog.csv")
    formats.write_embeddings(out / FEATURE_FILE, features)
    print(f"works={len(catalog.works)} tracks={len(catalog)} "
          f"covers_per_work={catalog.covers_per_work():.3f} dim={args.dim}")


def cmd_train(args) -> None:
    catalog = load_catalog(args.catalog)
    features = load_features(catalog, Path(args.catalog).parent, _preprocess_cfg(args))
    spec = EncoderSpec(features.shape[1], args.hidden, args.embed_dim, args.nonlinearity, args.normalize)
    cfg = TrainConfig(batch_classes=args.batch_classes, samples_per_class=args.samples_per_class,
                      steps=args.steps, learning_rate=args.lr, momentum=args.momentum, seed=args.seed,
                      loss_kind=args.loss, triplet=TripletConfig(margin=args.margin, mining=args.mining))
    params, log = train(CatalogView.from_catalog(catalog, features), spec, cfg)
    out = _out_dir(args)
    formats.write_model(out / "model.enc", params)
    log.to_csv(out / "train_log.csv")
    tail = np.mean(log.losses[-max(1, len(log) // 10):]) if len(log) else float("nan")
    print(f"steps={len(log)} final_loss={tail:.6f} model={out / 'model.enc'}")


def cmd_embed(args) -> None:
    catalog = load_catalog(args.catalog)
    params = formats.read_model(args.model)
    features = load_features(catalog, Path(args.catalog).parent, _preprocess_cfg(args))
    emb = encoder_forward(params, features)
    out = _out_dir(args)
    formats.write_embeddings(out / "embeddings.emb", emb)
    formats.write_sidecar(out / "embeddings.csv", catalog.track_ids, catalog.work_ids)
    print(f"embedded {emb.shape[0]} tracks into {emb.shape[1]} dims")


def load_store(path):
    emb = formats.read_embeddings(path)
    tids, wids = formats.read_sidecar(formats.sidecar_path(path), emb.shape[0])
    return build_store(emb, tids, wids)


def cmd_eval_lookup(args) -> None:
    store = load_store(args.embeddings)
    queries, _ = query_reference_split(catalog_from_ids(store.track_ids, store.work_ids),
                                       np.random.default_rng(args.seed))
    modes = [SAMPLES, CLASSES] if args.mode == "both" else [args.mode]
    out = _out_dir(args)
    reports = []
    for mode in modes:
        rep = evaluate_lookup(store, queries, mode, args.k)
        reports.append(rep)
        write_per_query(rep, out / f"eval_per_query_{mode}.csv")
        print(f"{mode}: MAP={rep.map:.4f} MT@{args.k}={rep.mt10:.4f} MT@{args.k}*={rep.mt10_norm:.4f} "
              f"queries={rep.n_queries} undefined={rep.n_undefined}")
    write_report(reports, out / "eval_report.csv")


def cmd_live_id(args) -> None:
    store = load_store(args.embeddings)
    params = formats.read_model(args.model)
    concert = formats.read_salience(args.concert)
    wcfg = WindowingConfig(args.window_seconds, args.hop_seconds, args.min_consecutive)
    result = identify(concert, store, params, wcfg, _preprocess_cfg(args))
    truth = [t for t in args.truth.split(",") if t]
    out = _out_dir(args)
    write_candidates(result, out / "candidates.csv", truth)
    write_timeline(result, store, out / "timeline.csv", truth)
    msg = f"windows={len(result.matches)} candidates={len(result.candidates)}"
    if truth:
        msg += f" r_precision={r_precision(result.candidate_ids, truth):.4f}"
    print(msg)


def cmd_histogram(args) -> None:
    hist = pitch_histogram([formats.read_salience(p) for p in args.inputs])
    out = _out_dir(args)
    with open(out / "histogram.csv", "w", encoding="utf-8") as f:
        f.write("semitone,salience\n")
        for i, v in enumerate(hist):
            f.write(f"{i},{float(v)!r}\n")
    print(f"histogram over {len(args.inputs)} files, {hist.size} semitones")


def cmd_preprocess(args) -> None:
    cfg = _preprocess_cfg(args)
    out = _out_dir(args)
    for p in args.inputs:
        m = formats.read_salience(p)
        feat = preprocess(m, cfg)
        pool = -(-retained_frames(m, cfg.max_seconds) // cfg.target_frames)
        rate = m.frames_per_second / max(1, pool)
        target = out / (Path(p).stem + ".feat.sal")
        formats.write_salience(target, SalienceMatrix(feat.data, 1, rate))
        print(f"{p} -> {target} {feat.shape[0]}x{feat.shape[1]}")


HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "embed": cmd_embed,
    "eval-lookup": cmd_eval_lookup,
    "live-id": cmd_live_id,
    "histogram": cmd_histogram,
    "preprocess": cmd_preprocess,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser, specs = build_parser()
    args = parser.parse_args(argv)
    try:
        args = resolve(args, specs)
        _set_threads(args.threads)
        HANDLERS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"protocover: error: {e}", file=sys.stderr)
        return 2
    except (ProtocoverError, OSError, ValueError) as e:
        print(f"protocover {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
