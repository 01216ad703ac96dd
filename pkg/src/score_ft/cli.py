"""Command-line entry point: ``score-ft {features,softdtw,perturb,train,qbe}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .core import read_feature_file, write_feature_file
from .frontend import MelConfig, load_wav, log_mel, save_wav
from .model import encode, load_checkpoint
from .perturb import PerturbConfig, pitch_shift, speed_perturb
from .qbe import rank_queries, read_labels_tsv, write_results_tsv
from .softdtw import SoftDtwConfig, normalized_divergence, soft_dtw_value
from .trainer import TrainConfig, config_from_dict, run_training

log = logging.getLogger("score_ft")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _mel_from_args(args) -> MelConfig:
    return MelConfig(
        sample_rate_hz=args.sample_rate,
        win_length_samples=args.win_length,
        hop_length_samples=args.hop_length,
        n_fft=args.n_fft,
        n_mels=args.n_mels,
        fmin_hz=args.fmin,
        fmax_hz=args.fmax,
        log_floor=args.log_floor,
    )


def cmd_features(args):
    try:
        cfg = _mel_from_args(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    w = load_wav(args.inp, expected_rate=cfg.sample_rate_hz)
    write_feature_file(log_mel(w, cfg), args.out)
    return EXIT_OK


def cmd_softdtw(args):
    if not (args.gamma > 0 and math.isfinite(args.gamma)):
        raise UsageError(f"--gamma must be positive, got {args.gamma}")
    cfg = SoftDtwConfig(args.gamma)
    a = read_feature_file(args.a).frames
    b = read_feature_file(args.b).frames
    if args.normalized:
        value = normalized_divergence(a, b, cfg, length_norm=args.length_norm)[0]
    else:
        value = soft_dtw_value(a, b, cfg)
        if args.length_norm:
            value /= a.shape[0] + b.shape[0]
    print(repr(float(value)))
    return EXIT_OK


def cmd_perturb(args):
    if not 0.5 < args.speed < 2.0:
        raise UsageError(f"--speed must be in (0.5, 2.0), got {args.speed}")
    if not -12 <= args.pitch <= 12:
        raise UsageError(f"--pitch must be in [-12, 12], got {args.pitch}")
    w = load_wav(args.inp)
    save_wav(pitch_shift(speed_perturb(w, args.speed), args.pitch), args.out)
    return EXIT_OK


def read_manifest(path) -> list:
    """One audio path per line; relative paths resolve against the manifest's folder."""
    base = Path(path).parent
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            p = Path(line)
            entries.append(p if p.is_absolute() else base / p)
    if not entries:
        raise ValueError(f"manifest {path} lists no audio files")
    dups = sorted({str(p) for p in entries if entries.count(p) > 1})
    if dups:
        raise ValueError(f"manifest {path} has duplicate entries: {', '.join(dups)}")
    return entries


def load_config(path):
    """JSON with optional sections "train", "perturb", "mel"; unknown keys are errors."""
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config must be a JSON object")
    unknown = sorted(set(data) - {"train", "perturb", "mel"})
    if unknown:
        raise ValueError(f"unknown config sections: {', '.join(unknown)}")
    return (
        config_from_dict(TrainConfig, data.get("train", {})),
        data.get("perturb", {}),
        config_from_dict(MelConfig, data.get("mel", {})),
    )


def cmd_train(args):
    if args.steps is not None and args.steps < 1:
        raise UsageError(f"--steps must be >= 1, got {args.steps}")
    if args.seed is not None and args.seed < 0:
        raise UsageError(f"--seed must be non-negative, got {args.seed}")
    if args.config:
        try:
            train_cfg, perturb_raw, mel_cfg = load_config(args.config)
        except (ValueError, TypeError) as exc:
            raise UsageError(f"{args.config}: {exc}") from exc
    else:
        train_cfg, perturb_raw, mel_cfg = TrainConfig(), {}, MelConfig()
    seed = train_cfg.seed if args.seed is None else args.seed
    train_cfg = replace(train_cfg, seed=seed)
    try:
        perturb_cfg = config_from_dict(PerturbConfig, {"seed": seed, **perturb_raw})
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    if args.steps is not None:
        train_cfg = train_cfg.scaled_to(args.steps)
    manifest = read_manifest(args.manifest)
    result = run_training(manifest, train_cfg, perturb_cfg, args.out, mel_cfg)
    print(json.dumps({
        "steps": result.state.step,
        "final_loss": result.records[-1].loss,
        "metrics": str(result.metrics_path),
        "checkpoint": str(result.checkpoint_path),
    }))
    return EXIT_OK


def _load_fseq_dir(path, what):
    d = Path(path)
    if not d.is_dir():
        raise FileNotFoundError(f"{what} directory {path} does not exist")
    files = sorted(d.glob("*.fseq"))
    if not files:
        raise ValueError(f"{what} directory {path} has no .fseq files")
    return {f.stem: read_feature_file(f).frames for f in files}


def cmd_qbe(args):
    if args.layer is not None and args.checkpoint is None:
        raise UsageError("--layer needs --checkpoint")
    if args.layer is not None and args.layer < 1:
        raise UsageError(f"--layer must be >= 1, got {args.layer}")
    queries = _load_fseq_dir(args.queries, "query")
    docs = _load_fseq_dir(args.docs, "document")
    labels = read_labels_tsv(args.labels) if args.labels else []
    if args.checkpoint:
        theta = load_checkpoint(args.checkpoint)[0]
        if args.layer is not None and args.layer > len(theta.layers):
            raise UsageError(f"--layer {args.layer} exceeds encoder depth {len(theta.layers)}")
        queries = {k: encode(theta, v, args.layer) for k, v in queries.items()}
        docs = {k: encode(theta, v, args.layer) for k, v in docs.items()}
    report = rank_queries(queries, docs, labels)
    write_results_tsv(args.out, report.rankings)
    print(json.dumps(report.metrics()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="score-ft", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = MelConfig()
    f = sub.add_parser("features", help="WAV -> log-mel .fseq")
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--sample-rate", type=int, default=d.sample_rate_hz)
    f.add_argument("--win-length", type=int, default=d.win_length_samples)
    f.add_argument("--hop-length", type=int, default=d.hop_length_samples)
    f.add_argument("--n-fft", type=int, default=d.n_fft)
    f.add_argument("--n-mels", type=int, default=d.n_mels)
    f.add_argument("--fmin", type=float, default=d.fmin_hz)
    f.add_argument("--fmax", type=float, default=d.fmax_hz)
    f.add_argument("--log-floor", type=float, default=d.log_floor)
    f.set_defaults(func=cmd_features)

    s = sub.add_parser("softdtw", help="soft-DTW between two .fseq files")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--gamma", type=float, default=0.1)
    s.add_argument("--normalized", action="store_true", help="report the divergence L(a,b) - (L(a,a)+L(b,b))/2")
    s.add_argument("--length-norm", action="store_true", help="divide by the total length m + n")
    s.set_defaults(func=cmd_softdtw)

    pt = sub.add_parser("perturb", help="speed perturbation then pitch shift")
    pt.add_argument("--in", dest="inp", required=True)
    pt.add_argument("--out", required=True)
    pt.add_argument("--speed", type=float, default=1.0)
    pt.add_argument("--pitch", type=int, default=0)
    pt.set_defaults(func=cmd_perturb)

    t = sub.add_parser("train", help="correspondence fine-tuning")
    t.add_argument("--manifest", required=True)
    t.add_argument("--config", help="JSON with train/perturb/mel sections")
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, help="run this many updates (warmup scaled proportionally)")
    t.add_argument("--seed", type=int, help="seed for every random draw (default: config seed, 42)")
    t.set_defaults(func=cmd_train)

    q = sub.add_parser("qbe", help="query-by-example scoring")
    q.add_argument("--queries", required=True)
    q.add_argument("--docs", required=True)
    q.add_argument("--labels")
    q.add_argument("--out", required=True)
    q.add_argument("--checkpoint", help="encode features with the learnable encoder first")
    q.add_argument("--layer", type=int, help="use the output of this encoder layer (1-based)")
    q.set_defaults(func=cmd_qbe)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"score-ft {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"score-ft {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
