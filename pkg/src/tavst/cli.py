"""Command-line entry point.

Subcommands: synth, train, generate, eval, analyze-sentiment, gradcheck,
sweep. Logs and the resolved configuration go to stderr; data goes to files
or stdout. Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from itertools import product
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data as data_mod
from . import metrics as metrics_mod
from . import sentiment as sentiment_mod
from . import trainer as trainer_mod
from .data import DataError
from .gradcheck import CertificationError, grad_check
from .params import ModelDims, dims_from_params, init_params
from .tensor import Precision
from .trainer import TrainConfig, Vocabs


class CliError(Exception):
    """Invalid invocation or inputs; mapped to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def log(msg: str) -> None:
    print(msg, file=sys.stderr)


SWEEP_KEYS = ("alpha", "lambda1", "lambda2", "beta", "n_iter")

_CONFIG_FLAGS = [(f.name, f.type, getattr(TrainConfig(), f.name))
                 for f in fields(TrainConfig)]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    casts = {"int": int, "float": float, "str": str}
    for name, ftype, default in _CONFIG_FLAGS:
        p.add_argument(f"--{name.replace('_', '-')}", dest=f"cfg_{name}",
                       type=casts[ftype], default=argparse.SUPPRESS,
                       help=f"{ftype} (default: {default})")


def _resolve_config(args) -> TrainConfig:
    cfg = TrainConfig()
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            text = Path(config_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot read config file: {exc}") from None
        cfg = trainer_mod.config_from_text(text, cfg)
    overrides = {name: getattr(args, f"cfg_{name}")
                 for name, _, _ in _CONFIG_FLAGS if hasattr(args, f"cfg_{name}")}
    if "seed" not in overrides and getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


def _print_config(cfg: TrainConfig) -> None:
    log("resolved config:")
    for line in trainer_mod.config_to_text(cfg).splitlines():
        log(f"  {line}")


def build_parser() -> _Parser:
    parser = _Parser(prog="tavst", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus directory")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--albums", type=int, default=50)
    p.add_argument("--feature-dim", type=int, default=64)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--images-per-album", type=int, default=5)
    p.add_argument("--split", default="0.8,0.1,0.1",
                   help="train,val,test fractions (default: 0.8,0.1,0.1)")

    p = sub.add_parser("train", help="train on a corpus directory")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="flat key=value config file; flags win")
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p)

    p = sub.add_parser("generate", help="decode stories with a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", required=True, help="hypotheses JSONL")
    p.add_argument("--refs-out", help="also write references JSONL")
    p.add_argument("--config", help="config file used at training time")
    p.add_argument("--greedy", action="store_true", help="greedy instead of beam")
    p.add_argument("--dump-attention", help="write attention weights JSONL")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="score hypotheses against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--meteor-mode", default="sentence", choices=["sentence", "corpus"])

    p = sub.add_parser("analyze-sentiment", help="lexicon sentiment analysis")
    p.add_argument("--stories", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--events", help="TSV album_id<TAB>event_label")
    p.add_argument("--out-prefix", help="write <prefix>.divergence.csv and <prefix>.events.csv")

    p = sub.add_parser("gradcheck", help="finite-difference certification")
    p.add_argument("--config", default="tiny", help="'tiny' or a config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)

    p = sub.add_parser("sweep", help="grid sweep over loss hyperparameters")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="base config file")
    p.add_argument("--grid", action="append", required=True,
                   help="key=v1,v2,... over " + "/".join(SWEEP_KEYS))
    p.add_argument("--out", required=True, help="sweep report CSV")
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p)

    return parser


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    try:
        split = tuple(float(x) for x in args.split.split(","))
    except ValueError:
        raise CliError(f"bad --split value {args.split!r}") from None
    log(f"resolved config: seed={args.seed} albums={args.albums} "
        f"feature_dim={args.feature_dim} classes={args.classes} "
        f"noise={args.noise} images_per_album={args.images_per_album} split={split}")
    data_mod.write_synth_corpus(
        args.out, seed=args.seed, n_albums=args.albums,
        feature_dim=args.feature_dim, topic_classes=args.classes,
        noise=args.noise, images_per_album=args.images_per_album, split=split)
    log(f"wrote corpus to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    _print_config(cfg)
    corpus = data_mod.load_corpus(args.data, cfg.images_per_album, cfg.min_count)
    result = trainer_mod.train(corpus, cfg, log=log)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    ckpt.save_checkpoint(result.params, outdir / "model.ckpt")
    (outdir / "history.csv").write_text(trainer_mod.history_csv(result.history),
                                        encoding="utf-8")
    (outdir / "config.txt").write_text(trainer_mod.config_to_text(cfg),
                                       encoding="utf-8")
    log(f"best validation meteor_lite: {result.best_val_meteor}")
    log(f"wrote {outdir / 'model.ckpt'} and {outdir / 'history.csv'}")
    return 0


def _load_model(ckpt_path, cfg: TrainConfig):
    arrays = ckpt.load_checkpoint(ckpt_path)
    dims_probe = {"story.w_init", "venc.w_f", "topic.bridge_init.w",
                  "topic.embed", "story.embed"}
    missing = dims_probe - set(arrays)
    if missing:
        raise DataError(f"checkpoint is missing tensors: {sorted(missing)}")
    h = arrays["story.w_init"].shape[0]
    dims = ModelDims(
        hidden=h,
        feature_dim=arrays["venc.w_f"].shape[1],
        images_per_album=arrays["topic.bridge_init.w"].shape[1] // h,
        topic_vocab=arrays["topic.embed"].shape[0],
        story_vocab=arrays["story.embed"].shape[0],
    )
    params = init_params(dims, np.random.default_rng(0), cfg.precision_mode)
    params.load_arrays(arrays, dtype=cfg.precision_mode.dtype)
    return params, dims


def cmd_generate(args) -> int:
    cfg = _resolve_config(args)
    _print_config(cfg)
    corpus = data_mod.load_corpus(args.data, cfg.images_per_album, cfg.min_count)
    params, dims = _load_model(args.ckpt, cfg)
    if dims.topic_vocab != len(corpus.topic_vocab) or dims.story_vocab != len(corpus.story_vocab):
        raise DataError(
            f"checkpoint vocab sizes (topic {dims.topic_vocab}, story {dims.story_vocab}) "
            f"do not match the corpus (topic {len(corpus.topic_vocab)}, "
            f"story {len(corpus.story_vocab)}); was it trained on this data?")
    vocabs = Vocabs(topic=corpus.topic_vocab, story=corpus.story_vocab)
    albums = corpus.split(args.split)
    attn_fh = open(args.dump_attention, "w", encoding="utf-8") if args.dump_attention else None
    try:
        with open(args.out, "w", encoding="utf-8") as fh:
            for album in albums:
                gen = trainer_mod.generate_album(album, params, cfg, vocabs,
                                                 use_beam=not args.greedy)
                fh.write(json.dumps({
                    "id": gen.album_id,
                    "story": [" ".join(s) for s in gen.story],
                    "topic": " ".join(gen.topic),
                }) + "\n")
                if attn_fh is not None:
                    attn_fh.write(json.dumps({
                        "id": gen.album_id,
                        "attn_v": [w.tolist() for w in gen.attn_v],
                        "attn_t": [w.tolist() for w in gen.attn_t],
                    }) + "\n")
    finally:
        if attn_fh is not None:
            attn_fh.close()
    if args.refs_out:
        with open(args.refs_out, "w", encoding="utf-8") as fh:
            for album in albums:
                fh.write(json.dumps({
                    "id": album.id,
                    "story": [" ".join(s) for s in album.sentences],
                    "topic": " ".join(album.title),
                }) + "\n")
    log(f"decoded {len(albums)} albums from split {args.split!r} into {args.out}")
    return 0


def _read_story_jsonl(path) -> dict[str, list[list[str]]]:
    stories = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            if "id" not in rec or "story" not in rec:
                raise DataError(f"{path}:{lineno}: need fields 'id' and 'story'")
            stories[rec["id"]] = [data_mod.tokenize(s) for s in rec["story"]]
    return stories


def cmd_eval(args) -> int:
    hyps = _read_story_jsonl(args.hyp)
    refs = _read_story_jsonl(args.ref)
    missing = sorted(set(hyps) - set(refs))
    if missing:
        raise DataError(f"hypothesis ids without references: {missing[:5]}")
    if not hyps:
        raise DataError("no hypotheses to score")
    # story-level scoring: sub-stories concatenate into one sequence
    pairs = [
        metrics_mod.EvalPair(
            hypothesis=[t for s in hyps[i] for t in s],
            references=[[t for s in refs[i] for t in s]],
        )
        for i in sorted(hyps)
    ]
    report = metrics_mod.score_corpus(pairs, meteor_mode=args.meteor_mode)
    print(metrics_mod.format_report(report))
    for line in metrics_mod.report_kv_lines(report):
        print(line)
    return 0


def cmd_analyze_sentiment(args) -> int:
    lex = sentiment_mod.Lexicon.from_tsv(args.lexicon)
    stories = _read_story_jsonl(args.stories)
    if not stories:
        raise DataError("no stories to analyze")
    labels_by_id = {}
    if args.events:
        with open(args.events, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DataError(f"{args.events}:{lineno}: expected id<TAB>label")
                labels_by_id[parts[0]] = parts[1]
    ids = sorted(stories)
    scored = [sentiment_mod.score_story(stories[i], lex) for i in ids]
    labels = [labels_by_id.get(i, "other") for i in ids] if labels_by_id else None
    summary = sentiment_mod.aggregate(scored, labels)

    div_buf = io.StringIO()
    w = csv.writer(div_buf)
    w.writerow(["stat", "value"])
    w.writerow(["mean_divergence", f"{summary.mean_divergence:.6f}"])
    w.writerow(["n_stories", len(scored)])

    ev_buf = io.StringIO()
    w = csv.writer(ev_buf)
    w.writerow(["event", "mean_total", "n_stories"])
    for event, mean in summary.event_means.items():
        w.writerow([event, f"{mean:.6f}", summary.event_counts[event]])

    if args.out_prefix:
        Path(f"{args.out_prefix}.divergence.csv").write_text(div_buf.getvalue(),
                                                             encoding="utf-8")
        Path(f"{args.out_prefix}.events.csv").write_text(ev_buf.getvalue(),
                                                         encoding="utf-8")
        log(f"wrote {args.out_prefix}.divergence.csv and {args.out_prefix}.events.csv")
    else:
        print(div_buf.getvalue(), end="")
        print(ev_buf.getvalue(), end="")
    return 0


def tiny_gradcheck_config() -> TrainConfig:
    return TrainConfig(hidden=8, images_per_album=2, n_iter=2, precision="verify",
                       epochs_topic=0, epochs_joint=0, epochs_rl=0, min_count=1,
                       batch_size=1, alpha=0.0)


def cmd_gradcheck(args) -> int:
    if args.config == "tiny":
        cfg = tiny_gradcheck_config()
    else:
        cfg = trainer_mod.config_from_text(Path(args.config).read_text(encoding="utf-8"))
        cfg = replace(cfg, precision="verify", alpha=0.0)
    _print_config(cfg)
    corpus = data_mod.synth_corpus(
        seed=args.seed, n_albums=2, feature_dim=8, topic_classes=2, noise=0.2,
        images_per_album=cfg.images_per_album, split=(1.0, 0.0, 0.0), min_count=1)
    album = corpus.train[0]
    vocabs = Vocabs(topic=corpus.topic_vocab, story=corpus.story_vocab)
    dims = ModelDims(hidden=cfg.hidden, feature_dim=corpus.feature_dim,
                     images_per_album=cfg.images_per_album,
                     topic_vocab=len(corpus.topic_vocab),
                     story_vocab=len(corpus.story_vocab))
    params = init_params(dims, np.random.default_rng(args.seed), Precision.VERIFY)
    report = grad_check(
        lambda: trainer_mod.forward_pass(album, params, cfg, vocabs).loss,
        params, eps=args.eps, tol=args.tol, seed=args.seed, label="full model loss")
    print(report)
    return 0 if report.passed else 1


def _sweep_point(payload) -> dict:
    data_dir, cfg_kwargs, point = payload
    cfg = replace(TrainConfig(**cfg_kwargs), **point)
    cfg.validate()
    corpus = data_mod.load_corpus(data_dir, cfg.images_per_album, cfg.min_count)
    result = trainer_mod.train(corpus, cfg)
    row = dict(point)
    row["val_meteor_lite"] = result.best_val_meteor
    return row


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    _print_config(cfg)
    grid: dict[str, list] = {}
    for spec_arg in args.grid:
        if "=" not in spec_arg:
            raise CliError(f"bad --grid value {spec_arg!r}, expected key=v1,v2")
        key, _, raw = spec_arg.partition("=")
        key = key.strip()
        if key not in SWEEP_KEYS:
            raise CliError(f"--grid key must be one of {SWEEP_KEYS}, got {key!r}")
        cast = int if key == "n_iter" else float
        try:
            grid[key] = [cast(v) for v in raw.split(",") if v != ""]
        except ValueError:
            raise CliError(f"bad --grid values {raw!r} for {key}") from None
    keys = list(grid)
    points = [dict(zip(keys, combo)) for combo in product(*grid.values())]
    log(f"sweeping {len(points)} grid points over {keys}")
    cfg_kwargs = {f.name: getattr(cfg, f.name) for f in fields(TrainConfig)}
    payloads = [(args.data, cfg_kwargs, p) for p in points]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_point, payloads))
    else:
        rows = [_sweep_point(p) for p in payloads]
    rows.sort(key=lambda r: -r["val_meteor_lite"])
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys + ["val_meteor_lite"])
        writer.writeheader()
        for r in rows:
            writer.writerow(r)
    log(f"wrote sweep report to {args.out}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "analyze-sentiment": cmd_analyze_sentiment,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (CliError, DataError, trainer_mod.TrainingDiverged,
            CertificationError, OSError) as exc:
        if isinstance(exc, (trainer_mod.TrainingDiverged, CertificationError)):
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
