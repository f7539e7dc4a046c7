"""Command-line interface.

One binary, one subcommand per pipeline step:

    triscore toydata   --out data/ --segments 250 --seed 7
    triscore vocab     --corpus data/corpus.txt --out vocab.txt --max-size 4000
    triscore train     --stage da --data data/segments.train.tsv --vocab vocab.txt --out boot.ckpt
    triscore synth     --pairs data/pairs.en-de.tsv --direction en-de --out synth.jsonl
    triscore label     --corpus synth.jsonl --checkpoint boot.ckpt --vocab vocab.txt --out labeled.jsonl
    triscore pipeline  --synthetic labeled.jsonl --da data/da.tsv --mqm data/mqm.tsv \
                       --vocab vocab.txt --out runs/ --seeds 3
    triscore predict   --checkpoint runs/seed0_mqm.ckpt --vocab vocab.txt \
                       --segments data/segments.test.tsv --out scores.tsv
    triscore ensemble  --scores a=s0.tsv --scores b=s1.tsv --out avg.tsv
    triscore evaluate  --scores avg.tsv --out report.json

Commands never mutate their inputs, write outputs atomically, drop a run
manifest next to the primary output, and are rerunnable: identical inputs
and seed give byte-identical outputs (manifest timestamps aside). Errors
exit nonzero with a one-line JSON diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from dataclasses import replace
from pathlib import Path

from .checkpoint import checkpoint_load
from .encoder import EncoderConfig, init_model
from .ensembling import EnsembleSpec, average_predictions, exact_mean
from .evaluation import build_report
from .fileio import atomic_write_text, parse_kv_config
from .manifest import utc_now, write_run_manifest
from .records import ScoreRecord, read_scores, read_segments, write_scores, write_segments
from .scoring import score_records
from .sequences import InputFormat
from .synthesis import (
    FileGenerator,
    IdentityGenerator,
    NoiseGenerator,
    downgrade_quality,
    generate_hypotheses,
    ingest_parallel,
    labeled_records,
    make_graded_corpus,
    make_toy_parallel,
    pseudo_label,
    rank_normalize,
    read_synthetic_jsonl,
    split_by_segment,
    staged_label_views,
    write_synthetic_jsonl,
)
from .training import Stage, TrainConfig, run_pipeline, train_stage
from .vocab import Vocabulary, build_vocab_from_file

log = logging.getLogger("triscore")

_ENCODER_KEYS = ("hidden_width", "n_layers", "n_heads", "max_len", "head_dims")
_TRAIN_KEYS = (
    "batch_size",
    "lr_encoder",
    "lr_head",
    "epochs",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
)


def _load_config_file(path: str | None) -> dict[str, str]:
    return parse_kv_config(path) if path else {}


def _encoder_config(kv: dict[str, str], vocab_size: int, seed: int) -> EncoderConfig:
    kwargs: dict = {"vocab_size": vocab_size, "seed": seed}
    for key in _ENCODER_KEYS:
        if key not in kv:
            continue
        if key == "head_dims":
            kwargs[key] = tuple(int(x) for x in kv[key].split(","))
        else:
            kwargs[key] = int(kv[key])
    return EncoderConfig(**kwargs)


def _train_config(kv: dict[str, str], stage: Stage, seed: int) -> TrainConfig:
    kwargs: dict = {"stage": stage, "seed": seed}
    for key in _TRAIN_KEYS:
        value = kv.get(f"{stage.value}.{key}", kv.get(key))
        if value is None:
            continue
        kwargs[key] = int(value) if key in ("batch_size", "epochs") else float(value)
    return TrainConfig(**kwargs)


def _load_training_records(path: str):
    if path.endswith(".jsonl"):
        return labeled_records(read_synthetic_jsonl(path))
    return read_segments(path)


def _manifest(args, primary_output: str, inputs: list[str], outputs: list[str], started: str) -> None:
    params = {k: v for k, v in vars(args).items() if k != "func" and not k.startswith("_")}
    write_run_manifest(
        primary_output,
        command=args.command,
        params=params,
        inputs=inputs,
        outputs=outputs,
        seed=getattr(args, "seed", None),
        started=started,
    )


# ---------------------------------------------------------------------------
# subcommands

def cmd_vocab(args) -> int:
    started = utc_now()
    vocab = build_vocab_from_file(args.corpus, args.max_size)
    vocab.save(args.out)
    _manifest(args, args.out, [args.corpus], [args.out], started)
    log.info("vocabulary of %d tokens written to %s", vocab.size, args.out)
    return 0


def cmd_synth(args) -> int:
    started = utc_now()
    pairs = ingest_parallel(args.pairs, args.direction)
    if args.generator == "identity":
        generator = IdentityGenerator()
    elif args.generator == "noise":
        generator = NoiseGenerator(args.noise_strength)
    else:
        if not args.hypotheses:
            raise ValueError("--generator file requires --hypotheses")
        generator = FileGenerator(args.hypotheses)
    examples = generate_hypotheses(pairs, generator, seed=args.seed, domain=args.domain)
    downgrade_quality(examples, args.ratio, args.seed)
    write_synthetic_jsonl(args.out, examples)
    inputs = [args.pairs] + ([args.hypotheses] if args.hypotheses else [])
    _manifest(args, args.out, inputs, [args.out], started)
    log.info("%d synthetic examples written to %s", len(examples), args.out)
    return 0


def cmd_label(args) -> int:
    started = utc_now()
    examples = read_synthetic_jsonl(args.corpus)
    vocab = Vocabulary.load(args.vocab)
    models = [checkpoint_load(p) for p in args.checkpoint]
    pseudo_label(examples, models, vocab)
    rank_normalize(examples)
    write_synthetic_jsonl(args.out, examples)
    _manifest(args, args.out, [args.corpus, args.vocab, *args.checkpoint], [args.out], started)
    log.info("%d examples labeled with %d checkpoint(s)", len(examples), len(models))
    return 0


def cmd_train(args) -> int:
    started = utc_now()
    kv = _load_config_file(args.config)
    vocab = Vocabulary.load(args.vocab)
    stage = Stage.parse(args.stage)
    records = _load_training_records(args.data)
    if args.init:
        model = checkpoint_load(args.init)
        if model.config.vocab_size != vocab.size:
            raise ValueError("checkpoint vocabulary size does not match --vocab")
    else:
        model = init_model(_encoder_config(kv, vocab.size, args.seed))
    config = _train_config(kv, stage, args.seed)
    history_path = args.history or (args.out + ".history.jsonl")
    train_stage(model, records, config, vocab, checkpoint_path=args.out, history_path=history_path)
    inputs = [args.data, args.vocab] + ([args.init] if args.init else []) + ([args.config] if args.config else [])
    _manifest(args, args.out, inputs, [args.out, history_path], started)
    log.info("stage %s trained on %d records -> %s", stage.value, len(records), args.out)
    return 0


def cmd_pipeline(args) -> int:
    started = utc_now()
    kv = _load_config_file(args.config)
    vocab = Vocabulary.load(args.vocab)
    datasets = {
        Stage.PRETRAIN: _load_training_records(args.synthetic) if args.synthetic else None,
        Stage.DA_FINETUNE: _load_training_records(args.da) if args.da else None,
        Stage.MQM_FINETUNE: _load_training_records(args.mqm) if args.mqm else None,
    }
    stage_configs = {stage: _train_config(kv, stage, args.seed) for stage in Stage}
    encoder_config = _encoder_config(kv, vocab.size, args.seed)
    result = run_pipeline(
        encoder_config,
        vocab,
        datasets[Stage.PRETRAIN],
        datasets[Stage.DA_FINETUNE],
        datasets[Stage.MQM_FINETUNE],
        stage_configs,
        n_seeds=args.seeds,
        base_seed=args.seed,
        out_dir=args.out,
    )
    finals = {"final_checkpoints": result.final_checkpoints}
    atomic_write_text(Path(args.out) / "pipeline.json", json.dumps(finals, indent=2) + "\n")
    inputs = [p for p in (args.synthetic, args.da, args.mqm, args.vocab, args.config) if p]
    outputs = [run.checkpoint_path for run in result.stage_runs if run.checkpoint_path]
    _manifest(args, args.out, inputs, outputs + [str(Path(args.out) / "pipeline.json")], started)
    log.info("pipeline produced %d final checkpoint(s) in %s", len(result.final_checkpoints), args.out)
    return 0


def cmd_predict(args) -> int:
    started = utc_now()
    model = checkpoint_load(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    records = read_segments(args.segments)
    fmt = InputFormat.parse(args.format)
    scores = score_records(model, vocab, records, fmt)
    write_scores(args.out, scores)
    _manifest(args, args.out, [args.checkpoint, args.vocab, args.segments], [args.out], started)
    log.info("%d predictions (%s format) written to %s", len(scores), fmt.value, args.out)
    return 0


def cmd_evaluate(args) -> int:
    started = utc_now()
    records = read_scores(args.scores)
    report = build_report(records, threshold=args.threshold)
    sys.stdout.write(report.format_table())
    atomic_write_text(args.out, report.to_json())
    _manifest(args, args.out, [args.scores], [args.out], started)
    return 0


def cmd_ensemble(args) -> int:
    started = utc_now()
    named: dict[str, list[ScoreRecord]] = {}
    order: list[str] = []
    for entry in args.scores:
        if "=" in entry:
            name, path = entry.split("=", 1)
        else:
            name, path = Path(entry).stem, entry
        if name in named:
            raise ValueError(f"duplicate member id {name!r}")
        named[name] = read_scores(path)
        order.append(name)

    if args.spec:
        spec = EnsembleSpec.load(args.spec)
        spec.validate_members(set(named))
        indexed = {name: {rec.key(): rec for rec in recs} for name, recs in named.items()}
        base = named[order[0]]
        merged = []
        for rec in base:
            members = spec.members_for(rec.direction)
            values = []
            for member in members:
                hit = indexed[member].get(rec.key())
                if hit is None:
                    raise ValueError(f"member {member!r} is missing key {rec.key()}")
                values.append(hit.metric)
            merged.append(replace(rec, metric=exact_mean(values)))
    else:
        merged = average_predictions([named[name] for name in order])
    write_scores(args.out, merged)
    inputs = [e.split("=", 1)[1] if "=" in e else e for e in args.scores]
    _manifest(args, args.out, inputs + ([args.spec] if args.spec else []), [args.out], started)
    log.info("ensemble of %d file(s) written to %s", len(order), args.out)
    return 0


def cmd_toydata(args) -> int:
    started = utc_now()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    directions = tuple(args.directions.split(","))
    corpus = make_graded_corpus(
        n_segments=args.segments,
        n_systems=args.systems,
        directions=directions,
        seed=args.seed,
    )
    train, dev, test = split_by_segment(corpus, seed=args.seed)
    pretrain, da_like, mqm_like = staged_label_views(train, seed=args.seed)
    outputs = []

    def emit(name: str, records) -> None:
        path = out / name
        write_segments(path, records)
        outputs.append(str(path))

    emit("segments.train.tsv", train)
    emit("segments.dev.tsv", dev)
    emit("segments.test.tsv", test)
    emit("pretrain.tsv", pretrain)
    emit("da.tsv", da_like)
    emit("mqm.tsv", mqm_like)

    corpus_lines = []
    for direction in directions:
        pairs = make_toy_parallel(args.pairs_per_direction, direction, seed=args.seed)
        pair_path = out / f"pairs.{direction}.tsv"
        atomic_write_text(pair_path, "".join(f"{p.source}\t{p.reference}\n" for p in pairs))
        outputs.append(str(pair_path))
        corpus_lines.extend(f"{p.source}\n{p.reference}" for p in pairs)
    for rec in train:
        corpus_lines.extend((rec.source, rec.hypothesis, rec.reference or ""))
    corpus_path = out / "corpus.txt"
    atomic_write_text(corpus_path, "\n".join(corpus_lines) + "\n")
    outputs.append(str(corpus_path))

    _manifest(args, str(out), [], outputs, started)
    log.info("toy corpus (%d records) written to %s", len(corpus), out)
    return 0


# ---------------------------------------------------------------------------
# parser and entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="triscore", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("vocab", help="build and persist a vocabulary")
    p.add_argument("--corpus", required=True, help="UTF-8 text corpus, one sentence per line")
    p.add_argument("--out", required=True)
    p.add_argument("--max-size", type=int, default=4000, dest="max_size")
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest; vocab building is seed-free")
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("synth", help="ingest parallel pairs, derive hypotheses, downgrade quality")
    p.add_argument("--pairs", required=True, help="TSV with source<TAB>reference per line")
    p.add_argument("--direction", required=True)
    p.add_argument("--out", required=True, help="synthetic corpus JSONL")
    p.add_argument("--generator", choices=("identity", "noise", "file"), default="noise")
    p.add_argument("--noise-strength", type=float, default=0.3, dest="noise_strength")
    p.add_argument("--hypotheses", help="hypothesis file for --generator file")
    p.add_argument("--ratio", type=float, default=0.15, help="downgraded fraction of examples")
    p.add_argument("--domain", default="synthetic")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("label", help="pseudo-label a synthetic corpus and rank-normalize per direction")
    p.add_argument("--corpus", required=True, help="synthetic corpus JSONL from synth")
    p.add_argument("--checkpoint", action="append", required=True, help="repeatable")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest; labeling is deterministic")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", choices=[s.value for s in Stage], required=True)
    p.add_argument("--data", required=True, help="segment TSV with gold, or labeled JSONL")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--init", help="checkpoint to start from (omit to initialize fresh)")
    p.add_argument("--config", help="key=value training/encoder config file")
    p.add_argument("--history", help="history JSONL path (default: <out>.history.jsonl)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pipeline", help="staged pipeline across several seeds")
    p.add_argument("--synthetic", help="pretraining dataset (TSV or labeled JSONL)")
    p.add_argument("--da", help="first fine-tuning dataset")
    p.add_argument("--mqm", help="second fine-tuning dataset")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="key=value config file; stage-prefixed keys override")
    p.add_argument("--seeds", type=int, default=3, help="number of seeds to train")
    p.add_argument("--seed", type=int, default=0, help="base seed; run i uses seed+i")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("predict", help="score a segment file with one checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--out", required=True, help="score TSV path")
    p.add_argument("--format", choices=[f.value for f in InputFormat], default=InputFormat.SRC_REF.value)
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest; prediction is deterministic")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="grouped segment-level correlation report")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True, help="report JSON path (table prints to stdout)")
    p.add_argument("--threshold", type=float, default=0.0, help="min human-score gap for a pair to count")
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest; evaluation is deterministic")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ensemble", help="average prediction files, optionally routed per direction")
    p.add_argument("--scores", action="append", required=True, help="repeatable; ID=PATH or PATH")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="ensemble spec JSON mapping directions to member ids")
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest; averaging is deterministic")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("toydata", help="emit the built-in graded demo corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--segments", type=int, default=250, help="segments per direction")
    p.add_argument("--systems", type=int, default=4)
    p.add_argument("--directions", default="en-de,zh-en", help="comma-separated direction tags")
    p.add_argument("--pairs-per-direction", type=int, default=200, dest="pairs_per_direction")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_toydata)

    return parser


def _error_location(exc: BaseException) -> str | None:
    for frame in reversed(traceback.extract_tb(exc.__traceback__)):
        if "triscore" in frame.filename:
            return f"{Path(frame.filename).name}:{frame.lineno}"
    return None


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line machine-parsable diagnostic
        detail = {"error": type(exc).__name__, "message": str(exc), "where": _error_location(exc)}
        print(json.dumps(detail), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
