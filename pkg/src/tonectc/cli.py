"""``tonectc`` command line."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import torch

from . import __version__
from .corpus import ManifestRecord, load_examples, load_features, read_manifest, tokenized_corpus, write_manifest
from .errors import ConfigError, DataError, TonectcError, in_stage
from .experiment import ExperimentPlan, check_disjoint, run, write_report
from .features import write_tpf
from .kvconfig import read_kv
from .metrics import report, rows_from_csv
from .model import DecodeOptions, TrainConfig, evaluate, load_checkpoint, save_checkpoint, train
from .synth import DEFAULT_SPEC, CorpusSpec, read_splits, select, synth_corpus
from .tiers import Tier, build_alphabets, build_tiers, format_transcripts, read_transcripts, write_alphabet
from .transfer import AdaptConfig, adapt, write_audit

logger = logging.getLogger("tonectc")


def _int_triple(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3 or min(parts) < 0:
        raise argparse.ArgumentTypeError(f"expected three non-negative integers, got {text!r}")
    return tuple(parts)


def _records_for(args, split_names=None):
    records = read_manifest(args.manifest)
    if args.splits and split_names:
        splits = read_splits(args.splits)
        check_disjoint(splits)
        ids = [u for name in split_names for u in splits.get(name, [])]
        records = select(records, ids)
    if getattr(args, "language", None):
        records = [r for r in records if r.lang == args.language]
    if not records:
        raise DataError("no utterances selected")
    return records


def cmd_synth(args) -> int:
    spec = CorpusSpec.read(args.spec) if args.spec else DEFAULT_SPEC
    overrides = {}
    if args.sizes:
        overrides["sizes"] = args.sizes
    if args.heldout_sizes:
        overrides["heldout_sizes"] = args.heldout_sizes
    if args.f0:
        overrides["with_f0"] = True
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    corpus = synth_corpus(spec, args.seed, args.out)
    print(f"wrote {len(corpus.records)} utterances to {args.out}")
    return 0


def cmd_prepare(args) -> int:
    records = read_manifest(args.manifest)
    model = TrainConfig(variant=args.variant).model
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    alphabets = build_alphabets(tokenized_corpus(records), model)
    for (tier, lang), alpha in sorted(alphabets.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
        write_alphabet(out / f"alphabet_{tier.value}_{lang}.txt", alpha)
    per_tier: dict[Tier, list] = {t: [] for t in model.tiers}
    for rec, (lang, sylls) in zip(records, tokenized_corpus(records)):
        for tier, tr in build_tiers(sylls, lang, model).items():
            per_tier[tier].append((rec.utt_id, tr.symbols))
    for tier, items in per_tier.items():
        (out / f"ref_{tier.value}.txt").write_text(format_transcripts(items), encoding="utf-8")
    print(f"wrote {len(alphabets)} alphabets and {len(per_tier)} tier transcripts to {out}")
    return 0


def cmd_featurize(args) -> int:
    records = read_manifest(args.manifest)
    root = Path(args.manifest).parent
    out = Path(args.out)
    (out / "feats").mkdir(parents=True, exist_ok=True)
    written = []
    for rec in records:
        mat = load_features(rec, root, with_f0=args.f0)
        rel = f"feats/{rec.utt_id}.tpf"
        write_tpf(out / rel, mat.frames)
        written.append(ManifestRecord(rec.utt_id, rec.lang, rec.speaker_id, {"features": rel}, rec.ipa))
    write_manifest(out / "manifest.jsonl", written)
    print(f"featurized {len(written)} utterances into {out}")
    return 0


def _train_config(args) -> TrainConfig:
    values = read_kv(args.train_config) if args.train_config else {}
    for key in ("variant", "hidden_dim", "fc_dim", "lr", "max_epochs", "patience", "batch_size", "seed"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return TrainConfig.from_dict(values)


def cmd_train(args) -> int:
    config = _train_config(args)
    torch.set_num_threads(1)
    with in_stage("prepare"):
        records = read_manifest(args.manifest)
        root = Path(args.manifest).parent
        splits = read_splits(args.splits) if args.splits else None
        if splits:
            check_disjoint(splits)
            train_recs = select(records, splits.get("train", []))
            dev_recs = select(records, splits.get("dev", []))
        else:
            train_recs, dev_recs = records, []
        if not train_recs:
            raise DataError("no training utterances")
        langs = {r.lang for r in train_recs}
        model = config.model
        alphabets = build_alphabets(tokenized_corpus([r for r in records if r.lang in langs]), model)
        train_ex = load_examples(train_recs, root, model, with_f0=args.f0)
        dev_ex = load_examples(dev_recs, root, model, with_f0=args.f0) if dev_recs else []
        config = dataclasses.replace(config, input_dim=train_ex[0].features.shape[1])
    with in_stage("train"):
        ckpt = train(train_ex, dev_ex, alphabets, config, log=logger.info)
        save_checkpoint(args.out, ckpt)
    print(f"best epoch {ckpt.meta['best_epoch']} dev loss {ckpt.meta['best_dev']:.4f}; wrote {args.out}")
    return 0


def cmd_adapt(args) -> int:
    torch.set_num_threads(1)
    with in_stage("prepare"):
        base = load_checkpoint(args.checkpoint)
        records = read_manifest(args.manifest)
        root = Path(args.manifest).parent
        splits = read_splits(args.splits)
        check_disjoint(splits)
        lang = args.language
        pick = lambda name: [r for r in select(records, splits.get(name, [])) if r.lang == lang]
        adapt_recs = pick("adapt")[: args.adapt_utts] if args.adapt_utts else pick("adapt")
        dev_recs = pick("adapt_dev")
        if not adapt_recs:
            raise DataError(f"no adaptation utterances for {lang!r}")
        model = base.config.model
        target = build_alphabets(tokenized_corpus([r for r in records if r.lang == lang]), model)
        target = {t: a for (t, l), a in target.items() if l == lang}
        adapt_ex = load_examples(adapt_recs, root, model, with_f0=args.f0)
        dev_ex = load_examples(dev_recs, root, model, with_f0=args.f0) if dev_recs else []
    with in_stage("adapt"):
        config = base.config
        if args.seed is not None:
            config = dataclasses.replace(config, seed=args.seed)
        ckpt, audit = adapt(base, lang, target, adapt_ex, dev_ex, config,
                            AdaptConfig(args.stage_a_epochs, args.stage_b_epochs), log=logger.info)
        save_checkpoint(args.out, ckpt)
        audit_path = args.audit or str(Path(args.out).with_suffix(".audit.tsv"))
        write_audit(audit_path, audit)
    print(f"wrote {args.out} and mapping audit {audit_path}")
    return 0


def cmd_decode(args) -> int:
    torch.set_num_threads(1)
    with in_stage("prepare"):
        ckpt = load_checkpoint(args.checkpoint)
        records = _records_for(args, [args.split] if args.split else None)
        examples = load_examples(records, Path(args.manifest).parent, ckpt.config.model, with_f0=args.f0)
    with in_stage("decode"):
        options = DecodeOptions(args.beam_width, args.lm_weight, use_lm=not args.no_lm, greedy=args.greedy)
        hyps = evaluate(ckpt, examples, options)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for tier, per_utt in hyps.items():
        (out / f"hyp_{tier.value}.txt").write_text(format_transcripts(sorted(per_utt.items())), encoding="utf-8")
    print(f"decoded {len(examples)} utterances into {out}")
    return 0


def cmd_score(args) -> int:
    model = TrainConfig(variant=args.variant).model
    with in_stage("prepare"):
        records = _records_for(args, [args.split] if args.split else None)
        refs: dict[Tier, dict] = {t: {} for t in model.tiers}
        for rec, (lang, sylls) in zip(records, tokenized_corpus(records)):
            for tier, tr in build_tiers(sylls, lang, model).items():
                refs[tier][rec.utt_id] = list(tr.symbols)
        hyps = {}
        for tier in model.tiers:
            path = Path(args.hyp_dir) / f"hyp_{tier.value}.txt"
            if path.exists():
                hyps[tier] = read_transcripts(path)
    with in_stage("score"):
        rows = report(hyps, refs, model, {r.utt_id: r.lang for r in records}, label=args.label)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_report(out, rows)
    print((out / "report.txt").read_text(encoding="utf-8"), end="")
    return 0


def cmd_report(args) -> int:
    with in_stage("report"):
        rows = []
        for path in args.csv:
            try:
                rows.extend(rows_from_csv(Path(path).read_text(encoding="utf-8")))
            except OSError as exc:
                raise DataError(f"cannot read {path}: {exc}") from exc
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}: not an error-rate CSV ({exc})") from exc
        if not rows:
            raise DataError("no rows to report")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        paths = write_report(out, rows, name=args.name)
    print(paths["table"].read_text(encoding="utf-8"), end="")
    return 0


def cmd_run(args) -> int:
    values = read_kv(args.plan) if args.plan else {}
    if args.seed is not None:
        values["seed"] = args.seed
    if args.setting:
        values["setting"] = args.setting
    if args.manifest:
        values["manifest"] = args.manifest
    plan = ExperimentPlan.from_dict(values)
    result = run(plan, args.out, log=logger.info)
    print(result.outputs["table"].read_text(encoding="utf-8"), end="")
    return 0


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    p = argparse.ArgumentParser(prog="tonectc", description="Multi-tier CTC phone and tone toolkit.")
    p.add_argument("--version", action="version", version=f"tonectc {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="key=value file supplying defaults for any flag")
        sp.set_defaults(func=func)
        subs[name] = sp
        return sp

    sp = add("synth", cmd_synth, "generate a synthetic multilingual corpus")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.add_argument("--spec", help="corpus spec JSON (default: built-in four-language spec)")
    sp.add_argument("--sizes", type=_int_triple, help="train,dev,test utterances per training language")
    sp.add_argument("--heldout-sizes", type=_int_triple, help="adapt,adapt_dev,adapt_test for the held-out language")
    sp.add_argument("--f0", action="store_true", help="append the Mel-scaled F0 column")

    sp = add("prepare", cmd_prepare, "build tier transcripts and alphabets")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--variant", type=int, default=1)
    sp.add_argument("--out", required=True)

    sp = add("featurize", cmd_featurize, "compute features for every manifest record")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--f0", action="store_true")

    sp = add("train", cmd_train, "train a multilingual model")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--splits")
    sp.add_argument("--train-config", help="training key=value file")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--variant", type=int)
    sp.add_argument("--hidden-dim", type=int)
    sp.add_argument("--fc-dim", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--max-epochs", type=int)
    sp.add_argument("--patience", type=int)
    sp.add_argument("--f0", action="store_true")
    sp.add_argument("--out", required=True)

    sp = add("adapt", cmd_adapt, "cross-lingual initialization and two-stage adaptation")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--splits", required=True)
    sp.add_argument("--language", required=True)
    sp.add_argument("--adapt-utts", type=int, default=60)
    sp.add_argument("--stage-a-epochs", type=int, default=50)
    sp.add_argument("--stage-b-epochs", type=int, default=50)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--f0", action="store_true")
    sp.add_argument("--audit")
    sp.add_argument("--out", required=True)

    sp = add("decode", cmd_decode, "beam-search decode every tier")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--splits")
    sp.add_argument("--split")
    sp.add_argument("--language")
    sp.add_argument("--beam-width", type=int, default=25)
    sp.add_argument("--lm-weight", type=float, default=0.1)
    sp.add_argument("--no-lm", action="store_true")
    sp.add_argument("--greedy", action="store_true")
    sp.add_argument("--f0", action="store_true")
    sp.add_argument("--out", required=True)

    sp = add("score", cmd_score, "score hypotheses against manifest references")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--hyp-dir", required=True)
    sp.add_argument("--variant", type=int, default=1)
    sp.add_argument("--splits")
    sp.add_argument("--split")
    sp.add_argument("--language")
    sp.add_argument("--label")
    sp.add_argument("--out", required=True)

    sp = add("report", cmd_report, "merge error-rate CSVs into a table and figures")
    sp.add_argument("--csv", nargs="+", required=True)
    sp.add_argument("--name", default="report")
    sp.add_argument("--out", required=True)

    sp = add("run", cmd_run, "run a full experiment plan")
    sp.add_argument("--plan", help="experiment plan key=value file")
    sp.add_argument("--setting", choices=("multilingual", "cross-lingual", "monolingual"))
    sp.add_argument("--manifest")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    return p, subs


SEED_REQUIRED = ("synth", "train")


def _apply_config(parser, sub: argparse.ArgumentParser, path: str) -> None:
    values = read_kv(path)
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config", "func")}
    defaults = {}
    for key, raw in values.items():
        dest = key.replace("-", "_")
        if dest not in actions:
            raise ConfigError(f"{path}: unknown option {key!r}")
        action = actions[dest]
        if isinstance(action, argparse._StoreTrueAction):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"{path}: {key} must be true or false")
            defaults[dest] = raw.lower() in ("true", "1", "yes")
        elif action.nargs in ("+", "*"):
            defaults[dest] = raw.split()
        else:
            defaults[dest] = raw
        action.required = False
    sub.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    command = "tonectc"
    try:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("command", nargs="?")
        pre.add_argument("--config")
        known, _ = pre.parse_known_args([a for a in argv if a not in ("-v", "--verbose")])
        if known.command in subs:
            command = known.command
            if known.config:
                _apply_config(parser, subs[known.command], known.config)
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s", stream=sys.stderr)
        if args.command in SEED_REQUIRED and args.seed is None:
            raise ConfigError("--seed is required")
        return args.func(args)
    except TonectcError as exc:
        stage = exc.stage or command
        print(f"tonectc {stage}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"tonectc {command}: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
