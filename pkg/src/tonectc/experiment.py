"""Multilingual, cross-lingual and monolingual experiment orchestration."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import torch

from .corpus import Example, ManifestRecord, load_examples, read_manifest, tokenized_corpus
from .errors import ConfigError, DataError, DimMismatch, in_stage
from .features import NUM_MEL
from .kvconfig import format_kv, read_kv
from .metrics import ErrorRow, format_table, report, rows_to_csv
from .model import (
    Checkpoint,
    DecodeOptions,
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .plotting import error_rate_figure, training_curve_figure
from .synth import read_splits, select
from .tiers import Tier, build_alphabets, format_transcripts
from .transfer import AdaptConfig, adapt, format_audit

logger = logging.getLogger(__name__)

SETTINGS = ("multilingual", "cross-lingual", "monolingual")


@dataclass
class ExperimentPlan:
    setting: str = "multilingual"
    manifest: str = "manifest.jsonl"
    splits: str = "splits.json"
    variant: int = 1
    seed: int = 0
    with_f0: bool = False
    hidden_dim: int = 64
    fc_dim: int = 64
    lr: float = 1.0
    batch_size: int = 4
    max_epochs: int = 200
    patience: int = 10
    train_utts: int = 0  # per training language; 0 keeps the whole split
    adapt_language: str = ""
    adapt_utts: int = 60
    stage_a_epochs: int = 50
    stage_b_epochs: int = 50
    mono_hidden_dim: int = 16
    mono_fc_dim: int = 16
    pretrained: str = ""
    beam_width: int = 25
    lm_weight: float = 0.1
    greedy: bool = False

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ConfigError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if self.variant not in (1, 2, 3, 4):
            raise ConfigError(f"variant must be 1-4, got {self.variant}")

    @property
    def label(self) -> str:
        return f"model{self.variant}" + ("+F0" if self.with_f0 else "")

    def train_config(self, input_dim: int, small: bool = False) -> TrainConfig:
        return TrainConfig(variant=self.variant, input_dim=input_dim,
                           hidden_dim=self.mono_hidden_dim if small else self.hidden_dim,
                           fc_dim=self.mono_fc_dim if small else self.fc_dim,
                           lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs,
                           patience=self.patience, seed=self.seed)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping) -> "ExperimentPlan":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise ConfigError(f"unknown plan option {key!r}")
            typ = type(getattr(cls(), key))
            try:
                if typ is bool and isinstance(raw, str):
                    if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                        raise ValueError(raw)
                    kwargs[key] = raw.lower() in ("true", "1", "yes")
                else:
                    kwargs[key] = typ(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        return cls(**kwargs)

    @classmethod
    def read(cls, path) -> "ExperimentPlan":
        return cls.from_dict(read_kv(path))

    def write(self, path) -> None:
        Path(path).write_text(format_kv(self.to_dict()), encoding="utf-8")


@dataclass
class RunResult:
    rows: list[ErrorRow]
    checkpoint: Checkpoint
    outputs: dict[str, Path]


def check_disjoint(splits: Mapping[str, Sequence[str]]) -> None:
    owner: dict[str, str] = {}
    for name in sorted(splits):
        for utt in splits[name]:
            if utt in owner:
                raise DataError(f"utterance {utt!r} is in both {owner[utt]!r} and {name!r}")
            owner[utt] = name


def _split(records, splits, name, limit_per_lang: int = 0) -> list[ManifestRecord]:
    recs = select(records, splits.get(name, []))
    if limit_per_lang <= 0:
        return recs
    kept, seen = [], {}
    for r in recs:
        seen[r.lang] = seen.get(r.lang, 0) + 1
        if seen[r.lang] <= limit_per_lang:
            kept.append(r)
    return kept


def _input_dim(examples: Sequence[Example], with_f0: bool) -> int:
    dims = {e.features.shape[1] for e in examples}
    if len(dims) != 1:
        raise DimMismatch(f"utterances disagree on feature dimension: {sorted(dims)}")
    dim = dims.pop()
    expected = NUM_MEL + 1 if with_f0 else NUM_MEL
    if dim != expected:
        raise DimMismatch(f"plan {'with' if with_f0 else 'without'} F0 expects {expected}-dim features, "
                          f"corpus has {dim}")
    return dim


def _refs(examples: Sequence[Example], tiers) -> dict[Tier, dict[str, list[str]]]:
    return {t: {e.utt_id: list(e.tiers[t]) for e in examples} for t in tiers}


def _score(ckpt: Checkpoint, test: Sequence[Example], plan: ExperimentPlan):
    options = DecodeOptions(plan.beam_width, plan.lm_weight, greedy=plan.greedy)
    hyps = evaluate(ckpt, test, options)
    tiers = ckpt.config.model.tiers
    rows = report(hyps, _refs(test, tiers), ckpt.config.model, {e.utt_id: e.lang for e in test},
                  label=plan.label)
    return rows, hyps


def run(plan: ExperimentPlan, out_dir, root=None, log: Callable[[str], None] | None = None) -> RunResult:
    """Execute one plan and write the report, figures, hypotheses and checkpoint to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Path(plan.manifest)
    if root is not None and not manifest.is_absolute():
        manifest = Path(root) / manifest
    root = manifest.parent
    torch.set_num_threads(1)
    with in_stage("prepare"):
        records = read_manifest(manifest)
        splits_path = Path(plan.splits)
        splits = read_splits(splits_path if splits_path.is_absolute() else root / splits_path)
        check_disjoint(splits)
        model = TrainConfig(variant=plan.variant).model
    outputs: dict[str, Path] = {}
    curves: dict[str, list] = {}
    audit_text = None

    def load(recs):
        return load_examples(recs, root, model, with_f0=plan.with_f0)

    if plan.setting == "multilingual":
        with in_stage("prepare"):
            train_recs = _split(records, splits, "train", plan.train_utts)
            dev_recs = _split(records, splits, "dev")
            test_recs = _split(records, splits, "test")
            langs = sorted({r.lang for r in train_recs})
            alphabets = build_alphabets(tokenized_corpus(
                [r for r in records if r.lang in langs]), model)
            train_ex, dev_ex, test_ex = load(train_recs), load(dev_recs), load(test_recs)
        with in_stage("train"):
            config = plan.train_config(_input_dim(train_ex, plan.with_f0))
            ckpt = train(train_ex, dev_ex, alphabets, config, log=log)
        curves["train"] = ckpt.meta.get("history", [])
    else:
        with in_stage("prepare"):
            lang = plan.adapt_language or _heldout_language(records, splits)
            if plan.setting == "cross-lingual" and lang in {r.lang for r in _split(records, splits, "train")}:
                raise ConfigError(f"adaptation language {lang!r} is also a training language")
            adapt_recs = [r for r in _split(records, splits, "adapt") if r.lang == lang][: plan.adapt_utts]
            dev_recs = [r for r in _split(records, splits, "adapt_dev") if r.lang == lang]
            test_recs = [r for r in _split(records, splits, "adapt_test") if r.lang == lang]
            if not adapt_recs:
                raise DataError(f"no adaptation utterances for {lang!r}")
            target = build_alphabets(tokenized_corpus([r for r in records if r.lang == lang]), model)
            target_alphabets = {t: a for (t, l), a in target.items() if l == lang}
            adapt_ex, dev_ex, test_ex = load(adapt_recs), load(dev_recs), load(test_recs)
        if plan.setting == "monolingual":
            with in_stage("train"):
                config = plan.train_config(_input_dim(adapt_ex, plan.with_f0), small=True)
                ckpt = train(adapt_ex, dev_ex, target, config, log=log)
            curves["train"] = ckpt.meta.get("history", [])
        else:
            with in_stage("train"):
                if plan.pretrained:
                    base = load_checkpoint(plan.pretrained)
                else:
                    train_recs = _split(records, splits, "train", plan.train_utts)
                    train_recs = [r for r in train_recs if r.lang != lang]
                    mdev_recs = [r for r in _split(records, splits, "dev") if r.lang != lang]
                    langs = sorted({r.lang for r in train_recs})
                    alphabets = build_alphabets(tokenized_corpus(
                        [r for r in records if r.lang in langs]), model)
                    train_ex = load(train_recs)
                    config = plan.train_config(_input_dim(train_ex, plan.with_f0))
                    base = train(train_ex, load(mdev_recs), alphabets, config, log=log)
                    curves["pretrain"] = base.meta.get("history", [])
                if lang in base.model.languages:
                    raise ConfigError(f"adaptation language {lang!r} was seen in training")
            with in_stage("adapt"):
                ckpt, audit = adapt(base, lang, target_alphabets, adapt_ex, dev_ex, base.config,
                                    AdaptConfig(plan.stage_a_epochs, plan.stage_b_epochs), log=log)
                audit_text = format_audit(audit)
                for stage in ("stage_a", "stage_b"):
                    curves[stage] = ckpt.meta.get("adaptation", {}).get(stage, [])
    with in_stage("decode"):
        rows, hyps = _score(ckpt, test_ex, plan)
    with in_stage("report"):
        outputs.update(write_report(out, rows, curves))
        for tier, per_utt in hyps.items():
            p = out / f"hyp_{tier.value}.txt"
            p.write_text(format_transcripts(sorted(per_utt.items())), encoding="utf-8")
            outputs[f"hyp_{tier.value}"] = p
        if audit_text is not None:
            outputs["audit"] = out / "mapping_audit.tsv"
            outputs["audit"].write_text(audit_text, encoding="utf-8")
        outputs["checkpoint"] = out / "model.ckpt"
        save_checkpoint(outputs["checkpoint"], ckpt)
        outputs["plan"] = out / "plan.cfg"
        plan.write(outputs["plan"])
    return RunResult(rows, ckpt, outputs)


def _heldout_language(records, splits) -> str:
    langs = sorted({r.lang for r in select(records, splits.get("adapt", []))})
    if len(langs) != 1:
        raise ConfigError(f"cannot infer the adaptation language from splits (found {langs})")
    return langs[0]


def write_report(out_dir, rows: Sequence[ErrorRow], curves: Mapping[str, list] | None = None,
                 name: str = "report") -> dict[str, Path]:
    """``<name>.csv``, ``<name>.txt`` and PNG figures next to them."""
    out = Path(out_dir)
    paths = {"csv": out / f"{name}.csv", "table": out / f"{name}.txt"}
    paths["csv"].write_text(rows_to_csv(rows), encoding="utf-8")
    paths["table"].write_text(format_table(rows), encoding="utf-8")
    paths["figure"] = error_rate_figure(rows, out / f"{name}_error_rates.png")
    if curves and any(curves.values()):
        paths["curves"] = training_curve_figure(curves, out / f"{name}_training_curves.png")
        (out / f"{name}_history.json").write_text(json.dumps(curves, indent=1, sort_keys=True) + "\n",
                                                  encoding="utf-8")
        paths["history"] = out / f"{name}_history.json"
    return paths
