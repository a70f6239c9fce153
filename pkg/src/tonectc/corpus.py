"""Manifests and in-memory training examples."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, FormatError, TonectcError
from .features import (
    FeatureMatrix,
    SynthPlan,
    featurize_audio,
    read_tpf,
    read_wav,
    synth_features,
    znorm_per_speaker,
)
from .ipa import Inventory, builtin_inventory, tokenize_ipa
from .tiers import ModelVariant, Tier, build_tiers

SOURCE_KINDS = ("features", "audio", "plan")


@dataclass(frozen=True)
class ManifestRecord:
    utt_id: str
    lang: str
    speaker_id: str
    source: dict
    ipa: str

    def __post_init__(self):
        if len(self.source) != 1 or next(iter(self.source)) not in SOURCE_KINDS:
            raise FormatError(f"{self.utt_id}: source must have exactly one of {SOURCE_KINDS}")

    @property
    def source_kind(self) -> str:
        return next(iter(self.source))

    def to_json(self) -> str:
        return json.dumps({"utt_id": self.utt_id, "lang": self.lang, "speaker_id": self.speaker_id,
                           "source": self.source, "ipa": self.ipa}, ensure_ascii=False, sort_keys=True)


def write_manifest(path, records: Iterable[ManifestRecord]) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in records), encoding="utf-8")


def read_manifest(path, check_files: bool = True) -> list[ManifestRecord]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    records = []
    seen = set()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            rec = ManifestRecord(d["utt_id"], d["lang"], d["speaker_id"], d["source"], d["ipa"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}:{lineno}: bad manifest record ({exc})") from exc
        if rec.utt_id in seen:
            raise FormatError(f"{path}:{lineno}: duplicate utt_id {rec.utt_id!r}")
        seen.add(rec.utt_id)
        if check_files and rec.source_kind in ("features", "audio"):
            f = resolve(path.parent, rec.source[rec.source_kind])
            if not f.exists():
                raise DataError(f"{path}:{lineno}: missing file {f}")
        records.append(rec)
    return records


def resolve(root, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(root) / p


@dataclass
class Example:
    utt_id: str
    lang: str
    speaker_id: str
    features: np.ndarray  # (T, F) float32
    tiers: dict[Tier, tuple[str, ...]] = field(default_factory=dict)


def load_features(rec: ManifestRecord, root, with_f0: bool = False, seed: int = 0) -> FeatureMatrix:
    kind = rec.source_kind
    val = rec.source[kind]
    if kind == "features":
        return FeatureMatrix(read_tpf(resolve(root, val)), rec.utt_id, rec.speaker_id)
    if kind == "audio":
        samples, rate = read_wav(resolve(root, val))
        return featurize_audio(samples, rate, with_f0, rec.utt_id, rec.speaker_id)
    plan = SynthPlan.from_json(val["segments"])
    return synth_features(plan, int(val.get("seed", seed)), float(val.get("noise", 0.3)), with_f0,
                          rec.utt_id, rec.speaker_id)


def inventory_for(lang: str, inventories: dict[str, Inventory] | None = None) -> Inventory:
    if inventories and lang in inventories:
        return inventories[lang]
    try:
        return builtin_inventory(lang)
    except (FileNotFoundError, OSError):
        return Inventory(lang=lang)


def load_examples(records: Sequence[ManifestRecord], root, model: ModelVariant,
                  with_f0: bool = False, znorm: bool = True,
                  inventories: dict[str, Inventory] | None = None) -> list[Example]:
    mats = []
    for rec in records:
        try:
            mats.append(load_features(rec, root, with_f0))
        except TonectcError as exc:
            raise type(exc)(f"{rec.utt_id}: {exc}") from exc
    if znorm:
        mats = znorm_per_speaker(mats)
    out = []
    for rec, mat in zip(records, mats):
        syllables = tokenize_ipa(rec.ipa, inventory_for(rec.lang, inventories))
        tiers = {t: tr.symbols for t, tr in build_tiers(syllables, rec.lang, model).items()}
        out.append(Example(rec.utt_id, rec.lang, rec.speaker_id, mat.frames, tiers))
    return out


def tokenized_corpus(records: Sequence[ManifestRecord], inventories=None):
    for rec in records:
        yield rec.lang, tokenize_ipa(rec.ipa, inventory_for(rec.lang, inventories))
