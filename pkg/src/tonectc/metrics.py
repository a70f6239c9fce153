"""Edit-distance error rates and class-filtered breakdowns."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import FormatError, MissingTier
from .ipa import Category
from .tiers import BOUNDARY, NEUTRAL, ModelVariant, Tier, phone_category, split_joint

POOLED = "all"
CSV_FIELDS = ("metric", "model", "language", "S", "D", "I", "N", "rate")


@dataclass(frozen=True)
class EditCounts:
    S: int = 0
    D: int = 0
    I: int = 0
    N: int = 0

    def __add__(self, other: "EditCounts") -> "EditCounts":
        return EditCounts(self.S + other.S, self.D + other.D, self.I + other.I, self.N + other.N)

    @property
    def errors(self) -> int:
        return self.S + self.D + self.I

    @property
    def rate(self) -> float | None:
        """Percent error; ``None`` when the reference is empty."""
        if self.N == 0:
            return None
        return 100.0 * self.errors / self.N


def edit_distance(ref: Sequence, hyp: Sequence) -> tuple[int, int, int]:
    """Levenshtein alignment counts ``(S, D, I)``.

    Among minimal alignments the backtrace prefers match/substitution, then
    deletion, then insertion.
    """
    n, m = len(ref), len(hyp)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            cost[i, j] = min(sub, cost[i - 1, j] + 1, cost[i, j - 1] + 1)
    S = D = I = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            S += int(ref[i - 1] != hyp[j - 1])
            i, j = i - 1, j - 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            D += 1
            i -= 1
        else:
            I += 1
            j -= 1
    return S, D, I


def count(ref: Sequence, hyp: Sequence) -> EditCounts:
    S, D, I = edit_distance(ref, hyp)
    return EditCounts(S, D, I, len(ref))


def filtered_counts(ref: Sequence, hyp: Sequence, keep: Callable[[str], bool]) -> EditCounts:
    """Counts after deleting out-of-class symbols from both sides."""
    return count([s for s in ref if keep(s)], [s for s in hyp if keep(s)])


def filtered_rate(ref: Sequence, hyp: Sequence, keep: Callable[[str], bool]) -> float | None:
    return filtered_counts(ref, hyp, keep).rate


def _category(symbol: str) -> Category | None:
    if symbol.startswith("<"):
        return None
    phone, _ = split_joint(symbol)
    try:
        return phone_category(phone)
    except FormatError:
        return None


def is_consonant(symbol: str) -> bool:
    return _category(symbol) is Category.CONSONANT


def is_vowel(symbol: str) -> bool:
    return _category(symbol) is Category.VOWEL


def keep_all(symbol: str) -> bool:
    return True


def phones_from_joint(symbols: Iterable[str]) -> list[str]:
    return [split_joint(s)[0] for s in symbols]


def tones_from_joint(symbols: Iterable[str]) -> list[str]:
    """Tone-tier style sequence from fused joint symbols: each vowel's tone
    glyphs (or ``<neutral>``) followed by ``<boundary>``."""
    out = []
    for s in symbols:
        if not is_vowel(s):
            continue
        _, tone = split_joint(s)
        out.extend(tone if tone else [NEUTRAL])
        out.append(BOUNDARY)
    return out


def vowels_bare(symbols: Iterable[str]) -> list[str]:
    return [split_joint(s)[0] for s in symbols if is_vowel(s)]


@dataclass(frozen=True)
class ErrorRow:
    metric: str
    model: str
    language: str
    counts: EditCounts

    @property
    def rate(self) -> float | None:
        return self.counts.rate

    def csv_fields(self) -> list[str]:
        c = self.counts
        return [self.metric, self.model, self.language, str(c.S), str(c.D), str(c.I), str(c.N),
                format_rate(c.rate)]


def format_rate(rate: float | None) -> str:
    return "undefined" if rate is None else f"{rate:.2f}"


# metric -> (source tier, transform applied to both ref and hyp)
def _metric_plan(model: ModelVariant) -> list[tuple[str, Tier, Callable]]:
    tiers = set(model.tiers)
    plan = []
    if Tier.JOINT in tiers:
        plan.append(("JER", Tier.JOINT, list))
    if Tier.PHONE in tiers:
        plan.append(("PER", Tier.PHONE, list))
    if Tier.TONE in tiers:
        plan.append(("TER", Tier.TONE, list))
    if Tier.VOICE in tiers:
        plan.append(("VER", Tier.VOICE, list))
    breakdown = Tier.JOINT if Tier.JOINT in tiers else Tier.PHONE
    plan.append(("CoER", breakdown, lambda s: [x for x in s if is_consonant(x)]))
    plan.append(("VoER", breakdown, vowels_bare))
    if Tier.JOINT in tiers:
        plan.append(("PER-joint", Tier.JOINT, phones_from_joint))
        plan.append(("TER-joint", Tier.JOINT, tones_from_joint))
    return plan


def report(hyps: Mapping[Tier, Mapping[str, Sequence[str]]],
           refs: Mapping[Tier, Mapping[str, Sequence[str]]],
           model: ModelVariant, utt_lang: Mapping[str, str],
           label: str | None = None) -> list[ErrorRow]:
    """Per-language and pooled error rows for every metric the variant supports."""
    label = label or model.name
    for tier in model.tiers:
        if tier not in hyps:
            raise MissingTier(f"no hypotheses for tier {tier.value!r}")
        if tier not in refs:
            raise MissingTier(f"no references for tier {tier.value!r}")
    langs = sorted(set(utt_lang.values()))
    rows = []
    for metric, tier, transform in _metric_plan(model):
        per_lang = {lang: EditCounts() for lang in langs}
        for utt in sorted(refs[tier]):
            if utt not in utt_lang:
                continue
            hyp = hyps[tier].get(utt)
            if hyp is None:
                raise MissingTier(f"no {tier.value} hypothesis for {utt!r}")
            per_lang[utt_lang[utt]] += count(transform(refs[tier][utt]), transform(hyp))
        pooled = EditCounts()
        for lang in langs:
            rows.append(ErrorRow(metric, label, lang, per_lang[lang]))
            pooled += per_lang[lang]
        rows.append(ErrorRow(metric, label, POOLED, pooled))
    return rows


def rows_to_csv(rows: Iterable[ErrorRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


def rows_from_csv(text: str) -> list[ErrorRow]:
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        c = EditCounts(int(rec["S"]), int(rec["D"]), int(rec["I"]), int(rec["N"]))
        out.append(ErrorRow(rec["metric"], rec["model"], rec["language"], c))
    return out


def format_table(rows: Sequence[ErrorRow]) -> str:
    """Plain-text table: one block per metric, one line per model, one column per language."""
    langs = []
    for r in rows:
        if r.language not in langs:
            langs.append(r.language)
    langs = sorted(l for l in langs if l != POOLED) + ([POOLED] if POOLED in langs else [])
    cells: dict[tuple[str, str], dict[str, str]] = {}
    metrics, models = [], {}
    for r in rows:
        if r.metric not in metrics:
            metrics.append(r.metric)
        models.setdefault(r.metric, [])
        if r.model not in models[r.metric]:
            models[r.metric].append(r.model)
        cells.setdefault((r.metric, r.model), {})[r.language] = format_rate(r.rate)
    mw = max([len(m) for m in metrics] + [6])
    lw = max([len(m) for ms in models.values() for m in ms] + [5])
    cw = max([len(l) for l in langs] + [9])
    header = f"{'':<{mw}}  {'':<{lw}}  " + "  ".join(f"{l:>{cw}}" for l in langs)
    lines = [header, "-" * len(header)]
    for metric in metrics:
        for i, model in enumerate(models[metric]):
            vals = cells[(metric, model)]
            name = metric if i == 0 else ""
            lines.append(f"{name:<{mw}}  {model:<{lw}}  "
                         + "  ".join(f"{vals.get(l, '-'):>{cw}}" for l in langs))
        lines.append("-" * len(header))
    return "\n".join(lines) + "\n"
