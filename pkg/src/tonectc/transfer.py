"""Cross-lingual head initialization and two-stage adaptation."""

from __future__ import annotations

import copy
import dataclasses
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .corpus import Example
from .errors import DataEmpty, NoCandidate, TonectcError, Unresolvable
from .ipa import IpaSymbol, differs_by_one_diacritic, nearest_phone, parse_phone
from .model import (
    AcousticModel,
    Checkpoint,
    TrainConfig,
    fit,
    train_lms,
)
from .tiers import Tier, TierAlphabet, split_joint

NEUTRAL_LEVEL = 3


class Resolution(str, enum.Enum):
    EXACT = "exact"
    DIACRITIC = "diacritic"
    NEAREST = "feature-nearest"
    JOINT = "joint-two-stage"


@dataclass(frozen=True)
class SymbolMapping:
    symbol: str
    resolution: Resolution
    source: str  # k' (equal to symbol for exact matches)
    languages: tuple[str, ...]

    def audit_line(self) -> str:
        return f"{self.symbol}\t{self.resolution.value}\t{self.source}\t{','.join(self.languages)}"


def _phone(symbol: str) -> IpaSymbol:
    try:
        return parse_phone(symbol)
    except TonectcError as exc:
        raise Unresolvable(f"{symbol!r} is not a phone: {exc}") from exc


def tone_levels(tone: str) -> tuple[list[int], str]:
    """``"3ʔ5"`` -> ``([3, 5], "ʔ")``; an empty tone is the neutral mid level."""
    levels = [int(c) for c in tone if c.isdigit()]
    marks = "".join(c for c in tone if not c.isdigit())
    return (levels or [NEUTRAL_LEVEL]), marks


def tone_distance(a: str, b: str) -> int:
    """Sum of level differences, the shorter sequence padded with its last target."""
    la, _ = tone_levels(a)
    lb, _ = tone_levels(b)
    n = max(len(la), len(lb))
    la = la + [la[-1]] * (n - len(la))
    lb = lb + [lb[-1]] * (n - len(lb))
    return sum(abs(x - y) for x, y in zip(la, lb))


def _languages_with(symbol: str, alphabets: Mapping[str, TierAlphabet]) -> tuple[str, ...]:
    return tuple(sorted(lang for lang, a in alphabets.items() if symbol in a.symbols[1:]))


def _phone_cascade(k: str, candidates: set[str]) -> tuple[Resolution, str]:
    """exact > one diacritic > feature-nearest over a pooled candidate set."""
    if k in candidates:
        return Resolution.EXACT, k
    target = _phone(k)
    pool = []
    for c in candidates:
        if c.startswith("<"):
            continue
        pool.append(_phone(c))
    try:
        best = nearest_phone(target, pool)
    except (NoCandidate, TonectcError) as exc:
        raise Unresolvable(f"no same-category symbol for {k!r}") from exc
    res = Resolution.DIACRITIC if differs_by_one_diacritic(target, best) else Resolution.NEAREST
    return res, best.phone


def resolve_symbol(k: str, tier: Tier, alphabets: Mapping[str, TierAlphabet]) -> SymbolMapping:
    """Map target symbol ``k`` onto symbols of the training languages' ``tier`` alphabets."""
    if not alphabets:
        raise Unresolvable("no training alphabets")
    langs = _languages_with(k, alphabets)
    if langs:
        return SymbolMapping(k, Resolution.EXACT, k, langs)
    union = set()
    for a in alphabets.values():
        union.update(a.symbols[1:])
    if k.startswith("<"):
        raise Unresolvable(f"marker {k!r} absent from every training language")
    if Tier(tier) is Tier.JOINT:
        phone, tone = split_joint(k)
        variants: dict[str, list[str]] = {}
        for s in union:
            if not s.startswith("<"):
                p, t = split_joint(s)
                variants.setdefault(p, []).append(t)
        res, best_phone = _phone_cascade(phone, set(variants))
        _, marks = tone_levels(tone)
        best_tone = min(variants[best_phone],
                        key=lambda t: (tone_distance(tone, t), tone_levels(t)[1] != marks, t))
        source = best_phone + best_tone
        if tone or best_tone:
            res = Resolution.JOINT
        # toneless on both sides: the phone cascade alone decided
        return SymbolMapping(k, res, source, _languages_with(source, alphabets))
    res, source = _phone_cascade(k, union)
    return SymbolMapping(k, res, source, _languages_with(source, alphabets))


def resolve_alphabet(target: TierAlphabet, alphabets: Mapping[str, TierAlphabet]) -> list[SymbolMapping]:
    """Mappings for every non-blank target symbol."""
    return [resolve_symbol(k, target.tier, alphabets) for k in target.symbols[1:]]


def init_head(target: TierAlphabet, mappings: Sequence[SymbolMapping],
              heads: Mapping[str, tuple[np.ndarray, np.ndarray]],
              alphabets: Mapping[str, TierAlphabet]) -> tuple[np.ndarray, np.ndarray]:
    """Rows of the new head: mean of the contributing languages' rows.

    ``heads[lang] = (W, b)`` with one row per symbol of ``alphabets[lang]``.
    The blank row is the mean of every training language's blank row.
    """
    if not heads:
        raise Unresolvable("no trained heads to initialize from")
    langs = sorted(heads)
    d = heads[langs[0]][0].shape[1]
    W = np.zeros((len(target), d), dtype=np.float64)
    b = np.zeros(len(target), dtype=np.float64)
    W[0] = np.mean([heads[l][0][0] for l in langs], axis=0)
    b[0] = np.mean([heads[l][1][0] for l in langs])
    by_symbol = {m.symbol: m for m in mappings}
    for i, k in enumerate(target.symbols[1:], 1):
        m = by_symbol.get(k)
        if m is None or not m.languages:
            raise Unresolvable(f"no mapping for {k!r}")
        rows = [heads[l][0][alphabets[l].index(m.source)] for l in m.languages]
        bias = [heads[l][1][alphabets[l].index(m.source)] for l in m.languages]
        W[i] = np.mean(rows, axis=0)
        b[i] = np.mean(bias)
    return W, b


def training_alphabets(model: AcousticModel, tier: Tier, exclude: str | None = None) -> dict[str, TierAlphabet]:
    return {lang: a for (t, lang), a in model.alphabets.items() if t is Tier(tier) and lang != exclude}


def format_audit(mappings: Mapping[Tier, Sequence[SymbolMapping]]) -> str:
    lines = []
    for tier in sorted(mappings, key=lambda t: t.value):
        lines.append(f"# {tier.value}")
        lines.extend(m.audit_line() for m in mappings[tier])
    return "\n".join(lines) + "\n"


def write_audit(path, mappings: Mapping[Tier, Sequence[SymbolMapping]]) -> None:
    Path(path).write_text(format_audit(mappings), encoding="utf-8")


def parse_audit(text: str) -> dict[str, list[SymbolMapping]]:
    out: dict[str, list[SymbolMapping]] = {}
    tier = ""
    for line in text.splitlines():
        if line.startswith("# "):
            tier = line[2:]
            out[tier] = []
        elif line:
            k, res, src, langs = line.split("\t")
            out[tier].append(SymbolMapping(k, Resolution(res), src, tuple(l for l in langs.split(",") if l)))
    return out


def initialize(ckpt: Checkpoint, lang: str, target_alphabets: Mapping[Tier, TierAlphabet]
               ) -> tuple[Checkpoint, dict[Tier, list[SymbolMapping]]]:
    """Copy of ``ckpt`` with heads for ``lang`` built from the training languages' heads."""
    model = copy.deepcopy(ckpt.model)
    audit = {}
    for tier in model.config.model.tiers:
        target = target_alphabets[tier]
        sources = training_alphabets(model, tier, exclude=lang)
        mappings = resolve_alphabet(target, sources)
        heads = {}
        for l in sources:
            h = model.head(tier, l)
            heads[l] = (h.weight.detach().double().numpy(), h.bias.detach().double().numpy())
        W, b = init_head(target, mappings, heads, sources)
        head = model.add_head(TierAlphabet(tier, lang, target.symbols))
        dtype = next(model.encoder.parameters()).dtype
        with torch.no_grad():
            head.weight.copy_(torch.as_tensor(W, dtype=dtype))
            head.bias.copy_(torch.as_tensor(b, dtype=dtype))
        head.to(dtype)
        audit[tier] = mappings
    meta = dict(ckpt.meta, adapted_language=lang)
    return Checkpoint(model, dict(ckpt.lms), {}, meta), audit


@dataclass
class AdaptConfig:
    stage_a_epochs: int = 50
    stage_b_epochs: int = 50


def adapt(ckpt: Checkpoint, lang: str, target_alphabets: Mapping[Tier, TierAlphabet],
          train: Sequence[Example], dev: Sequence[Example] | None, config: TrainConfig,
          adapt_config: AdaptConfig | None = None, log=None
          ) -> tuple[Checkpoint, dict[Tier, list[SymbolMapping]]]:
    """Initialize heads for ``lang``, train them alone, then fine-tune everything."""
    if not train:
        raise DataEmpty("no adaptation utterances")
    adapt_config = adapt_config or AdaptConfig()
    new, audit = initialize(ckpt, lang, target_alphabets)
    model = new.model
    model.config = dataclasses.replace(model.config, lr=config.lr, rho=config.rho, eps=config.eps,
                                       batch_size=config.batch_size, patience=config.patience,
                                       seed=config.seed)
    history = {}
    if adapt_config.stage_a_epochs > 0:
        heads = [p for t in model.config.model.tiers for p in model.head(t, lang).parameters()]
        res = fit(model, train, dev, model.config, parameters=heads,
                  max_epochs=adapt_config.stage_a_epochs, log=log)
        history["stage_a"] = [dataclasses.asdict(h) for h in res.history]
    opt_state = {}
    if adapt_config.stage_b_epochs > 0:
        res = fit(model, train, dev, model.config, max_epochs=adapt_config.stage_b_epochs, log=log)
        history["stage_b"] = [dataclasses.asdict(h) for h in res.history]
        opt_state = res.optimizer_state
    lms = dict(new.lms)
    if adapt_config.stage_a_epochs > 0 or adapt_config.stage_b_epochs > 0:
        lms.update({key: lm for key, lm in train_lms(model, train).items() if key[1] == lang})
    meta = dict(new.meta, adaptation=history)
    return Checkpoint(model, lms, opt_state, meta), audit


def encoder_digest(model: AcousticModel) -> dict[str, bytes]:
    return {name: p.detach().cpu().numpy().tobytes() for name, p in model.encoder.named_parameters()}
