"""IPA tokenization, phone features and knowledge-based phone similarity."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    CategoryMismatch,
    EmptySyllable,
    MisplacedTone,
    NoCandidate,
    UnknownSymbol,
)
from .kvconfig import read_kv

TONE_LETTERS = {"˥": 55, "˦": 44, "˧": 33, "˨": 22, "˩": 11}
LEVEL_TO_LETTER = {v: k for k, v in TONE_LETTERS.items()}
VOICE_MARKS = ("ʔ", "h")
DIACRITICS = ("ː", "ʰ")
LENGTH_MARK = "ː"
ASPIRATION = "ʰ"
SYLLABLE_DELIMITER = "."

BUILTIN_LANGUAGES = ("cmn", "yue", "vie", "lao")


class Category(str, enum.Enum):
    CONSONANT = "consonant"
    VOWEL = "vowel"
    TONE_LETTER = "tone-letter"
    VOICE_QUALITY = "voice-quality"
    MARKER = "marker"


class ToneTarget(enum.Enum):
    """A Chao pitch level or one of the two tone-tier markers."""

    L11 = 11
    L22 = 22
    L33 = 33
    L44 = 44
    L55 = 55
    NEUTRAL = "neutral"
    BOUNDARY = "boundary"

    @classmethod
    def from_letter(cls, letter: str) -> "ToneTarget":
        return cls(TONE_LETTERS[letter])

    @property
    def is_level(self) -> bool:
        return isinstance(self.value, int)

    @property
    def letter(self) -> str:
        if not self.is_level:
            return f"⟨{self.value}⟩"
        return LEVEL_TO_LETTER[self.value]

    @property
    def digit(self) -> int:
        """Single Chao digit, 1 (extra low) to 5 (extra high)."""
        if not self.is_level:
            raise ValueError(f"{self} has no pitch level")
        return self.value // 11


@dataclass(frozen=True)
class IpaSymbol:
    """One tokenized unit.

    ``tones`` keeps the glyphs written after a vowel in order: Chao tone
    letters and any voice-quality marks (ʔ, h) that occur inside the tone
    description, e.g. ``("˧", "ʔ", "˥")``.
    """

    base: str
    category: Category
    diacritics: tuple[str, ...] = ()
    tones: tuple[str, ...] = ()

    def __post_init__(self):
        if self.tones and self.category is not Category.VOWEL:
            raise ValueError(f"tones attached to non-vowel {self.base!r}")
        if self.category is Category.VOICE_QUALITY and self.base not in VOICE_MARKS:
            raise ValueError(f"voice-quality symbol must be ʔ or h, got {self.base!r}")

    @property
    def phone(self) -> str:
        return self.base + "".join(self.diacritics)

    @property
    def tone_targets(self) -> tuple[ToneTarget, ...]:
        return tuple(ToneTarget.from_letter(g) for g in self.tones if g in TONE_LETTERS)

    @property
    def voice_marks(self) -> tuple["IpaSymbol", ...]:
        return tuple(IpaSymbol(g, Category.VOICE_QUALITY) for g in self.tones if g in VOICE_MARKS)

    @property
    def is_long(self) -> bool:
        return LENGTH_MARK in self.diacritics

    @property
    def is_aspirated(self) -> bool:
        return ASPIRATION in self.diacritics

    def bare(self) -> "IpaSymbol":
        return IpaSymbol(self.base, self.category, self.diacritics)

    def render(self) -> str:
        return self.phone + "".join(self.tones)

    def __str__(self):
        return self.render()


@dataclass(frozen=True)
class PhoneFeatureVector:
    category: Category
    place: int = 0
    manner: int = 0
    voicing: int = 0
    height: int = 0
    backness: int = 0
    rounding: int = 0
    # offglide of a diphthong; equal to the nucleus for monophthongs
    off_height: int = 0
    off_backness: int = 0
    off_rounding: int = 0
    length: int = 0
    aspiration: int = 0


@dataclass(frozen=True)
class FeatureTable:
    entries: Mapping[str, tuple[Category, tuple[int, ...]]]

    @property
    def bases(self) -> frozenset[str]:
        return frozenset(self.entries)

    def category(self, base: str) -> Category:
        return self.entries[base][0]

    def vector(self, sym: IpaSymbol) -> PhoneFeatureVector:
        try:
            cat, values = self.entries[sym.base]
        except KeyError:
            raise UnknownSymbol(0, sym.base) from None
        length = int(sym.is_long)
        aspiration = int(sym.is_aspirated)
        if cat is Category.CONSONANT:
            place, manner, voicing = values[:3]
            return PhoneFeatureVector(cat, place=place, manner=manner, voicing=voicing,
                                      length=length, aspiration=aspiration)
        h, b, r = values[:3]
        oh, ob, orr = values[3:6] if len(values) >= 6 else (h, b, r)
        return PhoneFeatureVector(cat, height=h, backness=b, rounding=r,
                                  off_height=oh, off_backness=ob, off_rounding=orr,
                                  length=length, aspiration=aspiration)


def read_feature_table(path) -> FeatureTable:
    entries = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        entries[cols[0]] = (Category(cols[1]), tuple(int(c) for c in cols[2:] if c != ""))
    return FeatureTable(entries)


def _data_path(*parts) -> Path:
    return Path(str(resources.files("tonectc").joinpath("data", *parts)))


@lru_cache(maxsize=None)
def default_feature_table() -> FeatureTable:
    return read_feature_table(_data_path("features.tsv"))


@lru_cache(maxsize=None)
def default_weights() -> dict[str, Fraction]:
    return load_weights(_data_path("weights.cfg"))


def load_weights(path) -> dict[str, Fraction]:
    return {k: Fraction(v) for k, v in read_kv(path).items()}


@dataclass(frozen=True)
class Inventory:
    """Symbols a tokenizer accepts.

    ``phones`` restricts the accepted base+diacritic strings (a per-language
    inventory); ``None`` accepts any feature-table base with any diacritics.
    """

    table: FeatureTable = field(default_factory=default_feature_table)
    phones: frozenset[str] | None = None
    lang: str = "universal"

    @property
    def bases_longest_first(self) -> tuple[str, ...]:
        return _sorted_bases(self.table.bases)


@lru_cache(maxsize=None)
def _sorted_bases(bases: frozenset[str]) -> tuple[str, ...]:
    return tuple(sorted(bases, key=lambda b: (-len(b), b)))


def read_inventory_file(path, lang=None, table=None) -> Inventory:
    phones = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            phones.append(line)
    return Inventory(table or default_feature_table(), frozenset(phones), lang or Path(path).stem)


@lru_cache(maxsize=None)
def builtin_inventory(lang: str) -> Inventory:
    return read_inventory_file(_data_path("inventories", f"{lang}.txt"), lang)


def tokenize_ipa(text: str, inventory: Inventory | None = None) -> list[list[IpaSymbol]]:
    """Split a ``.``-syllabified IPA string into syllables of symbols.

    Tone letters after a vowel fold into that vowel's ``tones``; ʔ and h
    directly after a tone letter are voice-quality marks of the same tone.
    """
    if inventory is None:
        inventory = Inventory()
    if text == "":
        return []
    syllables = []
    offset = 0
    for piece in text.split(SYLLABLE_DELIMITER):
        if not piece:
            raise EmptySyllable(f"empty syllable at position {offset} in {text!r}")
        syllables.append(_tokenize_syllable(piece, offset, text, inventory))
        offset += len(piece) + 1
    return syllables


def _tokenize_syllable(piece, offset, text, inventory):
    out: list[IpaSymbol] = []
    i = 0
    while i < len(piece):
        ch = piece[i]
        last = out[-1] if out else None
        if ch in TONE_LETTERS:
            if last is None or last.category is not Category.VOWEL:
                raise MisplacedTone(offset + i, text)
            out[-1] = IpaSymbol(last.base, last.category, last.diacritics, last.tones + (ch,))
            i += 1
            continue
        if ch in VOICE_MARKS and last is not None and last.tones and last.tones[-1] in TONE_LETTERS:
            out[-1] = IpaSymbol(last.base, last.category, last.diacritics, last.tones + (ch,))
            i += 1
            continue
        for base in inventory.bases_longest_first:
            if piece.startswith(base, i):
                break
        else:
            raise UnknownSymbol(offset + i, text)
        j = i + len(base)
        diacritics = []
        while j < len(piece) and piece[j] in DIACRITICS:
            diacritics.append(piece[j])
            j += 1
        sym = IpaSymbol(base, inventory.table.category(base), tuple(diacritics))
        if inventory.phones is not None and sym.phone not in inventory.phones:
            raise UnknownSymbol(offset + i, text)
        out.append(sym)
        i = j
    return out


def render_ipa(syllables: Sequence[Sequence[IpaSymbol]]) -> str:
    return SYLLABLE_DELIMITER.join("".join(s.render() for s in syl) for syl in syllables)


def parse_phone(text: str, table: FeatureTable | None = None) -> IpaSymbol:
    """Parse one phone (base plus diacritics, optionally tone glyphs)."""
    syls = tokenize_ipa(text, Inventory(table or default_feature_table()))
    if len(syls) != 1 or len(syls[0]) != 1:
        raise UnknownSymbol(0, text)
    return syls[0][0]


def phone_distance(a: IpaSymbol, b: IpaSymbol, weights: Mapping[str, Fraction] | None = None,
                   table: FeatureTable | None = None) -> Fraction:
    """Weighted L1 distance between the IPA chart features of two phones.

    Diphthongs are compared as (nucleus, offglide) pairs and the two halves
    are averaged; a monophthong is its own offglide.
    """
    w = weights or default_weights()
    table = table or default_feature_table()
    fa, fb = table.vector(a), table.vector(b)
    if fa.category is not fb.category:
        raise CategoryMismatch(f"{a.phone!r} is a {fa.category.value}, {b.phone!r} is a {fb.category.value}")
    extra = w["length"] * abs(fa.length - fb.length) + w["aspiration"] * abs(fa.aspiration - fb.aspiration)
    if fa.category is Category.CONSONANT:
        return (w["place"] * abs(fa.place - fb.place) + w["manner"] * abs(fa.manner - fb.manner)
                + w["voicing"] * abs(fa.voicing - fb.voicing) + extra)

    def vowel(h1, b1, r1, h2, b2, r2):
        return w["height"] * abs(h1 - h2) + w["backness"] * abs(b1 - b2) + w["rounding"] * abs(r1 - r2)

    nucleus = vowel(fa.height, fa.backness, fa.rounding, fb.height, fb.backness, fb.rounding)
    offglide = vowel(fa.off_height, fa.off_backness, fa.off_rounding,
                     fb.off_height, fb.off_backness, fb.off_rounding)
    return (nucleus + offglide) / 2 + extra


def differs_by_one_diacritic(a: IpaSymbol, b: IpaSymbol) -> bool:
    if a.base != b.base:
        return False
    da, db = list(a.diacritics), list(b.diacritics)
    longer, shorter = (da, db) if len(da) > len(db) else (db, da)
    if len(longer) != len(shorter) + 1:
        return False
    for d in shorter:
        if d not in longer:
            return False
        longer.remove(d)
    return True


def nearest_phone(k: IpaSymbol, candidates: Iterable[IpaSymbol],
                  weights: Mapping[str, Fraction] | None = None,
                  table: FeatureTable | None = None) -> IpaSymbol:
    """Most similar candidate: exact match, then one-diacritic variant, then feature distance.

    Tones on ``k`` and on the candidates are ignored. Ties go to the
    lexicographically smallest rendering.
    """
    table = table or default_feature_table()
    pool = []
    for c in candidates:
        try:
            same = table.category(c.base) is table.category(k.base)
        except KeyError:
            raise UnknownSymbol(0, c.base) from None
        if same:
            pool.append(c)
    if not pool:
        raise NoCandidate(f"no candidate of the same category as {k.phone!r}")
    pool.sort(key=lambda c: c.render())
    for c in pool:
        if c.phone == k.phone:
            return c
    for c in pool:
        if differs_by_one_diacritic(k, c):
            return c
    return min(pool, key=lambda c: (phone_distance(k, c, weights, table), c.render()))
