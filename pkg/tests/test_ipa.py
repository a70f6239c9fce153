from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from tonectc.errors import CategoryMismatch, EmptySyllable, MisplacedTone, NoCandidate, UnknownSymbol
from tonectc.ipa import (
    BUILTIN_LANGUAGES,
    Category,
    IpaSymbol,
    ToneTarget,
    builtin_inventory,
    default_feature_table,
    differs_by_one_diacritic,
    load_weights,
    nearest_phone,
    parse_phone,
    phone_distance,
    render_ipa,
    tokenize_ipa,
)
from tonectc.tiers import TONE_INVENTORIES

P = parse_phone


def test_tokenize_high_tone():
    (syl,) = tokenize_ipa("ma˥")
    assert [s.base for s in syl] == ["m", "a"]
    assert syl[1].tone_targets == (ToneTarget.L55,)
    assert syl[0].category is Category.CONSONANT and syl[1].category is Category.VOWEL


def test_tokenize_empty():
    assert tokenize_ipa("") == []


def test_tokenize_breathy_then_second_syllable():
    s1, s2 = tokenize_ipa("ma˨˩h.ta˧")
    assert s1[1].tone_targets == (ToneTarget.L22, ToneTarget.L11)
    assert [v.base for v in s1[1].voice_marks] == ["h"]
    assert s1[1].tones == ("˨", "˩", "h")
    assert [s.render() for s in s2] == ["t", "a˧"]


def test_affricate_longest_match_and_diacritics():
    (syl,) = tokenize_ipa("tɕʰaː˥")
    assert syl[0].base == "tɕ" and syl[0].diacritics == ("ʰ",)
    assert syl[1].phone == "aː" and syl[1].is_long


def test_unknown_symbol_position():
    with pytest.raises(UnknownSymbol) as e:
        tokenize_ipa("ma.qa")
    assert e.value.position == 3


def test_inventory_restricts_phones():
    with pytest.raises(UnknownSymbol):
        tokenize_ipa("ɲa˥", builtin_inventory("cmn"))
    assert tokenize_ipa("ɲa˥", builtin_inventory("lao"))


def test_empty_syllable():
    with pytest.raises(EmptySyllable):
        tokenize_ipa("ma..ta")


def test_tone_must_follow_vowel():
    with pytest.raises(MisplacedTone):
        tokenize_ipa("˥ma")
    with pytest.raises(MisplacedTone):
        tokenize_ipa("man˥")


def test_symbol_invariants():
    with pytest.raises(ValueError):
        IpaSymbol("m", Category.CONSONANT, tones=("˥",))
    with pytest.raises(ValueError):
        IpaSymbol("x", Category.VOICE_QUALITY)


def test_five_levels_only():
    levels = [t for t in ToneTarget if t.is_level]
    assert [t.value for t in levels] == [11, 22, 33, 44, 55]
    assert [t.digit for t in levels] == [1, 2, 3, 4, 5]


def test_table_tones_tokenize_in_every_language():
    for lang in BUILTIN_LANGUAGES:
        inv = builtin_inventory(lang)
        for tone in TONE_INVENTORIES[lang]:
            text = "ma" + tone if "m" in inv.phones else "na" + tone
            assert render_ipa(tokenize_ipa(text, inv)) == text


def test_builtin_inventories_are_total():
    table = default_feature_table()
    for lang in BUILTIN_LANGUAGES:
        inv = builtin_inventory(lang)
        for phone in sorted(inv.phones):
            sym = parse_phone(phone)
            assert sym.phone == phone
            table.vector(sym)  # every phone has exactly one feature vector
            assert render_ipa(tokenize_ipa(phone, inv)) == phone


# --- distances -----------------------------------------------------------------

def test_distance_identity_and_examples():
    assert phone_distance(P("a"), P("a")) == 0
    # hand evaluation of the feature table: ɤ=(1,2,0) o=(1,2,1) i=(0,0,0)
    assert phone_distance(P("ɤ"), P("o")) == Fraction(1)
    assert phone_distance(P("ɤ"), P("i")) == Fraction(6)
    assert phone_distance(P("p"), P("b")) == Fraction(1)
    assert phone_distance(P("a"), P("aː")) == Fraction(1)
    assert phone_distance(P("t"), P("tʰ")) == Fraction(1)


def test_diphthong_distance_averages_halves():
    # ɑʊ=(3,2,0)->(0,1,1), ɑo=(3,2,0)->(1,2,1): offglide differs by height 1, backness 1
    assert phone_distance(P("ɑo"), P("ɑʊ")) == Fraction(2)


def test_distance_category_mismatch():
    with pytest.raises(CategoryMismatch):
        phone_distance(P("p"), P("a"))


def test_weights_override(tmp_path):
    cfg = tmp_path / "w.cfg"
    cfg.write_text("place=1\nmanner=1\nvoicing=5\nheight=1\nbackness=1\nrounding=1\nlength=1\naspiration=1\n")
    assert phone_distance(P("p"), P("b"), load_weights(cfg)) == 5


vowels = st.sampled_from(sorted(p for p in builtin_inventory("lao").phones | builtin_inventory("yue").phones
                                if default_feature_table().category(parse_phone(p).base) is Category.VOWEL))
consonants = st.sampled_from(sorted(p for p in builtin_inventory("lao").phones | builtin_inventory("yue").phones
                                    if default_feature_table().category(parse_phone(p).base) is Category.CONSONANT))
same_category = st.one_of(st.tuples(vowels, vowels), st.tuples(consonants, consonants))


@given(same_category)
def test_distance_semimetric(pair):
    a, b = map(parse_phone, pair)
    d = phone_distance(a, b)
    assert d >= 0
    assert d == phone_distance(b, a)
    assert (d == 0) == (a.phone == b.phone)


# --- nearest -------------------------------------------------------------------

def test_nearest_examples():
    assert nearest_phone(P("a"), {P("aː"), P("e")}).phone == "aː"
    assert nearest_phone(P("o"), {P("o"), P("u")}).phone == "o"
    assert nearest_phone(P("ɤ"), {P("o"), P("i"), P("a")}).phone == "o"


def test_nearest_diacritic_removal():
    assert nearest_phone(P("uː"), {P("u"), P("o")}).phone == "u"


def test_nearest_tie_breaks_lexicographically():
    k = P("ɐ")
    cands = [P("ɛ"), P("ə")]
    assert phone_distance(k, cands[0]) == phone_distance(k, cands[1])
    assert nearest_phone(k, cands).phone == "ə"
    assert nearest_phone(k, list(reversed(cands))).phone == "ə"


def test_nearest_no_candidate():
    with pytest.raises(NoCandidate):
        nearest_phone(P("a"), [P("p")])
    with pytest.raises(NoCandidate):
        nearest_phone(P("a"), [])


@given(vowels, st.lists(vowels, min_size=1, max_size=6))
def test_nearest_deterministic_and_priority(k, cands):
    k = parse_phone(k)
    pool = [parse_phone(c) for c in cands]
    got = nearest_phone(k, pool)
    assert got == nearest_phone(k, list(reversed(pool)))
    if any(c.phone == k.phone for c in pool):
        assert got.phone == k.phone
    else:
        best = min(phone_distance(k, c) for c in pool)
        if not any(differs_by_one_diacritic(k, c) for c in pool):
            assert phone_distance(k, got) == best


# --- round trip ------------------------------------------------------------------

def _syllable(draw, inv_phones, tones):
    onset = draw(st.sampled_from(inv_phones["C"]))
    vowel = draw(st.sampled_from(inv_phones["V"]))
    tone = draw(st.sampled_from(tones + ("",)))
    return onset + vowel + tone


@st.composite
def transcripts(draw):
    lang = draw(st.sampled_from(BUILTIN_LANGUAGES))
    inv = builtin_inventory(lang)
    table = default_feature_table()
    phones = {"C": [], "V": []}
    for p in sorted(inv.phones):
        cat = table.category(parse_phone(p).base)
        phones["C" if cat is Category.CONSONANT else "V"].append(p)
    n = draw(st.integers(1, 5))
    return lang, ".".join(_syllable(draw, phones, TONE_INVENTORIES[lang]) for _ in range(n))


@given(transcripts())
def test_round_trip(item):
    lang, text = item
    assert render_ipa(tokenize_ipa(text, builtin_inventory(lang))) == text
