"""Segmentation, lexicon IO, and POS annotation."""
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridlink.textpipe import (
    LexEntry,
    Lexicon,
    LexiconError,
    PosTag,
    annotate_pos,
    load_lexicon,
    save_lexicon,
    segment,
)

from conftest import make_lexicon


def fmm_oracle(span: str, lex: Lexicon) -> list[str]:
    """Forward maximum matching, written the slow way: at each position try
    every prefix from longest to shortest, expand compounds into parts,
    fall back to single characters."""
    out = []
    i = 0
    while i < len(span):
        match = None
        for j in range(len(span), i, -1):
            if span[i:j] in lex.entries:
                match = span[i:j]
                break
        if match is None:
            out.append(span[i])
            i += 1
            continue
        entry = lex.entries[match]
        out.extend(entry.parts if entry.parts else [match])
        i += len(match)
    return out


def test_segment_matches_oracle(lex):
    for text in ["供电开", "关红", "供电", "开关", "夹供开", "供电电"]:
        got = [t.surface for t in segment(text, lex)]
        assert got == fmm_oracle(text, lex), text


@settings(max_examples=200, deadline=None)
@given(s=st.text(alphabet="供电开关红在夹x2 ", max_size=14))
def test_segment_concatenates_back(s):
    lex = make_lexicon(
        [
            ("供", (), ("gong",), PosTag.NOUN),
            ("电", (), ("dian",), PosTag.NOUN),
            ("供电", ("供", "电"), ("gong", "dian"), PosTag.NOUN),
            ("开", (), ("kai",), PosTag.VERB),
        ]
    )
    toks = segment(s, lex)
    assert "".join(t.surface for t in toks) == "".join(s.split())


def test_compound_splits_into_parts(lex):
    # the compound is found by maximum matching, then emitted as its parts
    toks = segment("供电", lex)
    assert [t.surface for t in toks] == ["供", "电"]
    # parts keep their own syllables from the lexicon
    assert toks[0].syllables == ("gong",)
    assert toks[1].syllables == ("dian",)


def test_codes_are_single_tokens(lex):
    toks = segment("供电 10kV16730 开", lex)
    surfaces = [t.surface for t in toks]
    code = toks[surfaces.index("10kV16730")]
    assert code.pos is PosTag.NUMCODE
    # a lexicon word can never straddle an alphanumeric run
    assert surfaces == ["供", "电", "10kV16730", "开"]


def test_code_split_without_spaces(lex):
    # runs are cut out of the surrounding CJK span before matching
    toks = segment("供10kV1开", lex)
    assert [t.surface for t in toks] == ["供", "10kV1", "开"]


def test_run_respects_lexicon_hit():
    lex2 = make_lexicon([("k2", (), ("ke", "er"), PosTag.NOUN)])
    toks = segment("k2", lex2)
    assert toks[0].surface == "k2"
    assert toks[0].syllables == ("ke", "er")


def test_unknown_char_fallback(lex):
    toks = segment("夹笔", lex)
    assert [t.surface for t in toks] == ["夹", "笔"]
    assert toks[0].pos is PosTag.OTHER
    # unknown characters receive a placeholder syllable distinct per char
    assert toks[0].syllables != toks[1].syllables


def test_misheard_char_resolves_syllable():
    # a character outside every entry still sounds like itself when some
    # entry contains it: the char-level syllable table remembers
    lex = make_lexicon(
        [
            ("供电", (), ("gong", "dian"), PosTag.NOUN),
        ]
    )
    toks = segment("电", lex)
    assert toks[0].syllables == ("dian",)


def test_annotate_pos_retags(lex):
    toks = annotate_pos(segment("开 关 10kV1", lex), lex)
    assert [t.pos for t in toks] == [PosTag.VERB, PosTag.NOMINAL_VERB, PosTag.NUMCODE]


def test_lexicon_rejects_bad_syllable_count():
    lex = Lexicon()
    with pytest.raises(LexiconError):
        lex.add(LexEntry("供电", (), ("gong",), PosTag.NOUN))


def test_lexicon_rejects_nonconcatenating_parts():
    lex = Lexicon()
    with pytest.raises(LexiconError):
        lex.add(LexEntry("供电", ("供", "开"), ("gong", "dian"), PosTag.NOUN))


def test_check_parts_requires_atomic_parts():
    lex = Lexicon()
    lex.add(LexEntry("供", (), ("gong",), PosTag.NOUN))
    lex.add(LexEntry("供电", ("供", "电"), ("gong", "dian"), PosTag.NOUN))
    with pytest.raises(LexiconError):
        lex.check_parts()


def test_save_load_roundtrip(tmp_path, lex):
    p = tmp_path / "lex.tsv"
    save_lexicon(lex, p)
    back = load_lexicon(p)
    assert sorted(back.entries) == sorted(lex.entries)
    for w, e in lex.entries.items():
        b = back.entries[w]
        assert (b.parts, b.syllables, b.pos) == (e.parts, e.syllables, e.pos)
    # byte-stable: saving the loaded lexicon reproduces the file
    p2 = tmp_path / "lex2.tsv"
    save_lexicon(back, p2)
    assert p.read_bytes() == p2.read_bytes()
