"""Shared small fixtures: a hand-built lexicon and knowledge graph.

The lexicon uses latin pseudo-words with invented syllables so the tests
stay readable; nothing in the pipeline cares what the symbols look like.
"""
import numpy as np
import pytest

from gridlink.kg import Entity, EntityKind, KnowledgeGraph, RelationType
from gridlink.textpipe import LexEntry, Lexicon, PosTag


def make_lexicon(entries) -> Lexicon:
    lex = Lexicon()
    for word, parts, syllables, pos in entries:
        lex.add(LexEntry(word, tuple(parts), tuple(syllables), pos))
    lex.check_parts()
    return lex


@pytest.fixture
def lex() -> Lexicon:
    # one syllable per character; ASCII words would be swallowed whole as
    # alphanumeric runs, so the entries use CJK characters like the real
    # pipeline and "供电" exercises the compound expansion path
    return make_lexicon(
        [
            ("供", (), ("gong",), PosTag.NOUN),
            ("电", (), ("dian",), PosTag.NOUN),
            ("供电", ("供", "电"), ("gong", "dian"), PosTag.NOUN),
            ("开", (), ("kai",), PosTag.VERB),
            ("关", (), ("guan",), PosTag.NOMINAL_VERB),
            ("红", (), ("hong",), PosTag.ADJECTIVE),
            ("在", (), ("zai",), PosTag.PREPOSITION),
        ]
    )


@pytest.fixture
def tiny_kg() -> KnowledgeGraph:
    ents = {
        "cat0": Entity("cat0", EntityKind.CATEGORY, "站"),
        "n0": Entity("n0", EntityKind.NAME, "供电", "cat0"),
        "n1": Entity("n1", EntityKind.NAME, "电开", "cat0"),
        "s0": Entity("s0", EntityKind.STATE, "红关", "cat0"),
        "o0": Entity("o0", EntityKind.OPERATION, "开", "cat0"),
    }
    triples = [
        ("cat0", RelationType.NAME, "n0"),
        ("cat0", RelationType.NAME, "n1"),
        ("cat0", RelationType.STATE, "s0"),
        ("cat0", RelationType.OPERATION, "o0"),
    ]
    return KnowledgeGraph(entities=ents, triples=triples)


def rand_tokens(rng: np.random.Generator, n: int, lexicon: Lexicon):
    """n tokens drawn from the lexicon entries."""
    words = sorted(lexicon.entries)
    picked = [words[int(i)] for i in rng.integers(0, len(words), size=n)]
    return [lexicon.token_for(w) for w in picked]
