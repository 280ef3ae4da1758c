"""Dispatch-text preprocessing: dictionary segmentation, pinyin and POS annotation.

Segmentation is forward maximum matching over a custom lexicon. Entries may be
compounds carrying a parts list; a matched compound is replaced by its
minimum-granularity parts so both texts and entity surfaces break into the
same small units. Number/letter codes are pre-tokenized before dictionary
matching and unknown characters degrade to single-char tokens instead of
failing, since upstream speech recognition can produce arbitrary noise.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from .kg import EntityKind, KnowledgeGraph


class LexiconError(ValueError):
    """Malformed lexicon file or inconsistent entry."""


class PosTag(Enum):
    NOUN = "noun"
    VERB = "verb"
    ADJECTIVE = "adjective"
    ADVERB = "adverb"
    PREPOSITION = "preposition"
    NUMCODE = "numcode"
    NOMINAL_VERB = "nominal_verb"
    NOMINAL_ADJECTIVE = "nominal_adjective"
    OTHER = "other"


_ALNUM_RE = re.compile(r"[0-9A-Za-z]+")


def _has_digit(s: str) -> bool:
    return any(c.isdigit() for c in s)


@dataclass(frozen=True)
class Token:
    surface: str
    chars: tuple[str, ...]
    syllables: tuple[str, ...]
    pos: PosTag


@dataclass(frozen=True)
class LexEntry:
    word: str
    parts: tuple[str, ...]  # empty for atomic entries
    syllables: tuple[str, ...]  # one per character of word
    pos: PosTag


class Lexicon:
    """Word table with per-character pinyin and a POS tag per entry.

    Built once (from a TSV file, optionally extended with knowledge-graph
    surfaces) and treated as immutable afterwards.
    """

    def __init__(self) -> None:
        self.entries: dict[str, LexEntry] = {}
        self.char_syllables: dict[str, str] = {}
        self.syllable_inventory: set[str] = set()
        self.max_word_len = 0

    def add(self, entry: LexEntry) -> None:
        if not entry.word:
            raise LexiconError("empty word in lexicon entry")
        if len(entry.syllables) != len(entry.word):
            raise LexiconError(
                f"entry {entry.word!r} has {len(entry.syllables)} syllables "
                f"for {len(entry.word)} characters"
            )
        if entry.parts and "".join(entry.parts) != entry.word:
            raise LexiconError(f"parts of {entry.word!r} do not concatenate to it")
        self.entries[entry.word] = entry
        self.max_word_len = max(self.max_word_len, len(entry.word))
        for ch, syl in zip(entry.word, entry.syllables):
            self.char_syllables.setdefault(ch, syl)
            self.syllable_inventory.add(syl)

    def check_parts(self) -> None:
        """Every compound's parts must themselves be atomic entries."""
        for entry in self.entries.values():
            for part in entry.parts:
                sub = self.entries.get(part)
                if sub is None:
                    raise LexiconError(f"compound {entry.word!r} lists unknown part {part!r}")
                if sub.parts:
                    raise LexiconError(
                        f"compound {entry.word!r} lists non-atomic part {part!r}"
                    )

    def token_for(self, word: str) -> Token:
        entry = self.entries[word]
        return Token(word, tuple(word), entry.syllables, entry.pos)


def load_lexicon(path: str | Path) -> Lexicon:
    """Read the TSV format: word, comma-joined parts, space-joined syllables, pos."""
    lex = Lexicon()
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise LexiconError(f"{path}:{lineno}: expected 4 tab-separated columns")
        word, parts_col, syl_col, pos_col = cols
        parts = tuple(p for p in parts_col.split(",") if p)
        syllables = tuple(syl_col.split()) if syl_col.strip() else ()
        try:
            pos = PosTag(pos_col.strip())
        except ValueError as exc:
            raise LexiconError(f"{path}:{lineno}: unknown pos tag {pos_col!r}") from exc
        try:
            lex.add(LexEntry(word, parts, syllables, pos))
        except LexiconError as exc:
            raise LexiconError(f"{path}:{lineno}: {exc}") from exc
    lex.check_parts()
    return lex


def save_lexicon(lex: Lexicon, path: str | Path) -> None:
    lines = []
    for word in sorted(lex.entries):
        e = lex.entries[word]
        lines.append("\t".join([word, ",".join(e.parts), " ".join(e.syllables), e.pos.value]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _split_runs(chunk: str) -> list[tuple[str, bool]]:
    """Split a whitespace-free chunk into (span, is_alnum_run) pieces."""
    pieces: list[tuple[str, bool]] = []
    pos = 0
    for m in _ALNUM_RE.finditer(chunk):
        if m.start() > pos:
            pieces.append((chunk[pos:m.start()], False))
        pieces.append((m.group(), True))
        pos = m.end()
    if pos < len(chunk):
        pieces.append((chunk[pos:], False))
    return pieces


def _fallback_token(ch: str, lex: Lexicon) -> Token:
    # a character never seen in any entry gets a placeholder syllable
    syl = lex.char_syllables.get(ch, "unk:" + ch)
    return Token(ch, (ch,), (syl,), PosTag.OTHER)


def _run_token(run: str, lex: Lexicon) -> Token:
    entry = lex.entries.get(run)
    if entry is not None:
        return lex.token_for(run)
    syllables = tuple(lex.char_syllables.get(c, "unk:" + c) for c in run)
    pos = PosTag.NUMCODE if _has_digit(run) else PosTag.OTHER
    return Token(run, tuple(run), syllables, pos)


def _fmm(span: str, lex: Lexicon) -> list[Token]:
    """Forward maximum matching with compound replacement and char fallback."""
    out: list[Token] = []
    i = 0
    while i < len(span):
        entry = None
        for width in range(min(lex.max_word_len, len(span) - i), 0, -1):
            entry = lex.entries.get(span[i : i + width])
            if entry is not None:
                break
        if entry is None:
            out.append(_fallback_token(span[i], lex))
            i += 1
            continue
        if entry.parts:
            out.extend(lex.token_for(p) for p in entry.parts)
        else:
            out.append(lex.token_for(entry.word))
        i += len(entry.word)
    return out


def segment(text: str, lex: Lexicon) -> list[Token]:
    """Cut text into minimum-granularity tokens covering it exactly.

    Maximal number/letter runs become single tokens before dictionary
    matching, so a lexicon word can never straddle a code like "16730".
    """
    tokens: list[Token] = []
    for chunk in text.split():
        for span, is_run in _split_runs(chunk):
            if is_run:
                tokens.append(_run_token(span, lex))
            else:
                tokens.extend(_fmm(span, lex))
    return tokens


def annotate_pos(tokens: list[Token], lex: Lexicon) -> list[Token]:
    """Retag tokens: lexicon tag if present, NumCode for digit-bearing codes, else Other."""
    out = []
    for tok in tokens:
        entry = lex.entries.get(tok.surface)
        if entry is not None:
            out.append(replace(tok, pos=entry.pos))
        elif tok.surface.isalnum() and tok.surface.isascii() and _has_digit(tok.surface):
            out.append(replace(tok, pos=PosTag.NUMCODE))
        else:
            out.append(replace(tok, pos=PosTag.OTHER))
    return out


def _new_word_entry(word: str, lex: Lexicon) -> LexEntry:
    """Entry for a word first seen in an entity surface.

    Syllables come from characters already known to the lexicon where
    possible. Codes keep the NumCode tag, everything else from the grid
    ledger is treated as a noun (place names, device nouns).
    """
    syllables = tuple(lex.char_syllables.get(c, "unk:" + c) for c in word)
    pos = PosTag.NUMCODE if _has_digit(word) else PosTag.NOUN
    return LexEntry(word, (), syllables, pos)


def build_lexicon(base_entries: str | Path, kg: KnowledgeGraph) -> Lexicon:
    """Base lexicon plus every word appearing in non-category entity surfaces.

    Unknown spans of a surface enter as whole new words (the ledger implies
    their boundaries). A surface span that splits into several words is also
    registered as a compound so running text containing it still breaks into
    the same minimum-granularity parts.
    """
    lex = load_lexicon(base_entries)
    for eid in sorted(kg.entities):
        ent = kg.entities[eid]
        if ent.kind is EntityKind.CATEGORY:
            continue
        for chunk in ent.surface.split():
            for span, is_run in _split_runs(chunk):
                if is_run:
                    if span not in lex.entries:
                        lex.add(_new_word_entry(span, lex))
                    continue
                words = _surface_span_words(span, lex)
                for w in words:
                    if w not in lex.entries:
                        lex.add(_new_word_entry(w, lex))
                if len(words) > 1 and span not in lex.entries:
                    lex.add(
                        LexEntry(
                            span,
                            tuple(words),
                            tuple(s for w in words for s in lex.entries[w].syllables),
                            lex.entries[words[-1]].pos,
                        )
                    )
    lex.check_parts()
    return lex


def _surface_span_words(span: str, lex: Lexicon) -> list[str]:
    """Word list of an entity-surface span, merging unknown runs into new words."""
    words: list[str] = []
    pending = ""  # consecutive unknown characters accumulate into one word
    for tok in _fmm(span, lex):
        known = tok.surface in lex.entries
        if known:
            if pending:
                words.append(pending)
                pending = ""
            words.append(tok.surface)
        else:
            pending += tok.surface
    if pending:
        words.append(pending)
    return words
