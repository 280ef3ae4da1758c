"""Synthetic dispatch-world generation: knowledge graph, lexicon, labeled texts.

The language is invented but structurally faithful: words are short runs of
CJK codepoints with generated pinyin-like syllables, equipment codes are
digit strings, and texts concatenate words without separators. Noise is
drawn per text, at most one event per channel, while gold labels stay fixed:

* phonetic_sub: one name mention's place word is swapped for a registered
  homophone variant (same syllables, different characters) and its code is
  misread into digits that match no listed device (at least as far from every
  code as the codes, drawn pairwise separated, are from each other). The
  pronunciation channel can recover the place word; the literal channel sees
  nobody and in particular never a rival.
* synonym_swap: one state/operation head word is replaced by a synonym (same
  POS, different characters and syllables). The part-of-speech channel and
  corpus co-occurrence carry the recovery signal.
* discontinuity: two same-category name mentions joined by a conjunction are
  fused by dropping the first device noun, so the first surface is no longer
  contiguous in the text.
* noun_drop: one further name mention omits its device noun, the way
  operators shorten familiar designations. Word-set containment loses the
  noun; the distinctive place word and code still identify the entity.

State and operation entities come in two kinds. A core of pairs shares a
companion word and a category (hence the same co-occurring names), with
paired heads differing in nominal-versus-plain tag, so when a synonym blurs
the head the part-of-speech channel is what still tells the two apart. The
rest carry private companions and stay separable on co-occurrence alone.

Every character belongs to exactly one word, which keeps forward maximum
matching unambiguous by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .evaluation import LabeledText
from .features import levenshtein
from .kg import Entity, EntityKind, KnowledgeGraph, RelationType
from .textpipe import LexEntry, Lexicon, PosTag


@dataclass
class GenConfig:
    n_name: int = 120
    n_state: int = 40
    n_operation: int = 40
    n_texts: int = 2000
    phonetic_sub: float = 0.15
    synonym_swap: float = 0.15
    discontinuity: float = 0.10
    noun_drop: float = 0.35
    shared_companion_frac: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.n_name, self.n_state, self.n_operation, self.n_texts) < 1:
            raise ValueError("entity and text counts must be >= 1")
        rates = (
            self.phonetic_sub,
            self.synonym_swap,
            self.discontinuity,
            self.noun_drop,
            self.shared_companion_frac,
        )
        for rate in rates:
            if not 0.0 <= rate <= 1.0:
                raise ValueError("rates and fractions must lie in [0, 1]")


_CONSONANTS = list("bdfghjklmnpqrstwxz")
_VOWELS = ["a", "ai", "ao", "e", "ei", "i", "ia", "o", "ou", "u", "ua", "ui"]
_SYLLABLES = [c + v + t for c in _CONSONANTS for v in _VOWELS for t in "1234"]

_N_CATEGORIES = 4


@dataclass(frozen=True)
class _Word:
    text: str
    syllables: tuple[str, ...]
    pos: PosTag


@dataclass(frozen=True)
class _NameSpec:
    entity_id: str
    place: _Word
    code: _Word
    noun: _Word
    category: int


@dataclass(frozen=True)
class _PhraseSpec:
    """A state or operation entity: distinctive head, optional shared companion."""

    entity_id: str
    head: _Word
    companion: _Word | None  # modifier before a state head, object after an op head
    category: int

    def words(self, head: _Word | None = None) -> list[_Word]:
        h = head or self.head
        if self.companion is None:
            return [h]
        if h.pos is PosTag.VERB:  # operations read head-first
            return [h, self.companion]
        return [self.companion, h]


@dataclass
class _World:
    cfg: GenConfig
    names: list[_NameSpec] = field(default_factory=list)
    states: list[_PhraseSpec] = field(default_factory=list)
    operations: list[_PhraseSpec] = field(default_factory=list)
    place_variant: dict[str, _Word] = field(default_factory=dict)
    synonym: dict[str, _Word] = field(default_factory=dict)
    func: dict[str, _Word] = field(default_factory=dict)
    lexicon: Lexicon = field(default_factory=Lexicon)
    category_nouns: list[_Word] = field(default_factory=list)
    codes: list[str] = field(default_factory=list)


class _WordForge:
    """Makes words from a private slice of the CJK plane, one char per word."""

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._next_char = 0

    def _take_char(self) -> str:
        ch = chr(0x4E00 + self._next_char)
        self._next_char += 1
        return ch

    def word(self, length: int, pos: PosTag) -> _Word:
        chars = [self._take_char() for _ in range(length)]
        syls = tuple(_SYLLABLES[int(self._rng.integers(len(_SYLLABLES)))] for _ in chars)
        return _Word("".join(chars), syls, pos)

    def homophone_of(self, word: _Word) -> _Word:
        """Fresh characters, identical syllable sequence."""
        chars = [self._take_char() for _ in word.text]
        return _Word("".join(chars), word.syllables, word.pos)


def _paired_count(n: int, frac: float) -> int:
    """Even count of phrase entities that take a shared companion.

    At least one pair whenever sharing is requested and the pool allows it,
    so the hard cases never vanish at small entity counts.
    """
    if n < 2 or frac <= 0.0:
        return 0
    return min(n - n % 2, 2 * max(1, round(frac * n / 2)))


def _pair_category(i: int, paired: int) -> int:
    """Pair members share one category, so their heads see the same names."""
    return (i // 2 if i < paired else i) % _N_CATEGORIES


def _register(lex: Lexicon, word: _Word) -> None:
    if word.text not in lex.entries:
        lex.add(LexEntry(word.text, (), word.syllables, word.pos))


def _register_phrase(lex: Lexicon, words: list[_Word]) -> None:
    """Atomic entries plus, for multi-word CJK phrases, a compound entry."""
    for w in words:
        _register(lex, w)
    if len(words) > 1 and all(not w.text.isascii() for w in words):
        surface = "".join(w.text for w in words)
        if surface not in lex.entries:
            syls = tuple(s for w in words for s in w.syllables)
            lex.add(LexEntry(surface, tuple(w.text for w in words), syls, words[-1].pos))


def _build_world(cfg: GenConfig) -> _World:
    rng = np.random.default_rng([cfg.seed, 0])
    forge = _WordForge(rng)
    world = _World(cfg)
    lex = world.lexicon

    # function words; tags chosen so the corpus exercises the whole tagset
    for role, length, pos in [
        ("in", 2, PosTag.PREPOSITION),
        ("at", 1, PosTag.PREPOSITION),
        ("conj", 1, PosTag.OTHER),
        ("then", 2, PosTag.ADVERB),
        ("already", 2, PosTag.ADVERB),
        ("confirm", 2, PosTag.ADVERB),
        ("normal", 2, PosTag.ADJECTIVE),
    ]:
        w = forge.word(length, pos)
        world.func[role] = w
        _register(lex, w)

    world.category_nouns = [forge.word(2, PosTag.NOUN) for _ in range(_N_CATEGORIES)]
    for noun in world.category_nouns:
        _register(lex, noun)

    def new_code() -> _Word:
        # rejection sampling keeps codes at pairwise edit distance >= 3; the
        # draw length grows if a batch of attempts cannot be placed
        for attempt in range(200000):
            n_digits = int(rng.integers(5, 8)) + attempt // 2000
            digits = "".join(str(int(rng.integers(10))) for _ in range(n_digits))
            if all(levenshtein(digits, seen) >= 3 for seen in world.codes):
                world.codes.append(digits)
                return _Word(digits, tuple("d" + c for c in digits), PosTag.NUMCODE)
        raise RuntimeError("could not place a code away from the existing ones")

    for i in range(cfg.n_name):
        place = forge.word(int(rng.integers(2, 4)), PosTag.NOUN)
        variant = forge.homophone_of(place)
        code = new_code()
        cat = i % _N_CATEGORIES
        spec = _NameSpec(f"n{i:04d}", place, code, world.category_nouns[cat], cat)
        world.names.append(spec)
        world.place_variant[place.text] = variant
        for w in (place, variant, code):
            _register(lex, w)

    # the leading entities form pairs that share one companion word; within a
    # pair the heads take different tags (nominal versus plain form), so the
    # part-of-speech channel is what tells the two apart. Entities past the
    # paired core get private companions, whose co-occurrence statistics are
    # enough on their own.
    state_companions: list[_Word] = []
    paired_state = _paired_count(cfg.n_state, cfg.shared_companion_frac)
    for i in range(cfg.n_state):
        if i < paired_state and i % 2 == 1:
            state_companions.append(state_companions[-1])
        else:
            tag = (
                PosTag.ADJECTIVE
                if len(state_companions) % 2 == 0
                else PosTag.NOMINAL_ADJECTIVE
            )
            state_companions.append(forge.word(2, tag))

    op_companions: list[_Word] = []
    paired_op = _paired_count(cfg.n_operation, cfg.shared_companion_frac)
    for i in range(cfg.n_operation):
        if i < paired_op and i % 2 == 1:
            op_companions.append(op_companions[-1])
        else:
            op_companions.append(forge.word(2, PosTag.NOUN))

    for i in range(cfg.n_state):
        tag = PosTag.NOMINAL_VERB if i % 2 == 0 else PosTag.VERB
        head = forge.word(2, tag)
        syn = forge.word(2, tag)
        world.synonym[head.text] = syn
        spec = _PhraseSpec(
            f"s{i:04d}", head, state_companions[i], _pair_category(i, paired_state)
        )
        world.states.append(spec)
        _register(lex, syn)
        _register_phrase(lex, spec.words())
        _register_phrase(lex, spec.words(head=syn))

    for i in range(cfg.n_operation):
        tag = PosTag.VERB if i % 2 == 0 else PosTag.NOMINAL_VERB
        head = forge.word(2, tag)
        syn = forge.word(2, tag)
        world.synonym[head.text] = syn
        spec = _PhraseSpec(
            f"o{i:04d}", head, op_companions[i], _pair_category(i, paired_op)
        )
        world.operations.append(spec)
        _register(lex, syn)
        _register_phrase(lex, spec.words())
        _register_phrase(lex, spec.words(head=syn))

    lex.check_parts()
    return world


def gen_kg(cfg: GenConfig) -> KnowledgeGraph:
    """Categories plus name/state/operation entities; deterministic under seed."""
    world = _build_world(cfg)
    return _kg_from_world(world)


def _kg_from_world(world: _World) -> KnowledgeGraph:
    entities: dict[str, Entity] = {}
    triples: list[tuple[str, RelationType, str]] = []
    for cat in range(_N_CATEGORIES):
        cid = f"c{cat:02d}"
        entities[cid] = Entity(cid, EntityKind.CATEGORY, world.category_nouns[cat].text)
    for spec in world.names:
        cid = f"c{spec.category:02d}"
        surface = spec.place.text + spec.code.text + spec.noun.text
        entities[spec.entity_id] = Entity(spec.entity_id, EntityKind.NAME, surface, cid)
        triples.append((cid, RelationType.NAME, spec.entity_id))
    for spec, kind, rt in [
        *((s, EntityKind.STATE, RelationType.STATE) for s in world.states),
        *((o, EntityKind.OPERATION, RelationType.OPERATION) for o in world.operations),
    ]:
        cid = f"c{spec.category:02d}"
        surface = "".join(w.text for w in spec.words())
        entities[spec.entity_id] = Entity(spec.entity_id, kind, surface, cid)
        triples.append((cid, rt, spec.entity_id))
    return KnowledgeGraph(entities=entities, triples=triples)


# ---------------------------------------------------------------------------
# text generation


@dataclass
class _NameMention:
    spec: _NameSpec
    with_noun: bool = True
    phonetic: bool = False


@dataclass
class _PhraseMention:
    spec: _PhraseSpec
    synonym: bool = False


class _TextBuilder:
    """Plans a text as function words and mention slots, then draws at most
    one noise event per channel and renders the surface."""

    def __init__(self, world: _World, rng: np.random.Generator):
        self.world = world
        self.rng = rng
        self.cfg = world.cfg
        self.items: list[str | _NameMention | _PhraseMention] = []
        self.gold: set[str] = set()
        self.used_names: set[str] = set()
        self.head_tag: PosTag | None = None
        self.pair_leads: list[_NameMention] = []

    def _bern(self, rate: float) -> bool:
        return bool(self.rng.random() < rate)

    def _pick(self, pool: list, avoid: set[str] = frozenset()) -> object:
        live = [x for x in pool if x.entity_id not in avoid]
        if not live:
            live = pool
        return live[int(self.rng.integers(len(live)))]

    def _choice(self, seq: list):
        return seq[int(self.rng.integers(len(seq)))]

    def _pick_phrase(self, pool: list[_PhraseSpec]) -> _PhraseSpec:
        # all phrase mentions of one text share a head tag, so a candidate
        # is never handed a matching tag by an unrelated segment
        if self.head_tag is not None:
            pool = [s for s in pool if s.head.pos is self.head_tag] or pool
        spec = self._pick(pool, self.gold)
        self.head_tag = spec.head.pos
        return spec

    def name_mention(self, spec: _NameSpec) -> _NameMention:
        self.gold.add(spec.entity_id)
        self.used_names.add(spec.entity_id)
        mention = _NameMention(spec)
        self.items.append(mention)
        return mention

    def phrase_mention(self, spec: _PhraseSpec) -> None:
        self.gold.add(spec.entity_id)
        self.items.append(_PhraseMention(spec))

    def seg_name_state(self) -> None:
        # states co-occur with names of their own category
        state = self._pick_phrase(self.world.states)
        pool = [n for n in self.world.names if n.category == state.category]
        name = self._pick(pool or self.world.names, self.used_names)
        self.name_mention(name)
        self.items.append(self.world.func["in"].text)
        self.phrase_mention(state)

    def seg_op_name(self) -> None:
        op = self._pick_phrase(self.world.operations)
        pool = [n for n in self.world.names if n.category == op.category]
        name = self._pick(pool or self.world.names, self.used_names)
        self.items.append(self.world.func["already"].text)
        self.phrase_mention(op)
        self.name_mention(name)

    def seg_pair_names(self) -> None:
        cat = int(self.rng.integers(_N_CATEGORIES))
        pool = [n for n in self.world.names if n.category == cat]
        if len(pool) < 2:
            pool = self.world.names
        first = self._pick(pool, self.used_names)
        second = self._pick(pool, self.used_names | {first.entity_id})
        self.pair_leads.append(self.name_mention(first))
        self.items.append(self.world.func["conj"].text)
        self.name_mention(second)

    def seg_name_only(self) -> None:
        name = self._pick(self.world.names, self.used_names)
        self.items.append(self.world.func["at"].text)
        self.name_mention(name)
        self.items.append(self.world.func["normal"].text)

    def _apply_noise(self) -> None:
        names = [m for m in self.items if isinstance(m, _NameMention)]
        phrases = [m for m in self.items if isinstance(m, _PhraseMention)]
        if names and self._bern(self.cfg.phonetic_sub):
            self._choice(names).phonetic = True
        if phrases and self._bern(self.cfg.synonym_swap):
            self._choice(phrases).synonym = True
        if self.pair_leads and self._bern(self.cfg.discontinuity):
            self._choice(self.pair_leads).with_noun = False
        wearing = [m for m in names if m.with_noun]
        if wearing and self._bern(self.cfg.noun_drop):
            self._choice(wearing).with_noun = False

    def _mishear(self, code: _Word) -> _Word:
        # the misread digits must identify nobody: keep them at least as far
        # from every listed code as the codes are from each other, or the
        # literal channel would hand the text to a rival
        n = len(code.text)
        for _ in range(2000):
            text = "".join(str(int(self.rng.integers(10))) for _ in range(n))
            if all(levenshtein(text, seen) >= 3 for seen in self.world.codes):
                return _Word(text, tuple("d" + c for c in text), PosTag.NUMCODE)
        raise RuntimeError("could not garble a code away from the listed ones")

    def _render(self) -> str:
        words: list[str] = []
        for item in self.items:
            if isinstance(item, str):
                words.append(item)
            elif isinstance(item, _NameMention):
                place, code = item.spec.place, item.spec.code
                if item.phonetic:
                    place = self.world.place_variant[place.text]
                    code = self._mishear(code)
                words.append(place.text)
                words.append(code.text)
                if item.with_noun:
                    words.append(item.spec.noun.text)
            else:
                head = item.spec.head
                if item.synonym:
                    head = self.world.synonym[head.text]
                words.extend(w.text for w in item.spec.words(head=head))
        return "".join(words)

    def build(self, gold_count: int) -> tuple[str, set[str]]:
        pair_ok = self.cfg.n_name >= 2
        two_gold = [self.seg_name_state, self.seg_op_name]
        if pair_ok:
            two_gold.append(self.seg_pair_names)
        plan: list = []
        if gold_count >= 2:
            plan.append(two_gold[int(self.rng.integers(len(two_gold)))])
        if gold_count >= 4:
            plan.append(two_gold[int(self.rng.integers(len(two_gold)))])
        if gold_count % 2 == 1:
            plan.append(self.seg_name_only)
        for idx, seg in enumerate(plan):
            if idx > 0:
                self.items.append(self.world.func["then"].text)
            seg()
        self.items.append(self.world.func["confirm"].text)
        self._apply_noise()
        return self._render(), self.gold


_GOLD_BUCKETS = np.array([2, 3, 4, 5])
_BUCKET_WEIGHTS = np.array([0.15, 0.35, 0.35, 0.15])


def gen_corpus(kg: KnowledgeGraph, cfg: GenConfig) -> tuple[list[LabeledText], Lexicon]:
    """Labeled texts plus the lexicon covering every generated word.

    The world is re-derived from cfg, so kg must be the graph gen_kg built
    for the same config.
    """
    world = _build_world(cfg)
    if _kg_from_world(world) != kg:
        raise ValueError("kg does not match this GenConfig (different seed or counts?)")
    texts: list[LabeledText] = []
    width = max(4, len(str(cfg.n_texts - 1)))
    for i in range(cfg.n_texts):
        rng = np.random.default_rng([cfg.seed, 1, i])
        count = int(rng.choice(_GOLD_BUCKETS, p=_BUCKET_WEIGHTS))
        body, gold = _TextBuilder(world, rng).build(count)
        texts.append(LabeledText(f"t{i:0{width}d}", body, frozenset(gold)))
    return texts, world.lexicon


def mean_gold_count(texts: Iterable[LabeledText]) -> float:
    sizes = [len(t.gold) for t in texts]
    return float(np.mean(sizes))
