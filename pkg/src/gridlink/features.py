"""Pair-dependent feature matrices.

A side with L tokens becomes an (L, D+2, 3) array. Layer order along the
last axis: semantic, pronunciation, part-of-speech. Columns 0..D-1 hold the
layer's feature vector, column D the LSF value against the opposite side,
column D+1 the direct-link value (literal edit distance, pronunciation edit
distance, or POS similarity depending on the layer).

build_pair_matrices is the plain reference; PairFeatureFactory computes the
same matrices with vectorized cosines and memoized edit distances and is what
the linker and harness actually call.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import PosVecTable, SemanticTable, SyllableTable, compose_pronunciation
from .textpipe import PosTag, Token

DEFAULT_T = 10
_CEIL_EPS = 1e-9  # soaks up float fuzz so exact-boundary cosines ceil correctly

_TAGS = list(PosTag)
_TAG_INDEX = {tag: i for i, tag in enumerate(_TAGS)}


def levenshtein(a, b) -> int:
    """Edit distance with unit insert/delete/substitute costs, two-row DP."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, sa in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, sb in enumerate(b, start=1):
            cur[j] = min(
                prev[j] + 1,  # delete
                cur[j - 1] + 1,  # insert
                prev[j - 1] + (sa != sb),  # substitute
            )
        prev = cur
    return prev[-1]


@dataclass
class SimTable:
    """Symmetric POS-pair similarity: 0 on the diagonal, 0.3 for the nominal
    pairs (nominal verb with noun or verb, nominal adjective with noun or
    adjective), 1 otherwise."""

    values: dict[tuple[PosTag, PosTag], float]

    @classmethod
    def default(cls) -> "SimTable":
        values: dict[tuple[PosTag, PosTag], float] = {}
        near = {
            (PosTag.NOMINAL_VERB, PosTag.NOUN),
            (PosTag.NOMINAL_VERB, PosTag.VERB),
            (PosTag.NOMINAL_ADJECTIVE, PosTag.NOUN),
            (PosTag.NOMINAL_ADJECTIVE, PosTag.ADJECTIVE),
        }
        for x in _TAGS:
            for y in _TAGS:
                if x is y:
                    values[(x, y)] = 0.0
                elif (x, y) in near or (y, x) in near:
                    values[(x, y)] = 0.3
                else:
                    values[(x, y)] = 1.0
        return cls(values)

    def value(self, x: PosTag, y: PosTag) -> float:
        return self.values[(x, y)]

    def as_matrix(self) -> np.ndarray:
        m = np.empty((len(_TAGS), len(_TAGS)))
        for (x, y), v in self.values.items():
            m[_TAG_INDEX[x], _TAG_INDEX[y]] = v
        return m


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v) / (nu * nv)


def lsf_value(query_vec: np.ndarray, other_side_vecs, t: int = DEFAULT_T) -> int:
    """ceil((1 - max(0, best cosine)) * t); zero vectors contribute cosine 0."""
    best = max(_cosine(query_vec, v) for v in other_side_vecs)
    raw = np.ceil((1.0 - max(0.0, best)) * t - _CEIL_EPS)
    return int(np.clip(raw, 0, t))


def lit_value(word: Token, other_side: list[Token], t: int = DEFAULT_T) -> float:
    """Smallest character edit distance to any opposite-side word, capped at t."""
    d = min(levenshtein(word.chars, o.chars) for o in other_side)
    return float(min(d, t))


def pron_value(word: Token, other_side: list[Token], t: int = DEFAULT_T) -> float:
    """Smallest syllable-sequence edit distance to any opposite-side word, capped."""
    d = min(levenshtein(word.syllables, o.syllables) for o in other_side)
    return float(min(d, t))


def part_value(word: Token, other_side: list[Token], sim: SimTable) -> float:
    """Smallest POS similarity to any opposite-side word."""
    return min(sim.value(word.pos, o.pos) for o in other_side)


@dataclass
class EmbeddingTables:
    semantic: SemanticTable
    pronunciation: SyllableTable
    pos: PosVecTable
    dim: int  # D

    def side_vectors(self, tokens: list[Token]) -> np.ndarray:
        """Static per-token vectors (L, D, 3); unknown words give zero rows."""
        L, D = len(tokens), self.dim
        out = np.zeros((L, D, 3))
        for i, tok in enumerate(tokens):
            out[i, :, 0] = self.semantic.vector_for(tok.surface)
            out[i, :, 1] = compose_pronunciation(tok, self.pronunciation, D)
            out[i, :, 2] = self.pos.vector_for(tok.surface)
        return out


def build_pair_matrices(
    text_tokens: list[Token],
    entity_tokens: list[Token],
    tables: EmbeddingTables,
    sim: SimTable | None = None,
    t: int = DEFAULT_T,
) -> tuple[np.ndarray, np.ndarray]:
    """Reference construction of the (entity, text) feature-matrix pair."""
    if not text_tokens or not entity_tokens:
        raise ValueError("both token lists must be non-empty")
    sim = sim or SimTable.default()
    txt_vecs = tables.side_vectors(text_tokens)
    ent_vecs = tables.side_vectors(entity_tokens)

    def one_side(tokens, vecs, other_tokens, other_vecs):
        L, D = vecs.shape[0], tables.dim
        fm = np.zeros((L, D + 2, 3))
        fm[:, :D, :] = vecs
        for i, tok in enumerate(tokens):
            for layer in range(3):
                fm[i, D, layer] = lsf_value(
                    vecs[i, :, layer], [other_vecs[j, :, layer] for j in range(other_vecs.shape[0])], t
                )
            fm[i, D + 1, 0] = lit_value(tok, other_tokens, t)
            fm[i, D + 1, 1] = pron_value(tok, other_tokens, t)
            fm[i, D + 1, 2] = part_value(tok, other_tokens, sim)
        return fm

    ent_fm = one_side(entity_tokens, ent_vecs, text_tokens, txt_vecs)
    txt_fm = one_side(text_tokens, txt_vecs, entity_tokens, ent_vecs)
    return ent_fm, txt_fm


class DistanceCache:
    """Memoized symmetric edit distances over symbol tuples."""

    def __init__(self) -> None:
        self._memo: dict[tuple, int] = {}

    def distance(self, a: tuple, b: tuple) -> int:
        key = (a, b) if a <= b else (b, a)
        d = self._memo.get(key)
        if d is None:
            d = levenshtein(a, b)
            self._memo[key] = d
        return d


class PairFeatureFactory:
    """Vectorized feature construction, numerically matching the reference.

    Static columns (0..D-1) depend on one side only and can be computed once
    per text or entity and reused across pairs; LSF and direct-link columns
    are pair-dependent.
    """

    def __init__(self, tables: EmbeddingTables, sim: SimTable | None = None, t: int = DEFAULT_T):
        self.tables = tables
        self.sim = sim or SimTable.default()
        self.t = t
        self._simmat = self.sim.as_matrix()
        self._dist = DistanceCache()

    def static_side(self, tokens: list[Token]) -> np.ndarray:
        return self.tables.side_vectors(tokens)

    def pair(
        self,
        text_tokens: list[Token],
        entity_tokens: list[Token],
        text_static: np.ndarray | None = None,
        entity_static: np.ndarray | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        if not text_tokens or not entity_tokens:
            raise ValueError("both token lists must be non-empty")
        tv = text_static if text_static is not None else self.static_side(text_tokens)
        ev = entity_static if entity_static is not None else self.static_side(entity_tokens)
        D, t = self.tables.dim, self.t
        ent_fm = np.zeros((ev.shape[0], D + 2, 3))
        txt_fm = np.zeros((tv.shape[0], D + 2, 3))
        ent_fm[:, :D, :] = ev
        txt_fm[:, :D, :] = tv
        ent_fm[:, D, :], txt_fm[:, D, :] = self._lsf_both(ev, tv)
        ent_fm[:, D + 1, :] = self._direct_cols(entity_tokens, text_tokens)
        txt_fm[:, D + 1, :] = self._direct_cols(text_tokens, entity_tokens)
        return ent_fm, txt_fm

    def pair_many(
        self,
        text_tokens: list[Token],
        entity_token_lists: list[list[Token]],
        text_static: np.ndarray | None = None,
        entity_statics: list[np.ndarray] | None = None,
    ) -> list[tuple[np.ndarray, np.ndarray]]:
        """Feature pairs for one text against many entities.

        Output matches pair() entity by entity; stacking the entity words
        into one cosine product per layer and sharing edit-distance lookups
        across candidates is what makes scoring a whole relation group cheap.
        """
        if not text_tokens:
            raise ValueError("both token lists must be non-empty")
        if not entity_token_lists:
            return []
        if any(not toks for toks in entity_token_lists):
            raise ValueError("both token lists must be non-empty")
        tv = text_static if text_static is not None else self.static_side(text_tokens)
        if entity_statics is None:
            entity_statics = [self.static_side(toks) for toks in entity_token_lists]
        D, t = self.tables.dim, self.t
        lens = np.array([len(toks) for toks in entity_token_lists])
        starts = np.concatenate([[0], np.cumsum(lens)[:-1]])
        ev = np.concatenate(entity_statics, axis=0)
        L, E = tv.shape[0], len(entity_token_lists)

        ent_lsf = np.empty((ev.shape[0], 3))
        txt_lsf = np.empty((E, L, 3))
        for layer in range(3):
            a, b = ev[:, :, layer], tv[:, :, layer]
            na = np.linalg.norm(a, axis=1)
            nb = np.linalg.norm(b, axis=1)
            denom = na[:, None] * nb[None, :]
            cos = (a @ b.T) / np.where(denom == 0.0, 1.0, denom)  # (W, L)
            ent_lsf[:, layer] = self._lsf_quantize(cos.max(axis=1))
            txt_lsf[:, :, layer] = self._lsf_quantize(
                np.maximum.reduceat(cos, starts, axis=0)
            )

        flat = [tok for toks in entity_token_lists for tok in toks]
        lit = self._dist_matrix(flat, text_tokens, "chars")
        pron = self._dist_matrix(flat, text_tokens, "syllables")
        ent_tags = np.fromiter((_TAG_INDEX[tok.pos] for tok in flat), int, len(flat))
        txt_tags = np.fromiter(
            (_TAG_INDEX[tok.pos] for tok in text_tokens), int, len(text_tokens)
        )
        simm = self._simmat[ent_tags][:, txt_tags]  # (W, L)
        ent_direct = np.stack(
            [
                np.minimum(lit.min(axis=1), t),
                np.minimum(pron.min(axis=1), t),
                simm.min(axis=1),
            ],
            axis=1,
        )
        txt_direct = np.stack(
            [
                np.minimum(np.minimum.reduceat(lit, starts, axis=0), t),
                np.minimum(np.minimum.reduceat(pron, starts, axis=0), t),
                np.minimum.reduceat(simm, starts, axis=0),
            ],
            axis=2,
        )

        out = []
        for e in range(E):
            s, w = int(starts[e]), int(lens[e])
            ent_fm = np.zeros((w, D + 2, 3))
            ent_fm[:, :D, :] = ev[s : s + w]
            ent_fm[:, D, :] = ent_lsf[s : s + w]
            ent_fm[:, D + 1, :] = ent_direct[s : s + w]
            txt_fm = np.zeros((L, D + 2, 3))
            txt_fm[:, :D, :] = tv
            txt_fm[:, D, :] = txt_lsf[e]
            txt_fm[:, D + 1, :] = txt_direct[e]
            out.append((ent_fm, txt_fm))
        return out

    def _lsf_quantize(self, best: np.ndarray) -> np.ndarray:
        raw = np.ceil((1.0 - np.clip(best, 0.0, None)) * self.t - _CEIL_EPS)
        return np.clip(raw, 0, self.t)

    def _dist_matrix(self, tokens: list[Token], other: list[Token], attr: str) -> np.ndarray:
        """Pairwise edit distances, computed once per distinct symbol pair."""
        keys = [getattr(tok, attr) for tok in tokens]
        okeys = [getattr(tok, attr) for tok in other]
        dk: dict[tuple, int] = {}
        for k in keys:
            dk.setdefault(k, len(dk))
        dok: dict[tuple, int] = {}
        for k in okeys:
            dok.setdefault(k, len(dok))
        m = np.empty((len(dk), len(dok)))
        for k, i in dk.items():
            for ok, j in dok.items():
                m[i, j] = self._dist.distance(k, ok)
        rows = np.fromiter((dk[k] for k in keys), int, len(keys))
        cols = np.fromiter((dok[k] for k in okeys), int, len(okeys))
        return m[rows][:, cols]

    def _lsf_both(self, ev: np.ndarray, tv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        t = self.t
        ent_col = np.empty((ev.shape[0], 3))
        txt_col = np.empty((tv.shape[0], 3))
        for layer in range(3):
            a, b = ev[:, :, layer], tv[:, :, layer]
            na = np.linalg.norm(a, axis=1)
            nb = np.linalg.norm(b, axis=1)
            denom = na[:, None] * nb[None, :]
            cos = (a @ b.T) / np.where(denom == 0.0, 1.0, denom)
            for col, best in ((ent_col, cos.max(axis=1)), (txt_col, cos.max(axis=0))):
                raw = np.ceil((1.0 - np.clip(best, 0.0, None)) * t - _CEIL_EPS)
                col[:, layer] = np.clip(raw, 0, t)
        return ent_col, txt_col

    def _direct_cols(self, tokens: list[Token], other: list[Token]) -> np.ndarray:
        t = self.t
        out = np.empty((len(tokens), 3))
        other_pos = np.array([_TAG_INDEX[o.pos] for o in other])
        for i, tok in enumerate(tokens):
            out[i, 0] = min(min(self._dist.distance(tok.chars, o.chars) for o in other), t)
            out[i, 1] = min(min(self._dist.distance(tok.syllables, o.syllables) for o in other), t)
            out[i, 2] = self._simmat[_TAG_INDEX[tok.pos], other_pos].min()
        return out
