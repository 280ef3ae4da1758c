"""Linking texts to knowledge-graph entities.

Candidates are scanned per relation type. Neural variants score each
(text, entity) pair with the matching network over masked feature matrices;
the two string baselines bypass the model entirely. LinkEngine caches
segmented entity surfaces and their static feature columns so repeated link
calls only pay for the pair-dependent work.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .features import EmbeddingTables, PairFeatureFactory, SimTable
from .kg import KnowledgeGraph, RelationType, entities_by_relation
from .matchnet import MatchModel, batched_forward, pad_side
from .textpipe import Lexicon, Token, annotate_pos, segment

THREADS_ENV = "GRIDLINK_THREADS"


class LinkerVariant(Enum):
    FULL = "full"
    NO_PRON = "no_pron"
    NO_POS = "no_pos"
    NO_NEW_DIMS = "no_new_dims"
    NO_ATTENTION = "no_attention"
    LSF_SCNN_BASELINE = "lsf_scnn_baseline"
    DIRECT = "direct"
    WORD_WISE = "word_wise"

    @property
    def display(self) -> str:
        return {
            LinkerVariant.FULL: "Full",
            LinkerVariant.NO_PRON: "NoPron",
            LinkerVariant.NO_POS: "NoPos",
            LinkerVariant.NO_NEW_DIMS: "NoNewDims",
            LinkerVariant.NO_ATTENTION: "NoAttention",
            LinkerVariant.LSF_SCNN_BASELINE: "LsfScnnBaseline",
            LinkerVariant.DIRECT: "Direct",
            LinkerVariant.WORD_WISE: "WordWise",
        }[self]


@dataclass(frozen=True)
class VariantProfile:
    neural: bool
    zero_layers: tuple[int, ...] = ()
    zero_direct_col: bool = False
    train_attention: bool = True
    activation: str = "relu"


VARIANT_PROFILES: dict[LinkerVariant, VariantProfile] = {
    LinkerVariant.FULL: VariantProfile(neural=True),
    LinkerVariant.NO_PRON: VariantProfile(neural=True, zero_layers=(1,)),
    LinkerVariant.NO_POS: VariantProfile(neural=True, zero_layers=(2,)),
    LinkerVariant.NO_NEW_DIMS: VariantProfile(neural=True, zero_direct_col=True),
    LinkerVariant.NO_ATTENTION: VariantProfile(neural=True, train_attention=False),
    LinkerVariant.LSF_SCNN_BASELINE: VariantProfile(
        neural=True, zero_layers=(1, 2), zero_direct_col=True,
        train_attention=False, activation="identity",
    ),
    LinkerVariant.DIRECT: VariantProfile(neural=False),
    LinkerVariant.WORD_WISE: VariantProfile(neural=False),
}


def apply_variant_mask(fm: np.ndarray, variant: LinkerVariant, copy: bool = True) -> np.ndarray:
    """Zero the layers / direct-link column a variant ablates.

    Works on a single (L, D+2, 3) matrix or any batch ending in those axes.
    """
    profile = VARIANT_PROFILES[variant]
    out = fm.copy() if copy else fm
    for layer in profile.zero_layers:
        out[..., :, layer] = 0.0
    if profile.zero_direct_col:
        out[..., -1, :] = 0.0
    return out


@dataclass(frozen=True)
class LinkMatch:
    entity_id: str
    relation: RelationType
    score: float


@dataclass
class LinkResult:
    text_id: str
    matches: list[LinkMatch]

    def entity_ids(self) -> set[str]:
        return {m.entity_id for m in self.matches}

    def by_relation(self) -> dict[RelationType, list[LinkMatch]]:
        out: dict[RelationType, list[LinkMatch]] = {rt: [] for rt in RelationType}
        for m in self.matches:
            out[m.relation].append(m)
        return out


def baseline_direct(text: str, kg: KnowledgeGraph, text_id: str = "") -> LinkResult:
    """Entity matches iff its surface is a contiguous substring of the text."""
    matches = [
        LinkMatch(e.id, rt, 1.0)
        for rt in RelationType
        for e in entities_by_relation(kg, rt)
        if e.surface in text
    ]
    return LinkResult(text_id, matches)


def baseline_wordwise(
    text: str, kg: KnowledgeGraph, lexicon: Lexicon, text_id: str = ""
) -> LinkResult:
    """Entity matches iff each of its segmented words occurs among the text's words."""
    text_words = {t.surface for t in segment(text, lexicon)}
    matches = []
    for rt in RelationType:
        for e in entities_by_relation(kg, rt):
            ent_words = {t.surface for t in segment(e.surface, lexicon)}
            if ent_words <= text_words:
                matches.append(LinkMatch(e.id, rt, 1.0))
    return LinkResult(text_id, matches)


class LinkEngine:
    """Reusable linking context: tokenized candidates plus static features."""

    def __init__(
        self,
        kg: KnowledgeGraph,
        lexicon: Lexicon,
        variant: LinkerVariant = LinkerVariant.FULL,
        model: MatchModel | None = None,
        tables: EmbeddingTables | None = None,
        sim: SimTable | None = None,
        t: int = 10,
        threads: int | None = None,
    ):
        self.kg = kg
        self.lexicon = lexicon
        self.variant = variant
        self.profile = VARIANT_PROFILES[variant]
        self.model = model
        self.threads = threads if threads is not None else _env_threads()
        if self.profile.neural:
            if model is None or tables is None:
                raise ValueError(f"variant {variant.value} needs a trained model and tables")
            self.factory = PairFeatureFactory(tables, sim=sim, t=t)
            self.candidates = {
                rt: [
                    (e.id, annotate_pos(segment(e.surface, lexicon), lexicon))
                    for e in entities_by_relation(kg, rt)
                ]
                for rt in RelationType
            }
            self.entity_static = {
                rt: [self.factory.static_side(toks) for _, toks in cands]
                for rt, cands in self.candidates.items()
            }

    def link(self, text: str, text_id: str = "") -> LinkResult:
        if not text.strip():
            raise ValueError("cannot link an empty text")
        if self.variant is LinkerVariant.DIRECT:
            return baseline_direct(text, self.kg, text_id)
        if self.variant is LinkerVariant.WORD_WISE:
            return baseline_wordwise(text, self.kg, self.lexicon, text_id)
        tokens = annotate_pos(segment(text, self.lexicon), self.lexicon)
        if not tokens:
            raise ValueError("text segmented to no tokens")
        text_static = self.factory.static_side(tokens)
        threshold = self.model.config.decision_threshold
        matches: list[LinkMatch] = []
        for rt in RelationType:
            cands = self.candidates[rt]
            if not cands:
                continue
            scores = self._score_candidates(tokens, text_static, rt)
            for (eid, _), score in zip(cands, scores):
                if score >= threshold:
                    matches.append(LinkMatch(eid, rt, float(score)))
        return LinkResult(text_id, matches)

    def _score_candidates(
        self, tokens: list[Token], text_static: np.ndarray, rt: RelationType
    ) -> np.ndarray:
        cands = self.candidates[rt]
        indices = list(range(len(cands)))
        if self.threads > 1 and len(cands) > 8:
            chunks = np.array_split(indices, self.threads)
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                parts = list(
                    pool.map(lambda ch: self._score_chunk(tokens, text_static, rt, list(ch)), chunks)
                )
            return np.concatenate([p for p in parts if p.size])
        return self._score_chunk(tokens, text_static, rt, indices)

    def _score_chunk(
        self, tokens: list[Token], text_static: np.ndarray, rt: RelationType, idx: list[int]
    ) -> np.ndarray:
        if not idx:
            return np.zeros(0)
        cands = self.candidates[rt]
        statics = self.entity_static[rt]
        fms = self.factory.pair_many(
            tokens, [cands[i][1] for i in idx], text_static, [statics[i] for i in idx]
        )
        ent_fms, txt_fms = [], []
        for ent_fm, txt_fm in fms:
            ent_fms.append(apply_variant_mask(ent_fm, self.variant, copy=False))
            txt_fms.append(apply_variant_mask(txt_fm, self.variant, copy=False))
        ent_x, ent_lens = pad_side(ent_fms)
        txt_x, txt_lens = pad_side(txt_fms)
        probs, _ = batched_forward(self.model, ent_x, ent_lens, txt_x, txt_lens)
        return probs


def _env_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def link_text(
    text: str,
    kg: KnowledgeGraph,
    model: MatchModel | None,
    tables: EmbeddingTables | None,
    lexicon: Lexicon,
    variant: LinkerVariant = LinkerVariant.FULL,
    text_id: str = "",
) -> LinkResult:
    """One-shot convenience wrapper; loops should build a LinkEngine instead."""
    engine = LinkEngine(kg, lexicon, variant=variant, model=model, tables=tables)
    return engine.link(text, text_id)
