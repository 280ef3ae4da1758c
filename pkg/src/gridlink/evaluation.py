"""Evaluation protocol: 5-fold cross-validation, negative sampling, exact-set
accuracy metrics, per-variant timing, and the ablation grid.

Each fold trains the three embedding tables on its training texts, builds
labeled (text, entity) pairs (every gold entity positive, a drawn set of
non-gold entities negative), trains one matcher per linker variant on masked
copies of the same pair features, and links the held-out texts.

Accuracy counts a text as correct only when the predicted entity set equals
the gold set exactly; the per-type variants restrict both sets to one
relation type over the texts that have gold entities of that type.

report.json and report.txt are deterministic under a fixed seed. Wall-clock
link times go to a separate timing.json so reruns stay byte-identical.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .embeddings import SkipGramConfig, train_pinyin2vec, train_pos2vec, train_semantic
from .features import EmbeddingTables, PairFeatureFactory
from .kg import KnowledgeGraph, RelationType
from .linker import (
    VARIANT_PROFILES,
    LinkEngine,
    LinkerVariant,
    apply_variant_mask,
)
from .matchnet import MatchModel, MatchModelConfig, _train_padded, init_model, pad_side
from .textpipe import Lexicon, annotate_pos, segment


@dataclass(frozen=True)
class LabeledText:
    text_id: str
    text: str
    gold: frozenset[str]


ABLATION_ORDER = [
    LinkerVariant.DIRECT,
    LinkerVariant.WORD_WISE,
    LinkerVariant.LSF_SCNN_BASELINE,
    LinkerVariant.NO_PRON,
    LinkerVariant.NO_POS,
    LinkerVariant.NO_NEW_DIMS,
    LinkerVariant.NO_ATTENTION,
    LinkerVariant.FULL,
]


@dataclass
class EvalConfig:
    skipgram: SkipGramConfig = field(default_factory=SkipGramConfig)
    matcher: MatchModelConfig = field(default_factory=MatchModelConfig)
    n_folds: int = 5
    n_negatives: int = 7
    t: int = 10
    seed: int = 0
    redraw_negatives_per_epoch: bool = False


# ---------------------------------------------------------------------------
# metrics


def accuracy(results: list[tuple[set, set]]) -> float:
    """Fraction of texts whose predicted set equals the gold set exactly."""
    if not results:
        raise ValueError("accuracy of an empty result list is undefined")
    return sum(1 for pred, gold in results if set(pred) == set(gold)) / len(results)


def accuracy_by_type(
    results: list[tuple[set, set]], rt: RelationType, kg: KnowledgeGraph
) -> float:
    """Exact-set accuracy restricted to one relation type.

    Only texts whose gold set contains at least one entity of that type
    count toward the denominator.
    """

    def restrict(ids: set) -> set:
        return {e for e in ids if kg.entities[e].kind.relation_type is rt}

    rows = [(restrict(pred), restrict(gold)) for pred, gold in results]
    rows = [(p, g) for (p, g), (_, gold) in zip(rows, results) if restrict(set(gold))]
    if not rows:
        raise ValueError(f"no text has a gold entity of type {rt.value}")
    return sum(1 for p, g in rows if p == g) / len(rows)


def sample_negatives(
    text: LabeledText, kg: KnowledgeGraph, n: int = 7, seed=0, exclude=frozenset()
) -> list[str]:
    """n distinct non-gold candidate entities, uniform, deterministic under seed."""
    pool = [
        eid
        for eid in kg.non_category_ids()
        if eid not in text.gold and eid not in exclude
    ]
    if len(pool) < n:
        raise ValueError(
            f"text {text.text_id!r}: only {len(pool)} non-gold entities, need {n}"
        )
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(pool), size=n, replace=False)
    return [pool[int(j)] for j in picked]


def confusable_negatives(
    text: LabeledText,
    kg: KnowledgeGraph,
    ent_tokens: dict[str, list],
    rng: np.random.Generator,
) -> list[str]:
    """Up to one same-relation rival per gold entity that shares a word with it.

    Uniform negatives almost never land on the entities a linker actually
    confuses (a rival sharing a companion word, a same-category name sharing
    the device noun), so those are drawn explicitly and the uniform draw
    fills the rest.
    """
    hard: list[str] = []
    taken = set(text.gold)
    for g in sorted(text.gold):
        g_words = {t.surface for t in ent_tokens[g]}
        rt = kg.entities[g].kind.relation_type
        cands = [
            eid
            for eid in kg.index[rt]
            if eid not in taken and g_words & {t.surface for t in ent_tokens[eid]}
        ]
        if cands:
            pick = cands[int(rng.integers(len(cands)))]
            hard.append(pick)
            taken.add(pick)
    return hard


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class FoldMetrics:
    fold: int
    n_texts: int
    acc: float
    acc_name: float | None
    acc_state: float | None
    acc_operate: float | None
    mean_link_time: float
    denominators: dict[str, int]


@dataclass
class VariantResult:
    variant: LinkerVariant
    folds: list[FoldMetrics]

    def _mean(self, attr: str) -> float | None:
        vals = [getattr(f, attr) for f in self.folds if getattr(f, attr) is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def acc(self) -> float:
        return self._mean("acc")

    @property
    def acc_name(self) -> float | None:
        return self._mean("acc_name")

    @property
    def acc_state(self) -> float | None:
        return self._mean("acc_state")

    @property
    def acc_operate(self) -> float | None:
        return self._mean("acc_operate")

    @property
    def mean_link_time(self) -> float:
        return float(np.mean([f.mean_link_time for f in self.folds]))


@dataclass
class EvalReport:
    rows: list[VariantResult]
    seed: int
    n_folds: int

    def row(self, variant: LinkerVariant) -> VariantResult:
        for r in self.rows:
            if r.variant is variant:
                return r
        raise KeyError(variant)


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _fold_split(n: int, n_folds: int, seed: int) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, n_folds)]


def _train_tables(
    corpus_tokens: list[list], train_idx: np.ndarray, cfg: EvalConfig, fold: int
) -> EmbeddingTables:
    sem_corpus = [[t.surface for t in corpus_tokens[i]] for i in train_idx]
    syl_corpus = [[s for t in corpus_tokens[i] for s in t.syllables] for i in train_idx]
    pos_corpus = [[(t.surface, t.pos) for t in corpus_tokens[i]] for i in train_idx]
    M = max(len(t.chars) for i in train_idx for t in corpus_tokens[i])
    sg = cfg.skipgram
    semantic = train_semantic(sem_corpus, replace(sg, seed=_derive_seed(cfg.seed, fold, 10)))
    syllable = train_pinyin2vec(
        syl_corpus, replace(sg, seed=_derive_seed(cfg.seed, fold, 11)), M
    )
    posvec = train_pos2vec(pos_corpus, replace(sg, seed=_derive_seed(cfg.seed, fold, 12)))
    return EmbeddingTables(semantic, syllable, posvec, sg.dim)


def _build_pairs(
    corpus: list[LabeledText],
    corpus_tokens: list[list],
    train_idx: np.ndarray,
    kg: KnowledgeGraph,
    factory: PairFeatureFactory,
    ent_tokens: dict[str, list],
    ent_static: dict[str, np.ndarray],
    cfg: EvalConfig,
    neg_salt: tuple[int, ...] = (),
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Padded float32 pair features + labels for all training texts of a fold.

    Negatives mix word-sharing rivals (one per gold entity when one exists)
    with uniform draws; the rival picks stay fixed across epochs while the
    uniform remainder redraws under neg_salt.
    """
    ent_fms, txt_fms, labels = [], [], []
    for i in train_idx:
        lt = corpus[int(i)]
        tstat = factory.static_side(corpus_tokens[int(i)])
        hard_rng = np.random.default_rng([cfg.seed, 2, int(i), 0])
        hard = confusable_negatives(lt, kg, ent_tokens, hard_rng)[: cfg.n_negatives]
        negs = hard + sample_negatives(
            lt,
            kg,
            cfg.n_negatives - len(hard),
            seed=[cfg.seed, 2, int(i), 1, *neg_salt],
            exclude=frozenset(hard),
        )
        eids = [(g, 1) for g in sorted(lt.gold)] + [(x, 0) for x in negs]
        fms = factory.pair_many(
            corpus_tokens[int(i)],
            [ent_tokens[eid] for eid, _ in eids],
            tstat,
            [ent_static[eid] for eid, _ in eids],
        )
        for (_, label), (ent_fm, txt_fm) in zip(eids, fms):
            ent_fms.append(ent_fm.astype(np.float32))
            txt_fms.append(txt_fm.astype(np.float32))
            labels.append(label)
    ent_x, ent_lens = pad_side(ent_fms, dtype=np.float32)
    txt_x, txt_lens = pad_side(txt_fms, dtype=np.float32)
    return ent_x, ent_lens, txt_x, txt_lens, np.array(labels, dtype=np.int64)


def _mask_if_needed(x: np.ndarray, variant: LinkerVariant) -> np.ndarray:
    profile = VARIANT_PROFILES[variant]
    if not profile.zero_layers and not profile.zero_direct_col:
        return x  # nothing to zero; training never mutates its inputs
    return apply_variant_mask(x, variant)


def _train_neural_models(
    variants: list[LinkerVariant],
    pairs,
    corpus,
    corpus_tokens,
    train_idx,
    kg,
    factory,
    ent_tokens,
    ent_static,
    cfg: EvalConfig,
    fold: int,
) -> dict[LinkerVariant, MatchModel]:
    """One trained matcher per neural variant.

    With per-epoch negative redraw the variants advance in lockstep so each
    epoch's featurized pairs are built once and shared; every variant still
    sees exactly the masked features, seeds and decayed rates it would get
    training alone.
    """
    models: dict[LinkerVariant, MatchModel] = {}
    cfgs: dict[LinkerVariant, MatchModelConfig] = {}
    for variant in variants:
        profile = VARIANT_PROFILES[variant]
        cfgs[variant] = replace(
            cfg.matcher,
            activation=profile.activation,
            train_attention=profile.train_attention,
            seed=_derive_seed(cfg.seed, fold, 20),
        )
        models[variant] = init_model(cfgs[variant])
    if not cfg.redraw_negatives_per_epoch:
        ent_x, ent_lens, txt_x, txt_lens, labels = pairs
        for variant in variants:
            _train_padded(
                models[variant],
                _mask_if_needed(ent_x, variant),
                ent_lens,
                _mask_if_needed(txt_x, variant),
                txt_lens,
                labels,
                cfgs[variant],
            )
        return models
    # fresh negatives each epoch: run single-epoch rounds with the decayed rate
    epochs = cfg.matcher.epochs
    live = list(variants)
    for epoch in range(epochs):
        if not live:
            break
        ent_x, ent_lens, txt_x, txt_lens, labels = _build_pairs(
            corpus, corpus_tokens, train_idx, kg, factory, ent_tokens, ent_static,
            cfg, neg_salt=(epoch,),
        )
        for variant in list(live):
            mcfg = cfgs[variant]
            lr = mcfg.learning_rate * (
                1.0 if epochs == 1 else 1.0 - 0.9 * epoch / (epochs - 1)
            )
            round_cfg = replace(
                mcfg, epochs=1, learning_rate=lr, seed=_derive_seed(mcfg.seed, epoch),
                early_stop_loss=None,
            )
            result = _train_padded(
                models[variant],
                _mask_if_needed(ent_x, variant),
                ent_lens,
                _mask_if_needed(txt_x, variant),
                txt_lens,
                labels,
                round_cfg,
            )
            if (
                mcfg.early_stop_loss is not None
                and result.epoch_losses[-1] < mcfg.early_stop_loss
            ):
                live.remove(variant)
    return models


def cross_validate(
    corpus: list[LabeledText],
    kg: KnowledgeGraph,
    lexicon: Lexicon,
    cfg: EvalConfig,
    variants: list[LinkerVariant] | None = None,
    progress=None,
) -> EvalReport:
    """Per-fold and mean metrics for each requested variant.

    Embedding tables and unmasked pair features are shared across variants
    within a fold since neither depends on the variant; each variant trains
    its own matcher on masked copies and links the held-out texts itself.
    """
    if len(corpus) < cfg.n_folds:
        raise ValueError(f"corpus of {len(corpus)} texts cannot split into {cfg.n_folds} folds")
    variants = variants or [LinkerVariant.FULL]
    say = progress or (lambda msg: None)
    corpus_tokens = [annotate_pos(segment(t.text, lexicon), lexicon) for t in corpus]
    ent_tokens = {
        eid: annotate_pos(segment(kg.entities[eid].surface, lexicon), lexicon)
        for eid in kg.non_category_ids()
    }
    folds = _fold_split(len(corpus), cfg.n_folds, cfg.seed)
    per_variant: dict[LinkerVariant, list[FoldMetrics]] = {v: [] for v in variants}
    for fold, test_idx in enumerate(folds):
        test_set = set(int(i) for i in test_idx)
        train_idx = np.array([i for i in range(len(corpus)) if i not in test_set])
        neural_wanted = [v for v in variants if VARIANT_PROFILES[v].neural]
        tables = factory = ent_static = pairs = None
        models: dict[LinkerVariant, MatchModel] = {}
        if neural_wanted:
            say(f"fold {fold}: training embeddings on {len(train_idx)} texts")
            tables = _train_tables(corpus_tokens, train_idx, cfg, fold)
            factory = PairFeatureFactory(tables, t=cfg.t)
            ent_static = {eid: factory.static_side(toks) for eid, toks in ent_tokens.items()}
            if not cfg.redraw_negatives_per_epoch:
                pairs = _build_pairs(
                    corpus, corpus_tokens, train_idx, kg, factory, ent_tokens,
                    ent_static, cfg,
                )
            say(f"fold {fold}: training {len(neural_wanted)} matcher variants")
            models = _train_neural_models(
                neural_wanted, pairs, corpus, corpus_tokens, train_idx, kg, factory,
                ent_tokens, ent_static, cfg, fold,
            )
        for variant in variants:
            profile = VARIANT_PROFILES[variant]
            if profile.neural:
                engine = LinkEngine(
                    kg, lexicon, variant=variant, model=models[variant], tables=tables,
                    t=cfg.t,
                )
            else:
                engine = LinkEngine(kg, lexicon, variant=variant)
            results: list[tuple[set, set]] = []
            elapsed = 0.0
            for i in test_idx:
                lt = corpus[int(i)]
                t0 = time.perf_counter()
                res = engine.link(lt.text, lt.text_id)
                elapsed += time.perf_counter() - t0
                results.append((res.entity_ids(), set(lt.gold)))
            per_variant[variant].append(
                _fold_metrics(fold, results, kg, elapsed / len(test_idx))
            )
            say(f"fold {fold}: {variant.display} acc={per_variant[variant][-1].acc:.4f}")
    rows = [VariantResult(v, per_variant[v]) for v in variants]
    return EvalReport(rows=rows, seed=cfg.seed, n_folds=cfg.n_folds)


def _fold_metrics(
    fold: int, results: list[tuple[set, set]], kg: KnowledgeGraph, mean_time: float
) -> FoldMetrics:
    per_type: dict[str, float | None] = {}
    denoms: dict[str, int] = {"acc": len(results)}
    for rt, key in [
        (RelationType.NAME, "acc_name"),
        (RelationType.STATE, "acc_state"),
        (RelationType.OPERATION, "acc_operate"),
    ]:
        having = [
            1
            for _, gold in results
            if any(kg.entities[e].kind.relation_type is rt for e in gold)
        ]
        denoms[key] = len(having)
        per_type[key] = accuracy_by_type(results, rt, kg) if having else None
    return FoldMetrics(
        fold=fold,
        n_texts=len(results),
        acc=accuracy(results),
        acc_name=per_type["acc_name"],
        acc_state=per_type["acc_state"],
        acc_operate=per_type["acc_operate"],
        mean_link_time=mean_time,
        denominators=denoms,
    )


def run_ablation(
    corpus: list[LabeledText],
    kg: KnowledgeGraph,
    lexicon: Lexicon,
    cfg: EvalConfig,
    progress=None,
) -> EvalReport:
    """All eight variants, cross-validated, rows in the standard grid order."""
    return cross_validate(corpus, kg, lexicon, cfg, variants=list(ABLATION_ORDER), progress=progress)


# ---------------------------------------------------------------------------
# corpus and report files


def load_corpus(path: str | Path, kg: KnowledgeGraph | None = None) -> list[LabeledText]:
    """TSV: text_id, text, comma-joined gold entity ids."""
    texts = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated columns")
        text_id, body, gold_col = cols
        gold = frozenset(g for g in gold_col.split(",") if g)
        if kg is not None:
            for g in gold:
                if g not in kg.entities:
                    raise ValueError(f"{path}:{lineno}: unknown gold entity {g!r}")
        texts.append(LabeledText(text_id, body, gold))
    return texts


def save_corpus(texts: list[LabeledText], path: str | Path) -> None:
    lines = [
        "\t".join([t.text_id, t.text, ",".join(sorted(t.gold))]) for t in texts
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _row_dict(r: VariantResult) -> dict:
    return {
        "variant": r.variant.display,
        "acc": r.acc,
        "acc_name": r.acc_name,
        "acc_state": r.acc_state,
        "acc_operate": r.acc_operate,
        "folds": [
            {
                "fold": f.fold,
                "n_texts": f.n_texts,
                "acc": f.acc,
                "acc_name": f.acc_name,
                "acc_state": f.acc_state,
                "acc_operate": f.acc_operate,
                "denominators": f.denominators,
            }
            for f in r.folds
        ],
    }


def report_json(report: EvalReport) -> str:
    doc = {
        "seed": report.seed,
        "n_folds": report.n_folds,
        "rows": [_row_dict(r) for r in report.rows],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def timing_json(report: EvalReport) -> str:
    doc = {
        r.variant.display: {
            "mean_link_time_s": r.mean_link_time,
            "per_fold_s": [f.mean_link_time for f in r.folds],
        }
        for r in report.rows
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _pct(x: float | None) -> str:
    return "-" if x is None else f"{100.0 * x:6.2f}"


def report_text(report: EvalReport) -> str:
    header = f"{'Variant':<16} {'acc':>7} {'acc_name':>9} {'acc_state':>10} {'acc_operate':>12}"
    lines = [header, "-" * len(header)]
    for r in report.rows:
        lines.append(
            f"{r.variant.display:<16} {_pct(r.acc):>7} {_pct(r.acc_name):>9} "
            f"{_pct(r.acc_state):>10} {_pct(r.acc_operate):>12}"
        )
    lines.append("")
    lines.append(f"folds={report.n_folds} seed={report.seed} (accuracies in %)")
    return "\n".join(lines) + "\n"


def write_reports(report: EvalReport, out_dir: str | Path) -> dict[str, Path]:
    """report.json / report.txt are seed-deterministic; timing.json is not."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report_json": out / "report.json",
        "report_txt": out / "report.txt",
        "timing_json": out / "timing.json",
    }
    paths["report_json"].write_text(report_json(report), encoding="utf-8")
    paths["report_txt"].write_text(report_text(report), encoding="utf-8")
    paths["timing_json"].write_text(timing_json(report), encoding="utf-8")
    return paths
