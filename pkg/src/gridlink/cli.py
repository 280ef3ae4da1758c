"""Command-line entry point.

Subcommands: gen, train-embeddings, train-matcher, link, eval, ablate,
gradcheck. Every run is a pure function of (input files, flags, seed): all
randomness flows through --seed, and a manifest.json with the subcommand,
config path, seed, and timestamps is written beside the outputs.

Hyperparameters live in a flat JSON config file (--config); flags override
file values, and file values override the built-in defaults below. The env
var GRIDLINK_THREADS sets the candidate-scoring thread count for linking.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .corpusgen import GenConfig, gen_corpus, gen_kg
from .embeddings import (
    EmbeddingError,
    SkipGramConfig,
    context_examples,
    grad_check_predictor,
    load_table,
    pos_examples,
    save_table,
)
from .evaluation import (
    EvalConfig,
    LabeledText,
    _build_pairs,
    _derive_seed,
    _train_tables,
    cross_validate,
    load_corpus,
    run_ablation,
    save_corpus,
    write_reports,
)
from .features import EmbeddingTables, PairFeatureFactory
from .kg import KGError, KnowledgeGraph, load_kg, save_kg
from .linker import VARIANT_PROFILES, LinkEngine, LinkerVariant, apply_variant_mask
from .matchnet import (
    MatchModelConfig,
    TrainingError,
    _train_padded,
    grad_check_model,
    init_model,
    load_model,
    save_model,
)
from .textpipe import Lexicon, LexiconError, PosTag, annotate_pos, load_lexicon, save_lexicon, segment

GRAD_TOLERANCE = 1e-4

# These defaults reproduce the shipped evaluation on the synthetic corpus in
# reasonable wall time; the dataclass defaults in embeddings/matchnet keep the
# method-scale values instead. A --config file overrides any of them.
DEFAULTS: dict = {
    # embedding trainers
    "dim": 32,
    "window": 4,
    "sg_learning_rate": 0.05,
    "sg_epochs": 20,
    # matcher
    "filters": 32,
    "window_height": 3,
    "kma_k": 2,
    "learning_rate": 0.03,
    "epochs": 32,
    "batch_size": 128,
    "activation": "relu",
    "train_attention": True,
    "early_stop_loss": None,
    "threshold": 0.5,
    # feature construction
    "t": 10,
    # evaluation protocol
    "n_folds": 5,
    "n_negatives": 7,
    "redraw_negatives": True,
    # corpus generation
    "n_name": 156,
    "n_state": 20,
    "n_operation": 20,
    "n_texts": 2000,
    "phonetic_sub": 0.15,
    "synonym_swap": 0.15,
    "discontinuity": 0.10,
    "noun_drop": 0.35,
    "shared_companion_frac": 0.5,
}


class CliError(Exception):
    """User-facing failure with a clean one-line message."""


def _load_config(path: str | None) -> dict:
    cfg = dict(DEFAULTS)
    if path is None:
        return cfg
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CliError(f"config file {p} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise CliError(f"config file {p} must hold a JSON object")
    unknown = sorted(set(doc) - set(DEFAULTS))
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(unknown)}")
    cfg.update(doc)
    return cfg


def _skipgram_config(cfg: dict, seed: int) -> SkipGramConfig:
    return SkipGramConfig(
        dim=cfg["dim"],
        window=cfg["window"],
        learning_rate=cfg["sg_learning_rate"],
        epochs=cfg["sg_epochs"],
        seed=seed,
    )


def _matcher_config(cfg: dict, seed: int) -> MatchModelConfig:
    return MatchModelConfig(
        filter_count=cfg["filters"],
        window_height=cfg["window_height"],
        kma_k=cfg["kma_k"],
        dim=cfg["dim"],
        learning_rate=cfg["learning_rate"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        seed=seed,
        decision_threshold=cfg["threshold"],
        activation=cfg["activation"],
        train_attention=cfg["train_attention"],
        early_stop_loss=cfg["early_stop_loss"],
    )


def _gen_config(cfg: dict, seed: int) -> GenConfig:
    return GenConfig(
        n_name=cfg["n_name"],
        n_state=cfg["n_state"],
        n_operation=cfg["n_operation"],
        n_texts=cfg["n_texts"],
        phonetic_sub=cfg["phonetic_sub"],
        synonym_swap=cfg["synonym_swap"],
        discontinuity=cfg["discontinuity"],
        noun_drop=cfg["noun_drop"],
        shared_companion_frac=cfg["shared_companion_frac"],
        seed=seed,
    )


def _eval_config(cfg: dict, seed: int) -> EvalConfig:
    return EvalConfig(
        skipgram=_skipgram_config(cfg, seed),
        matcher=_matcher_config(cfg, seed),
        n_folds=cfg["n_folds"],
        n_negatives=cfg["n_negatives"],
        t=cfg["t"],
        seed=seed,
        redraw_negatives_per_epoch=cfg["redraw_negatives"],
    )


def _parse_variant(name: str) -> LinkerVariant:
    try:
        return LinkerVariant(name)
    except ValueError:
        valid = ", ".join(v.value for v in LinkerVariant)
        raise CliError(f"unknown variant {name!r}; choose one of: {valid}") from None


def _require_file(path: str | None, what: str) -> Path:
    if path is None:
        raise CliError(f"missing required flag: {what}")
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} file not found: {p}")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, args, started: str, outputs: list[str]) -> None:
    doc = {
        "subcommand": args.subcommand,
        "config": args.config,
        "seed": args.seed,
        "out_dir": str(out),
        "started": started,
        "finished": _now(),
        "outputs": outputs,
    }
    (out / "manifest.json").write_text(
        json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _load_tables(dir_path: str | None) -> EmbeddingTables:
    d = Path(dir_path) if dir_path else None
    if d is None or not d.is_dir():
        raise CliError(f"embeddings directory not found: {dir_path}")
    tables = {}
    for name in ("semantic", "pinyin", "pos"):
        p = d / f"{name}.json"
        if not p.is_file():
            raise CliError(f"embeddings directory {d} is missing {name}.json")
        tables[name] = load_table(p)
    dim = tables["semantic"].vectors.shape[1]
    return EmbeddingTables(tables["semantic"], tables["pinyin"], tables["pos"], dim)


def _read_texts(path: Path) -> list[LabeledText]:
    """Accept 1-column (text), 2-column (id, text) or full 3-column corpus lines."""
    out = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) == 1:
            out.append(LabeledText(f"t{i:04d}", cols[0], frozenset()))
        elif len(cols) == 2:
            out.append(LabeledText(cols[0], cols[1], frozenset()))
        elif len(cols) == 3:
            gold = frozenset(g for g in cols[2].split(",") if g)
            out.append(LabeledText(cols[0], cols[1], gold))
        else:
            raise CliError(f"{path}:{i + 1}: expected 1-3 tab-separated columns")
    if not out:
        raise CliError(f"{path}: no texts found")
    return out


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen(args) -> int:
    started = _now()
    cfg = _load_config(args.config)
    gcfg = _gen_config(cfg, args.seed)
    out = _out_dir(args)
    kg = gen_kg(gcfg)
    texts, lexicon = gen_corpus(kg, gcfg)
    save_kg(kg, out / "kg.json")
    save_lexicon(lexicon, out / "lexicon.tsv")
    save_corpus(texts, out / "corpus.tsv")
    _write_manifest(out, args, started, ["kg.json", "lexicon.tsv", "corpus.tsv"])
    print(
        f"wrote {len(kg.non_category_ids())} entities, {len(texts)} texts to {out}"
    )
    return 0


def _tokenize_corpus(texts: list[LabeledText], lexicon: Lexicon) -> list[list]:
    return [annotate_pos(segment(t.text, lexicon), lexicon) for t in texts]


def _cmd_train_embeddings(args) -> int:
    started = _now()
    cfg = _load_config(args.config)
    lexicon = load_lexicon(_require_file(args.lexicon, "--lexicon"))
    texts = load_corpus(_require_file(args.corpus, "--corpus"))
    out = _out_dir(args)
    tokens = _tokenize_corpus(texts, lexicon)
    ecfg = EvalConfig(skipgram=_skipgram_config(cfg, args.seed), seed=args.seed)
    tables = _train_tables(tokens, np.arange(len(texts)), ecfg, fold=0)
    save_table(tables.semantic, out / "semantic.json")
    save_table(tables.pronunciation, out / "pinyin.json")
    save_table(tables.pos, out / "pos.json")
    _write_manifest(out, args, started, ["semantic.json", "pinyin.json", "pos.json"])
    print(
        f"trained tables on {len(texts)} texts "
        f"({len(tables.semantic.vocab)} words, "
        f"{len(tables.pronunciation.syllables)} syllables) to {out}"
    )
    return 0


def _cmd_train_matcher(args) -> int:
    started = _now()
    cfg = _load_config(args.config)
    if args.threshold is not None:
        cfg["threshold"] = args.threshold
    kg = load_kg(_require_file(args.kg, "--kg"))
    lexicon = load_lexicon(_require_file(args.lexicon, "--lexicon"))
    texts = load_corpus(_require_file(args.corpus, "--corpus"), kg)
    tables = _load_tables(args.embeddings)
    variant = _parse_variant(args.variant)
    profile = VARIANT_PROFILES[variant]
    if not profile.neural:
        raise CliError(f"variant {variant.value} has no trainable matcher")
    out = _out_dir(args)
    tokens = _tokenize_corpus(texts, lexicon)
    ecfg = _eval_config(cfg, args.seed)
    factory = PairFeatureFactory(tables, t=ecfg.t)
    ent_tokens = {
        eid: annotate_pos(segment(kg.entities[eid].surface, lexicon), lexicon)
        for eid in kg.non_category_ids()
    }
    ent_static = {eid: factory.static_side(tk) for eid, tk in ent_tokens.items()}
    ent_x, ent_lens, txt_x, txt_lens, labels = _build_pairs(
        texts, tokens, np.arange(len(texts)), kg, factory, ent_tokens, ent_static, ecfg
    )
    mcfg = replace(
        ecfg.matcher,
        activation=profile.activation,
        train_attention=profile.train_attention,
        seed=_derive_seed(args.seed, 0, 20),
    )
    model = init_model(mcfg)
    result = _train_padded(
        model,
        apply_variant_mask(ent_x, variant),
        ent_lens,
        apply_variant_mask(txt_x, variant),
        txt_lens,
        labels,
        mcfg,
    )
    save_model(model, out / "matchnet.json")
    _write_manifest(out, args, started, ["matchnet.json"])
    print(
        f"trained on {labels.size} pairs ({int(labels.sum())} positive), "
        f"final loss {result.epoch_losses[-1]:.4f}, wrote {out / 'matchnet.json'}"
    )
    return 0


def _build_engine(args, cfg: dict, kg: KnowledgeGraph, lexicon: Lexicon) -> LinkEngine:
    variant = _parse_variant(args.variant)
    if not VARIANT_PROFILES[variant].neural:
        return LinkEngine(kg, lexicon, variant=variant)
    tables = _load_tables(args.embeddings)
    model = load_model(_require_file(args.model, "--model"))
    if args.threshold is not None:
        model.config = replace(model.config, decision_threshold=args.threshold)
    return LinkEngine(kg, lexicon, variant=variant, model=model, tables=tables, t=cfg["t"])


def _cmd_link(args) -> int:
    started = _now()
    cfg = _load_config(args.config)
    kg = load_kg(_require_file(args.kg, "--kg"))
    lexicon = load_lexicon(_require_file(args.lexicon, "--lexicon"))
    texts = _read_texts(_require_file(args.texts, "--texts"))
    engine = _build_engine(args, cfg, kg, lexicon)
    out = _out_dir(args)
    lines = []
    for t in texts:
        res = engine.link(t.text, t.text_id)
        cells = [t.text_id] + [f"{m.entity_id}:{m.score:.6f}" for m in res.matches]
        lines.append("\t".join(cells))
    (out / "links.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest(out, args, started, ["links.tsv"])
    print(f"linked {len(texts)} texts, wrote {out / 'links.tsv'}")
    return 0


def _cmd_eval(args) -> int:
    started = _now()
    cfg = _load_config(args.config)
    if args.threshold is not None:
        cfg["threshold"] = args.threshold
    kg = load_kg(_require_file(args.kg, "--kg"))
    lexicon = load_lexicon(_require_file(args.lexicon, "--lexicon"))
    texts = load_corpus(_require_file(args.corpus, "--corpus"), kg)
    variant = _parse_variant(args.variant)
    report = cross_validate(
        texts, kg, lexicon, _eval_config(cfg, args.seed), variants=[variant],
        progress=print if args.verbose else None,
    )
    out = _out_dir(args)
    write_reports(report, out)
    _write_manifest(out, args, started, ["report.json", "report.txt", "timing.json"])
    row = report.rows[0]
    print(f"{row.variant.display}: acc={row.acc:.4f} over {report.n_folds} folds")
    return 0


def _cmd_ablate(args) -> int:
    started = _now()
    cfg = _load_config(args.config)
    if args.threshold is not None:
        cfg["threshold"] = args.threshold
    kg = load_kg(_require_file(args.kg, "--kg"))
    lexicon = load_lexicon(_require_file(args.lexicon, "--lexicon"))
    texts = load_corpus(_require_file(args.corpus, "--corpus"), kg)
    report = run_ablation(
        texts, kg, lexicon, _eval_config(cfg, args.seed),
        progress=print if args.verbose else None,
    )
    out = _out_dir(args)
    write_reports(report, out)
    _write_manifest(out, args, started, ["report.json", "report.txt", "timing.json"])
    for row in report.rows:
        print(f"{row.variant.display:<16} acc={row.acc:.4f}")
    return 0


def _embedding_grad_errors(seed: int) -> dict[str, float]:
    """Finite-difference checks on desk-scale instances of all three trainers."""
    rng = np.random.default_rng([seed, 7])
    V, D = 6, 8
    errs: dict[str, float] = {}

    def tables(n_in: int, n_out: int, dim: int):
        return (
            rng.uniform(-0.5, 0.5, size=(n_in, dim)),
            rng.uniform(-0.5, 0.5, size=(dim, n_out)),
        )

    # word-level and syllable-level trainers share the square predictor shape
    for label in ("semantic", "pinyin"):
        seqs = [[int(x) for x in rng.integers(0, V, size=5)] for _ in range(3)]
        t_in, t_out = tables(V, V, D)
        for k, v in grad_check_predictor(t_in, t_out, context_examples(seqs, 2)).items():
            errs[f"{label}.{k}"] = v
    # tag predictor: rectangular output, head word's own tag included
    tag_pool = [PosTag.NOUN, PosTag.VERB, PosTag.ADJECTIVE, PosTag.OTHER]
    corpus = [
        [
            (f"w{int(rng.integers(0, V))}", tag_pool[int(rng.integers(0, 4))])
            for _ in range(5)
        ]
        for _ in range(3)
    ]
    vocab = {w: i for i, w in enumerate(sorted({w for s in corpus for w, _ in s}))}
    observed = sorted({t for s in corpus for _, t in s}, key=lambda t: t.value)
    tag_index = {t: i for i, t in enumerate(observed)}
    examples = pos_examples(corpus, vocab, tag_index, window=2)
    t_in, t_out = tables(len(vocab), len(observed), D)
    for k, v in grad_check_predictor(t_in, t_out, examples).items():
        errs[f"pos.{k}"] = v
    return errs


def _cmd_gradcheck(args) -> int:
    started = _now()
    errs = _embedding_grad_errors(args.seed)
    mcfg = MatchModelConfig(
        filter_count=4, window_height=3, kma_k=2, dim=8, seed=args.seed
    )
    for k, v in grad_check_model(mcfg, seed=args.seed).items():
        errs[f"matchnet.{k}"] = v
    worst = max(errs.values())
    for name in sorted(errs):
        flag = "ok" if errs[name] < GRAD_TOLERANCE else "FAIL"
        print(f"{name:<24} {errs[name]:.3e}  {flag}")
    if args.out:
        out = _out_dir(args)
        (out / "gradcheck.json").write_text(
            json.dumps(errs, indent=1, sort_keys=True) + "\n", encoding="utf-8"
        )
        _write_manifest(out, args, started, ["gradcheck.json"])
    if worst >= GRAD_TOLERANCE:
        print(f"worst relative error {worst:.3e} exceeds {GRAD_TOLERANCE}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridlink",
        description="Link dispatch texts to distribution-network entities.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, out_default=None):
        p.add_argument("--seed", type=int, default=0, help="master random seed")
        p.add_argument("--config", default=None, help="flat JSON hyperparameter file")
        p.add_argument("--out", default=out_default, help="output directory")

    p = sub.add_parser("gen", help="generate KG, lexicon, and labeled corpus")
    common(p, out_default=".")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train-embeddings", help="train the three feature tables")
    common(p, out_default=".")
    p.add_argument("--corpus", help="labeled corpus TSV")
    p.add_argument("--lexicon", help="lexicon TSV")
    p.set_defaults(func=_cmd_train_embeddings)

    p = sub.add_parser("train-matcher", help="train the matching network")
    common(p, out_default=".")
    p.add_argument("--corpus", help="labeled corpus TSV")
    p.add_argument("--kg", help="knowledge-graph JSON")
    p.add_argument("--lexicon", help="lexicon TSV")
    p.add_argument("--embeddings", help="directory with semantic/pinyin/pos.json")
    p.add_argument("--variant", default="full", help="linker variant to train for")
    p.add_argument("--threshold", type=float, default=None, help="decision threshold")
    p.set_defaults(func=_cmd_train_matcher)

    p = sub.add_parser("link", help="link texts against a knowledge graph")
    common(p, out_default=".")
    p.add_argument("--kg", help="knowledge-graph JSON")
    p.add_argument("--lexicon", help="lexicon TSV")
    p.add_argument("--texts", help="texts file (id TAB text, or corpus TSV)")
    p.add_argument("--embeddings", help="directory with semantic/pinyin/pos.json")
    p.add_argument("--model", help="matcher checkpoint JSON")
    p.add_argument("--variant", default="full", help="linker variant")
    p.add_argument("--threshold", type=float, default=None, help="decision threshold")
    p.set_defaults(func=_cmd_link)

    p = sub.add_parser("eval", help="cross-validate one variant")
    common(p, out_default=".")
    p.add_argument("--corpus", help="labeled corpus TSV")
    p.add_argument("--kg", help="knowledge-graph JSON")
    p.add_argument("--lexicon", help="lexicon TSV")
    p.add_argument("--variant", default="full", help="linker variant")
    p.add_argument("--threshold", type=float, default=None, help="decision threshold")
    p.add_argument("--verbose", action="store_true", help="print per-fold progress")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the full 8-variant comparison")
    common(p, out_default=".")
    p.add_argument("--corpus", help="labeled corpus TSV")
    p.add_argument("--kg", help="knowledge-graph JSON")
    p.add_argument("--lexicon", help="lexicon TSV")
    p.add_argument("--threshold", type=float, default=None, help="decision threshold")
    p.add_argument("--verbose", action="store_true", help="print per-fold progress")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"gridlink: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"gridlink: file not found: {e.filename or e}", file=sys.stderr)
        return 2
    except (KGError, LexiconError, EmbeddingError, TrainingError) as e:
        print(f"gridlink: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"gridlink: invalid input: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
