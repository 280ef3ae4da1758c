"""Feature-vector training: word-level skip-gram, syllable-level pinyin2vec,
and pos2vec whose targets are POS tags of the context words and the head word.

All three trainers share one full-softmax predictor (input table, output
table, softmax cross-entropy, plain SGD). Desk-scale vocabularies keep the
full softmax cheap and every gradient directly checkable against finite
differences. No negative sampling, no hierarchical softmax.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .textpipe import PosTag


class EmbeddingError(ValueError):
    """Bad training input or configuration."""


@dataclass
class SkipGramConfig:
    dim: int = 50
    window: int = 2
    learning_rate: float = 0.05
    epochs: int = 30
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim < 1 or self.window < 1:
            raise EmbeddingError("dim and window must be >= 1")
        if self.learning_rate <= 0 or self.epochs < 1:
            raise EmbeddingError("learning_rate must be > 0 and epochs >= 1")


@dataclass
class SemanticTable:
    vocab: dict[str, int]
    vectors: np.ndarray  # V x D

    def vector_for(self, word: str) -> np.ndarray:
        idx = self.vocab.get(word)
        if idx is None:
            return np.zeros(self.vectors.shape[1])
        return self.vectors[idx]


@dataclass
class SyllableTable:
    syllables: dict[str, int]
    vectors: np.ndarray  # S x C
    char_dim: int  # C = floor(D / M)
    max_word_len: int  # M

    def vector_for(self, syllable: str) -> np.ndarray | None:
        idx = self.syllables.get(syllable)
        return None if idx is None else self.vectors[idx]


@dataclass
class PosVecTable:
    vocab: dict[str, int]
    vectors: np.ndarray  # V x D
    tag_count: int  # V', distinct tags observed in training

    def vector_for(self, word: str) -> np.ndarray:
        idx = self.vocab.get(word)
        if idx is None:
            return np.zeros(self.vectors.shape[1])
        return self.vectors[idx]


# ---------------------------------------------------------------------------
# shared softmax predictor

Example = tuple[int, tuple[int, ...]]  # (input index, prediction-target indices)


@dataclass
class TrainResult:
    t_in: np.ndarray  # n_in x dim
    t_out: np.ndarray  # dim x n_out
    epoch_losses: list[float] = field(default_factory=list)


def _epoch_lr(cfg: SkipGramConfig, epoch: int) -> float:
    """Linear decay from the initial rate down to 10% of it on the last epoch."""
    if cfg.epochs == 1:
        return cfg.learning_rate
    return cfg.learning_rate * (1.0 - 0.9 * epoch / (cfg.epochs - 1))


def loss_and_grads(
    t_in: np.ndarray, t_out: np.ndarray, examples: list[Example]
) -> tuple[float, np.ndarray, np.ndarray]:
    """Total cross-entropy over examples plus analytic gradients of both tables."""
    g_in = np.zeros_like(t_in)
    g_out = np.zeros_like(t_out)
    total = 0.0
    for c, targets in examples:
        v = t_in[c]
        scores = v @ t_out
        scores = scores - scores.max()
        expd = np.exp(scores)
        probs = expd / expd.sum()
        g = probs * len(targets)
        for t in targets:
            g[t] -= 1.0
            total -= float(np.log(probs[t]))
        g_in[c] += t_out @ g
        g_out += np.outer(v, g)
    return total, g_in, g_out


def train_softmax_predictor(
    examples: list[Example], n_in: int, n_out: int, dim: int, cfg: SkipGramConfig
) -> TrainResult:
    """Per-example SGD in corpus order; deterministic under cfg.seed."""
    if not examples:
        raise EmbeddingError("no training examples")
    rng = np.random.default_rng(cfg.seed)
    bound = 0.5 / dim
    t_in = rng.uniform(-bound, bound, size=(n_in, dim))
    t_out = rng.uniform(-bound, bound, size=(dim, n_out))
    n_targets = sum(len(ts) for _, ts in examples)
    losses = []
    for epoch in range(cfg.epochs):
        lr = _epoch_lr(cfg, epoch)
        total = 0.0
        for c, targets in examples:
            v = t_in[c]
            scores = v @ t_out
            scores = scores - scores.max()
            expd = np.exp(scores)
            probs = expd / expd.sum()
            g = probs * len(targets)
            for t in targets:
                g[t] -= 1.0
                total -= float(np.log(probs[t]))
            # input gradient must use the pre-update output table
            grad_in = t_out @ g
            t_out -= lr * np.outer(v, g)
            t_in[c] -= lr * grad_in
        losses.append(total / n_targets)
    return TrainResult(t_in, t_out, losses)


def context_examples(indexed: list[list[int]], window: int) -> list[Example]:
    """Skip-gram examples: each position predicts its in-sentence neighbors."""
    examples: list[Example] = []
    for seq in indexed:
        for i, c in enumerate(seq):
            lo = max(0, i - window)
            hi = min(len(seq), i + window + 1)
            targets = tuple(seq[j] for j in range(lo, hi) if j != i)
            if targets:
                examples.append((c, targets))
    return examples


# ---------------------------------------------------------------------------
# the three trainers


def _index_vocab(items: list[list[str]]) -> dict[str, int]:
    return {w: i for i, w in enumerate(sorted({w for seq in items for w in seq}))}


def train_semantic(corpus: list[list[str]], cfg: SkipGramConfig) -> SemanticTable:
    """Word-level skip-gram; returned rows are the input-table rows."""
    if not corpus or any(not seq for seq in corpus):
        raise EmbeddingError("corpus must be non-empty sequences of words")
    vocab = _index_vocab(corpus)
    indexed = [[vocab[w] for w in seq] for seq in corpus]
    examples = context_examples(indexed, cfg.window)
    if not examples:
        # every sentence is a single word: nothing to predict, keep init rows
        rng = np.random.default_rng(cfg.seed)
        bound = 0.5 / cfg.dim
        vectors = rng.uniform(-bound, bound, size=(len(vocab), cfg.dim))
        return SemanticTable(vocab, vectors)
    result = train_softmax_predictor(examples, len(vocab), len(vocab), cfg.dim, cfg)
    return SemanticTable(vocab, result.t_in)


def train_pinyin2vec(
    corpus: list[list[str]], cfg: SkipGramConfig, M: int
) -> SyllableTable:
    """Skip-gram over per-sentence character-syllable streams.

    Vectors are C-dimensional with C = floor(D / M) so that M of them
    concatenate into a D slot. Homophone characters share a row by
    construction (the vocabulary is the syllable set).
    """
    if M < 1:
        raise EmbeddingError("M must be >= 1")
    if M > cfg.dim:
        raise EmbeddingError(f"M={M} exceeds D={cfg.dim}, giving zero-width syllable vectors")
    if not corpus or any(not seq for seq in corpus):
        raise EmbeddingError("corpus must be non-empty syllable sequences")
    C = cfg.dim // M
    vocab = _index_vocab(corpus)
    indexed = [[vocab[s] for s in seq] for seq in corpus]
    examples = context_examples(indexed, cfg.window)
    if not examples:
        rng = np.random.default_rng(cfg.seed)
        bound = 0.5 / C
        vectors = rng.uniform(-bound, bound, size=(len(vocab), C))
        return SyllableTable(vocab, vectors, C, M)
    result = train_softmax_predictor(examples, len(vocab), len(vocab), C, cfg)
    return SyllableTable(vocab, result.t_in, C, M)


def compose_pronunciation(token, table: SyllableTable, D: int) -> np.ndarray:
    """Concatenate per-character syllable vectors, zero-padding the tail to D.

    Characters beyond the table's M are dropped; unknown syllables leave
    their slice at zero. Accepts a Token or a bare syllable tuple.
    """
    syllables = getattr(token, "syllables", token)
    C = table.char_dim
    vec = np.zeros(D)
    for n, syl in enumerate(syllables[: table.max_word_len]):
        row = table.vector_for(syl)
        if row is not None:
            vec[n * C : (n + 1) * C] = row
    return vec


def pos_examples(
    corpus: list[list[tuple[str, PosTag]]],
    vocab: dict[str, int],
    tag_index: dict[PosTag, int],
    window: int,
) -> list[Example]:
    """Each position predicts the tags of its neighbors and its own tag."""
    examples: list[Example] = []
    for seq in corpus:
        tags = [tag_index[t] for _, t in seq]
        for i, (w, _) in enumerate(seq):
            lo = max(0, i - window)
            hi = min(len(seq), i + window + 1)
            targets = tuple(tags[j] for j in range(lo, hi))  # j == i included
            examples.append((vocab[w], targets))
    return examples


def train_pos2vec(
    corpus: list[list[tuple[str, PosTag]]], cfg: SkipGramConfig
) -> PosVecTable:
    """Skip-gram variant with POS one-hot outputs; head word's tag included."""
    if not corpus or any(not seq for seq in corpus):
        raise EmbeddingError("corpus must be non-empty tagged sequences")
    words = sorted({w for seq in corpus for w, _ in seq})
    vocab = {w: i for i, w in enumerate(words)}
    observed = sorted({t for seq in corpus for _, t in seq}, key=lambda t: t.value)
    tag_index = {t: i for i, t in enumerate(observed)}
    examples = pos_examples(corpus, vocab, tag_index, cfg.window)
    result = train_softmax_predictor(examples, len(vocab), len(observed), cfg.dim, cfg)
    return PosVecTable(vocab, result.t_in, len(observed))


def grad_check_predictor(
    t_in: np.ndarray, t_out: np.ndarray, examples: list[Example], step: float = 1e-5
) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients.

    Tables are perturbed in place through ravel views and restored; arrays
    must be float64 and C-contiguous (freshly built ones are).
    """
    _, g_in, g_out = loss_and_grads(t_in, t_out, examples)
    errs: dict[str, float] = {}
    for name, arr, g in (("t_in", t_in, g_in), ("t_out", t_out, g_out)):
        flat = arr.ravel()
        if flat.base is None and arr.size > 1:
            raise EmbeddingError(f"{name} is not contiguous, cannot perturb in place")
        num = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = loss_and_grads(t_in, t_out, examples)[0]
            flat[i] = orig - step
            lm = loss_and_grads(t_in, t_out, examples)[0]
            flat[i] = orig
            num[i] = (lp - lm) / (2.0 * step)
        ga = g.ravel()
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(num)), 1e-6)
        errs[name] = float(np.max(np.abs(ga - num) / denom))
    return errs


# ---------------------------------------------------------------------------
# checkpoints


def save_table(table: SemanticTable | SyllableTable | PosVecTable, path: str | Path) -> None:
    if isinstance(table, SemanticTable):
        doc = {"kind": "semantic", "dim": table.vectors.shape[1], "vocab": _row_order(table.vocab)}
    elif isinstance(table, SyllableTable):
        doc = {
            "kind": "pinyin",
            "dim": table.char_dim,
            "vocab": _row_order(table.syllables),
            "C": table.char_dim,
            "M": table.max_word_len,
        }
    elif isinstance(table, PosVecTable):
        doc = {
            "kind": "pos",
            "dim": table.vectors.shape[1],
            "vocab": _row_order(table.vocab),
            "tag_count": table.tag_count,
        }
    else:
        raise EmbeddingError(f"unknown table type {type(table).__name__}")
    doc["vectors"] = [float(x) for x in np.asarray(table.vectors, dtype=np.float64).ravel()]
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_table(path: str | Path) -> SemanticTable | SyllableTable | PosVecTable:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    kind = doc.get("kind")
    vocab = {w: i for i, w in enumerate(doc["vocab"])}
    dim = int(doc["dim"])
    vectors = np.array(doc["vectors"], dtype=np.float64).reshape(len(vocab), dim)
    if kind == "semantic":
        return SemanticTable(vocab, vectors)
    if kind == "pinyin":
        return SyllableTable(vocab, vectors, int(doc["C"]), int(doc["M"]))
    if kind == "pos":
        return PosVecTable(vocab, vectors, int(doc["tag_count"]))
    raise EmbeddingError(f"{path}: unknown table kind {kind!r}")


def _row_order(vocab: dict[str, int]) -> list[str]:
    return [w for w, _ in sorted(vocab.items(), key=lambda kv: kv[1])]
