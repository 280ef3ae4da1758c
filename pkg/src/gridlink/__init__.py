"""Entity linking for power-grid dispatch texts.

Links free-form dispatch sentences to entities in a distribution-network
knowledge graph using three feature channels (word semantics, pronunciation,
part of speech), an attention-weighted convolutional matcher, and a pair of
non-neural baselines for comparison.
"""

from .evaluation import (
    EvalConfig,
    EvalReport,
    LabeledText,
    cross_validate,
    load_corpus,
    run_ablation,
    save_corpus,
)
from .kg import Entity, EntityKind, KnowledgeGraph, RelationType, load_kg, save_kg
from .linker import LinkEngine, LinkerVariant, LinkResult, link_text
from .textpipe import Lexicon, build_lexicon, load_lexicon, save_lexicon

__version__ = "0.1.0"

__all__ = [
    "Entity",
    "EntityKind",
    "EvalConfig",
    "EvalReport",
    "KnowledgeGraph",
    "LabeledText",
    "Lexicon",
    "LinkEngine",
    "LinkResult",
    "LinkerVariant",
    "RelationType",
    "__version__",
    "build_lexicon",
    "cross_validate",
    "link_text",
    "load_corpus",
    "load_kg",
    "load_lexicon",
    "run_ablation",
    "save_corpus",
    "save_kg",
    "save_lexicon",
]
