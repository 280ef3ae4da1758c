"""Distribution-network knowledge graph: entities, typed relations, JSON persistence.

The graph holds category entities (station/equipment types) plus the name,
state and operation entities attached to them. Non-category entities are the
only link targets; they are indexed by relation type so the linker can scan
candidates per type in a stable order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path


class KGError(ValueError):
    """Malformed or internally inconsistent knowledge-graph data."""


class RelationType(Enum):
    NAME = "name"
    STATE = "state"
    OPERATION = "operation"


class EntityKind(Enum):
    CATEGORY = "category"
    NAME = "name"
    STATE = "state"
    OPERATION = "operation"

    @property
    def relation_type(self) -> RelationType | None:
        """Relation type under which entities of this kind are indexed."""
        if self is EntityKind.CATEGORY:
            return None
        return RelationType(self.value)


@dataclass(frozen=True)
class Entity:
    id: str
    kind: EntityKind
    surface: str
    category_id: str | None = None


@dataclass
class KnowledgeGraph:
    """Validated, immutable-after-construction graph.

    entities are keyed by id in sorted order; triples are kept sorted so that
    two graphs with the same content compare equal and serialize identically.
    """

    entities: dict[str, Entity]
    triples: list[tuple[str, RelationType, str]]
    index: dict[RelationType, list[str]] = field(init=False)

    def __post_init__(self) -> None:
        self.entities = {eid: self.entities[eid] for eid in sorted(self.entities)}
        self.triples = sorted(self.triples, key=lambda t: (t[0], t[1].value, t[2]))
        self._validate()
        self.index = {
            rt: sorted(e.id for e in self.entities.values() if e.kind.relation_type is rt)
            for rt in RelationType
        }

    def _validate(self) -> None:
        for e in self.entities.values():
            if not e.surface:
                raise KGError(f"entity {e.id!r} has an empty surface")
            if e.kind is EntityKind.CATEGORY:
                if e.category_id is not None:
                    raise KGError(f"category entity {e.id!r} must not carry category_id")
            else:
                if e.category_id is None:
                    raise KGError(f"entity {e.id!r} lacks a category_id")
                owner = self.entities.get(e.category_id)
                if owner is None or owner.kind is not EntityKind.CATEGORY:
                    raise KGError(f"entity {e.id!r} references missing category {e.category_id!r}")
        for head, pred, tail in self.triples:
            if head not in self.entities:
                raise KGError(f"triple head {head!r} not in entities")
            if tail not in self.entities:
                raise KGError(f"triple tail {tail!r} not in entities")
            if self.entities[tail].kind.relation_type is not pred:
                raise KGError(
                    f"triple ({head!r}, {pred.value}, {tail!r}) points at a "
                    f"{self.entities[tail].kind.value} entity"
                )

    def non_category_ids(self) -> list[str]:
        return [e.id for e in self.entities.values() if e.kind is not EntityKind.CATEGORY]


def entities_by_relation(kg: KnowledgeGraph, rt: RelationType) -> list[Entity]:
    """Entities indexed under rt, in stable id order."""
    return [kg.entities[eid] for eid in kg.index[rt]]


def load_kg(path: str | Path) -> KnowledgeGraph:
    """Load and validate a graph from the JSON interchange format."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise KGError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "entities" not in doc or "triples" not in doc:
        raise KGError(f"{path}: expected an object with 'entities' and 'triples' arrays")

    entities: dict[str, Entity] = {}
    for rec in doc["entities"]:
        try:
            ent = Entity(
                id=rec["id"],
                kind=EntityKind(rec["kind"]),
                surface=rec["surface"],
                category_id=rec.get("category_id"),
            )
        except (KeyError, ValueError) as exc:
            raise KGError(f"{path}: bad entity record {rec!r}: {exc}") from exc
        if ent.id in entities:
            raise KGError(f"{path}: duplicate entity id {ent.id!r}")
        entities[ent.id] = ent

    triples = []
    for rec in doc["triples"]:
        try:
            triples.append((rec["head"], RelationType(rec["predicate"]), rec["tail"]))
        except (KeyError, ValueError) as exc:
            raise KGError(f"{path}: bad triple record {rec!r}: {exc}") from exc

    return KnowledgeGraph(entities=entities, triples=triples)


def save_kg(kg: KnowledgeGraph, path: str | Path) -> None:
    """Write the graph in the JSON interchange format (stable ordering)."""
    doc = {
        "entities": [
            {
                "id": e.id,
                "kind": e.kind.value,
                "surface": e.surface,
                **({"category_id": e.category_id} if e.category_id is not None else {}),
            }
            for e in kg.entities.values()
        ],
        "triples": [
            {"head": h, "predicate": p.value, "tail": t} for h, p, t in kg.triples
        ],
    }
    Path(path).write_text(
        json.dumps(doc, ensure_ascii=False, indent=1) + "\n", encoding="utf-8"
    )
