"""Knowledge-graph construction, validation, indexing, and persistence."""
import json

import pytest

from gridlink.kg import (
    Entity,
    EntityKind,
    KGError,
    KnowledgeGraph,
    RelationType,
    entities_by_relation,
    load_kg,
    save_kg,
)


def small_graph():
    entities = {
        "c00": Entity("c00", EntityKind.CATEGORY, "站"),
        "n1": Entity("n1", EntityKind.NAME, "甲站", "c00"),
        "n0": Entity("n0", EntityKind.NAME, "乙站", "c00"),
        "s0": Entity("s0", EntityKind.STATE, "冷备用", "c00"),
        "o0": Entity("o0", EntityKind.OPERATION, "合闸", "c00"),
    }
    triples = [
        ("c00", RelationType.NAME, "n1"),
        ("c00", RelationType.NAME, "n0"),
        ("c00", RelationType.STATE, "s0"),
        ("c00", RelationType.OPERATION, "o0"),
    ]
    return KnowledgeGraph(entities=entities, triples=triples)


def test_entities_and_triples_are_sorted():
    kg = small_graph()
    assert list(kg.entities) == sorted(kg.entities)
    assert kg.triples == sorted(kg.triples, key=lambda t: (t[0], t[1].value, t[2]))


def test_relation_index_covers_each_kind_in_id_order():
    kg = small_graph()
    assert kg.index[RelationType.NAME] == ["n0", "n1"]
    assert kg.index[RelationType.STATE] == ["s0"]
    assert kg.index[RelationType.OPERATION] == ["o0"]
    assert [e.id for e in entities_by_relation(kg, RelationType.NAME)] == ["n0", "n1"]


def test_category_entities_are_not_link_targets():
    kg = small_graph()
    assert "c00" not in kg.non_category_ids()
    assert set(kg.non_category_ids()) == {"n0", "n1", "s0", "o0"}
    for ids in kg.index.values():
        assert "c00" not in ids


def test_kind_relation_type_mapping():
    assert EntityKind.CATEGORY.relation_type is None
    assert EntityKind.NAME.relation_type is RelationType.NAME
    assert EntityKind.STATE.relation_type is RelationType.STATE
    assert EntityKind.OPERATION.relation_type is RelationType.OPERATION


def test_rejects_empty_surface():
    with pytest.raises(KGError, match="empty surface"):
        KnowledgeGraph(entities={"x": Entity("x", EntityKind.CATEGORY, "")}, triples=[])


def test_rejects_missing_category_reference():
    ent = Entity("n0", EntityKind.NAME, "甲站", "nope")
    with pytest.raises(KGError, match="missing category"):
        KnowledgeGraph(entities={"n0": ent}, triples=[])


def test_rejects_category_pointing_at_category():
    entities = {
        "c00": Entity("c00", EntityKind.CATEGORY, "站"),
        "n0": Entity("n0", EntityKind.NAME, "甲站", "c00"),
    }
    bad = dict(entities)
    bad["n0"] = Entity("n0", EntityKind.NAME, "甲站", "n0")  # self, not a category
    with pytest.raises(KGError, match="missing category"):
        KnowledgeGraph(entities=bad, triples=[])


def test_rejects_category_with_category_id():
    ent = Entity("c00", EntityKind.CATEGORY, "站", "c00")
    with pytest.raises(KGError, match="must not carry"):
        KnowledgeGraph(entities={"c00": ent}, triples=[])


def test_rejects_name_entity_without_category():
    with pytest.raises(KGError, match="lacks a category_id"):
        KnowledgeGraph(
            entities={"n0": Entity("n0", EntityKind.NAME, "甲站")}, triples=[]
        )


def test_rejects_triple_with_unknown_endpoint():
    kg = small_graph()
    with pytest.raises(KGError, match="not in entities"):
        KnowledgeGraph(
            entities=dict(kg.entities),
            triples=kg.triples + [("c00", RelationType.NAME, "ghost")],
        )


def test_rejects_triple_of_wrong_target_kind():
    kg = small_graph()
    with pytest.raises(KGError, match="points at a state entity"):
        KnowledgeGraph(
            entities=dict(kg.entities),
            triples=kg.triples + [("c00", RelationType.NAME, "s0")],
        )


def test_save_load_round_trip(tmp_path):
    kg = small_graph()
    p = tmp_path / "kg.json"
    save_kg(kg, p)
    again = load_kg(p)
    assert again == kg
    # byte-identical re-serialization
    save_kg(again, tmp_path / "kg2.json")
    assert (tmp_path / "kg2.json").read_bytes() == p.read_bytes()


def test_construction_order_does_not_change_serialization(tmp_path):
    kg = small_graph()
    shuffled = KnowledgeGraph(
        entities=dict(reversed(list(kg.entities.items()))),
        triples=list(reversed(kg.triples)),
    )
    assert shuffled == kg
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_kg(kg, a)
    save_kg(shuffled, b)
    assert a.read_bytes() == b.read_bytes()


def test_load_rejects_duplicate_ids(tmp_path):
    p = tmp_path / "kg.json"
    doc = {
        "entities": [
            {"id": "c00", "kind": "category", "surface": "站"},
            {"id": "c00", "kind": "category", "surface": "站"},
        ],
        "triples": [],
    }
    p.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(KGError, match="duplicate entity id"):
        load_kg(p)


def test_load_rejects_bad_kind_and_shape(tmp_path):
    p = tmp_path / "kg.json"
    p.write_text(json.dumps({"entities": [{"id": "x", "kind": "planet", "surface": "s"}], "triples": []}))
    with pytest.raises(KGError, match="bad entity record"):
        load_kg(p)
    p.write_text(json.dumps([1, 2, 3]))
    with pytest.raises(KGError, match="expected an object"):
        load_kg(p)
    p.write_text("{nope")
    with pytest.raises(KGError, match="not valid JSON"):
        load_kg(p)
