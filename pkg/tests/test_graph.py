import logging

import pytest

from owlink.graph import (
    EntityText,
    MetadataError,
    ParseError,
    Triple,
    VocabularyError,
    build_filter_index,
    escape_field,
    load_entity_text,
    load_graph,
    resolve_metadata,
    save_entity_text,
    save_triples,
    unescape_field,
)
from helpers import graph_from_triples, write_triples


TRAIN = [("a", "r", "b"), ("a", "r", "c"), ("b", "s", "c")]


class TestLoadGraph:
    def test_interning_is_first_occurrence_order(self, tmp_path):
        g = graph_from_triples(tmp_path, TRAIN)
        assert g.entities.names == ["a", "b", "c"]
        assert g.relations.names == ["r", "s"]
        assert g.train == [Triple(0, 0, 1), Triple(0, 0, 2), Triple(1, 1, 2)]

    def test_empty_test_file_loads(self, tmp_path):
        g = graph_from_triples(tmp_path, TRAIN, test=[])
        assert g.test == []

    def test_duplicate_dropped_and_reported(self, tmp_path, caplog):
        with caplog.at_level(logging.WARNING, logger="owlink.graph"):
            g = graph_from_triples(tmp_path, [("a", "r", "b"), ("a", "r", "b"), ("b", "r", "a")])
        assert len(g.train) == 2
        assert any("duplicate" in rec.message for rec in caplog.records)

    def test_malformed_line_names_line_number(self, tmp_path):
        (tmp_path / "train.txt").write_text("a\tr\tb\nbadline\n")
        with pytest.raises(ParseError, match="train.txt:2"):
            load_graph(str(tmp_path / "train.txt"))

    def test_unknown_entity_closed_world_errors(self, tmp_path):
        with pytest.raises(VocabularyError, match="unknown entity"):
            graph_from_triples(tmp_path, TRAIN, test=[("zzz", "r", "b")])

    def test_unknown_relation_always_errors(self, tmp_path):
        with pytest.raises(VocabularyError, match="unknown relation"):
            graph_from_triples(tmp_path, TRAIN, test=[("a", "qq", "b")], open_world=True)

    def test_open_world_heads_get_separate_vocabulary(self, tmp_path):
        g = graph_from_triples(tmp_path, TRAIN, test=[("new1", "r", "b"), ("new2", "s", "c")],
                               open_world=True)
        assert g.num_entities == 3
        assert g.num_open_entities == 2
        assert g.test[0].head == 3 and g.test[1].head == 4
        assert g.is_open(3) and not g.is_open(0)
        assert g.entity_name(3) == "new1"
        assert g.entity_id("new2") == 4
        # no open entity appears in any train triple
        open_ids = {3, 4}
        assert all(h not in open_ids and t not in open_ids for h, _, t in g.train)

    def test_known_tails_matches_brute_force(self, tmp_path):
        g = graph_from_triples(tmp_path, TRAIN)
        for r in range(g.num_relations):
            expected = {t for (_, rr, t) in g.train if rr == r}
            assert g.known_tails.get(r, set()) == expected

    def test_round_trip(self, tmp_path):
        g = graph_from_triples(tmp_path, TRAIN)
        save_triples(str(tmp_path / "out.txt"), g, g.train)
        g2 = load_graph(str(tmp_path / "out.txt"))
        assert g2.train == g.train
        assert g2.entities == g.entities
        assert g2.relations == g.relations


class TestFilterIndex:
    def test_true_tails_direct_definition(self, tmp_path):
        g = graph_from_triples(tmp_path, [("a", "r", "b"), ("a", "r", "c")])
        idx = build_filter_index(g, splits=("train",))
        assert idx.tails(0, 0) == {1, 2}
        assert idx.heads(0, 1) == {0}

    def test_no_repeated_pair_gives_singletons(self, tmp_path):
        g = graph_from_triples(tmp_path, [("a", "r", "b"), ("b", "r", "c"), ("c", "s", "a")])
        idx = build_filter_index(g, splits=("train",))
        assert all(len(s) == 1 for s in idx.true_tails.values())

    def test_covers_configured_splits(self, tmp_path):
        g = graph_from_triples(tmp_path, TRAIN, valid=[("b", "r", "c")], test=[("c", "s", "a")])
        idx = build_filter_index(g)
        total = sum(len(s) for s in idx.true_tails.values())
        assert total == len(g.train) + len(g.valid) + len(g.test)
        idx_train = build_filter_index(g, splits=("train",))
        assert sum(len(s) for s in idx_train.true_tails.values()) == len(g.train)


class TestEntityText:
    def test_load_basic(self, tmp_path):
        path = tmp_path / "meta.tsv"
        path.write_text(
            "E1\tBram Stoker\tIrish novelist and short story writer\n"
            "E2\tParma\t\n"
        )
        meta = load_entity_text(str(path))
        assert meta["E1"].name == "Bram Stoker"
        assert meta["E1"].description.startswith("Irish novelist")
        assert meta["E2"].description == ""
        assert not meta["E1"].is_empty()

    def test_duplicate_entity_errors(self, tmp_path):
        path = tmp_path / "meta.tsv"
        path.write_text("E1\tA\tx\nE1\tB\ty\n")
        with pytest.raises(MetadataError, match="duplicate"):
            load_entity_text(str(path))

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "meta.tsv"
        path.write_text("E1\tonly-name\n")
        with pytest.raises(ParseError):
            load_entity_text(str(path))

    def test_escaping_round_trip(self, tmp_path):
        original = {"E1": EntityText("E1", "a\tb", "line1\nline2\\end")}
        path = tmp_path / "meta.tsv"
        save_entity_text(str(path), original)
        loaded = load_entity_text(str(path))
        assert loaded["E1"].name == "a\tb"
        assert loaded["E1"].description == "line1\nline2\\end"

    def test_escape_unescape_inverse(self):
        for s in ("", "plain", "a\tb\nc", "\\t literal", "\\\\"):
            assert unescape_field(escape_field(s)) == s

    def test_resolve_metadata_drops_unknown(self, tmp_path):
        g = graph_from_triples(tmp_path, TRAIN)
        meta = {"a": EntityText("a", "A"), "nope": EntityText("nope", "X")}
        resolved = resolve_metadata(meta, g)
        assert set(resolved) == {0}
        assert resolved[0].name == "A"
