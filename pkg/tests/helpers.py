"""Shared test utilities: tiny graph builders, random models, and an
independent brute-force ranking oracle (explicit candidate lists, sorted)."""

from __future__ import annotations

import numpy as np

from owlink.graph import EntityText, KnowledgeGraph, Triple, load_graph
from owlink.models import EmbeddingTable, KgcHyperparams, KgcModel, score_all_heads, score_all_tails
from owlink.mapping import mapped_entity_embedding
from owlink.text import NoTextError


def write_triples(path, triples):
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in triples:
            fh.write(f"{h}\t{r}\t{t}\n")


def graph_from_triples(tmp_path, train, valid=None, test=None, open_world=False):
    write_triples(tmp_path / "train.txt", train)
    valid_path = test_path = None
    if valid is not None:
        valid_path = tmp_path / "valid.txt"
        write_triples(valid_path, valid)
    if test is not None:
        test_path = tmp_path / "test.txt"
        write_triples(test_path, test)
    return load_graph(
        str(tmp_path / "train.txt"),
        str(valid_path) if valid_path else None,
        str(test_path) if test_path else None,
        open_world=open_world,
    )


def random_model(family, num_entities, num_relations, dim, rng, scale=1.0):
    def table(n):
        return rng.normal(scale=scale, size=(n, dim))

    if family == "complex":
        emb = EmbeddingTable(table(num_entities), table(num_relations),
                             table(num_entities), table(num_relations))
    else:
        emb = EmbeddingTable(table(num_entities), table(num_relations))
    return KgcModel(family, emb, KgcHyperparams(dim=dim))


def random_graph(rng, max_entities=20, max_relations=4, max_triples=30, open_heads=0):
    """Random small graph; optionally with open-world test heads."""
    n_e = int(rng.integers(3, max_entities + 1))
    n_r = int(rng.integers(1, max_relations + 1))
    n_t = int(rng.integers(3, max_triples + 1))
    train = []
    for _ in range(n_t):
        train.append(Triple(int(rng.integers(n_e)), int(rng.integers(n_r)), int(rng.integers(n_e))))
    train = list(dict.fromkeys(train))
    n_test = int(rng.integers(1, 8))
    test = []
    for i in range(n_test):
        if open_heads and i < open_heads:
            head = n_e + int(rng.integers(open_heads))
        else:
            head = int(rng.integers(n_e))
        test.append(Triple(head, int(rng.integers(n_r)), int(rng.integers(n_e))))
    test = list(dict.fromkeys(test))

    entities = [f"e{i}" for i in range(n_e)]
    opens = [f"o{i}" for i in range(open_heads)]
    relations = [f"r{i}" for i in range(n_r)]
    from owlink.graph import Vocab

    graph = KnowledgeGraph(Vocab(entities), Vocab(relations), train,
                           valid=[], test=test, open_entities=Vocab(opens))
    return graph


def brute_force_report(model, graph, config, triples, metadata=None,
                       map_model=None, store=None, query_override=None):
    """Independent re-implementation of the ranking protocol.

    Materializes explicit candidate lists per triple and sorts them; all
    aggregation is plain Python. ``query_override`` maps a triple index to
    an explicit query embedding (used for the baseline replay oracle).
    Returns a dict of per-triple ranks and aggregate metrics.
    """
    tail_dir = config.direction == "tail"
    num_e = graph.num_entities

    # filter sets by scanning the raw split lists
    pool = []
    for name in config.filter_splits:
        pool.extend(graph.split(name))
    per_triple = []
    for idx, (h, r, t) in enumerate(triples):
        qid, target = (h, t) if tail_dir else (t, h)
        if target >= num_e:
            per_triple.append(("skipped", "open-target"))
            continue
        if config.target_filtering:
            if tail_dir:
                known = {tt for (hh, rr, tt) in graph.train if rr == r}
            else:
                known = {hh for (hh, rr, tt) in graph.train if rr == r}
            if target not in known:
                per_triple.append(("skipped", "target-filtering"))
                continue
            candidates = sorted(known)
        else:
            candidates = list(range(num_e))

        if query_override is not None and idx in query_override:
            emb = query_override[idx]
        elif qid < num_e:
            emb = model.embeddings.entity_embedding(qid)
        else:
            meta = (metadata or {}).get(qid)
            if meta is None or meta.is_empty():
                per_triple.append(("skipped", "no-metadata"))
                continue
            try:
                emb = mapped_entity_embedding(model, map_model, meta, store)
            except NoTextError:
                per_triple.append(("skipped", "no-metadata"))
                continue

        if tail_dir:
            scores = score_all_tails(model, emb, r)
            true_set = {tt for (hh, rr, tt) in pool if hh == h and rr == r}
        else:
            scores = score_all_heads(model, r, emb)
            true_set = {hh for (hh, rr, tt) in pool if rr == r and tt == t}

        def rank_in(cands):
            others = [e for e in cands if e != target]
            ordered = sorted(others, key=lambda e: -scores[e])
            return 1 + sum(1 for e in ordered if scores[e] >= scores[target])

        raw = rank_in(candidates)
        filtered_cands = [e for e in candidates if e == target or e not in true_set]
        filt = rank_in(filtered_cands)
        per_triple.append(("ok", raw, filt))

    evaluated = [p for p in per_triple if p[0] == "ok"]
    use_filtered = config.filtered
    sel = [(p[2] if use_filtered else p[1]) for p in evaluated]
    out = {
        "per_triple": per_triple,
        "evaluated": len(evaluated),
        "skipped": len(per_triple) - len(evaluated),
    }
    if evaluated:
        out["mr"] = sum(sel) / len(sel)
        out["mrr_raw"] = sum(1.0 / p[1] for p in evaluated) / len(evaluated)
        out["mrr_filtered"] = sum(1.0 / p[2] for p in evaluated) / len(evaluated)
        out["hits"] = {k: sum(1 for x in sel if x <= k) / len(sel) for k in config.hits_k}
    return out


def assert_reports_equal(report, oracle):
    assert report.evaluated_count == oracle["evaluated"]
    assert report.skipped_count == oracle["skipped"]
    for res, orc in zip(report.results, oracle["per_triple"]):
        if orc[0] == "skipped":
            assert res.skipped and res.reason == orc[1]
        else:
            assert not res.skipped
            assert res.raw_rank == orc[1]
            assert res.filtered_rank == orc[2]
    if oracle["evaluated"]:
        assert report.mr == oracle["mr"]
        assert report.mrr_raw == oracle["mrr_raw"]
        assert report.mrr_filtered == oracle["mrr_filtered"]
        assert report.hits == oracle["hits"]
