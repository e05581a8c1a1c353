"""Ranking evaluation: raw/filtered ranks, MR, MRR, Hits@k, baselines.

Protocol: for each test triple the target entity is ranked among all known
entities by score. The filtered rank removes every other known-true
candidate for the same (head, relation) — only the target's own reciprocal
rank enters the MRR. Optional target filtering restricts candidates to
entities observed in the same role for the relation in training, skipping
triples whose own target fails the criterion. Tie-breaking is pessimistic:
candidates scoring equal to the target count against it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import EntityText, KnowledgeGraph, Triple, build_filter_index
from .mapping import MapModel, mapped_entity_embedding
from .models import KgcModel, score_all_heads, score_all_tails
from .text import NoTextError, WordEmbeddingStore

SKIP_NO_METADATA = "no-metadata"
SKIP_TARGET_FILTERING = "target-filtering"
SKIP_OPEN_TARGET = "open-target"


@dataclass
class EvalConfig:
    direction: str = "tail"
    filtered: bool = True
    filter_splits: tuple[str, ...] = ("train", "valid", "test")
    target_filtering: bool = False
    hits_k: tuple[int, ...] = (1, 3, 10)

    def validate(self) -> None:
        if self.direction not in ("tail", "head"):
            raise ValueError(f"direction must be 'tail' or 'head', got {self.direction!r}")
        if not self.hits_k or list(self.hits_k) != sorted(self.hits_k) or self.hits_k[0] < 1:
            raise ValueError(f"hits_k must be ascending and >= 1, got {self.hits_k}")


@dataclass
class TripleResult:
    triple: Triple
    raw_rank: int | None = None
    filtered_rank: int | None = None
    skipped: bool = False
    reason: str = ""


@dataclass
class RankingReport:
    config: EvalConfig
    results: list[TripleResult] = field(default_factory=list)

    @property
    def evaluated(self) -> list[TripleResult]:
        return [r for r in self.results if not r.skipped]

    @property
    def evaluated_count(self) -> int:
        return len(self.evaluated)

    @property
    def skipped_count(self) -> int:
        return len(self.results) - self.evaluated_count

    def _ranks(self) -> list[int]:
        use_filtered = self.config.filtered
        return [r.filtered_rank if use_filtered else r.raw_rank for r in self.evaluated]

    @property
    def mr(self) -> float:
        ranks = self._ranks()
        return sum(ranks) / len(ranks) if ranks else float("nan")

    @property
    def mrr_raw(self) -> float:
        ev = self.evaluated
        if not ev:
            return float("nan")
        return sum(1.0 / r.raw_rank for r in ev) / len(ev)

    @property
    def mrr_filtered(self) -> float:
        ev = self.evaluated
        if not ev:
            return float("nan")
        return sum(1.0 / r.filtered_rank for r in ev) / len(ev)

    @property
    def hits(self) -> dict[int, float]:
        ranks = self._ranks()
        if not ranks:
            return {k: float("nan") for k in self.config.hits_k}
        return {k: sum(1 for x in ranks if x <= k) / len(ranks) for k in self.config.hits_k}

    def summary(self) -> dict[str, float | int]:
        out: dict[str, float | int] = {
            "evaluated": self.evaluated_count,
            "skipped": self.skipped_count,
            "mr": self.mr,
            "mrr_raw": self.mrr_raw,
            "mrr_filtered": self.mrr_filtered,
        }
        for k, v in self.hits.items():
            out[f"hits_{k}"] = v
        return out

    def summary_text(self) -> str:
        lines = []
        for key, value in self.summary().items():
            if isinstance(value, int):
                lines.append(f"{key}={value}")
            else:
                lines.append(f"{key}={value!r}")
        return "\n".join(lines) + "\n"

    def table_text(self) -> str:
        """Metrics as percentages with one decimal."""
        parts = [
            f"MRR(filt) {100 * self.mrr_filtered:.1f}",
            f"MRR(raw) {100 * self.mrr_raw:.1f}",
        ]
        for k, v in self.hits.items():
            parts.append(f"Hits@{k} {100 * v:.1f}")
        return "  ".join(parts)


def rank_target(scores: np.ndarray, target: int, exclude: set[int] | None = None) -> int:
    """Pessimistic rank of the target among non-excluded candidates.

    rank = 1 + #(better) + #(ties), counting only entities outside
    ``exclude`` and distinct from the target.
    """
    scores = np.asarray(scores)
    if not 0 <= target < len(scores):
        raise IndexError(f"target {target} out of range for {len(scores)} scores")
    if exclude and target in exclude:
        raise ValueError("target must not be excluded")
    mask = np.ones(len(scores), dtype=bool)
    if exclude:
        mask[list(exclude)] = False
    mask[target] = False
    return 1 + int((scores[mask] >= scores[target]).sum())


def _masked_rank(
    scores: np.ndarray,
    target: int,
    candidate_mask: np.ndarray | None,
    exclude: set[int],
) -> int:
    mask = np.ones(len(scores), dtype=bool) if candidate_mask is None else candidate_mask.copy()
    if exclude:
        mask[list(exclude)] = False
    mask[target] = False
    return 1 + int((scores[mask] >= scores[target]).sum())


def _evaluate_core(
    kgc_model: KgcModel,
    graph: KnowledgeGraph,
    config: EvalConfig,
    triples: list[Triple],
    filter_index,
    query_embedding,
) -> RankingReport:
    """Shared ranking loop; ``query_embedding(triple, query_id)`` returns an
    embedding (or pair), or raises NoTextError to skip the triple."""
    tail_direction = config.direction == "tail"
    num_e = graph.num_entities
    report = RankingReport(config)

    known = graph.known_tails if tail_direction else graph.known_heads
    cand_masks: dict[int, np.ndarray] = {}

    for triple in triples:
        h, r, t = triple
        query_id, target = (h, t) if tail_direction else (t, h)
        result = TripleResult(triple)
        report.results.append(result)

        if target >= num_e:
            result.skipped, result.reason = True, SKIP_OPEN_TARGET
            continue

        candidate_mask = None
        if config.target_filtering:
            allowed = known.get(r, set())
            if target not in allowed:
                result.skipped, result.reason = True, SKIP_TARGET_FILTERING
                continue
            if r not in cand_masks:
                m = np.zeros(num_e, dtype=bool)
                m[list(allowed)] = True
                cand_masks[r] = m
            candidate_mask = cand_masks[r]

        try:
            embedding = query_embedding(triple, query_id)
        except NoTextError:
            result.skipped, result.reason = True, SKIP_NO_METADATA
            continue

        if tail_direction:
            scores = score_all_tails(kgc_model, embedding, r)
            true_set = filter_index.tails(h, r)
        else:
            scores = score_all_heads(kgc_model, r, embedding)
            true_set = filter_index.heads(r, t)
        exclude = {e for e in true_set if e != target and e < num_e}

        result.raw_rank = _masked_rank(scores, target, candidate_mask, set())
        result.filtered_rank = _masked_rank(scores, target, candidate_mask, exclude)
    return report


def evaluate(
    kgc_model: KgcModel,
    graph: KnowledgeGraph,
    config: EvalConfig | None = None,
    map_model: MapModel | None = None,
    metadata: dict[int, EntityText] | None = None,
    word_store: WordEmbeddingStore | None = None,
    triples: list[Triple] | None = None,
) -> RankingReport:
    """Rank every test triple and aggregate MR / MRR / Hits@k.

    Closed-world query entities use their trained embedding rows;
    open-world ones are routed through the text pipeline and transformation
    (requires ``map_model``, ``metadata`` and ``word_store``). Triples whose
    open query entity has no usable metadata are counted as skipped.
    """
    config = config if config is not None else EvalConfig()
    config.validate()
    triples = triples if triples is not None else graph.test
    filter_index = build_filter_index(graph, config.filter_splits)
    emb = kgc_model.embeddings
    cache: dict[int, object] = {}

    def query_embedding(triple: Triple, query_id: int):
        if query_id < graph.num_entities:
            return emb.entity_embedding(query_id)
        if query_id in cache:
            return cache[query_id]
        if map_model is None or word_store is None:
            raise ValueError(
                "open-world query entity encountered but map_model/word_store missing"
            )
        meta = (metadata or {}).get(query_id)
        if meta is None or meta.is_empty():
            raise NoTextError(f"no metadata for open entity {query_id}")
        mapped = mapped_entity_embedding(kgc_model, map_model, meta, word_store)
        cache[query_id] = mapped
        return mapped

    return _evaluate_core(kgc_model, graph, config, triples, filter_index, query_embedding)


def random_head_baseline(
    kgc_model: KgcModel,
    graph: KnowledgeGraph,
    config: EvalConfig | None = None,
    seed: int = 0,
    triples: list[Triple] | None = None,
) -> RankingReport:
    """Evaluation with each query entity's embedding replaced by that of a
    uniformly sampled training head (tail direction) or tail (head
    direction). Simulates an uninformative transformation."""
    config = config if config is not None else EvalConfig()
    config.validate()
    triples = triples if triples is not None else graph.test
    filter_index = build_filter_index(graph, config.filter_splits)
    emb = kgc_model.embeddings
    rng = np.random.default_rng(seed)

    position = 0 if config.direction == "tail" else 2
    pool = sorted({trip[position] for trip in graph.train})
    if not pool:
        raise ValueError("empty training split")
    pool_arr = np.asarray(pool, dtype=np.int64)

    def query_embedding(triple: Triple, query_id: int):
        replacement = int(pool_arr[rng.integers(0, len(pool_arr))])
        return emb.entity_embedding(replacement)

    return _evaluate_core(kgc_model, graph, config, triples, filter_index, query_embedding)


def nearest_neighbors(
    kgc_model: KgcModel, query_embedding, k: int
) -> list[tuple[int, float]]:
    """k nearest known entities by Euclidean distance on the real part,
    ascending, ties broken by entity id."""
    if isinstance(query_embedding, tuple):
        query = np.asarray(query_embedding[0])
    else:
        query = np.asarray(query_embedding)
    table = kgc_model.embeddings.entity_real
    if k > len(table):
        raise ValueError(f"k={k} exceeds the number of entities {len(table)}")
    diff = table - query
    dist = np.sqrt((diff * diff).sum(axis=1))
    order = np.lexsort((np.arange(len(table)), dist))[:k]
    return [(int(i), float(dist[i])) for i in order]


def write_report_tsv(path: str, graph: KnowledgeGraph, report: RankingReport) -> None:
    """Per-triple report: head, rel, tail, raw_rank, filtered_rank, reason."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("head\trel\ttail\traw_rank\tfiltered_rank\tskipped_reason\n")
        for res in report.results:
            h, r, t = res.triple
            raw = "" if res.raw_rank is None else str(res.raw_rank)
            filt = "" if res.filtered_rank is None else str(res.filtered_rank)
            fh.write(
                f"{graph.entity_name(h)}\t{graph.relations.name(r)}\t{graph.entity_name(t)}"
                f"\t{raw}\t{filt}\t{res.reason}\n"
            )
