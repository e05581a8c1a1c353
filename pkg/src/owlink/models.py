"""Closed-world link prediction models: TransE, DistMult, ComplEx.

Scoring functions (higher = more plausible):
  * TransE:   -||u_h + u_r - u_t||_2
  * DistMult: <u_h, u_r, u_t>  (trilinear dot product)
  * ComplEx:  Re(<u_h, u_r, conj(u_t)>)  (complex-valued embeddings)

Training uses uniform negative sampling with the models' original losses:
margin ranking loss for TransE (entity embeddings L2-normalized once per
epoch), softplus logistic loss with L2 regularization for DistMult and
ComplEx. All gradients are closed-form; Adam performs sparse row updates.

Head (and tail) embeddings can be passed explicitly to the scoring
functions instead of entity ids, which is what allows scoring entities
that only exist as mapped text embeddings.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

from .graph import KnowledgeGraph, Triple, build_filter_index
from .optim import Adam

FAMILIES = ("transe", "distmult", "complex")

GradKey = tuple[str, int]


class ConfigError(ValueError):
    """Invalid model or training hyperparameter."""


@dataclass
class KgcHyperparams:
    dim: int = 300
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 128
    margin: float = 1.0
    reg_weight: float = 1e-3
    num_negatives: int = 1
    valid_every: int = 1
    valid_max_triples: int | None = None

    def validate(self) -> None:
        if self.dim <= 0:
            raise ConfigError(f"dim must be positive, got {self.dim}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size <= 0:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.margin <= 0:
            raise ConfigError(f"margin must be positive, got {self.margin}")
        if self.reg_weight < 0:
            raise ConfigError(f"reg_weight must be >= 0, got {self.reg_weight}")
        if self.num_negatives < 1:
            raise ConfigError(f"num_negatives must be >= 1, got {self.num_negatives}")


@dataclass
class EmbeddingTable:
    """Dense per-entity and per-relation embeddings.

    Imaginary components are present exactly when the model family is
    ComplEx.
    """

    entity_real: np.ndarray
    relation_real: np.ndarray
    entity_imag: np.ndarray | None = None
    relation_imag: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.entity_real.shape[1]

    @property
    def is_complex(self) -> bool:
        return self.entity_imag is not None

    @property
    def num_entities(self) -> int:
        return self.entity_real.shape[0]

    @property
    def num_relations(self) -> int:
        return self.relation_real.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"entity_real": self.entity_real, "relation_real": self.relation_real}
        if self.is_complex:
            out["entity_imag"] = self.entity_imag
            out["relation_imag"] = self.relation_imag
        return out

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(
            self.entity_real.copy(),
            self.relation_real.copy(),
            None if self.entity_imag is None else self.entity_imag.copy(),
            None if self.relation_imag is None else self.relation_imag.copy(),
        )

    def entity_embedding(self, entity_id: int) -> tuple[np.ndarray, np.ndarray | None]:
        real = self.entity_real[entity_id]
        imag = self.entity_imag[entity_id] if self.is_complex else None
        return real, imag


@dataclass
class KgcModel:
    family: str
    embeddings: EmbeddingTable
    hyperparams: KgcHyperparams = field(default_factory=KgcHyperparams)


def init_embeddings(
    family: str, num_entities: int, num_relations: int, dim: int, rng: np.random.Generator
) -> EmbeddingTable:
    """Seeded uniform(-1/sqrt(d), 1/sqrt(d)) initialization."""
    if family not in FAMILIES:
        raise ConfigError(f"unknown model family {family!r}")
    if dim <= 0:
        raise ConfigError(f"dim must be positive, got {dim}")
    bound = 1.0 / np.sqrt(dim)

    def table(n: int) -> np.ndarray:
        return rng.uniform(-bound, bound, size=(n, dim))

    ent_r, rel_r = table(num_entities), table(num_relations)
    if family == "complex":
        return EmbeddingTable(ent_r, rel_r, table(num_entities), table(num_relations))
    return EmbeddingTable(ent_r, rel_r)


def as_pair(embedding) -> tuple[np.ndarray, np.ndarray | None]:
    """Normalize an explicit embedding argument to a (real, imag) pair."""
    if isinstance(embedding, tuple):
        real, imag = embedding
        return np.asarray(real), None if imag is None else np.asarray(imag)
    return np.asarray(embedding), None


def _check_pair(model: KgcModel, real: np.ndarray, imag: np.ndarray | None) -> None:
    d = model.embeddings.dim
    if real.shape != (d,):
        raise ValueError(f"embedding has shape {real.shape}, expected ({d},)")
    if model.family == "complex":
        if imag is None:
            raise ValueError("ComplEx model requires a (real, imag) embedding pair")
        if imag.shape != (d,):
            raise ValueError(f"imag embedding has shape {imag.shape}, expected ({d},)")
    elif imag is not None:
        raise ValueError(f"{model.family} model takes a real embedding, got a pair")


def score(model: KgcModel, h_embedding, r: int, t: int) -> float:
    """Score one triple with an explicit head embedding."""
    hr, hi = as_pair(h_embedding)
    _check_pair(model, hr, hi)
    emb = model.embeddings
    rr = emb.relation_real[r]
    tr = emb.entity_real[t]
    if model.family == "transe":
        diff = hr + rr - tr
        return float(-np.sqrt((diff * diff).sum()))
    if model.family == "distmult":
        return float((hr * tr * rr).sum())
    ri = emb.relation_imag[r]
    ti = emb.entity_imag[t]
    # Re(h * r * conj(t)) grouped as (h * conj(t)) * r so that the
    # zero-imaginary case coincides bitwise with DistMult
    return float(((hr * tr + hi * ti) * rr - (hi * tr - hr * ti) * ri).sum())


def score_all_tails(model: KgcModel, h_embedding, r: int) -> np.ndarray:
    """Score (h, r, t) for every known entity t; element t matches score()."""
    hr, hi = as_pair(h_embedding)
    _check_pair(model, hr, hi)
    emb = model.embeddings
    rr = emb.relation_real[r]
    if model.family == "transe":
        diff = hr + rr - emb.entity_real
        return -np.sqrt((diff * diff).sum(axis=1))
    if model.family == "distmult":
        return (hr * emb.entity_real * rr).sum(axis=1)
    ri = emb.relation_imag[r]
    return (
        (hr * emb.entity_real + hi * emb.entity_imag) * rr
        - (hi * emb.entity_real - hr * emb.entity_imag) * ri
    ).sum(axis=1)


def score_all_heads(model: KgcModel, r: int, t_embedding) -> np.ndarray:
    """Score (h, r, t) for every known entity h, given an explicit tail."""
    tr, ti = as_pair(t_embedding)
    _check_pair(model, tr, ti)
    emb = model.embeddings
    rr = emb.relation_real[r]
    if model.family == "transe":
        diff = emb.entity_real + rr - tr
        return -np.sqrt((diff * diff).sum(axis=1))
    if model.family == "distmult":
        return (emb.entity_real * tr * rr).sum(axis=1)
    ri = emb.relation_imag[r]
    return (
        (emb.entity_real * tr + emb.entity_imag * ti) * rr
        - (emb.entity_imag * tr - emb.entity_real * ti) * ri
    ).sum(axis=1)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _accumulate(dim: int, indices: list[np.ndarray], grads: list[np.ndarray]):
    """Sum duplicate row contributions; returns (unique_rows, grad_rows)."""
    idx = np.concatenate([np.asarray(a, dtype=np.int64).ravel() for a in indices])
    g = np.concatenate([np.asarray(a).reshape(-1, dim) for a in grads])
    uniq, inv = np.unique(idx, return_inverse=True)
    acc = np.zeros((len(uniq), dim))
    np.add.at(acc, inv, g)
    return uniq, acc


def batch_loss_and_gradients(
    model: KgcModel, positives: np.ndarray, negatives: np.ndarray
) -> tuple[float, dict[str, tuple[np.ndarray, np.ndarray]]]:
    """Loss and sparse gradients for a batch of positives with negatives.

    ``positives`` has shape (B, 3); ``negatives`` has shape (B, K, 3).
    Returns the summed batch loss and, per parameter table, the unique
    touched rows with their accumulated gradient rows.
    """
    emb = model.embeddings
    d = emb.dim
    hp = model.hyperparams
    pos = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    neg = np.asarray(negatives, dtype=np.int64).reshape(pos.shape[0], -1, 3)

    if model.family == "transe":
        return _transe_batch(emb, hp, pos, neg, d)
    return _logistic_batch(model.family, emb, hp, pos, neg, d)


def _transe_batch(emb, hp, pos, neg, d):
    E, R = emb.entity_real, emb.relation_real
    diff_p = E[pos[:, 0]] + R[pos[:, 1]] - E[pos[:, 2]]
    dist_p = np.sqrt((diff_p * diff_p).sum(axis=1))
    diff_n = E[neg[..., 0]] + R[neg[..., 1]] - E[neg[..., 2]]
    dist_n = np.sqrt((diff_n * diff_n).sum(axis=2))

    viol = hp.margin + dist_p[:, None] - dist_n
    active = viol > 0
    loss = float(viol[active].sum())

    # d||x||/dx = x/||x||; subgradient at the origin fixed to 0
    with np.errstate(invalid="ignore", divide="ignore"):
        unit_p = np.where(dist_p[:, None] > 0, diff_p / np.where(dist_p == 0, 1, dist_p)[:, None], 0.0)
        unit_n = np.where(dist_n[..., None] > 0, diff_n / np.where(dist_n == 0, 1, dist_n)[..., None], 0.0)

    count_p = active.sum(axis=1).astype(float)  # violations per positive
    gp = unit_p * count_p[:, None]
    gn = unit_n * active[..., None]

    ent_idx = [pos[:, 0], pos[:, 2], neg[..., 0], neg[..., 2]]
    ent_grad = [gp, -gp, -gn, gn]
    rel_idx = [pos[:, 1], neg[..., 1]]
    rel_grad = [gp, -gn]
    sparse = {
        "entity_real": _accumulate(d, ent_idx, ent_grad),
        "relation_real": _accumulate(d, rel_idx, rel_grad),
    }
    return loss, sparse


def _logistic_batch(family, emb, hp, pos, neg, d):
    lam = hp.reg_weight
    is_complex = family == "complex"
    E, R = emb.entity_real, emb.relation_real
    Ei, Ri = emb.entity_imag, emb.relation_imag

    def gather(trip):
        out = [E[trip[..., 0]], R[trip[..., 1]], E[trip[..., 2]]]
        if is_complex:
            out += [Ei[trip[..., 0]], Ri[trip[..., 1]], Ei[trip[..., 2]]]
        return out

    def phi(parts):
        if not is_complex:
            hr, rr, tr = parts
            return (hr * rr * tr).sum(axis=-1)
        hr, rr, tr, hi, ri, ti = parts
        return (tr * (hr * rr - hi * ri)).sum(axis=-1) + (ti * (hi * rr + hr * ri)).sum(axis=-1)

    def phi_grads(parts, dphi):
        # dphi broadcasts over the trailing embedding axis
        w = dphi[..., None]
        if not is_complex:
            hr, rr, tr = parts
            return [w * rr * tr, w * hr * tr, w * hr * rr]
        hr, rr, tr, hi, ri, ti = parts
        return [
            w * (rr * tr + ri * ti),        # d/d hr
            w * (hr * tr + hi * ti),        # d/d rr
            w * (hr * rr - hi * ri),        # d/d tr
            w * (rr * ti - ri * tr),        # d/d hi
            w * (hr * ti - hi * tr),        # d/d ri
            w * (hi * rr + hr * ri),        # d/d ti
        ]

    parts_p = gather(pos)
    parts_n = gather(neg)
    phi_p = phi(parts_p)
    phi_n = phi(parts_n)

    loss = float(_softplus(-phi_p).sum() + _softplus(phi_n).sum())
    loss += lam * float(sum((p * p).sum() for p in parts_p + parts_n))

    gp = phi_grads(parts_p, -_sigmoid(-phi_p))
    gn = phi_grads(parts_n, _sigmoid(phi_n))
    # L2 regularization applies per appearance in the batch
    gp = [g + 2 * lam * p for g, p in zip(gp, parts_p)]
    gn = [g + 2 * lam * p for g, p in zip(gn, parts_n)]

    ent_idx = [pos[:, 0], pos[:, 2], neg[..., 0], neg[..., 2]]
    rel_idx = [pos[:, 1], neg[..., 1]]
    sparse = {
        "entity_real": _accumulate(d, ent_idx, [gp[0], gp[2], gn[0], gn[2]]),
        "relation_real": _accumulate(d, rel_idx, [gp[1], gn[1]]),
    }
    if is_complex:
        sparse["entity_imag"] = _accumulate(d, ent_idx, [gp[3], gp[5], gn[3], gn[5]])
        sparse["relation_imag"] = _accumulate(d, rel_idx, [gp[4], gn[4]])
    return loss, sparse


def gradients(
    model: KgcModel, positive: Triple, negatives: list[Triple]
) -> tuple[float, dict[GradKey, np.ndarray]]:
    """Loss and per-row gradients for a single positive with its negatives.

    Keys are (table_name, row_index); only embeddings appearing in the
    batch are touched.
    """
    pos = np.asarray([positive], dtype=np.int64)
    if negatives:
        neg = np.asarray([negatives], dtype=np.int64)
    else:
        neg = np.zeros((1, 0, 3), dtype=np.int64)
    loss, sparse = batch_loss_and_gradients(model, pos, neg)
    flat: dict[GradKey, np.ndarray] = {}
    for name, (rows, grad_rows) in sparse.items():
        for row, g in zip(rows, grad_rows):
            flat[(name, int(row))] = g
    return loss, flat


def normalize_entities(emb: EmbeddingTable) -> None:
    """L2-normalize entity rows in place (TransE convention); zero rows kept."""
    norms = np.sqrt((emb.entity_real * emb.entity_real).sum(axis=1, keepdims=True))
    np.divide(emb.entity_real, norms, out=emb.entity_real, where=norms > 0)


def _filtered_mrr(
    model: KgcModel, triples: list[Triple], filter_index, max_triples: int | None
) -> float:
    """Closed-world filtered MRR over tail and head prediction (validation)."""
    emb = model.embeddings
    if max_triples is not None:
        triples = triples[:max_triples]
    if not triples:
        return 0.0
    total = 0.0
    n = 0
    for h, r, t in triples:
        scores = score_all_tails(model, emb.entity_embedding(h), r)
        total += 1.0 / _rank_with_exclusion(scores, t, filter_index.tails(h, r) - {t})
        scores = score_all_heads(model, r, emb.entity_embedding(t))
        total += 1.0 / _rank_with_exclusion(scores, h, filter_index.heads(r, t) - {h})
        n += 2
    return total / n


def _rank_with_exclusion(scores: np.ndarray, target: int, exclude: set[int]) -> int:
    s = scores[target]
    mask = np.ones(len(scores), dtype=bool)
    if exclude:
        mask[list(exclude)] = False
    mask[target] = False
    return 1 + int((scores[mask] >= s).sum())


def train_kgc(
    graph: KnowledgeGraph,
    family: str,
    hyperparams: KgcHyperparams | None = None,
    seed: int = 0,
    log_path: str | None = None,
) -> KgcModel:
    """Train a link prediction model with uniform negative sampling.

    Deterministic for a fixed seed in this single-threaded mode. When the
    graph has a validation split, filtered MRR is computed every
    ``valid_every`` epochs and the best-scoring epoch's embeddings are
    returned; otherwise the final epoch's.
    """
    hp = hyperparams if hyperparams is not None else KgcHyperparams()
    hp.validate()
    if family not in FAMILIES:
        raise ConfigError(f"unknown model family {family!r}")
    if not graph.train:
        raise ConfigError("cannot train on an empty train split")

    rng = np.random.default_rng(seed)
    emb = init_embeddings(family, graph.num_entities, graph.num_relations, hp.dim, rng)
    model = KgcModel(family, emb, hp)
    adam = Adam(lr=hp.learning_rate)

    filter_index = None
    if graph.valid:
        filter_index = build_filter_index(graph, splits=("train", "valid"))

    train = np.asarray(graph.train, dtype=np.int64)
    n = len(train)
    num_e = graph.num_entities
    K = hp.num_negatives

    best_mrr = -1.0
    best_emb = None
    log_rows: list[str] = []

    for epoch in range(1, hp.epochs + 1):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, hp.batch_size):
            pos = train[perm[start : start + hp.batch_size]]
            b = len(pos)
            neg = np.repeat(pos[:, None, :], K, axis=1)
            corrupt_head = rng.random((b, K)) < 0.5
            replacement = rng.integers(0, num_e, size=(b, K))
            neg[..., 0] = np.where(corrupt_head, replacement, neg[..., 0])
            neg[..., 2] = np.where(corrupt_head, neg[..., 2], replacement)

            loss, sparse = batch_loss_and_gradients(model, pos, neg)
            epoch_loss += loss
            if hp.learning_rate > 0:
                adam.begin_step()
                tables = emb.arrays()
                for name, (rows, grad_rows) in sparse.items():
                    adam.update_rows(name, tables[name], rows, grad_rows)
        if family == "transe" and hp.learning_rate > 0:
            normalize_entities(emb)

        valid_mrr = ""
        if filter_index is not None and hp.valid_every > 0 and epoch % hp.valid_every == 0:
            mrr = _filtered_mrr(model, graph.valid, filter_index, hp.valid_max_triples)
            valid_mrr = f"{mrr:.6f}"
            if mrr > best_mrr:
                best_mrr = mrr
                best_emb = emb.copy()
        log_rows.append(f"{epoch}\t{epoch_loss / n:.6f}\t{valid_mrr}")

    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write("epoch\tloss\tvalid_mrr\n")
            fh.write("\n".join(log_rows) + ("\n" if log_rows else ""))

    if best_emb is not None:
        model = KgcModel(family, best_emb, hp)
    if not all(np.isfinite(a).all() for a in model.embeddings.arrays().values()):
        raise FloatingPointError("non-finite embeddings after training")
    return model


# Checkpoint format: ASCII header lines terminated by an "end" line, then
# row-major little-endian float32 blocks (entity_real, relation_real, and
# for ComplEx entity_imag, relation_imag).

def save_checkpoint(path: str, model: KgcModel) -> None:
    emb = model.embeddings
    header = (
        "kgc v1\n"
        f"family={model.family}\n"
        f"entities={emb.num_entities}\n"
        f"relations={emb.num_relations}\n"
        f"dim={emb.dim}\n"
        f"complex={int(emb.is_complex)}\n"
        "end\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for name in ("entity_real", "relation_real", "entity_imag", "relation_imag"):
            arr = getattr(emb, name)
            if arr is not None:
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str) -> KgcModel:
    with open(path, "rb") as fh:
        data = fh.read()
    head_end = data.index(b"end\n") + len(b"end\n")
    lines = data[:head_end].decode("ascii").splitlines()
    if lines[0] != "kgc v1":
        raise ValueError(f"{path}: not a kgc v1 checkpoint")
    meta = dict(line.split("=", 1) for line in lines[1:-1])
    ne, nr, d = int(meta["entities"]), int(meta["relations"]), int(meta["dim"])
    is_complex = bool(int(meta["complex"]))
    family = meta["family"]

    buf = io.BytesIO(data[head_end:])

    def block(rows: int) -> np.ndarray:
        raw = buf.read(rows * d * 4)
        if len(raw) != rows * d * 4:
            raise ValueError(f"{path}: truncated checkpoint payload")
        return np.frombuffer(raw, dtype="<f4").reshape(rows, d).astype(np.float64)

    ent_r, rel_r = block(ne), block(nr)
    ent_i = rel_i = None
    if is_complex:
        ent_i, rel_i = block(ne), block(nr)
    return KgcModel(family, EmbeddingTable(ent_r, rel_r, ent_i, rel_i))
