"""Source graph construction: word and POS graphs from windowed PMI, the
entity graph from clamped cosine similarity, plus the text-to-node projection
matrices (TF-IDF for words/tags, binary incidence for entities)."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from itertools import combinations

import numpy as np
import scipy.sparse as sp

from . import GraphError
from .ingest import CorpusBundle

KIND_WORD = "word"
KIND_POS = "pos"
KIND_ENTITY = "entity"
GRAPH_KINDS = (KIND_WORD, KIND_POS, KIND_ENTITY)

_SYMMETRY_TOL = 1e-12


@dataclass
class InfoGraph:
    """One source graph: node features, raw adjacency, normalized adjacency."""

    kind: str
    node_count: int
    features: np.ndarray
    adjacency: sp.csr_matrix
    norm_adjacency: sp.csr_matrix

    def validate(self) -> None:
        n = self.node_count
        if self.adjacency.shape != (n, n) or self.features.shape[0] != n:
            raise GraphError(f"{self.kind} graph shapes inconsistent")
        if n == 0:
            return
        if _max_abs_asymmetry(self.adjacency) > _SYMMETRY_TOL:
            raise GraphError(f"{self.kind} adjacency is not symmetric")
        if self.adjacency.nnz and self.adjacency.data.min() < 0:
            raise GraphError(f"{self.kind} adjacency has negative entries")
        if np.abs(self.adjacency.diagonal()).max() > 0:
            raise GraphError(f"{self.kind} adjacency has nonzero diagonal")
        if self.kind == KIND_ENTITY and self.adjacency.nnz and self.adjacency.data.max() > 1 + 1e-9:
            raise GraphError("entity adjacency entries must be <= 1")
        if not np.all(np.isfinite(self.norm_adjacency.data)):
            raise GraphError(f"{self.kind} normalized adjacency has non-finite entries")


@dataclass
class ProjectionMatrix:
    """Text-to-node weights: one row per document view (2N rows total)."""

    kind: str
    values: sp.csr_matrix


def _max_abs_asymmetry(m: sp.spmatrix) -> float:
    diff = (m - m.T).tocoo()
    return float(np.abs(diff.data).max()) if diff.nnz else 0.0


# ---------------------------------------------------------------------------
# PMI adjacency
# ---------------------------------------------------------------------------

def compute_pmi_adjacency(
    sequences: list[list[int]], vocab_size: int, window: int
) -> sp.csr_matrix:
    """Windowed positive PMI over token-index sequences.

    A window of width ``window`` slides over each sequence; shorter sequences
    count as a single window. Presence within a window is binary, so repeats
    inside one window count once. Entries are max(PMI, 0) with a zero
    diagonal; pairs that never co-occur get weight 0.
    """
    if window < 2:
        raise GraphError(f"window must be >= 2, got {window}")
    if not sequences:
        raise GraphError("no sequences given")

    n_windows = 0
    single = np.zeros(vocab_size, dtype=np.int64)
    pair: Counter[tuple[int, int]] = Counter()
    for seq in sequences:
        for idx in seq:
            if not (0 <= idx < vocab_size):
                raise GraphError(f"vocab index {idx} out of range [0, {vocab_size})")
        if len(seq) <= window:
            windows = [seq]
        else:
            windows = [seq[i:i + window] for i in range(len(seq) - window + 1)]
        for w in windows:
            n_windows += 1
            present = sorted(set(w))
            for idx in present:
                single[idx] += 1
            for a, b in combinations(present, 2):
                pair[(a, b)] += 1

    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for (a, b), c_ab in pair.items():
        pmi = math.log(c_ab * n_windows / (single[a] * single[b]))
        if pmi > 0:
            rows.extend((a, b))
            cols.extend((b, a))
            vals.extend((pmi, pmi))
    return sp.csr_matrix((vals, (rows, cols)), shape=(vocab_size, vocab_size))


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def normalize_adjacency(adjacency: sp.spmatrix) -> sp.csr_matrix:
    """Symmetric renormalization D^{-1/2} (A + I) D^{-1/2}.

    Self-loops guarantee every degree is >= 1, so isolated nodes map to
    themselves with weight 1.
    """
    adjacency = adjacency.tocsr()
    n, m = adjacency.shape
    if n != m:
        raise GraphError(f"adjacency must be square, got {adjacency.shape}")
    if n == 0:
        return adjacency.copy()
    if _max_abs_asymmetry(adjacency) > _SYMMETRY_TOL:
        raise GraphError("adjacency must be symmetric")
    if adjacency.nnz and adjacency.data.min() < 0:
        raise GraphError("adjacency must be nonnegative")
    hat = (adjacency + sp.identity(n, format="csr")).tocsr()
    degrees = np.asarray(hat.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(degrees)
    d_half = sp.diags(inv_sqrt)
    return (d_half @ hat @ d_half).tocsr()


# ---------------------------------------------------------------------------
# graph assembly
# ---------------------------------------------------------------------------

def _cosine_adjacency(features: np.ndarray) -> sp.csr_matrix:
    """Clamped pairwise cosine with zero diagonal; zero-norm rows contribute 0."""
    n = features.shape[0]
    if n == 0:
        return sp.csr_matrix((0, 0))
    norms = np.linalg.norm(features, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    sims = (features @ features.T) / np.outer(safe, safe)
    sims[norms == 0, :] = 0.0
    sims[:, norms == 0] = 0.0
    np.clip(sims, 0.0, 1.0, out=sims)
    np.fill_diagonal(sims, 0.0)
    sims = (sims + sims.T) / 2.0
    return sp.csr_matrix(sims)


def _make_graph(kind: str, features: np.ndarray, adjacency: sp.csr_matrix) -> InfoGraph:
    graph = InfoGraph(
        kind=kind,
        node_count=features.shape[0],
        features=features,
        adjacency=adjacency,
        norm_adjacency=normalize_adjacency(adjacency),
    )
    graph.validate()
    return graph


def build_info_graphs(bundle: CorpusBundle, window: int) -> dict[str, InfoGraph]:
    """Build the word, POS, and entity graphs over all 2N document views.

    An empty entity vocabulary yields a 0-node entity graph; downstream code
    degrades to the word+POS concatenation.
    """
    if not bundle.is_augmented():
        raise GraphError("graphs are built over original and augmented views; augment first")

    word_seqs = [[bundle.word_vocab[t] for t in d.tokens] for d in bundle.documents]
    pos_seqs = [[bundle.pos_vocab[t] for t in d.pos_tags] for d in bundle.documents]

    word_adj = compute_pmi_adjacency(word_seqs, len(bundle.word_vocab), window)
    pos_adj = compute_pmi_adjacency(pos_seqs, len(bundle.pos_vocab), window)
    entity_adj = _cosine_adjacency(bundle.entity_embeddings)

    return {
        KIND_WORD: _make_graph(KIND_WORD, bundle.word_embeddings, word_adj),
        KIND_POS: _make_graph(KIND_POS, np.eye(len(bundle.pos_vocab)), pos_adj),
        KIND_ENTITY: _make_graph(KIND_ENTITY, bundle.entity_embeddings, entity_adj),
    }


# ---------------------------------------------------------------------------
# projection matrices
# ---------------------------------------------------------------------------

def compute_projection_matrices(bundle: CorpusBundle) -> dict[str, ProjectionMatrix]:
    """TF-IDF rows for word/POS nodes and binary incidence for entities.

    tf is the raw count of node j in document i; idf is log(2N / (1 + df_j))
    with df counted over all 2N views.
    """
    docs = bundle.documents
    n_rows = len(docs)

    def tfidf(vocab: dict[str, int], field: str) -> sp.csr_matrix:
        df = np.zeros(len(vocab), dtype=np.int64)
        doc_counts: list[Counter[int]] = []
        for d in docs:
            counts = Counter(vocab[t] for t in getattr(d, field))
            doc_counts.append(counts)
            for j in counts:
                df[j] += 1
        idf = np.log(n_rows / (1.0 + df)) if len(vocab) else np.zeros(0)
        rows, cols, vals = [], [], []
        for i, counts in enumerate(doc_counts):
            for j, tf in sorted(counts.items()):
                rows.append(i)
                cols.append(j)
                vals.append(tf * idf[j])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, len(vocab)))

    rows, cols = [], []
    for i, d in enumerate(docs):
        for j in sorted({bundle.entity_vocab[e] for e in d.entities}):
            rows.append(i)
            cols.append(j)
    entity = sp.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(n_rows, len(bundle.entity_vocab))
    )

    return {
        KIND_WORD: ProjectionMatrix(KIND_WORD, tfidf(bundle.word_vocab, "tokens")),
        KIND_POS: ProjectionMatrix(KIND_POS, tfidf(bundle.pos_vocab, "pos_tags")),
        KIND_ENTITY: ProjectionMatrix(KIND_ENTITY, entity),
    }


# ---------------------------------------------------------------------------
# sparse triplet serialization
# ---------------------------------------------------------------------------

def save_sparse_triplets(matrix: sp.spmatrix, path: str) -> None:
    """Text triplet format: 'rows cols nnz' header then 'i j value' lines in
    row-major order, values printed with full float64 round-trip precision."""
    m = matrix.tocsr()
    m.sort_indices()
    coo = m.tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{m.shape[0]} {m.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")


def load_sparse_triplets(path: str) -> sp.csr_matrix:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise GraphError(f"{path}: bad triplet header")
        n_rows, n_cols, nnz = (int(x) for x in header)
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz)
        for k in range(nnz):
            parts = fh.readline().split()
            if len(parts) != 3:
                raise GraphError(f"{path}: truncated triplet file")
            rows[k], cols[k], vals[k] = int(parts[0]), int(parts[1]), float(parts[2])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))
