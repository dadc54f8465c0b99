"""Corpus ingestion: loading, validation, splitting, and augmentation.

Every external NLP artifact (POS tags, entity links, embedding tables,
synonym tables) enters the pipeline here as a file. The resulting
CorpusBundle is immutable by convention after construction: augmentation and
splitting return new bundles.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import CorpusError

log = logging.getLogger(__name__)

VIEW_ORIGINAL = "original"
VIEW_AUGMENTED = "augmented"

STRATEGY_SYNONYM = "synonym"
STRATEGY_DELETION = "deletion"
STRATEGY_CONTEXTUAL = "contextual_table"
AUGMENT_STRATEGIES = (STRATEGY_SYNONYM, STRATEGY_DELETION, STRATEGY_CONTEXTUAL)

# Out-of-vocabulary embedding rows are seeded by the token string so reruns
# and reloads agree byte for byte.
OOV_SCALE = 0.01


@dataclass
class Document:
    """One short text: tokens, POS tags, entity mentions, optional label."""

    doc_id: int
    tokens: list[str]
    pos_tags: list[str]
    entities: list[str]
    label: int | None
    view: str = VIEW_ORIGINAL
    source_id: int | None = None

    def __post_init__(self):
        if self.source_id is None:
            self.source_id = self.doc_id


@dataclass
class CorpusBundle:
    """A validated corpus plus vocabularies, embeddings, and split sets.

    ``documents`` holds all originals (sorted by doc_id) followed by their
    augmented views in the same order, so row i and row i+N are a positive
    pair once the bundle is augmented.
    """

    documents: list[Document]
    word_vocab: dict[str, int]
    pos_vocab: dict[str, int]
    entity_vocab: dict[str, int]
    word_embeddings: np.ndarray
    entity_embeddings: np.ndarray
    num_classes: int
    splits: dict[str, set[int]] = field(
        default_factory=lambda: {"train": set(), "validation": set(), "test": set()}
    )
    word_emb_path: str | None = None
    entity_emb_path: str | None = None
    rejected: list[tuple[int, str]] = field(default_factory=list)

    # -- derived views -----------------------------------------------------

    @property
    def originals(self) -> list[Document]:
        return [d for d in self.documents if d.view == VIEW_ORIGINAL]

    @property
    def augmented(self) -> list[Document]:
        return [d for d in self.documents if d.view == VIEW_AUGMENTED]

    @property
    def num_originals(self) -> int:
        return sum(1 for d in self.documents if d.view == VIEW_ORIGINAL)

    def row_index(self) -> dict[int, int]:
        """doc_id -> row position in ``documents`` (also the embedding row)."""
        return {d.doc_id: i for i, d in enumerate(self.documents)}

    def is_augmented(self) -> bool:
        return any(d.view == VIEW_AUGMENTED for d in self.documents)

    def validate(self) -> None:
        ids = [d.doc_id for d in self.documents]
        if len(ids) != len(set(ids)):
            raise CorpusError("duplicate doc_id in bundle")
        originals = self.originals
        if not originals:
            raise CorpusError("bundle contains no original documents")
        orig_ids = {d.doc_id for d in originals}
        for d in self.documents:
            if len(d.tokens) != len(d.pos_tags):
                raise CorpusError(f"doc {d.doc_id}: tokens/pos length mismatch")
            for t in d.tokens:
                if t not in self.word_vocab:
                    raise CorpusError(f"doc {d.doc_id}: token {t!r} not in vocabulary")
            for t in d.pos_tags:
                if t not in self.pos_vocab:
                    raise CorpusError(f"doc {d.doc_id}: tag {t!r} not in vocabulary")
            for e in d.entities:
                if e not in self.entity_vocab:
                    raise CorpusError(f"doc {d.doc_id}: entity {e!r} not in vocabulary")
            if d.view == VIEW_AUGMENTED and d.label is not None:
                raise CorpusError(f"augmented doc {d.doc_id} carries a label")
        aug = self.augmented
        if aug:
            sources = [d.source_id for d in aug]
            if len(aug) != len(originals) or set(sources) != orig_ids or len(set(sources)) != len(sources):
                raise CorpusError("augmented views do not pair bijectively with originals")
            # Rows must be laid out originals-first with row i + N pairing row i.
            if [d.view for d in self.documents] != [VIEW_ORIGINAL] * len(originals) + [VIEW_AUGMENTED] * len(aug):
                raise CorpusError("documents must be ordered originals then augmented")
            for orig, twin in zip(originals, aug):
                if twin.source_id != orig.doc_id:
                    raise CorpusError("augmented views not aligned with original order")
        tr, va, te = self.splits["train"], self.splits["validation"], self.splits["test"]
        if tr or va or te:
            if (tr & va) or (tr & te) or (va & te):
                raise CorpusError("split sets overlap")
            if (tr | va | te) != orig_ids:
                raise CorpusError("split sets do not cover all original doc ids")
        if self.word_embeddings.shape[0] != len(self.word_vocab):
            raise CorpusError("word embedding rows do not match vocabulary size")
        if self.entity_embeddings.shape[0] != len(self.entity_vocab):
            raise CorpusError("entity embedding rows do not match vocabulary size")


# ---------------------------------------------------------------------------
# embedding tables
# ---------------------------------------------------------------------------

def _oov_vector(token: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.uniform(-OOV_SCALE, OOV_SCALE, size=dim)


def read_embedding_table(path: str, wanted: set[str]) -> tuple[dict[str, np.ndarray], int]:
    """Parse a whitespace 'token v1 ... vD' file, keeping only wanted tokens.

    Dimension is inferred from the first line and enforced thereafter.
    """
    found: dict[str, np.ndarray] = {}
    dim = -1
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if dim < 0:
                dim = len(values)
                if dim == 0:
                    raise CorpusError(f"{path}:{lineno}: embedding line has no values")
            elif len(values) != dim:
                raise CorpusError(
                    f"{path}:{lineno}: expected {dim} values, got {len(values)}"
                )
            if token in wanted and token not in found:
                try:
                    found[token] = np.array([float(v) for v in values])
                except ValueError as exc:
                    raise CorpusError(f"{path}:{lineno}: bad float") from exc
    return found, dim


def _embedding_matrix(vocab: dict[str, int], table: dict[str, np.ndarray], dim: int) -> np.ndarray:
    mat = np.zeros((len(vocab), dim))
    for token, idx in vocab.items():
        vec = table.get(token)
        mat[idx] = vec if vec is not None else _oov_vector(token, dim)
    return mat


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def load_corpus(corpus_path: str, word_emb_path: str, entity_emb_path: str) -> CorpusBundle:
    """Load a JSONL corpus plus its word and entity embedding tables.

    Documents with mismatched token/POS lengths are rejected with a
    diagnostic; duplicate ids and an empty corpus are fatal.
    """
    docs: list[Document] = []
    rejected: list[tuple[int, str]] = []
    seen_ids: set[int] = set()
    with open(corpus_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{corpus_path}:{lineno}: invalid JSON") from exc
            try:
                doc_id = int(obj["id"])
                tokens = [str(t) for t in obj["tokens"]]
                pos = [str(t) for t in obj["pos"]]
                entities = [str(e) for e in obj.get("entities", [])]
                label = obj.get("label")
            except (KeyError, TypeError) as exc:
                raise CorpusError(f"{corpus_path}:{lineno}: malformed record") from exc
            if doc_id < 0:
                raise CorpusError(f"{corpus_path}:{lineno}: negative doc id {doc_id}")
            if doc_id in seen_ids:
                raise CorpusError(f"{corpus_path}:{lineno}: duplicate doc id {doc_id}")
            seen_ids.add(doc_id)
            if len(tokens) != len(pos):
                rejected.append((doc_id, f"{len(tokens)} tokens vs {len(pos)} POS tags"))
                continue
            if label is not None:
                label = int(label)
                if label < 0:
                    raise CorpusError(f"{corpus_path}:{lineno}: negative label {label}")
            docs.append(Document(doc_id, tokens, pos, entities, label))

    if rejected:
        log.warning("rejected %d document(s) with invariant violations", len(rejected))
    if not docs:
        raise CorpusError(f"{corpus_path}: corpus is empty")

    docs.sort(key=lambda d: d.doc_id)
    labels = [d.label for d in docs if d.label is not None]
    num_classes = (max(labels) + 1) if labels else 0

    word_vocab: dict[str, int] = {}
    pos_vocab: dict[str, int] = {}
    entity_vocab: dict[str, int] = {}
    for d in docs:
        for t in d.tokens:
            word_vocab.setdefault(t, len(word_vocab))
        for t in d.pos_tags:
            pos_vocab.setdefault(t, len(pos_vocab))
        for e in d.entities:
            entity_vocab.setdefault(e, len(entity_vocab))

    word_table, word_dim = read_embedding_table(word_emb_path, set(word_vocab))
    if word_dim < 0:
        if word_vocab:
            raise CorpusError(f"{word_emb_path}: empty table, cannot infer dimension")
        word_dim = 0
    entity_table, entity_dim = read_embedding_table(entity_emb_path, set(entity_vocab))
    if entity_dim < 0:
        if entity_vocab:
            raise CorpusError(f"{entity_emb_path}: empty table, cannot infer dimension")
        entity_dim = 0

    bundle = CorpusBundle(
        documents=docs,
        word_vocab=word_vocab,
        pos_vocab=pos_vocab,
        entity_vocab=entity_vocab,
        word_embeddings=_embedding_matrix(word_vocab, word_table, word_dim),
        entity_embeddings=_embedding_matrix(entity_vocab, entity_table, entity_dim),
        num_classes=num_classes,
        word_emb_path=os.fspath(word_emb_path),
        entity_emb_path=os.fspath(entity_emb_path),
        rejected=rejected,
    )
    bundle.validate()
    return bundle


def read_substitution_table(path: str) -> dict[str, list[str]]:
    """JSONL {'word': str, 'synonyms': [str]} -> lookup table."""
    table: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                word = str(obj["word"])
                synonyms = [str(s) for s in obj["synonyms"]]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed substitution entry") from exc
            table[word] = synonyms
    return table


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def _augment_tokens_substitute(
    tokens: list[str], pos_tags: list[str], table: dict[str, list[str]],
    rate: float, rng: np.random.Generator,
) -> tuple[list[str], list[str]]:
    # One coin per position; the choice draw happens only on a hit with a
    # nonempty synonym list, so the stream is reproducible by re-simulation.
    out = list(tokens)
    for i, tok in enumerate(tokens):
        if rng.random() < rate:
            options = table.get(tok)
            if options:
                out[i] = options[int(rng.integers(len(options)))]
    return out, list(pos_tags)


def _augment_tokens_delete(
    tokens: list[str], pos_tags: list[str], rate: float, rng: np.random.Generator,
) -> tuple[list[str], list[str]]:
    keep = [rng.random() >= rate for _ in tokens]
    if tokens and not any(keep):
        keep[int(rng.integers(len(tokens)))] = True
    new_tokens = [t for t, k in zip(tokens, keep) if k]
    new_tags = [t for t, k in zip(pos_tags, keep) if k]
    return new_tokens, new_tags


def augment_corpus(
    bundle: CorpusBundle,
    strategy: str,
    aux_path: str | None,
    rate: float,
    seed: int,
) -> CorpusBundle:
    """Add exactly one augmented view per original document.

    Substitution strategies keep POS tags positionally; deletion drops
    token/tag pairs but always leaves at least one survivor. New words and
    tags extend the vocabularies; new words take their pretrained vector when
    the embedding file still resolves, else the deterministic OOV vector.
    """
    if strategy not in AUGMENT_STRATEGIES:
        raise CorpusError(f"unknown augmentation strategy {strategy!r}")
    if not (0.0 < rate <= 1.0):
        raise CorpusError(f"augmentation rate must be in (0, 1], got {rate}")
    if bundle.is_augmented():
        raise CorpusError("bundle is already augmented")

    table: dict[str, list[str]] = {}
    if strategy in (STRATEGY_SYNONYM, STRATEGY_CONTEXTUAL):
        if aux_path is None:
            raise CorpusError(f"strategy {strategy!r} requires a substitution table file")
        if not os.path.exists(aux_path):
            raise CorpusError(f"substitution table not found: {aux_path}")
        table = read_substitution_table(aux_path)

    originals = bundle.originals
    next_id = max(d.doc_id for d in originals) + 1
    augmented: list[Document] = []
    for d in originals:
        rng = np.random.default_rng([seed, d.doc_id])
        if strategy == STRATEGY_DELETION:
            tokens, tags = _augment_tokens_delete(d.tokens, d.pos_tags, rate, rng)
        else:
            tokens, tags = _augment_tokens_substitute(d.tokens, d.pos_tags, table, rate, rng)
        augmented.append(
            Document(
                doc_id=next_id,
                tokens=tokens,
                pos_tags=tags,
                entities=list(d.entities),
                label=None,
                view=VIEW_AUGMENTED,
                source_id=d.doc_id,
            )
        )
        next_id += 1

    word_vocab = dict(bundle.word_vocab)
    pos_vocab = dict(bundle.pos_vocab)
    new_words: list[str] = []
    for d in augmented:
        for t in d.tokens:
            if t not in word_vocab:
                word_vocab[t] = len(word_vocab)
                new_words.append(t)
        for t in d.pos_tags:
            pos_vocab.setdefault(t, len(pos_vocab))

    word_embeddings = bundle.word_embeddings
    if new_words:
        dim = word_embeddings.shape[1]
        found: dict[str, np.ndarray] = {}
        if bundle.word_emb_path and os.path.exists(bundle.word_emb_path):
            found, _ = read_embedding_table(bundle.word_emb_path, set(new_words))
        extra = np.stack([found.get(w, _oov_vector(w, dim)) for w in new_words])
        word_embeddings = np.vstack([word_embeddings, extra])

    out = replace(
        bundle,
        documents=list(originals) + augmented,
        word_vocab=word_vocab,
        pos_vocab=pos_vocab,
        word_embeddings=word_embeddings,
        splits={k: set(v) for k, v in bundle.splits.items()},
        rejected=list(bundle.rejected),
    )
    out.validate()
    return out


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def split_corpus(bundle: CorpusBundle, per_class_labeled: int, seed: int) -> CorpusBundle:
    """Sample per_class_labeled originals per class: half train, half
    validation, remainder test. Test labels stay in the bundle; the trainer
    masks them."""
    if per_class_labeled < 1:
        raise CorpusError("per_class_labeled must be >= 1")
    originals = bundle.originals
    by_class: dict[int, list[int]] = {c: [] for c in range(bundle.num_classes)}
    for d in originals:
        if d.label is not None:
            by_class[d.label].append(d.doc_id)

    rng = np.random.default_rng(seed)
    train: set[int] = set()
    validation: set[int] = set()
    n_train = per_class_labeled // 2
    for cls in range(bundle.num_classes):
        pool = sorted(by_class[cls])
        if len(pool) < per_class_labeled:
            raise CorpusError(
                f"class {cls} has {len(pool)} labeled documents, "
                f"needs {per_class_labeled}"
            )
        picked = rng.choice(len(pool), size=per_class_labeled, replace=False)
        chosen = [pool[i] for i in picked]
        train.update(chosen[:n_train])
        validation.update(chosen[n_train:])

    test = {d.doc_id for d in originals} - train - validation
    out = replace(
        bundle,
        documents=list(bundle.documents),
        splits={"train": train, "validation": validation, "test": test},
        rejected=list(bundle.rejected),
    )
    out.validate()
    return out


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_BUNDLE_FORMAT = "shortgcl-bundle"
_BUNDLE_VERSION = 1


def save_bundle(bundle: CorpusBundle, path: str) -> None:
    """Write the bundle as canonical JSON; reloads round-trip bit-identically."""
    payload = {
        "format": _BUNDLE_FORMAT,
        "version": _BUNDLE_VERSION,
        "num_classes": bundle.num_classes,
        "word_emb_path": bundle.word_emb_path,
        "entity_emb_path": bundle.entity_emb_path,
        "documents": [
            {
                "doc_id": d.doc_id,
                "tokens": d.tokens,
                "pos": d.pos_tags,
                "entities": d.entities,
                "label": d.label,
                "view": d.view,
                "source_id": d.source_id,
            }
            for d in bundle.documents
        ],
        "word_vocab": _vocab_list(bundle.word_vocab),
        "pos_vocab": _vocab_list(bundle.pos_vocab),
        "entity_vocab": _vocab_list(bundle.entity_vocab),
        "word_embeddings": bundle.word_embeddings.tolist(),
        "entity_embeddings": bundle.entity_embeddings.tolist(),
        "entity_dim": int(bundle.entity_embeddings.shape[1]),
        "word_dim": int(bundle.word_embeddings.shape[1]),
        "splits": {k: sorted(v) for k, v in bundle.splits.items()},
        "rejected": [[i, r] for i, r in bundle.rejected],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _vocab_list(vocab: dict[str, int]) -> list[str]:
    out = [""] * len(vocab)
    for token, idx in vocab.items():
        out[idx] = token
    return out


def load_bundle(path: str) -> CorpusBundle:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != _BUNDLE_FORMAT or payload.get("version") != _BUNDLE_VERSION:
        raise CorpusError(f"{path}: not a recognized bundle file")
    docs = [
        Document(
            doc_id=d["doc_id"],
            tokens=list(d["tokens"]),
            pos_tags=list(d["pos"]),
            entities=list(d["entities"]),
            label=d["label"],
            view=d["view"],
            source_id=d["source_id"],
        )
        for d in payload["documents"]
    ]
    word_dim = payload["word_dim"]
    entity_dim = payload["entity_dim"]
    bundle = CorpusBundle(
        documents=docs,
        word_vocab={t: i for i, t in enumerate(payload["word_vocab"])},
        pos_vocab={t: i for i, t in enumerate(payload["pos_vocab"])},
        entity_vocab={t: i for i, t in enumerate(payload["entity_vocab"])},
        word_embeddings=np.array(payload["word_embeddings"]).reshape(-1, word_dim),
        entity_embeddings=np.array(payload["entity_embeddings"]).reshape(-1, entity_dim),
        num_classes=payload["num_classes"],
        splits={k: set(v) for k, v in payload["splits"].items()},
        word_emb_path=payload["word_emb_path"],
        entity_emb_path=payload["entity_emb_path"],
        rejected=[(i, r) for i, r in payload["rejected"]],
    )
    bundle.validate()
    return bundle
