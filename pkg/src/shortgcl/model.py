"""Forward pipeline: per-graph 2-layer GCN encoders, text aggregation and
normalization, concatenation into the joint embedding, and the two projection
heads (contrastive-cluster space and class space)."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import ArtifactError, GraphError
from .graphs import InfoGraph, ProjectionMatrix
from . import numerics as nm
from .numerics import Tensor

# Concatenation order of the per-source embedding blocks is fixed.
SOURCE_ORDER = ("word", "entity", "pos")

FINAL_LINEAR = "linear"
FINAL_RELU = "relu"

_CKPT_MAGIC = b"SGC1"
_CKPT_VERSION = 1


@dataclass
class ModelParams:
    """All trainable tensors plus the structural hyperparameters."""

    gcn_weights: dict[str, tuple[Tensor, Tensor]]
    phi_w: Tensor
    phi_b: Tensor
    psi_w: Tensor
    psi_b: Tensor
    hidden: int
    num_classes: int
    sources: tuple[str, ...]
    parallel: bool = False
    final_activation: str = FINAL_LINEAR

    @property
    def joint_dim(self) -> int:
        return len(self.sources) * self.hidden

    @property
    def ccl_dim(self) -> int:
        return self.joint_dim // 2

    def tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for kind, (w0, w1) in self.gcn_weights.items():
            out[f"gcn.{kind}.W0"] = w0
            out[f"gcn.{kind}.W1"] = w1
        out["phi.W"] = self.phi_w
        out["phi.b"] = self.phi_b
        out["psi.W"] = self.psi_w
        out["psi.b"] = self.psi_b
        return out

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors().items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, t in self.tensors().items():
            t.data = values[k].copy()


@dataclass
class ForwardOutputs:
    """Per-stage activations; rows follow the bundle's document order."""

    z: Tensor
    z_norm: Tensor
    u: Tensor
    u_norm: Tensor
    q: Tensor


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def active_sources(graphs: dict[str, InfoGraph], flags: dict[str, bool]) -> tuple[str, ...]:
    """Sources kept after ablation flags and empty-graph degradation,
    in the fixed concatenation order."""
    out = []
    for kind in SOURCE_ORDER:
        if not flags.get(kind, True):
            continue
        g = graphs.get(kind)
        if g is None or g.node_count == 0:
            continue
        out.append(kind)
    if not out:
        raise GraphError("no graph sources remain after ablation")
    return tuple(out)


def init_params(
    graphs: dict[str, InfoGraph],
    sources: tuple[str, ...],
    hidden: int,
    num_classes: int,
    seed: int,
    parallel: bool = False,
    final_activation: str = FINAL_LINEAR,
) -> ModelParams:
    if final_activation not in (FINAL_LINEAR, FINAL_RELU):
        raise ValueError(f"unknown final activation {final_activation!r}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1417]))
    gcn_weights: dict[str, tuple[Tensor, Tensor]] = {}
    for kind in sources:
        feat_dim = graphs[kind].features.shape[1]
        w0 = nm.parameter(_glorot(rng, feat_dim, hidden), name=f"gcn.{kind}.W0")
        w1 = nm.parameter(_glorot(rng, hidden, hidden), name=f"gcn.{kind}.W1")
        gcn_weights[kind] = (w0, w1)
    joint = len(sources) * hidden
    ccl_dim = joint // 2
    psi_in = joint if parallel else ccl_dim
    return ModelParams(
        gcn_weights=gcn_weights,
        phi_w=nm.parameter(_glorot(rng, joint, ccl_dim), name="phi.W"),
        phi_b=nm.parameter(np.zeros(ccl_dim), name="phi.b"),
        psi_w=nm.parameter(_glorot(rng, psi_in, num_classes), name="psi.W"),
        psi_b=nm.parameter(np.zeros(num_classes), name="psi.b"),
        hidden=hidden,
        num_classes=num_classes,
        sources=sources,
        parallel=parallel,
        final_activation=final_activation,
    )


# ---------------------------------------------------------------------------
# forward stages
# ---------------------------------------------------------------------------

def gcn_forward(
    graph: InfoGraph, w0: Tensor, w1: Tensor, final_activation: str = FINAL_LINEAR
) -> Tensor:
    """Two rounds of normalized neighborhood aggregation; ReLU after the
    first layer, configurable activation after the second (default linear)."""
    x = nm.constant(graph.features)
    h1 = nm.relu(nm.spmm(graph.norm_adjacency, nm.matmul(x, w0)))
    h2 = nm.matmul(nm.spmm(graph.norm_adjacency, h1), w1)
    if final_activation == FINAL_RELU:
        h2 = nm.relu(h2)
    return h2


def aggregate_texts(projection: ProjectionMatrix, node_embeddings: Tensor) -> Tensor:
    """Project node embeddings onto texts and L2-normalize each row; rows
    with no incident nodes stay zero."""
    return nm.row_normalize(nm.spmm(projection.values, node_embeddings))


def encode_corpus(
    graphs: dict[str, InfoGraph],
    projections: dict[str, ProjectionMatrix],
    params: ModelParams,
) -> tuple[Tensor, Tensor]:
    """Concatenate the per-source text embeddings (fixed order) and return
    both the raw joint embedding and its row-normalized form."""
    blocks = []
    for kind in params.sources:
        w0, w1 = params.gcn_weights[kind]
        h = gcn_forward(graphs[kind], w0, w1, params.final_activation)
        blocks.append(aggregate_texts(projections[kind], h))
    z = nm.concat_cols(blocks)
    return z, nm.row_normalize(z)


def project_ccl(z_norm: Tensor, params: ModelParams) -> tuple[Tensor, Tensor]:
    u = nm.relu(nm.add_rowvec(nm.matmul(z_norm, params.phi_w), params.phi_b))
    return u, nm.row_normalize(u)


def classify(features: Tensor, params: ModelParams) -> Tensor:
    logits = nm.relu(nm.add_rowvec(nm.matmul(features, params.psi_w), params.psi_b))
    return nm.softmax_rows(logits)


def forward_all(
    graphs: dict[str, InfoGraph],
    projections: dict[str, ProjectionMatrix],
    params: ModelParams,
) -> ForwardOutputs:
    """Full pipeline. Hierarchical mode feeds the class head from the
    normalized cluster-space features; parallel mode branches both heads
    straight off the normalized joint embedding."""
    z, z_norm = encode_corpus(graphs, projections, params)
    u, u_norm = project_ccl(z_norm, params)
    q = classify(z_norm if params.parallel else u_norm, params)
    return ForwardOutputs(z=z, z_norm=z_norm, u=u, u_norm=u_norm, q=q)


def predict(q: np.ndarray) -> np.ndarray:
    """Argmax per row; ties break to the lowest class index."""
    return np.argmax(q, axis=1)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def save_checkpoint(params: ModelParams, path: str, cfg_hash: str) -> None:
    """Versioned binary container: magic, version, JSON header, then raw
    float64 payloads in header order. Deterministic byte-for-byte."""
    tensors = params.tensors()
    header = {
        "config_hash": cfg_hash,
        "hidden": params.hidden,
        "num_classes": params.num_classes,
        "sources": list(params.sources),
        "parallel": params.parallel,
        "final_activation": params.final_activation,
        "tensors": [
            {"name": name, "shape": list(t.data.shape)} for name, t in tensors.items()
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(blob)))
        fh.write(blob)
        for _, t in tensors.items():
            fh.write(np.ascontiguousarray(t.data, dtype=np.float64).tobytes())


def load_checkpoint(path: str, expected_hash: str | None = None) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise ArtifactError(f"{path}: not a checkpoint file")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != _CKPT_VERSION:
            raise ArtifactError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if expected_hash is not None and header["config_hash"] != expected_hash:
            raise ArtifactError(
                f"{path}: checkpoint config hash {header['config_hash'][:12]} "
                f"does not match expected {expected_hash[:12]} (stale artifacts?)"
            )
        values: dict[str, np.ndarray] = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ArtifactError(f"{path}: truncated checkpoint payload")
            values[spec["name"]] = np.frombuffer(raw, dtype=np.float64).reshape(shape).copy()

    sources = tuple(header["sources"])
    gcn_weights = {
        kind: (
            nm.parameter(values[f"gcn.{kind}.W0"], name=f"gcn.{kind}.W0"),
            nm.parameter(values[f"gcn.{kind}.W1"], name=f"gcn.{kind}.W1"),
        )
        for kind in sources
    }
    return ModelParams(
        gcn_weights=gcn_weights,
        phi_w=nm.parameter(values["phi.W"], name="phi.W"),
        phi_b=nm.parameter(values["phi.b"], name="phi.b"),
        psi_w=nm.parameter(values["psi.W"], name="psi.W"),
        psi_b=nm.parameter(values["psi.b"], name="psi.b"),
        hidden=header["hidden"],
        num_classes=header["num_classes"],
        sources=sources,
        parallel=header["parallel"],
        final_activation=header["final_activation"],
    )
