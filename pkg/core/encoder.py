
"""Tree encoder: node embeddings, adjacency-biased attention in parallel with a
graph convolution, fused and passed through a feed-forward block. The [JNode]
row after the last layer is the molecule latent."""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from core import ndtensor as nd
from core.errors import ConfigError, FeatureOutOfRange, ShapeMismatch
from core.jtree import JunctionTree, Vocabulary
from core.ndtensor import ParamStore, Tensor
from core.seqcodec import bfs_order
from utils.models import EncoderConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NodeFeatures:
    """Per-node inputs in BFS order."""

    junction_ids: np.ndarray
    degree: np.ndarray
    hcount: np.ndarray
    depth: np.ndarray

    def __len__(self) -> int:
        return len(self.junction_ids)


def fragment_hcount(jt: JunctionTree, node: int) -> int:
    fragment = jt.nodes[node].fragment
    return sum(fragment.hydrogen_count(i) for i in range(len(fragment)))


def tree_inputs(jt: JunctionTree, vocab: Vocabulary):
    """Node features and node adjacency of `jt`, both in BFS order."""
    perm = bfs_order(jt)
    position = {node: k for k, node in enumerate(perm.order)}
    n = len(perm.order)

    depth = [0] * n
    for k in range(1, n):
        depth[k] = depth[perm.father[k]] + 1

    adjacency = np.zeros((n, n))
    for edge in jt.edges:
        i, j = position[edge.a], position[edge.b]
        adjacency[i, j] = adjacency[j, i] = 1.0

    features = NodeFeatures(
        junction_ids=np.array([vocab.id_of(jt.nodes[node].smiles) for node in perm.order], dtype=np.int64),
        degree=adjacency.sum(axis=1).astype(np.int64),
        hcount=np.array([fragment_hcount(jt, node) for node in perm.order], dtype=np.int64),
        depth=np.array(depth, dtype=np.int64),
    )
    return features, adjacency


def with_context_row(adjacency: np.ndarray) -> np.ndarray:
    """Prepend the [JNode] row and column, adjacent to every node."""
    n = adjacency.shape[0]
    full = np.ones((n + 1, n + 1))
    full[1:, 1:] = adjacency
    full[0, 0] = 0.0
    return full


def _layer_norm_params(store: ParamStore, name: str, width: int):
    store.add(f"{name}.g", np.ones((1, width)))
    store.add(f"{name}.b", np.zeros((1, width)))


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int, bias: Optional[List[Tensor]] = None) -> Tensor:
    """Multi-head scaled dot-product attention; `bias[h]` is added to head h's scores."""
    width = q.shape[1]
    size = width // heads
    scale = 1.0 / np.sqrt(size)
    outputs = []
    for h in range(heads):
        cols = slice(h * size, (h + 1) * size)
        scores = nd.mul(nd.matmul(q[:, cols], nd.transpose(k[:, cols])), scale)
        if bias is not None:
            scores = nd.add(scores, bias[h])
        outputs.append(nd.matmul(nd.softmax(scores), v[:, cols]))
    return outputs[0] if heads == 1 else nd.concat(outputs, axis=1)


def feed_forward(store: ParamStore, name: str, x: Tensor) -> Tensor:
    hidden = nd.gelu(nd.add(nd.matmul(x, store[f"{name}.wa"]), store[f"{name}.ba"]))
    return nd.add(nd.matmul(hidden, store[f"{name}.wb"]), store[f"{name}.bb"])


def add_feed_forward(store: ParamStore, name: str, width: int, inner: int, rng: np.random.Generator, out: Optional[int] = None):
    out = width if out is None else out
    store.add(f"{name}.wa", nd.glorot(rng, width, inner))
    store.add(f"{name}.ba", np.zeros((1, inner)))
    store.add(f"{name}.wb", nd.glorot(rng, inner, out))
    store.add(f"{name}.bb", np.zeros((1, out)))


def layer_norm(store: ParamStore, name: str, x: Tensor) -> Tensor:
    return nd.layer_norm(x, store[f"{name}.g"], store[f"{name}.b"])


class Encoder:
    def __init__(self, config: EncoderConfig, store: ParamStore, rng: np.random.Generator, prefix: str = "enc"):
        if config.hidden % config.heads:
            raise ConfigError(f"hidden width {config.hidden} is not divisible by {config.heads} heads")
        self.config = config
        self.store = store
        self.prefix = prefix
        H = config.hidden
        p = prefix

        store.add(f"{p}.emb.junction", rng.normal(0.0, 0.1, size=(config.vocab_size, H)))
        store.add(f"{p}.emb.degree", rng.normal(0.0, 0.1, size=(config.max_degree + 1, H)))
        store.add(f"{p}.emb.hcount", rng.normal(0.0, 0.1, size=(config.max_hcount + 1, H)))
        store.add(f"{p}.emb.depth", rng.normal(0.0, 0.1, size=(config.max_depth + 1, H)))
        store.add(f"{p}.jnode", rng.normal(0.0, 0.1, size=(1, H)))

        for layer in range(config.layers):
            name = f"{p}.l{layer}"
            _layer_norm_params(store, f"{name}.ln1", H)
            for w in ("wq", "wk", "wv"):
                store.add(f"{name}.attn.{w}", nd.glorot(rng, H, H))
            # per head: (edge bias, non-edge bias)
            store.add(f"{name}.attn.bias", np.zeros((config.heads, 2)))
            store.add(f"{name}.gcn.w", nd.glorot(rng, H, H))
            # W_A reads the concatenated branches directly
            add_feed_forward(store, f"{name}.ffn", 2 * H, config.ffn, rng, out=H)

    # ---- Blocks ----

    def embed(self, features: NodeFeatures) -> Tensor:
        c = self.config
        self._check_range(features.junction_ids, c.vocab_size - 1, "junction id")
        self._check_range(features.degree, c.max_degree, "degree")
        self._check_range(features.hcount, c.max_hcount, "hydrogen count")
        self._check_range(features.depth, c.max_depth, "depth")

        p = self.prefix
        rows = nd.take_rows(self.store[f"{p}.emb.junction"], features.junction_ids)
        if c.use_tree_features:
            rows = nd.add(rows, nd.take_rows(self.store[f"{p}.emb.degree"], features.degree))
            rows = nd.add(rows, nd.take_rows(self.store[f"{p}.emb.hcount"], features.hcount))
            rows = nd.add(rows, nd.take_rows(self.store[f"{p}.emb.depth"], features.depth))
        return nd.concat([self.store[f"{p}.jnode"], rows], axis=0)

    @staticmethod
    def _check_range(values: np.ndarray, upper: int, label: str):
        if len(values) and (values.min() < 0 or values.max() > upper):
            raise FeatureOutOfRange(f"{label} outside [0, {upper}]: {values.min()}..{values.max()}")

    def attn_block(self, H: Tensor, A: np.ndarray, layer: int) -> Tensor:
        if A.shape != (H.shape[0], H.shape[0]):
            raise ShapeMismatch(f"adjacency {A.shape} for {H.shape[0]} rows")
        name = f"{self.prefix}.l{layer}.attn"
        bias_param = self.store[f"{name}.bias"]
        edge, non_edge = nd.Tensor(A), nd.Tensor(1.0 - A)
        bias = [
            nd.add(nd.mul(bias_param[h:h + 1, 0:1], edge), nd.mul(bias_param[h:h + 1, 1:2], non_edge))
            for h in range(self.config.heads)
        ]
        q = nd.matmul(H, self.store[f"{name}.wq"])
        k = nd.matmul(H, self.store[f"{name}.wk"])
        v = nd.matmul(H, self.store[f"{name}.wv"])
        return attention(q, k, v, self.config.heads, bias)

    def gcn_block(self, H: Tensor, A: np.ndarray, layer: int) -> Tensor:
        norm = nd.Tensor(normalized_adjacency(A))
        weight = self.store[f"{self.prefix}.l{layer}.gcn.w"]
        return nd.gelu(nd.matmul(nd.matmul(norm, H), weight))

    def encoder_layer(self, H: Tensor, A: np.ndarray, layer: int) -> Tensor:
        name = f"{self.prefix}.l{layer}"
        x = layer_norm(self.store, f"{name}.ln1", H)
        mixed = nd.concat([self.gcn_block(x, A, layer), self.attn_block(x, A, layer)], axis=1)
        return nd.add(H, feed_forward(self.store, f"{name}.ffn", mixed))

    def encode(self, features: NodeFeatures, adjacency: np.ndarray) -> Tensor:
        """Latent of one tree as a 1 x hidden row."""
        A = with_context_row(adjacency)
        H = self.embed(features)
        for layer in range(self.config.layers):
            H = self.encoder_layer(H, A, layer)
        return H[0:1, :]


def normalized_adjacency(A: np.ndarray) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2."""
    a_hat = A + np.eye(A.shape[0])
    inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return a_hat * inv_sqrt[:, None] * inv_sqrt[None, :]
