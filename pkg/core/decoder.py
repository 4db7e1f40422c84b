
"""Autoregressive tree decoder and the autoencoder that trains it.

Row 0 of the decoder input is the projected latent; row k+1 embeds the k-th
consumed token. Row r predicts the junction of node r (or [EOS] when r equals
the number of nodes) and the position case of node r.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from core import ndtensor as nd
from core.encoder import Encoder, NodeFeatures, add_feed_forward, attention, feed_forward, layer_norm
from core.errors import ConfigError, FeatureOutOfRange, MaxLenExceeded, ShapeMismatch
from core.jtree import EOS_ID, JNODE_ID, PAD_ID, Vocabulary
from core.ndtensor import NEG_INF, ParamStore, Tensor
from core.seqcodec import Token, TokenSeq, feasible_cases, resolve_father
from utils.models import DecoderConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecoderInputs:
    """Insertion-time features of the consumed tokens."""

    junction_ids: np.ndarray
    cases: np.ndarray
    fathers: Tuple[Optional[int], ...]
    father_degree: np.ndarray
    depth: np.ndarray
    hcount: np.ndarray

    def __len__(self) -> int:
        return len(self.junction_ids)


class LossParts(NamedTuple):
    total: Tensor
    position: float
    junction: float
    aux: float


def insertion_features(
    junction_ids: Sequence[int],
    cases: Sequence[int],
    hcount_table: np.ndarray,
) -> DecoderInputs:
    n = len(junction_ids)
    fathers: List[Optional[int]] = []
    degree = [0] * n
    depth = [0] * n
    father_degree = [0] * n
    for k in range(n):
        if k == 0:
            fathers.append(None)
            continue
        father = resolve_father(fathers, k, cases[k])
        fathers.append(father)
        degree[father] += 1
        degree[k] = 1
        depth[k] = depth[father] + 1
        father_degree[k] = degree[father]
    return DecoderInputs(
        junction_ids=np.asarray(junction_ids, dtype=np.int64),
        cases=np.asarray(cases, dtype=np.int64),
        fathers=tuple(fathers),
        father_degree=np.asarray(father_degree, dtype=np.int64),
        depth=np.asarray(depth, dtype=np.int64),
        hcount=np.asarray(hcount_table, dtype=np.int64)[np.asarray(junction_ids, dtype=np.int64)] if n else np.zeros(0, dtype=np.int64),
    )


def father_mask(fathers: Sequence[Optional[int]]) -> np.ndarray:
    """Masked adjacency over decoder rows: row k+1 links to its father's row only."""
    n = len(fathers) + 1
    M = np.zeros((n, n))
    for k, father in enumerate(fathers):
        if father is not None:
            M[k + 1, father + 1] = 1.0
    return M


def dagcn_operator(M: np.ndarray) -> np.ndarray:
    """D^-1/2 (D - M) D^-1/2 with D^-1/2 := 0 on zero-degree rows."""
    degree = M.sum(axis=1)
    inv_sqrt = np.where(degree > 0, 1.0 / np.sqrt(np.maximum(degree, 1e-12)), 0.0)
    return (np.diag(degree) - M) * inv_sqrt[:, None] * inv_sqrt[None, :]


def causal_mask(n: int) -> np.ndarray:
    return np.triu(np.full((n, n), NEG_INF), k=1)


class Decoder:
    def __init__(self, config: DecoderConfig, store: ParamStore, rng: np.random.Generator, prefix: str = "dec"):
        if config.hidden % config.heads:
            raise ConfigError(f"hidden width {config.hidden} is not divisible by {config.heads} heads")
        self.config = config
        self.store = store
        self.prefix = prefix
        H = config.hidden
        p = prefix

        store.add(f"{p}.z.w", nd.glorot(rng, H, H))
        store.add(f"{p}.z.b", np.zeros((1, H)))
        store.add(f"{p}.emb.junction", rng.normal(0.0, 0.1, size=(config.vocab_size, H)))
        store.add(f"{p}.emb.case", rng.normal(0.0, 0.1, size=(config.alphabet_size, H)))
        store.add(f"{p}.emb.degree", rng.normal(0.0, 0.1, size=(config.max_degree + 1, H)))
        store.add(f"{p}.emb.depth", rng.normal(0.0, 0.1, size=(config.max_depth + 1, H)))
        store.add(f"{p}.emb.hcount", rng.normal(0.0, 0.1, size=(config.max_hcount + 1, H)))

        for layer in range(config.layers):
            name = f"{p}.l{layer}"
            store.add(f"{name}.ln1.g", np.ones((1, H)))
            store.add(f"{name}.ln1.b", np.zeros((1, H)))
            for w in ("wq", "wk", "wv"):
                store.add(f"{name}.attn.{w}", nd.glorot(rng, H, H))
            if config.use_dagcn:
                store.add(f"{name}.dagcn.w", nd.glorot(rng, H, H))
                store.add(f"{name}.dagcn.theta", np.full((1, 1), config.theta_init))
                store.add(f"{name}.fuse.w", nd.glorot(rng, 2 * H, H))
            else:
                store.add(f"{name}.fuse.w", nd.glorot(rng, H, H))
            store.add(f"{name}.ln2.g", np.ones((1, H)))
            store.add(f"{name}.ln2.b", np.zeros((1, H)))
            add_feed_forward(store, f"{name}.ffn", H, config.ffn, rng)

        store.add(f"{p}.ln_f.g", np.ones((1, H)))
        store.add(f"{p}.ln_f.b", np.zeros((1, H)))
        store.add(f"{p}.head.junction.w", nd.glorot(rng, H, config.vocab_size))
        store.add(f"{p}.head.junction.b", np.zeros((1, config.vocab_size)))
        store.add(f"{p}.head.position.w", nd.glorot(rng, H, config.alphabet_size))
        store.add(f"{p}.head.position.b", np.zeros((1, config.alphabet_size)))
        store.add(f"{p}.aux.w", np.zeros((H, config.n_aux)))
        store.add(f"{p}.aux.b", np.zeros((1, config.n_aux)))

        self.junction_mask = np.zeros((1, config.vocab_size))
        self.junction_mask[0, [JNODE_ID, PAD_ID]] = NEG_INF

    # ---- Blocks ----

    def embed(self, z: Tensor, inputs: DecoderInputs) -> Tensor:
        c = self.config
        p = self.prefix
        for values, upper, label in (
            (inputs.junction_ids, c.vocab_size - 1, "junction id"),
            (inputs.cases, c.alphabet_size - 1, "position case"),
            (inputs.father_degree, c.max_degree, "degree"),
            (inputs.depth, c.max_depth, "depth"),
            (inputs.hcount, c.max_hcount, "hydrogen count"),
        ):
            if len(values) and (values.min() < 0 or values.max() > upper):
                raise FeatureOutOfRange(f"{label} outside [0, {upper}]")

        context = nd.add(nd.matmul(z, self.store[f"{p}.z.w"]), self.store[f"{p}.z.b"])
        if not len(inputs):
            return context
        rows = nd.add(
            nd.take_rows(self.store[f"{p}.emb.junction"], inputs.junction_ids),
            nd.take_rows(self.store[f"{p}.emb.case"], inputs.cases),
        )
        if c.use_tree_features:
            rows = nd.add(rows, nd.take_rows(self.store[f"{p}.emb.degree"], inputs.father_degree))
            rows = nd.add(rows, nd.take_rows(self.store[f"{p}.emb.depth"], inputs.depth))
            rows = nd.add(rows, nd.take_rows(self.store[f"{p}.emb.hcount"], inputs.hcount))
        return nd.concat([context, rows], axis=0)

    def dagcn_block(self, H: Tensor, M: np.ndarray, layer: int) -> Tensor:
        if M.shape != (H.shape[0], H.shape[0]):
            raise ShapeMismatch(f"masked adjacency {M.shape} for {H.shape[0]} rows")
        name = f"{self.prefix}.l{layer}.dagcn"
        K = nd.add(nd.Tensor(np.eye(M.shape[0])), nd.mul(self.store[f"{name}.theta"], nd.Tensor(dagcn_operator(M))))
        return nd.gelu(nd.matmul(nd.matmul(K, H), self.store[f"{name}.w"]))

    def masked_attn_block(self, H: Tensor, layer: int) -> Tensor:
        name = f"{self.prefix}.l{layer}.attn"
        mask = nd.Tensor(causal_mask(H.shape[0]))
        q = nd.matmul(H, self.store[f"{name}.wq"])
        k = nd.matmul(H, self.store[f"{name}.wk"])
        v = nd.matmul(H, self.store[f"{name}.wv"])
        return attention(q, k, v, self.config.heads, [mask] * self.config.heads)

    def decoder_layer(self, H: Tensor, M: np.ndarray, layer: int) -> Tensor:
        name = f"{self.prefix}.l{layer}"
        x = layer_norm(self.store, f"{name}.ln1", H)
        branches = [self.masked_attn_block(x, layer)]
        if self.config.use_dagcn:
            branches.insert(0, self.dagcn_block(x, M, layer))
        mixed = branches[0] if len(branches) == 1 else nd.concat(branches, axis=1)
        H = nd.add(H, nd.matmul(mixed, self.store[f"{name}.fuse.w"]))
        return nd.add(H, feed_forward(self.store, f"{name}.ffn", layer_norm(self.store, f"{name}.ln2", H)))

    def forward(self, z: Tensor, inputs: DecoderInputs) -> Tuple[Tensor, Tensor]:
        """Junction and position logits for every row (len(inputs) + 1 rows)."""
        p = self.prefix
        H = self.embed(z, inputs)
        M = father_mask(inputs.fathers)
        for layer in range(self.config.layers):
            H = self.decoder_layer(H, M, layer)
        H = layer_norm(self.store, f"{p}.ln_f", H)
        junction = nd.add(
            nd.add(nd.matmul(H, self.store[f"{p}.head.junction.w"]), self.store[f"{p}.head.junction.b"]),
            nd.Tensor(self.junction_mask),
        )
        position = nd.add(nd.matmul(H, self.store[f"{p}.head.position.w"]), self.store[f"{p}.head.position.b"])
        return junction, position

    def aux_predict(self, z: Tensor) -> Tensor:
        return nd.add(nd.matmul(z, self.store[f"{self.prefix}.aux.w"]), self.store[f"{self.prefix}.aux.b"])


class Autoencoder:
    """Encoder, decoder and auxiliary head sharing one parameter store."""

    def __init__(self, encoder: Encoder, decoder: Decoder, vocab: Vocabulary, weights=(1.0, 1.0, 0.2)):
        if encoder.config.hidden != decoder.config.hidden:
            raise ConfigError("encoder and decoder hidden widths differ")
        self.encoder = encoder
        self.decoder = decoder
        self.vocab = vocab
        self.store = encoder.store
        self.alpha, self.beta, self.delta = weights
        self.aux_mean = np.zeros(decoder.config.n_aux)
        self.aux_std = np.ones(decoder.config.n_aux)
        self.hcount_table = np.zeros(len(vocab), dtype=np.int64)
        for junction_id in vocab.fragment_ids:
            fragment = vocab.junction(junction_id).fragment
            self.hcount_table[junction_id] = sum(fragment.hydrogen_count(i) for i in range(len(fragment)))

    # ---- Teacher forcing ----

    def decoder_inputs(self, seq: TokenSeq) -> DecoderInputs:
        return insertion_features(seq.ids, seq.cases, self.hcount_table)

    def standardize(self, targets: np.ndarray) -> np.ndarray:
        return (np.asarray(targets) - self.aux_mean) / self.aux_std

    def loss(self, batch: Sequence) -> LossParts:
        """Mean over the batch of alpha*CE_pos + beta*CE_junc + delta*MSE_aux."""
        if not batch:
            raise ValueError("empty batch")
        totals = []
        parts = np.zeros(3)
        for example in batch:
            z = self.encoder.encode(example.features, example.adjacency)
            inputs = self.decoder_inputs(example.seq)
            junction_logits, position_logits = self.decoder.forward(z, inputs)
            n = len(inputs)

            junction_targets = np.append(inputs.junction_ids, EOS_ID)
            ce_junction = nd.cross_entropy(junction_logits, junction_targets)
            position_targets = np.append(inputs.cases, 0)
            position_mask = np.zeros(n + 1)
            position_mask[1:n] = 1.0
            ce_position = nd.cross_entropy(position_logits, position_targets, position_mask)
            aux = nd.mse(self.decoder.aux_predict(z), nd.Tensor(self.standardize(example.props)[None, :]))

            total = nd.add(nd.add(nd.mul(ce_position, self.alpha), nd.mul(ce_junction, self.beta)), nd.mul(aux, self.delta))
            totals.append(total)
            parts += (ce_position.item(), ce_junction.item(), aux.item())

        loss = totals[0]
        for total in totals[1:]:
            loss = nd.add(loss, total)
        loss = nd.mul(loss, 1.0 / len(batch))
        parts /= len(batch)
        return LossParts(loss, float(parts[0]), float(parts[1]), float(parts[2]))

    def teacher_forced_accuracy(self, batch: Sequence) -> float:
        correct = total = 0
        with nd.no_grad():
            for example in batch:
                z = self.encoder.encode(example.features, example.adjacency)
                inputs = self.decoder_inputs(example.seq)
                junction_logits, position_logits = self.decoder.forward(z, inputs)
                n = len(inputs)
                targets = np.append(inputs.junction_ids, EOS_ID)
                correct += int((junction_logits.data.argmax(axis=1) == targets).sum())
                total += n + 1
                if n > 1:
                    predicted = position_logits.data[1:n].argmax(axis=1)
                    correct += int((predicted == inputs.cases[1:n]).sum())
                    total += n - 1
        return correct / total if total else 0.0

    # ---- Inference ----

    def encode(self, example) -> np.ndarray:
        with nd.no_grad():
            return self.encoder.encode(example.features, example.adjacency).data[0].copy()

    def decode_step(self, z: np.ndarray, prefix: TokenSeq) -> Tuple[np.ndarray, np.ndarray]:
        """Distributions over junction ids (incl. [EOS]) and position cases for the next node."""
        with nd.no_grad():
            inputs = self.decoder_inputs(prefix)
            junction_logits, position_logits = self.decoder.forward(nd.Tensor(np.asarray(z)[None, :]), inputs)
        row = len(inputs)
        junction = junction_logits.data[row].astype(np.float64)
        if row == 0:
            junction[EOS_ID] = NEG_INF
        position = position_logits.data[row].astype(np.float64)
        allowed = self._allowed_cases(inputs, row)
        blocked = np.ones_like(position, dtype=bool)
        blocked[allowed] = False
        position[blocked] = NEG_INF
        return _softmax(junction), _softmax(position)

    def _allowed_cases(self, inputs: DecoderInputs, row: int) -> List[int]:
        if row == 0:
            return [0]
        c = self.decoder.config
        degree = np.zeros(row, dtype=np.int64)
        for k, father in enumerate(inputs.fathers):
            if father is not None:
                degree[father] += 1
                degree[k] += 1
        allowed = []
        for case in feasible_cases(inputs.fathers, row, c.alphabet_size):
            father = resolve_father(inputs.fathers, row, case)
            if degree[father] + 1 <= c.max_degree and inputs.depth[father] + 1 <= c.max_depth:
                allowed.append(case)
        return allowed

    def generate(
        self,
        z: np.ndarray,
        max_len: int,
        temperature: float = 0.0,
        rng: Optional[np.random.Generator] = None,
    ) -> TokenSeq:
        """Greedy (temperature 0) or sampled autoregressive generation."""
        items: List[Token] = []
        for step in range(max_len + 1):
            if step == max_len:
                logger.debug(MaxLenExceeded(f"generation reached max_len={max_len}"))
                return TokenSeq(items=tuple(items), terminated=True, truncated=True)
            prefix = TokenSeq(items=tuple(items), terminated=False)
            p_junction, p_position = self.decode_step(z, prefix)
            if step and not self._allowed_cases(self.decoder_inputs(prefix), step):
                break
            junction_id = _choose(p_junction, temperature, rng)
            if junction_id == EOS_ID:
                break
            case = 0 if step == 0 else _choose(p_position, temperature, rng)
            items.append(Token(int(junction_id), int(case)))
        return TokenSeq(items=tuple(items))

    # ---- Checkpoint ----

    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays = dict(self.store.arrays())
        arrays["dec.aux.stats"] = np.stack([self.aux_mean, self.aux_std])
        return arrays

    def load_state(self, arrays: Dict[str, np.ndarray]):
        self.store.load_arrays(arrays)
        stats = arrays.get("dec.aux.stats")
        if stats is not None:
            self.aux_mean, self.aux_std = stats[0].astype(np.float64), stats[1].astype(np.float64)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def _choose(probs: np.ndarray, temperature: float, rng: Optional[np.random.Generator]) -> int:
    if temperature <= 0 or rng is None:
        return int(np.argmax(probs))
    logits = np.log(np.maximum(probs, 1e-300)) / temperature
    return int(rng.choice(len(probs), p=_softmax(logits)))
