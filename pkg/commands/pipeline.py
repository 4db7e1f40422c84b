
"""Model plumbing shared by the subcommands: build, train, checkpoint, decode."""

import logging
from functools import partial
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from core import ndtensor as nd
from core.assembler import AssemblyResult, ScoreWeights, mcts_assemble
from core.dataset import TreeExample, batches, property_stats
from core.decoder import Autoencoder, Decoder
from core.encoder import Encoder
from core.errors import ConfigError, JTreeKitError
from core.jtree import Vocabulary
from core.ndtensor import ParamStore
from core.seqcodec import decode
from utils.helpers import learning_rate, parallel_map, require_artifact
from utils.models import RunConfig, TrainingConfig

logger = logging.getLogger(__name__)


def build_autoencoder(config: RunConfig, vocab: Vocabulary, seed: int) -> Autoencoder:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    encoder = Encoder(config.model.encoder_config(len(vocab)), store, rng)
    decoder = Decoder(config.model.decoder_config(len(vocab)), store, rng)
    t = config.training
    return Autoencoder(encoder, decoder, vocab, weights=(t.alpha, t.beta, t.delta))


def save_autoencoder(model: Autoencoder, path: Path, epoch: int):
    meta = {
        "kind": "autoencoder",
        "epoch": str(epoch),
        "vocab_size": str(len(model.vocab)),
        "hidden": str(model.encoder.config.hidden),
        "alphabet_size": str(model.decoder.config.alphabet_size),
    }
    nd.save_container(path, model.state_arrays(), meta)


def load_autoencoder(config: RunConfig, vocab: Vocabulary) -> Autoencoder:
    path = require_artifact(config.paths.checkpoint, "autoencoder checkpoint")
    arrays, meta = nd.load_container(path)
    if meta.get("kind") != "autoencoder":
        raise ConfigError(f"{path} is not an autoencoder checkpoint")
    if int(meta.get("vocab_size", -1)) != len(vocab):
        raise ConfigError(f"{path} was trained with {meta.get('vocab_size')} tokens, vocabulary has {len(vocab)}")
    model = build_autoencoder(config, vocab, seed=0)
    model.load_state(arrays)
    logger.info(f"Loaded autoencoder from {path} (epoch {meta.get('epoch')})")
    return model


def train_autoencoder(
    model: Autoencoder,
    examples: Sequence[TreeExample],
    config: TrainingConfig,
    seed: int,
    checkpoint: Optional[Path] = None,
    progress: bool = True,
) -> List[float]:
    """Teacher-forced training with warmup then exponential decay; returns per-epoch mean losses."""
    model.aux_mean, model.aux_std = property_stats(examples)
    rng = np.random.default_rng(seed)
    steps_per_epoch = int(np.ceil(len(examples) / config.batch_size))
    warmup = steps_per_epoch if config.warmup_steps is None else config.warmup_steps
    store = model.store

    history = []
    for epoch in range(config.epochs):
        losses = []
        bar = tqdm(batches(examples, config.batch_size, rng), total=steps_per_epoch,
                   desc=f"epoch {epoch + 1}", disable=not progress)
        for batch in bar:
            store.zero_grad()
            parts = model.loss(batch)
            parts.total.backward()
            nd.clip_grad_norm(store, config.grad_clip)
            nd.adam_step(store, learning_rate(store.step, config.lr, warmup, config.decay_rate))
            losses.append(parts.total.item())
            bar.set_postfix(pos=f"{parts.position:.3f}", junc=f"{parts.junction:.3f}", aux=f"{parts.aux:.3f}")
        history.append(float(np.mean(losses)))
        accuracy = model.teacher_forced_accuracy(examples)
        logger.info(f"Epoch {epoch + 1}/{config.epochs}: loss {history[-1]:.4f}, token accuracy {accuracy:.3f}")
        if checkpoint is not None:
            save_autoencoder(model, checkpoint, epoch + 1)
    return history


def embed_examples(model: Autoencoder, examples: Sequence[TreeExample], progress: bool = True) -> np.ndarray:
    return np.stack([model.encode(e) for e in tqdm(examples, desc="embed", disable=not progress)])


def save_latents(path: Path, latents: np.ndarray, props: np.ndarray):
    nd.save_container(path, {"latents": latents, "props": props}, {"kind": "latents", "count": str(len(latents))})


def load_latents(path) -> Tuple[np.ndarray, np.ndarray]:
    arrays, meta = nd.load_container(require_artifact(path, "latent dump"))
    if meta.get("kind") != "latents":
        raise ConfigError(f"{path} is not a latent dump")
    return arrays["latents"].astype(np.float64), arrays["props"].astype(np.float64)


def decode_latent(
    model: Autoencoder,
    weights: ScoreWeights,
    budget: int,
    max_len: int,
    temperature: float,
    job: Tuple[np.ndarray, int],
) -> Optional[AssemblyResult]:
    """Latent -> token sequence -> junction tree -> molecule; None on failure."""
    z, seed = job
    try:
        seq = model.generate(z, max_len, temperature, np.random.default_rng(seed))
        if not seq.items:
            logger.warning("Decoder emitted [EOS] before any junction")
            return None
        return mcts_assemble(decode(seq, model.vocab), weights, budget, seed)
    except JTreeKitError as exc:
        logger.error(exc)
        return None


def decode_latents(
    model: Autoencoder,
    latents: np.ndarray,
    config: RunConfig,
    seed: int,
    weights: Optional[ScoreWeights] = None,
    progress: bool = True,
) -> List[Optional[AssemblyResult]]:
    weights = weights or ScoreWeights.from_config(config.assembly)
    fn = partial(decode_latent, model, weights, config.assembly.budget, config.model.max_len, config.run.temperature)
    jobs = [(np.asarray(z), seed + i) for i, z in enumerate(latents)]
    return parallel_map(fn, jobs, workers=config.run.workers, desc="decode", progress=progress)
