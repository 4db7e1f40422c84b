import argparse
import logging

import numpy as np

from commands import common_options
from commands.pipeline import embed_examples, load_autoencoder, save_latents
from core.dataset import prepare_examples
from core.jtree import Vocabulary
from utils.helpers import prepare_output, read_property_cache, read_smiles_file, require_artifact
from utils.models import RunConfig

logger = logging.getLogger(__name__)


def run(args: argparse.Namespace, config: RunConfig) -> int:
    output = prepare_output(config.paths.latents, args.overwrite)
    vocab = Vocabulary.load(require_artifact(config.paths.vocab, "vocabulary"))
    model = load_autoencoder(config, vocab)
    cache = read_property_cache(config.paths.property_cache) if config.paths.property_cache else None
    examples, _ = prepare_examples(read_smiles_file(config.paths.dataset), vocab, config.model.alphabet_size, cache)

    latents = embed_examples(model, examples)
    save_latents(output, latents, np.stack([e.props for e in examples]))
    logger.info(f"Wrote {len(latents)} latents of width {latents.shape[1]} to {output}")
    return 0


def register(subparsers):
    parser = subparsers.add_parser("embed", parents=[common_options()], help="encode the corpus into a latent dump")
    parser.set_defaults(func=run)
