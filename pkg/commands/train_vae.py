import argparse
import logging

from commands import common_options
from commands.pipeline import build_autoencoder, train_autoencoder
from core.dataset import prepare_examples
from core.jtree import Vocabulary
from utils.helpers import prepare_output, read_property_cache, read_smiles_file, require_artifact, seed_everything
from utils.models import RunConfig

logger = logging.getLogger(__name__)


def run(args: argparse.Namespace, config: RunConfig) -> int:
    checkpoint = prepare_output(config.paths.checkpoint, args.overwrite)
    seed_everything(config.run.seed)
    vocab = Vocabulary.load(require_artifact(config.paths.vocab, "vocabulary"))
    cache = read_property_cache(config.paths.property_cache) if config.paths.property_cache else None
    examples, _ = prepare_examples(read_smiles_file(config.paths.dataset), vocab, config.model.alphabet_size, cache)

    model = build_autoencoder(config, vocab, config.run.seed)
    logger.info(f"Training on {len(examples)} molecules, {model.store.count()} parameters")
    history = train_autoencoder(model, examples, config.training, config.run.seed, checkpoint=checkpoint)
    logger.info(f"Final loss {history[-1]:.4f}; checkpoint at {checkpoint}")
    return 0


def register(subparsers):
    parser = subparsers.add_parser("train-vae", parents=[common_options()], help="teacher-forced autoencoder training")
    parser.set_defaults(func=run)
