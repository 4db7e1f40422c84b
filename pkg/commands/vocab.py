import argparse
import logging

from commands import common_options
from core.errors import JTreeKitError
from core.jtree import decompose, vocab_from_trees
from core.seqcodec import alphabet_coverage, required_alphabet
from core.smiles import parse_smiles
from utils.helpers import parallel_map, prepare_output, read_smiles_file
from utils.models import RunConfig

logger = logging.getLogger(__name__)


def _tree(smiles: str):
    try:
        return decompose(parse_smiles(smiles))
    except JTreeKitError as exc:
        logger.error(f"{smiles}: {exc}")
        return None


def run(args: argparse.Namespace, config: RunConfig) -> int:
    output = prepare_output(config.paths.vocab, args.overwrite)
    smiles = read_smiles_file(config.paths.dataset)
    trees = [t for t in parallel_map(_tree, smiles, workers=config.run.workers, desc="decompose") if t is not None]
    vocab = vocab_from_trees(trees)
    vocab.save(output)

    coverage = alphabet_coverage(trees, config.model.alphabet_size)
    logger.info(f"Vocabulary of {len(vocab) - 3} fragments written to {output}")
    if coverage.fraction < 1.0:
        logger.warning(
            f"alphabet_size={config.model.alphabet_size} encodes {coverage.fraction:.4f} of trees; "
            f"{required_alphabet(trees)} would encode all of them"
        )
    return 0


def register(subparsers):
    parser = subparsers.add_parser("vocab", parents=[common_options()], help="build the fragment vocabulary")
    parser.set_defaults(func=run)
