import argparse
import logging

import numpy as np

from commands import common_options
from commands.pipeline import decode_latents, load_autoencoder
from core.dataset import make_example
from core.jtree import Vocabulary
from utils.helpers import prepare_output, require_artifact, write_samples
from utils.models import RunConfig

logger = logging.getLogger(__name__)


def run(args: argparse.Namespace, config: RunConfig) -> int:
    vocab = Vocabulary.load(require_artifact(config.paths.vocab, "vocabulary"))
    model = load_autoencoder(config, vocab)
    z = model.encode(make_example(args.smiles, vocab, config.model.alphabet_size))

    rng = np.random.default_rng(config.run.seed)
    latents = z + args.sigma * rng.standard_normal((args.k, len(z)))
    results = decode_latents(model, latents, config, config.run.seed, progress=False)
    samples = [(None, False) if r is None else (r.smiles, r.partial) for r in results]
    for smiles, is_partial in samples:
        print(f"{smiles or ''}{' (partial)' if is_partial else ''}")
    if args.output:
        write_samples(prepare_output(args.output, args.overwrite), samples,
                      comments=[f"center\t{args.smiles}", f"sigma\t{args.sigma}"])
    return 0


def register(subparsers):
    parser = subparsers.add_parser("neighbors", parents=[common_options()], help="decode Gaussian perturbations of a molecule's latent")
    parser.add_argument("smiles", help="centre molecule")
    parser.add_argument("-k", type=int, default=8, help="number of neighbours")
    parser.add_argument("--sigma", type=float, default=0.5, help="perturbation scale")
    parser.add_argument("--output", default=None, help="optional sample file for the neighbours")
    parser.set_defaults(func=run)
