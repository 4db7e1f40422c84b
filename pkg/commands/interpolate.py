import argparse
import logging

import numpy as np

from commands import common_options
from commands.pipeline import decode_latents, load_autoencoder
from core.dataset import make_example
from core.evalkit import interpolate
from core.jtree import Vocabulary
from utils.helpers import prepare_output, require_artifact, write_samples
from utils.models import RunConfig

logger = logging.getLogger(__name__)


def run(args: argparse.Namespace, config: RunConfig) -> int:
    vocab = Vocabulary.load(require_artifact(config.paths.vocab, "vocabulary"))
    model = load_autoencoder(config, vocab)
    z_a = model.encode(make_example(args.start, vocab, config.model.alphabet_size))
    z_b = model.encode(make_example(args.end, vocab, config.model.alphabet_size))

    latents = np.stack(interpolate(z_a, z_b, args.k))
    results = decode_latents(model, latents, config, config.run.seed, progress=False)
    samples = [(None, False) if r is None else (r.smiles, r.partial) for r in results]
    for i, (smiles, is_partial) in enumerate(samples, start=1):
        print(f"{i / (args.k + 1):.3f}\t{smiles or ''}{' (partial)' if is_partial else ''}")
    if args.output:
        write_samples(prepare_output(args.output, args.overwrite), samples,
                      comments=[f"start\t{args.start}", f"end\t{args.end}"])
    return 0


def register(subparsers):
    parser = subparsers.add_parser("interpolate", parents=[common_options()], help="decode points between two molecules")
    parser.add_argument("start", help="first SMILES")
    parser.add_argument("end", help="second SMILES")
    parser.add_argument("-k", type=int, default=4, help="number of interpolants")
    parser.add_argument("--output", default=None, help="optional sample file for the interpolants")
    parser.set_defaults(func=run)
