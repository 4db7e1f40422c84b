import argparse
import logging

from commands import common_options
from commands.pipeline import load_latents
from core.evalkit import pca2d, write_projection
from utils.helpers import prepare_output
from utils.models import RunConfig

logger = logging.getLogger(__name__)

COLOURS = {"W": 0, "logP": 1, "TPSA": 2}


def run(args: argparse.Namespace, config: RunConfig) -> int:
    output = prepare_output(args.output, args.overwrite)
    latents, props = load_latents(config.paths.latents)
    projection = pca2d(latents, seed=config.run.seed)
    write_projection(projection, props[:, COLOURS[args.colour]], output)
    logger.info(f"Projected {len(latents)} latents, explained variance {projection.explained_variance:.3f}")
    return 0


def register(subparsers):
    parser = subparsers.add_parser("project", parents=[common_options()], help="2-D PCA projection of the latent dump")
    parser.add_argument("--colour", choices=sorted(COLOURS), default="logP", help="property used as the label column")
    parser.add_argument("--output", default="artifacts/projection.csv", help="x,y,label CSV")
    parser.set_defaults(func=run)
