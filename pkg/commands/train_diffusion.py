import argparse
import logging

from commands import common_options
from commands.pipeline import load_latents
from core import ndtensor as nd
from core.latentdiff import train_diffusion
from utils.helpers import prepare_output, seed_everything
from utils.models import RunConfig

logger = logging.getLogger(__name__)


def run(args: argparse.Namespace, config: RunConfig) -> int:
    output = prepare_output(config.paths.diffusion, args.overwrite)
    seed_everything(config.run.seed)
    latents, _ = load_latents(config.paths.latents)
    model, history = train_diffusion(
        latents,
        config.diffusion,
        seed=config.run.seed,
        grad_clip=config.training.grad_clip,
        progress=True,
    )
    nd.save_container(output, model.state_arrays(), {"kind": "diffusion", **model.meta()})
    logger.info(f"Diffusion loss {history[0]:.4f} -> {history[-1]:.4f}; weights at {output}")
    return 0


def register(subparsers):
    parser = subparsers.add_parser("train-diffusion", parents=[common_options()], help="fit the latent diffusion model")
    parser.set_defaults(func=run)
