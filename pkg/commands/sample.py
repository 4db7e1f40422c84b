import argparse
import logging

import numpy as np

from commands import common_options
from commands.pipeline import decode_latents, load_autoencoder, load_latents
from core import ndtensor as nd
from core.errors import ConfigError
from core.jtree import Vocabulary
from core.latentdiff import LatentDiffusion
from utils.helpers import prepare_output, require_artifact, seed_everything, write_samples
from utils.models import RunConfig

logger = logging.getLogger(__name__)


def draw_latents(config: RunConfig, n: int, seed: int, no_diffusion: bool) -> np.ndarray:
    if no_diffusion:
        latents, _ = load_latents(config.paths.latents)
        std = latents.std(axis=0)
        rng = np.random.default_rng(seed)
        return latents.mean(axis=0) + rng.standard_normal((n, latents.shape[1])) * np.where(std > 1e-8, std, 1.0)

    arrays, meta = nd.load_container(require_artifact(config.paths.diffusion, "diffusion weights"))
    if meta.get("kind") != "diffusion":
        raise ConfigError(f"{config.paths.diffusion} is not a diffusion checkpoint")
    model = LatentDiffusion.from_state(arrays, meta)
    return model.sample(n, min(config.diffusion.steps, model.schedule.T), config.diffusion.eta, seed)


def run(args: argparse.Namespace, config: RunConfig) -> int:
    output = prepare_output(args.output or config.paths.samples, args.overwrite)
    seed_everything(config.run.seed)
    n = args.n or config.run.n_samples
    vocab = Vocabulary.load(require_artifact(config.paths.vocab, "vocabulary"))
    model = load_autoencoder(config, vocab)

    latents = draw_latents(config, n, config.run.seed, args.no_diffusion)
    results = decode_latents(model, latents, config, config.run.seed)

    samples = [(None, False) if r is None else (r.smiles, r.partial) for r in results]
    complete = sum(1 for r in results if r is not None and not r.partial)
    partial = sum(1 for r in results if r is not None and r.partial)
    write_samples(output, samples, comments=[
        f"requested\t{n}",
        f"complete\t{complete}",
        f"partial\t{partial}",
        f"failed\t{n - complete - partial}",
        f"seed\t{config.run.seed}",
        f"source\t{'gaussian' if args.no_diffusion else 'diffusion'}",
    ])
    logger.info(f"Wrote {n} samples ({complete} complete) to {output}")
    return 0


def register(subparsers):
    parser = subparsers.add_parser("sample", parents=[common_options()], help="generate molecules")
    parser.add_argument("-n", type=int, default=None, help="number of molecules (default: [run] n_samples)")
    parser.add_argument("--output", default=None, help="sample file (default: [paths] samples)")
    parser.add_argument("--no-diffusion", action="store_true", help="draw latents from a Gaussian fitted to the latent dump")
    parser.set_defaults(func=run)
