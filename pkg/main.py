import argparse
import logging
import sys

from commands import embed, evaluate, interpolate, neighbors, project, sample, train_diffusion, train_vae, vocab
from core.errors import ConfigError, JTreeKitError
from utils.config import load_config

# Global logging configuration (applies to all modules)
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    datefmt='%Y-%m-%d %H:%M:%S'
)
logger = logging.getLogger(__name__)

RUNTIME_FAILURE = 3


class CommandParser(argparse.ArgumentParser):
    """Usage errors surface as ConfigError instead of exiting with argparse's own code."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = CommandParser(
        prog="jtreekit",
        description="Junction-tree autoencoder with latent diffusion for molecule generation",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Include all subcommands
    vocab.register(subparsers)
    train_vae.register(subparsers)
    embed.register(subparsers)
    train_diffusion.register(subparsers)
    sample.register(subparsers)
    evaluate.register(subparsers)
    interpolate.register(subparsers)
    neighbors.register(subparsers)
    project.register(subparsers)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        config = load_config(args.config, seed=args.seed, workers=args.workers)
        return args.func(args, config)
    except JTreeKitError as exc:
        logger.error(exc)
        code, message = getattr(exc, "exit_code", RUNTIME_FAILURE), str(exc)
    except Exception as exc:
        logger.exception(exc)
        code, message = RUNTIME_FAILURE, str(exc)
    print(f"E{code}: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
