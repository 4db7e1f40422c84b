import argparse
import logging

from commands import common_options
from core.errors import JTreeKitError
from core.evalkit import evaluate, write_report
from core.smiles import canonical_smiles, parse_smiles
from utils.helpers import prepare_output, read_samples, read_smiles_file
from utils.models import RunConfig

logger = logging.getLogger(__name__)


def _parse(smiles):
    if smiles is None:
        return None
    try:
        return parse_smiles(smiles)
    except JTreeKitError as exc:
        logger.error(f"{smiles}: {exc}")
        return None


def training_set(path) -> set:
    canon = set()
    for smiles in read_smiles_file(path):
        g = _parse(smiles)
        if g is not None:
            canon.add(canonical_smiles(g))
    return canon


def run(args: argparse.Namespace, config: RunConfig) -> int:
    output = prepare_output(args.output or config.paths.report, args.overwrite)
    samples = read_samples(args.samples or config.paths.samples)
    generated = [_parse(smiles) for smiles, _ in samples]
    report = evaluate(
        generated,
        training_set(config.paths.dataset),
        partial=[is_partial for _, is_partial in samples],
        unique_at=args.unique_at or config.run.unique_at,
    )
    molecules = write_report(report, output)
    print(f"valid\t{report.valid_fraction:.4f}")
    print(f"unique\t{report.unique_fraction:.4f}")
    print(f"novelty\t{report.novelty_fraction:.4f}")
    print(f"intdiv1\t{report.intdiv1:.4f}")
    print(f"intdiv2\t{report.intdiv2:.4f}")
    logger.info(f"Report at {output}, per-molecule table at {molecules}")
    return 0


def register(subparsers):
    parser = subparsers.add_parser("eval", parents=[common_options()], help="score a sample file against the training set")
    parser.add_argument("--samples", default=None, help="sample file (default: [paths] samples)")
    parser.add_argument("--output", default=None, help="report file (default: [paths] report)")
    parser.add_argument("--unique-at", type=int, default=None, help="also report uniqueness of the first k valid samples")
    parser.set_defaults(func=run)
