
"""Training examples: molecule -> junction tree -> token sequence and encoder inputs."""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.chemprops import properties
from core.encoder import NodeFeatures, tree_inputs
from core.errors import EmptyDataset, JTreeKitError
from core.jtree import JunctionTree, Vocabulary, decompose
from core.molgraph import MolGraph
from core.seqcodec import TokenSeq, encode
from core.smiles import canonical_smiles, parse_smiles

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TreeExample:
    smiles: str
    mol: MolGraph
    tree: JunctionTree
    seq: TokenSeq
    features: NodeFeatures
    adjacency: np.ndarray
    props: np.ndarray


def make_example(
    smiles: str,
    vocab: Vocabulary,
    alphabet_size: int = 4,
    props: Optional[Sequence[float]] = None,
) -> TreeExample:
    mol = parse_smiles(smiles)
    tree = decompose(mol)
    features, adjacency = tree_inputs(tree, vocab)
    return TreeExample(
        smiles=canonical_smiles(mol),
        mol=mol,
        tree=tree,
        seq=encode(tree, vocab, alphabet_size),
        features=features,
        adjacency=adjacency,
        props=np.asarray(props if props is not None else tuple(properties(mol)), dtype=np.float64),
    )


def prepare_examples(
    smiles_list: Iterable[str],
    vocab: Vocabulary,
    alphabet_size: int = 4,
    cached_props: Optional[dict] = None,
) -> Tuple[List[TreeExample], List[Tuple[str, str]]]:
    """Examples for every usable molecule, plus (smiles, reason) for the skipped ones."""
    examples, skipped = [], []
    for smiles in smiles_list:
        try:
            props = cached_props.get(smiles) if cached_props else None
            examples.append(make_example(smiles, vocab, alphabet_size, props))
        except JTreeKitError as exc:
            logger.error(exc)
            skipped.append((smiles, str(exc)))
    if not examples:
        raise EmptyDataset("No molecule in the dataset could be prepared")
    if skipped:
        logger.warning(f"Skipped {len(skipped)} of {len(examples) + len(skipped)} molecules")
    return examples, skipped


def property_stats(examples: Sequence[TreeExample]) -> Tuple[np.ndarray, np.ndarray]:
    table = np.stack([e.props for e in examples])
    std = table.std(axis=0)
    return table.mean(axis=0), np.where(std > 1e-8, std, 1.0)


def batches(examples: Sequence[TreeExample], batch_size: int, rng: np.random.Generator) -> Iterable[List[TreeExample]]:
    order = rng.permutation(len(examples))
    for start in range(0, len(order), batch_size):
        yield [examples[i] for i in order[start:start + batch_size]]
