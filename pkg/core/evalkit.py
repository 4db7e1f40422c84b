
"""Generation metrics and latent-space views."""

import logging
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Set, Union

import numpy as np
import pandas as pd

from core.chemprops import fingerprint, properties, tanimoto_matrix
from core.errors import DegenerateData, EmptySet, WidthMismatch
from core.molgraph import MolGraph, is_valid
from core.smiles import canonical_smiles
from utils.models import GenerationReport, MoleculeRecord

logger = logging.getLogger(__name__)

Generated = Union[MolGraph, None]


class Projection(NamedTuple):
    coords: np.ndarray
    explained_variance: float
    components: np.ndarray
    degenerate: bool = False


def _clamp(value: float) -> float:
    return float(min(1.0, max(0.0, value)))


def internal_diversity(graphs: Sequence[MolGraph], p: int = 1) -> float:
    """1 - (mean over all ordered pairs, self-pairs included, of T^p)^(1/p)."""
    if not graphs:
        raise EmptySet("Internal diversity of an empty set")
    sims = tanimoto_matrix([fingerprint(g) for g in graphs])
    return _clamp(1.0 - float(np.mean(sims ** p)) ** (1.0 / p))


def evaluate(
    generated: Sequence[Generated],
    train_set: Set[str],
    partial: Optional[Sequence[bool]] = None,
    unique_at: Optional[int] = None,
) -> GenerationReport:
    """Valid, Unique, Novelty and IntDiv over a sample; `None` entries are failures."""
    if not generated:
        raise EmptySet("No generated molecules to evaluate")
    partial = list(partial) if partial is not None else [False] * len(generated)

    records: List[MoleculeRecord] = []
    valid: List[MolGraph] = []
    canon: List[str] = []
    for index, (g, is_partial) in enumerate(zip(generated, partial)):
        if g is None or is_partial or not is_valid(g):
            smiles = canonical_smiles(g) if g is not None and len(g) else None
            records.append(MoleculeRecord(index=index, smiles=smiles, valid=False, partial=is_partial))
            continue
        smiles = canonical_smiles(g)
        props = properties(g)
        records.append(MoleculeRecord(index=index, smiles=smiles, valid=True, W=props.W, logP=props.logP, TPSA=props.TPSA))
        valid.append(g)
        canon.append(smiles)

    unique = sorted(set(canon))
    unique_at_k = None
    if unique_at is not None:
        head = canon[:unique_at]
        unique_at_k = _clamp(len(set(head)) / len(head)) if head else 0.0

    report = GenerationReport(
        n_requested=len(generated),
        n_valid=len(valid),
        valid_fraction=_clamp(len(valid) / len(generated)),
        unique_fraction=_clamp(len(unique) / len(valid)) if valid else 0.0,
        novelty_fraction=_clamp(sum(1 for s in unique if s not in train_set) / len(unique)) if unique else 0.0,
        intdiv1=internal_diversity(valid, 1) if valid else 0.0,
        intdiv2=internal_diversity(valid, 2) if valid else 0.0,
        unique_at_k=unique_at_k,
        records=records,
    )
    logger.info(
        f"Evaluated {report.n_requested} samples: valid {report.valid_fraction:.3f}, "
        f"unique {report.unique_fraction:.3f}, novelty {report.novelty_fraction:.3f}"
    )
    return report


# ------------------------------------------------------------------
# Latent space
# ------------------------------------------------------------------

def _top_direction(cov: np.ndarray, rng: np.random.Generator, iterations: int = 500, tol: float = 1e-12) -> np.ndarray:
    v = rng.standard_normal(cov.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(iterations):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm < tol:
            return v
        w /= norm
        if np.linalg.norm(w - v) < 1e-12:
            return w
        v = w
    return v


def pca2d(latents: np.ndarray, seed: int = 0) -> Projection:
    """Project onto the top two principal directions found by power iteration with deflation."""
    X = np.asarray(latents, dtype=np.float64)
    if X.ndim != 2 or len(X) < 3:
        raise DegenerateData("PCA needs at least three latent vectors")
    X = X - X.mean(axis=0)
    cov = X.T @ X / (len(X) - 1)
    total = float(np.trace(cov))
    if total <= 1e-15:
        raise DegenerateData("Latent vectors are all identical")

    rng = np.random.default_rng(seed)
    first = _top_direction(cov, rng)
    lam1 = float(first @ cov @ first)
    deflated = cov - lam1 * np.outer(first, first)
    second = _top_direction(deflated, rng)
    second -= (second @ first) * first
    norm = np.linalg.norm(second)
    lam2 = float(second @ cov @ second) / norm ** 2 if norm > 1e-12 else 0.0

    degenerate = lam2 <= 1e-12 * total
    if degenerate:
        logger.warning("Latents have rank < 2; second projection axis is zero")
        second = np.zeros_like(first)
        lam2 = 0.0
    else:
        second /= norm
    # fix the sign so that projections are reproducible
    for axis in (first, second):
        pivot = np.argmax(np.abs(axis))
        if axis[pivot] < 0:
            axis *= -1.0

    components = np.stack([first, second])
    return Projection(
        coords=X @ components.T,
        explained_variance=(lam1 + lam2) / total,
        components=components,
        degenerate=degenerate,
    )


def interpolate(z_a: np.ndarray, z_b: np.ndarray, k: int = 4) -> List[np.ndarray]:
    z_a, z_b = np.asarray(z_a, dtype=np.float64), np.asarray(z_b, dtype=np.float64)
    if z_a.shape != z_b.shape:
        raise WidthMismatch(f"latents of shape {z_a.shape} and {z_b.shape}")
    return [z_a + (i / (k + 1)) * (z_b - z_a) for i in range(1, k + 1)]


# ------------------------------------------------------------------
# Files
# ------------------------------------------------------------------

def write_report(report: GenerationReport, path: Path, molecules_path: Optional[Path] = None):
    """`metric<TAB>value` lines, plus the per-molecule CSV."""
    metrics = [
        ("n_requested", report.n_requested),
        ("n_valid", report.n_valid),
        ("valid", report.valid_fraction),
        ("unique", report.unique_fraction),
        ("novelty", report.novelty_fraction),
        ("intdiv1", report.intdiv1),
        ("intdiv2", report.intdiv2),
    ]
    if report.unique_at_k is not None:
        metrics.append(("unique_at_k", report.unique_at_k))
    Path(path).write_text("".join(f"{name}\t{value}\n" for name, value in metrics), encoding="utf-8")

    molecules_path = Path(molecules_path) if molecules_path else Path(path).with_suffix(".csv")
    pd.DataFrame([r.model_dump() for r in report.records]).to_csv(molecules_path, index=False)
    return molecules_path


def write_projection(projection: Projection, labels: Iterable, path: Path):
    frame = pd.DataFrame({
        "x": projection.coords[:, 0],
        "y": projection.coords[:, 1],
        "label": list(labels),
    })
    frame.to_csv(path, index=False)
