import logging
import random
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd
from tqdm import tqdm

from core.errors import ArtifactExists, MissingArtifact

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def seed_everything(seed: int) -> np.random.Generator:
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    return np.random.default_rng(seed)


def learning_rate(step: int, base_lr: float, warmup_steps: int, decay_rate: float) -> float:
    """Linear warmup to `base_lr`, then per-step exponential decay."""
    if warmup_steps and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    return base_lr * decay_rate ** (step - warmup_steps)


# ------------------------------------------------------------------
# Files
# ------------------------------------------------------------------

def require_artifact(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"{what} not found at {path}")
    return path


def prepare_output(path, overwrite: bool) -> Path:
    """Outputs are write-once unless `overwrite` is set."""
    path = Path(path)
    if path.exists() and not overwrite:
        raise ArtifactExists(f"{path} already exists; pass --overwrite to replace it")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def read_smiles_file(path) -> List[str]:
    """One SMILES per line; blank lines and `#` comments are skipped, extra columns ignored."""
    path = require_artifact(path, "SMILES file")
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        out.append(line.split()[0])
    return out


def write_samples(path, samples: Sequence[Tuple[Optional[str], bool]], comments: Sequence[str] = ()):
    """One line per sample: SMILES, SMILES<TAB>partial, or blank for a failure; trailing `#` comments."""
    lines = [("" if s is None else s + ("\tpartial" if is_partial else "")) for s, is_partial in samples]
    lines += [f"# {c}" for c in comments]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_samples(path) -> List[Tuple[Optional[str], bool]]:
    text = require_artifact(path, "sample file").read_text(encoding="utf-8")
    samples = []
    for line in text.splitlines():
        if line.startswith("#"):
            continue
        fields = line.strip().split("\t")
        smiles = fields[0] or None
        samples.append((smiles, smiles is not None and "partial" in fields[1:]))
    return samples


def read_property_cache(path) -> Dict[str, Tuple[float, float, float]]:
    """CSV with columns smiles, W, logP, TPSA."""
    frame = pd.read_csv(require_artifact(path, "property cache"))
    missing = {"smiles", "W", "logP", "TPSA"} - set(frame.columns)
    if missing:
        raise MissingArtifact(f"property cache {path} lacks columns {sorted(missing)}")
    return {row.smiles: (row.W, row.logP, row.TPSA) for row in frame.itertuples(index=False)}


# ------------------------------------------------------------------
# Workers
# ------------------------------------------------------------------

def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1, desc: Optional[str] = None, progress: bool = True) -> List[R]:
    """Ordered map; a process pool when `workers` > 1."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in tqdm(items, desc=desc, disable=not progress)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(tqdm(pool.map(fn, items), total=len(items), desc=desc, disable=not progress))
