import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from core.dataset import prepare_examples  # noqa: E402
from core.jtree import build_vocab, decompose  # noqa: E402
from core.smiles import parse_smiles  # noqa: E402
from utils.models import ModelConfig, RunConfig, TrainingConfig  # noqa: E402

DATA = Path(__file__).parent / "data"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running fuzz and training checks")


def read_fixture():
    lines = (DATA / "fixture.smi").read_text().splitlines()
    return [line.strip() for line in lines if line.strip() and not line.startswith("#")]


@pytest.fixture(scope="session")
def fixture_smiles():
    return read_fixture()


@pytest.fixture(scope="session")
def fixture_mols(fixture_smiles):
    return [parse_smiles(s) for s in fixture_smiles]


@pytest.fixture(scope="session")
def fixture_trees(fixture_mols):
    return [decompose(g) for g in fixture_mols]


@pytest.fixture(scope="session")
def vocab(fixture_mols):
    return build_vocab(fixture_mols)


@pytest.fixture(scope="session")
def examples(fixture_smiles, vocab):
    prepared, skipped = prepare_examples(fixture_smiles, vocab)
    assert not skipped
    return prepared


@pytest.fixture
def tiny_config():
    return RunConfig(
        model=ModelConfig(layers=1, decoder_layers=1, hidden=16, heads=2, ffn=32, max_len=24),
        training=TrainingConfig(epochs=1, batch_size=4, lr=1e-2, warmup_steps=0),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
