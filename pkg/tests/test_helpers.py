import numpy as np
import pytest

from core.errors import ArtifactExists, MissingArtifact
from utils.helpers import (
    learning_rate,
    parallel_map,
    prepare_output,
    read_property_cache,
    read_samples,
    read_smiles_file,
    require_artifact,
    seed_everything,
    write_samples,
)


def test_learning_rate_schedule():
    assert learning_rate(0, 1.0, 4, 0.5) == pytest.approx(0.25)
    assert learning_rate(3, 1.0, 4, 0.5) == pytest.approx(1.0)
    assert learning_rate(4, 1.0, 4, 0.5) == pytest.approx(1.0)
    assert learning_rate(6, 1.0, 4, 0.5) == pytest.approx(0.25)
    assert learning_rate(0, 2.0, 0, 0.9) == pytest.approx(2.0)


def test_outputs_are_write_once(tmp_path):
    path = tmp_path / "nested" / "out.txt"
    assert prepare_output(path, overwrite=False) == path
    assert path.parent.is_dir()
    path.write_text("x")
    with pytest.raises(ArtifactExists) as info:
        prepare_output(path, overwrite=False)
    assert info.value.exit_code == 1
    prepare_output(path, overwrite=True)


def test_missing_artifact(tmp_path):
    with pytest.raises(MissingArtifact) as info:
        require_artifact(tmp_path / "nope.ckpt", "checkpoint")
    assert info.value.exit_code == 2


def test_read_smiles_file(tmp_path):
    path = tmp_path / "in.smi"
    path.write_text("# header\nCCO ethanol\n\n  c1ccccc1\nCC\t42\n")
    assert read_smiles_file(path) == ["CCO", "c1ccccc1", "CC"]


def test_samples_file(tmp_path):
    path = tmp_path / "samples.smi"
    write_samples(path, [("CCO", False), (None, False), ("CC", True)], comments=["seed\t7"])
    text = path.read_text()
    assert text.splitlines() == ["CCO", "", "CC\tpartial", "# seed\t7"]
    assert read_samples(path) == [("CCO", False), (None, False), ("CC", True)]


def test_property_cache(tmp_path):
    path = tmp_path / "props.csv"
    path.write_text("smiles,W,logP,TPSA\nCCO,46.07,-0.0014,20.23\n")
    cache = read_property_cache(path)
    assert cache["CCO"] == pytest.approx((46.07, -0.0014, 20.23))
    path.write_text("smiles,W\nCCO,46.07\n")
    with pytest.raises(MissingArtifact):
        read_property_cache(path)


def test_parallel_map_keeps_order():
    items = [-3, 1, -2, 5]
    assert parallel_map(abs, items, workers=1, progress=False) == [3, 1, 2, 5]
    assert parallel_map(abs, items, workers=2, progress=False) == [3, 1, 2, 5]


def test_seed_everything():
    a = seed_everything(11).normal(size=3)
    b = seed_everything(11).normal(size=3)
    np.testing.assert_array_equal(a, b)
