import numpy as np
import pytest

from core.chemprops import (
    environment_ids,
    fingerprint,
    logp,
    molecular_weight,
    properties,
    tanimoto,
    tanimoto_matrix,
    tpsa,
)
from core.errors import BadRange, WidthMismatch
from core.smiles import parse_smiles


def test_fingerprint_is_deterministic_and_sized():
    a = fingerprint(parse_smiles("CCO"))
    b = fingerprint(parse_smiles("OCC"))
    assert a.nbits == 2048
    assert a == b
    assert a.on_bits()


def test_fingerprint_requires_power_of_two_width():
    with pytest.raises(BadRange):
        fingerprint(parse_smiles("CC"), nbits=1000)


def test_tanimoto_edges():
    fp = fingerprint(parse_smiles("c1ccccc1"))
    assert tanimoto(fp, fp) == 1.0
    empty = fingerprint(parse_smiles("C"), nbits=64)
    empty.bits[:] = 0
    assert tanimoto(empty, empty) == 1.0
    with pytest.raises(WidthMismatch):
        tanimoto(fp, fingerprint(parse_smiles("C"), nbits=1024))


def test_unfolded_similarity_ethanol_propanol():
    a = environment_ids(parse_smiles("CCO"))
    b = environment_ids(parse_smiles("CCCO"))
    assert len(a & b) / len(a | b) == pytest.approx(1.0 / 3.0)


def test_folded_similarity_close_to_unfolded():
    value = tanimoto(fingerprint(parse_smiles("CCO")), fingerprint(parse_smiles("CCCO")))
    assert value == pytest.approx(1.0 / 3.0, abs=0.05)


def test_tanimoto_matrix_is_symmetric_with_unit_diagonal():
    fps = [fingerprint(parse_smiles(s)) for s in ("CCO", "c1ccccc1", "CC(=O)O")]
    sims = tanimoto_matrix(fps)
    np.testing.assert_allclose(np.diag(sims), 1.0)
    np.testing.assert_allclose(sims, sims.T)


def test_molecular_weight():
    assert molecular_weight(parse_smiles("c1ccccc1")) == pytest.approx(78.114, abs=1e-2)
    assert molecular_weight(parse_smiles("O")) == pytest.approx(18.015, abs=1e-2)


@pytest.mark.parametrize("smiles, expected", [("c1ccccc1", 1.6866), ("CCO", -0.0014), ("O", -0.8247)])
def test_crippen_logp(smiles, expected):
    assert logp(parse_smiles(smiles)) == pytest.approx(expected, abs=1e-3)


@pytest.mark.parametrize("smiles, expected", [("c1ccccc1", 0.0), ("CCO", 20.23), ("CC(=O)O", 37.30), ("c1ccncc1", 12.89)])
def test_tpsa(smiles, expected):
    assert tpsa(parse_smiles(smiles)) == pytest.approx(expected, abs=1e-2)


def test_properties_tuple():
    props = properties(parse_smiles("CCO"))
    assert props.W == pytest.approx(46.069, abs=1e-2)
    assert props.TPSA == pytest.approx(20.23, abs=1e-2)
