import numpy as np
import pytest

from core.assembler import (
    ScoreWeights,
    enumerate_attachments,
    exhaustive_assemble,
    greedy_assemble,
    initial_state,
    mcts_assemble,
    score,
)
from core.chemprops import molecular_weight
from core.errors import BadRange, EmptyTree, NoValidAttachment
from core.jtree import Junction, JunctionTree, TreeEdge, decompose
from core.molgraph import is_valid
from core.smiles import canonical_smiles, parse_smiles
from utils.models import AssemblyConfig


def canon(smiles):
    return canonical_smiles(parse_smiles(smiles))


def tree(fragments, edges):
    return JunctionTree(nodes=[Junction.from_smiles(s) for s in fragments], edges=[TreeEdge(a, b) for a, b in edges])


def test_single_junction():
    result = mcts_assemble(decompose(parse_smiles("c1ccccc1")), ScoreWeights())
    assert result.smiles == canon("c1ccccc1")
    assert not result.partial
    assert result.placed == 1


def test_propane():
    result = mcts_assemble(decompose(parse_smiles("CCC")), ScoreWeights(), budget=20)
    assert result.smiles == "CCC"
    assert not result.partial


def test_benzene_takes_a_methyl_one_way():
    jt = tree(["c1ccccc1", "CC"], [(0, 1)])
    options = enumerate_attachments(initial_state(jt), jt, 0, 1)
    assert len(options) == 1
    assert canonical_smiles(options[0].mol) == canon("Cc1ccccc1")


def test_toluene_takes_a_second_methyl_three_ways():
    jt = tree(["c1ccccc1", "CC", "CC"], [(0, 1), (0, 2)])
    (toluene,) = enumerate_attachments(initial_state(jt), jt, 0, 1)
    options = enumerate_attachments(toluene, jt, 0, 2)
    smiles = {canonical_smiles(o.mol) for o in options}
    assert smiles == {canon("Cc1ccccc1C"), canon("Cc1cccc(C)c1"), canon("Cc1ccc(C)cc1")}


def test_attachment_errors():
    jt = tree(["FF", "FF"], [(0, 1)])
    with pytest.raises(NoValidAttachment):
        enumerate_attachments(initial_state(jt), jt, 0, 1)
    with pytest.raises(ValueError):
        enumerate_attachments(initial_state(jt), jt, 1, 0)


def test_dead_end_is_reported_as_partial():
    jt = tree(["FF", "FF"], [(0, 1)])
    result = mcts_assemble(jt, ScoreWeights(), budget=5)
    assert result.partial
    assert result.placed == 1
    assert result.score == pytest.approx(0.5)


def test_empty_tree():
    with pytest.raises(EmptyTree):
        initial_state(JunctionTree(nodes=[]))


def test_bad_weights_and_budget():
    with pytest.raises(BadRange):
        ScoreWeights(lambda_likelihood=0.0, lambda_property=0.0)
    with pytest.raises(BadRange):
        ScoreWeights(lambda_match=-1.0)
    with pytest.raises(BadRange):
        mcts_assemble(decompose(parse_smiles("CC")), ScoreWeights(), budget=0)


def test_weights_from_config():
    config = AssemblyConfig(target_logP=1.5, lambda_match=2.0)
    weights = ScoreWeights.from_config(config)
    assert weights.targets == {"logP": 1.5}
    assert weights.lambda_match == 0.0
    assert ScoreWeights.from_config(config, reference="CCO").lambda_match == 2.0


def test_property_term():
    jt = decompose(parse_smiles("c1ccccc1"))
    state = initial_state(jt)
    weights = ScoreWeights(targets={"W": molecular_weight(state.mol)})
    assert score(state, jt, weights) == pytest.approx(2.0)
    far = ScoreWeights(targets={"W": molecular_weight(state.mol) + 1000.0})
    assert score(state, jt, far) == pytest.approx(1.0)


def test_search_recovers_the_encoded_molecule(fixture_mols):
    small = [g for g in fixture_mols if len(decompose(g)) <= 5]
    assert len(small) >= 40
    hits = 0
    for g in small:
        reference = canonical_smiles(g)
        weights = ScoreWeights(reference=reference, lambda_match=1.0)
        result = mcts_assemble(decompose(g), weights, budget=150, seed=0)
        hits += result.smiles == reference
    assert hits / len(small) >= 0.9


LARGE_TREES = [
    "CCCCCCCCCCC",
    "OC(=O)CCCCCCCCC(=O)O",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "NCCCCCC(N)C(=O)O",
    "OCCOCCOCCOCCO",
    "CCOC(=O)CCC(=O)OCC",
    "CCCCc1ccc(CCCC)cc1CCO",
    "CC(=O)OCCN(C)CCOC(C)=O",
    "c1ccc(cc1)CCCCCCCc1ccccc1",
]


@pytest.mark.slow
def test_search_recovers_large_trees():
    hits = 0
    for smiles in LARGE_TREES:
        g = parse_smiles(smiles)
        jt = decompose(g)
        assert len(jt) >= 10
        reference = canonical_smiles(g)
        result = mcts_assemble(jt, ScoreWeights(reference=reference, lambda_match=1.0), budget=200, seed=0)
        assert result.partial or is_valid(result.mol)
        hits += result.smiles == reference
    assert hits >= len(LARGE_TREES) - 1


def test_search_matches_exhaustive_on_small_trees(fixture_mols):
    for g in fixture_mols:
        jt = decompose(g)
        if len(jt) > 4:
            continue
        weights = ScoreWeights(reference=canonical_smiles(g), lambda_match=1.0)
        assert mcts_assemble(jt, weights, budget=200).score == pytest.approx(exhaustive_assemble(jt, weights).score)


def test_exhaustive_finds_the_reference(fixture_mols):
    for g in fixture_mols:
        jt = decompose(g)
        if len(jt) > 3:
            continue
        reference = canonical_smiles(g)
        assert exhaustive_assemble(jt, ScoreWeights(reference=reference, lambda_match=1.0)).smiles == reference


def test_greedy_is_deterministic(fixture_trees):
    for jt in fixture_trees[:30]:
        first = greedy_assemble(jt, seed=0)
        assert greedy_assemble(jt, seed=99).smiles == first.smiles


def test_complete_results_are_valid(fixture_trees):
    for jt in fixture_trees:
        result = greedy_assemble(jt)
        if not result.partial:
            assert is_valid(result.mol)
            assert is_valid(parse_smiles(result.smiles))


def test_search_is_seeded(fixture_trees):
    jt = max(fixture_trees, key=len)
    a = mcts_assemble(jt, ScoreWeights(), budget=30, seed=4)
    b = mcts_assemble(jt, ScoreWeights(), budget=30, seed=4)
    assert (a.smiles, a.score) == (b.smiles, b.score)
