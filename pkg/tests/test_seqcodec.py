import numpy as np
import pytest

from core.errors import DanglingPosition, EmptyTree, MissingEOS, UnencodableTree
from core.jtree import JunctionTree, TreeEdge, decompose, tree_signature
from core.seqcodec import (
    Token,
    TokenSeq,
    alphabet_coverage,
    bfs_order,
    decode,
    dump_tokens,
    encode,
    feasible_cases,
    parse_tokens,
    position_case,
    required_alphabet,
    resolve_father,
)
from core.smiles import parse_smiles


def test_position_cases_follow_father_advance():
    fathers = [None, 0, 0, 1, 1, 2, 4]
    cases = [position_case(fathers, k) for k in range(len(fathers))]
    assert cases == [0, 0, 1, 2, 1, 2, 3]
    for k in range(1, len(fathers)):
        assert resolve_father(fathers, k, cases[k]) == fathers[k]


def test_dangling_positions():
    with pytest.raises(DanglingPosition):
        resolve_father([None], 1, 1)
    with pytest.raises(DanglingPosition):
        resolve_father([None, 0, 1], 3, 3)


def test_feasible_cases():
    assert feasible_cases([None], 1) == [0]
    assert feasible_cases([None, 0], 2) == [0, 1, 2]
    assert feasible_cases([None, 0, 0, 1], 4) == [0, 1, 2, 3]


def test_round_trip_on_fixture(fixture_trees, vocab):
    for jt in fixture_trees:
        seq = encode(jt, vocab)
        assert seq.terminated
        assert seq.prediction_count() == 2 * len(jt) - 1
        back = decode(seq, vocab)
        assert tree_signature(back) == tree_signature(jt)
        assert encode(back, vocab) == seq


def test_fixture_is_covered_by_base_alphabet(fixture_trees):
    report = alphabet_coverage(fixture_trees)
    assert report.fraction == 1.0
    assert report.n_trees == len(fixture_trees)
    assert required_alphabet(fixture_trees) == 4


def random_tree(rng, vocab, n):
    ids = list(vocab.fragment_ids)
    nodes = [vocab.junction(int(rng.choice(ids))) for _ in range(n)]
    edges = [TreeEdge(int(rng.integers(k)), k) for k in range(1, n)]
    return JunctionTree(nodes=nodes, edges=edges)


@pytest.mark.slow
def test_fuzzed_trees_round_trip(vocab):
    rng = np.random.default_rng(7)
    checked = attempts = 0
    while checked < 10_000 and attempts < 100_000:
        attempts += 1
        jt = random_tree(rng, vocab, int(rng.integers(1, 9)))
        try:
            seq = encode(jt, vocab)
        except UnencodableTree:
            assert required_alphabet([jt]) > 4
            continue
        assert tree_signature(decode(seq, vocab)) == tree_signature(jt)
        checked += 1
    assert checked == 10_000


def test_far_father_needs_a_larger_alphabet(vocab):
    node = vocab.junction(vocab.fragment_ids[0])
    edges = [TreeEdge(0, 1), TreeEdge(0, 2), TreeEdge(0, 3), TreeEdge(0, 4), TreeEdge(1, 5), TreeEdge(4, 6)]
    jt = JunctionTree(nodes=[node] * 7, edges=edges)
    assert bfs_order(jt).father == (None, 0, 0, 0, 0, 1, 4)
    with pytest.raises(UnencodableTree):
        encode(jt, vocab)
    assert required_alphabet([jt]) == 5
    seq = encode(jt, vocab, alphabet_size=5)
    assert seq.cases[-1] == 4
    assert tree_signature(decode(seq, vocab)) == tree_signature(jt)


def test_decode_errors(vocab):
    with pytest.raises(MissingEOS):
        decode(TokenSeq(items=(Token(3, 0),), terminated=False), vocab)
    with pytest.raises(EmptyTree):
        decode(TokenSeq(items=()), vocab)
    with pytest.raises(EmptyTree):
        bfs_order(JunctionTree(nodes=[]))


def test_token_dump_round_trip(vocab):
    seq = encode(decompose(parse_smiles("CC(C)O")), vocab)
    text = dump_tokens(seq)
    assert text.rstrip().endswith("EOS")
    assert parse_tokens(text) == seq
    with pytest.raises(MissingEOS):
        parse_tokens("3:0\nEOS\n4:0\n")
