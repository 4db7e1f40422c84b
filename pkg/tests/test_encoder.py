import numpy as np
import pytest

from core import ndtensor as nd
from core.encoder import Encoder, NodeFeatures, normalized_adjacency, tree_inputs, with_context_row
from core.errors import ConfigError, FeatureOutOfRange
from core.jtree import decompose
from core.ndtensor import ParamStore
from core.smiles import parse_smiles
from utils.models import EncoderConfig


def make_encoder(vocab_size, seed=0, **overrides):
    options = dict(layers=2, hidden=16, heads=2, ffn=32, vocab_size=vocab_size)
    options.update(overrides)
    store = ParamStore()
    return Encoder(EncoderConfig(**options), store, np.random.default_rng(seed)), store


def test_latent_shape(examples, vocab):
    encoder, _ = make_encoder(len(vocab))
    for example in examples[:5]:
        z = encoder.encode(example.features, example.adjacency)
        assert z.shape == (1, 16)
        assert np.all(np.isfinite(z.data))


def test_tree_inputs_for_propane(vocab):
    jt = decompose(parse_smiles("CCC"))
    features, adjacency = tree_inputs(jt, vocab)
    assert len(features) == 2
    np.testing.assert_array_equal(adjacency, [[0, 1], [1, 0]])
    assert features.degree.tolist() == [1, 1]
    assert features.depth.tolist() == [0, 1]
    assert features.junction_ids.tolist() == [vocab.id_of("CC")] * 2


def test_context_row_touches_every_node():
    full = with_context_row(np.zeros((3, 3)))
    assert full[0].tolist() == [0, 1, 1, 1]
    assert full[:, 0].tolist() == [0, 1, 1, 1]
    assert full[1:, 1:].sum() == 0


def test_normalized_adjacency():
    np.testing.assert_allclose(normalized_adjacency(np.array([[0.0, 1.0], [1.0, 0.0]])), np.full((2, 2), 0.5))
    np.testing.assert_allclose(normalized_adjacency(np.zeros((3, 3))), np.eye(3))


def test_latent_ignores_node_order(examples, vocab):
    example = max(examples, key=lambda e: len(e.features))
    encoder, _ = make_encoder(len(vocab))
    f, adjacency = example.features, example.adjacency
    perm = np.random.default_rng(3).permutation(len(f))
    shuffled = NodeFeatures(
        junction_ids=f.junction_ids[perm],
        degree=f.degree[perm],
        hcount=f.hcount[perm],
        depth=f.depth[perm],
    )
    with nd.precision(np.float64):
        a = encoder.encode(f, adjacency).data
        b = encoder.encode(shuffled, adjacency[np.ix_(perm, perm)]).data
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_encoder_gradients(examples, vocab):
    encoder, store = make_encoder(len(vocab), layers=1)
    example = examples[10]
    weights = nd.Tensor(np.random.default_rng(1).normal(size=(1, 16)))

    def objective():
        return nd.tensor_sum(nd.mul(encoder.encode(example.features, example.adjacency), weights))

    assert nd.grad_check(objective, store.values(), n_coords=96, seed=2) <= 1e-4


def test_feature_out_of_range(vocab):
    encoder, _ = make_encoder(len(vocab), max_degree=1)
    features, adjacency = tree_inputs(decompose(parse_smiles("CC(C)C")), vocab)
    with pytest.raises(FeatureOutOfRange):
        encoder.encode(features, adjacency)


def test_unknown_junction_id(vocab):
    encoder, _ = make_encoder(len(vocab))
    features = NodeFeatures(
        junction_ids=np.array([len(vocab)]),
        degree=np.array([0]),
        hcount=np.array([0]),
        depth=np.array([0]),
    )
    with pytest.raises(FeatureOutOfRange):
        encoder.encode(features, np.zeros((1, 1)))


def test_heads_must_divide_width():
    with pytest.raises(ConfigError):
        make_encoder(10, hidden=15, heads=2)


def test_without_tree_features(examples, vocab):
    encoder, _ = make_encoder(len(vocab), use_tree_features=False)
    z = encoder.encode(examples[0].features, examples[0].adjacency)
    assert z.shape == (1, 16)


def test_feed_forward_reads_both_branches(examples, vocab):
    encoder, store = make_encoder(len(vocab), layers=1)
    assert store["enc.l0.ffn.wa"].shape == (32, 32)
    assert store["enc.l0.ffn.wb"].shape == (32, 16)
    assert "enc.l0.fuse.w" not in store

    example = examples[0]
    H = encoder.embed(example.features)
    A = with_context_row(example.adjacency)
    store["enc.l0.ffn.wb"].data[...] = 0.0
    np.testing.assert_allclose(encoder.encoder_layer(H, A, 0).data, H.data)
