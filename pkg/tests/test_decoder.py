import numpy as np
import pytest

from commands.pipeline import build_autoencoder, train_autoencoder
from core import ndtensor as nd
from core.dataset import property_stats
from core.decoder import Decoder, causal_mask, dagcn_operator, father_mask, insertion_features
from core.errors import ConfigError
from core.jtree import EOS_ID, JNODE_ID, PAD_ID
from core.ndtensor import ParamStore
from core.seqcodec import Token, TokenSeq, feasible_cases, resolve_father
from utils.models import DecoderConfig, ModelConfig, RunConfig, TrainingConfig


@pytest.fixture
def model(tiny_config, vocab):
    return build_autoencoder(tiny_config, vocab, seed=0)


def test_insertion_features_for_chain_and_star():
    table = np.arange(10)
    chain = insertion_features([3, 4, 5], [0, 0, 0], table)
    assert chain.fathers == (None, 0, 1)
    assert chain.depth.tolist() == [0, 1, 2]
    assert chain.father_degree.tolist() == [0, 1, 2]
    assert chain.hcount.tolist() == [3, 4, 5]

    star = insertion_features([3, 3, 3], [0, 0, 1], table)
    assert star.fathers == (None, 0, 0)
    assert star.depth.tolist() == [0, 1, 1]
    assert star.father_degree.tolist() == [0, 1, 2]


def test_father_mask_links_rows_to_fathers():
    M = father_mask((None, 0, 1))
    assert M.shape == (4, 4)
    assert M[2, 1] == 1 and M[3, 2] == 1
    assert M.sum() == 2


def test_dagcn_operator_on_chain():
    theta = 0.5
    K = np.eye(4) + theta * dagcn_operator(father_mask((None, 0, 1)))
    np.testing.assert_allclose(K[1:, 1:], [[1, 0, 0], [0, 1 + theta, 0], [0, -theta, 1 + theta]])
    np.testing.assert_allclose(K[0], [1, 0, 0, 0])
    assert np.all(np.triu(K, k=1) == 0)


def test_causal_mask():
    mask = causal_mask(3)
    assert mask[0, 1] < -1e8 and mask[1, 2] < -1e8
    assert np.all(np.tril(mask) == 0)


def test_heads_must_divide_width():
    with pytest.raises(ConfigError):
        Decoder(DecoderConfig(hidden=10, heads=3, vocab_size=8), ParamStore(), np.random.default_rng(0))


def perturb_token(rng, vocab, fathers, k, token):
    """Swap the junction id or the position case (or both) of the k-th token."""
    other_cases = [c for c in feasible_cases(fathers[:k], k) if c != token.case] if k else []
    change_case = bool(other_cases) and rng.random() < 0.5
    change_junction = not change_case or rng.random() < 0.5
    junction_id = token.junction_id
    if change_junction:
        junction_id = int(rng.choice([i for i in vocab.fragment_ids if i != token.junction_id]))
    case = int(rng.choice(other_cases)) if change_case else token.case
    return Token(junction_id, case)


def test_decoder_is_causal(model, examples):
    rng = np.random.default_rng(0)
    for _ in range(100):
        example = examples[int(rng.integers(len(examples)))]
        items = example.seq.items
        k = int(rng.integers(len(items)))
        inputs = model.decoder_inputs(example.seq)
        changed = TokenSeq(items=items[:k] + (perturb_token(rng, model.vocab, inputs.fathers, k, items[k]),))

        with nd.precision(np.float64), nd.no_grad():
            z = model.encoder.encode(example.features, example.adjacency)
            junction_a, position_a = model.decoder.forward(z, inputs)
            junction_b, position_b = model.decoder.forward(z, model.decoder_inputs(changed))
        # rows 0..k only see tokens before k
        np.testing.assert_allclose(junction_a.data[:k + 1], junction_b.data[:k + 1], atol=1e-9)
        np.testing.assert_allclose(position_a.data[:k + 1], position_b.data[:k + 1], atol=1e-9)
        assert not np.allclose(junction_a.data[k + 1], junction_b.data[k + 1])


def test_reserved_tokens_are_never_predicted(model, examples):
    example = examples[5]
    z = model.encoder.encode(example.features, example.adjacency)
    junction, _ = model.decoder.forward(z, model.decoder_inputs(example.seq))
    assert np.all(junction.data[:, [JNODE_ID, PAD_ID]] < -1e8)


def test_loss_of_silent_heads_is_uniform(model, examples, vocab):
    for name in ("dec.head.junction.w", "dec.head.junction.b", "dec.head.position.w", "dec.head.position.b"):
        model.store[name].data[...] = 0.0
    model.alpha, model.beta, model.delta = 0.0, 1.0, 0.0
    parts = model.loss(examples[:4])
    assert parts.total.item() == pytest.approx(np.log(len(vocab) - 2), rel=1e-5)
    assert parts.junction == pytest.approx(np.log(len(vocab) - 2), rel=1e-5)


def test_generate_stops_at_eos(model):
    model.store["dec.head.junction.b"].data[0, EOS_ID] = 50.0
    seq = model.generate(np.zeros(16), max_len=10)
    assert len(seq) == 1
    assert seq.terminated and not seq.truncated


def test_generate_truncates_at_max_len(model):
    model.store["dec.head.junction.b"].data[0, EOS_ID] = -50.0
    seq = model.generate(np.zeros(16), max_len=5)
    assert len(seq) == 5
    assert seq.truncated
    assert seq.cases[0] == 0


def test_decode_step_masks(model):
    p_junction, p_position = model.decode_step(np.zeros(16), TokenSeq(items=(), terminated=False))
    assert p_junction[EOS_ID] == 0.0
    assert p_position[0] == pytest.approx(1.0)
    assert p_junction.sum() == pytest.approx(1.0)

    prefix = TokenSeq(items=(Token(3, 0), Token(3, 0)), terminated=False)
    _, p_position = model.decode_step(np.zeros(16), prefix)
    # case 3 would point past node 1
    assert p_position[3] == 0.0
    assert p_position[:3].sum() == pytest.approx(1.0)


def test_sampled_generation_is_seeded(model, examples):
    z = model.encode(examples[3])
    a = model.generate(z, 12, temperature=1.0, rng=np.random.default_rng(5))
    b = model.generate(z, 12, temperature=1.0, rng=np.random.default_rng(5))
    assert a == b


def test_accuracy_is_a_fraction(model, examples):
    accuracy = model.teacher_forced_accuracy(examples[:8])
    assert 0.0 <= accuracy <= 1.0


def test_training_lowers_the_loss(tiny_config, vocab, examples):
    model = build_autoencoder(tiny_config, vocab, seed=0)
    batch = examples[:12]
    with nd.no_grad():
        before = model.loss(batch).total.item()
    tiny_config.training.epochs = 6
    history = train_autoencoder(model, batch, tiny_config.training, seed=0, progress=False)
    with nd.no_grad():
        after = model.loss(batch).total.item()
    assert len(history) == 6
    assert after < before


def test_state_round_trip(tiny_config, vocab, examples, model):
    model.aux_mean = np.array([1.0, 2.0, 3.0])
    other = build_autoencoder(tiny_config, vocab, seed=9)
    other.load_state(model.state_arrays())
    np.testing.assert_allclose(other.encode(examples[0]), model.encode(examples[0]))
    np.testing.assert_allclose(other.aux_mean, [1.0, 2.0, 3.0])


def test_without_dagcn(tiny_config, vocab, examples):
    tiny_config.model.use_dagcn = False
    model = build_autoencoder(tiny_config, vocab, seed=0)
    assert "dec.l0.dagcn.w" not in model.store
    assert np.isfinite(model.loss(examples[:2]).total.item())


def small_decoder(seed=0, **overrides):
    options = dict(layers=1, hidden=8, heads=2, ffn=16, vocab_size=7)
    options.update(overrides)
    store = ParamStore()
    return Decoder(DecoderConfig(**options), store, np.random.default_rng(seed)), store


def test_dagcn_block_gradients():
    decoder, store = small_decoder()
    store["dec.l0.dagcn.theta"].data[...] = 0.7
    rng = np.random.default_rng(1)
    H = nd.parameter(rng.normal(size=(5, 8)))
    weights = nd.Tensor(rng.normal(size=(5, 8)))
    M = father_mask((None, 0, 0, 1))
    params = [H, store["dec.l0.dagcn.w"], store["dec.l0.dagcn.theta"]]
    assert nd.grad_check(lambda: nd.tensor_sum(nd.mul(decoder.dagcn_block(H, M, 0), weights)), params, n_coords=200) <= 1e-4


def test_masked_attention_gradients():
    decoder, store = small_decoder()
    rng = np.random.default_rng(2)
    H = nd.parameter(rng.normal(size=(5, 8)))
    weights = nd.Tensor(rng.normal(size=(5, 8)))
    params = [H] + [store[f"dec.l0.attn.{w}"] for w in ("wq", "wk", "wv")]
    assert nd.grad_check(lambda: nd.tensor_sum(nd.mul(decoder.masked_attn_block(H, 0), weights)), params, n_coords=240) <= 1e-4


def test_loss_gradients(model, examples):
    batch = [max(examples, key=lambda e: len(e.seq)), examples[3]]
    model.aux_mean, model.aux_std = property_stats(examples)
    model.store["dec.aux.w"].data[...] = np.random.default_rng(3).normal(0.0, 0.1, size=model.store["dec.aux.w"].shape)
    assert (model.alpha, model.beta, model.delta) == (1.0, 1.0, 0.2)
    assert nd.grad_check(lambda: model.loss(batch).total, model.store.values(), n_coords=128, seed=1) <= 1e-4
    thetas = [model.store["dec.l0.dagcn.theta"]]
    assert nd.grad_check(lambda: model.loss(batch).total, thetas) <= 1e-4


def random_cases(rng, n):
    cases, fathers = [0], [None]
    for k in range(1, n):
        case = int(rng.choice(feasible_cases(fathers, k)))
        cases.append(case)
        fathers.append(resolve_father(fathers, k, case))
    return cases


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def test_activation_rms_stays_bounded_across_layers():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        decoder, _ = small_decoder(seed, layers=4, hidden=32, heads=4, ffn=64, vocab_size=10)
        n = int(rng.integers(4, 13))
        inputs = insertion_features(rng.integers(3, 10, size=n), random_cases(rng, n), np.zeros(10, dtype=np.int64))
        M = father_mask(inputs.fathers)
        with nd.no_grad():
            H = decoder.embed(nd.Tensor(rng.normal(size=(1, 32))), inputs)
            X = nd.Tensor(rng.normal(size=H.shape))
            start = rms(X.data)
            for layer in range(4):
                H = decoder.decoder_layer(H, M, layer)
                X = decoder.dagcn_block(X, M, layer)
                assert 0.1 <= rms(H.data) <= 10.0
                assert 0.1 <= rms(X.data) / start <= 10.0


@pytest.mark.slow
def test_overfits_a_small_corpus(vocab, examples):
    config = RunConfig(
        model=ModelConfig(layers=2, decoder_layers=2, hidden=64, heads=4, ffn=128, max_len=24),
        training=TrainingConfig(epochs=60, batch_size=4, lr=3e-3, warmup_steps=0, decay_rate=1.0),
    )
    corpus = examples[:32]
    assert len(corpus) == 32
    model = build_autoencoder(config, vocab, seed=0)
    train_autoencoder(model, corpus, config.training, seed=0, progress=False)
    assert model.teacher_forced_accuracy(corpus) >= 0.95
