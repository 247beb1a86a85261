import numpy as np
import pytest

from sarcasm_detect.autograd import Tensor
from sarcasm_detect.data_io import write_tensor_file
from sarcasm_detect.encoders import (
    CLS,
    PAD,
    UNK,
    EncoderConfig,
    EncoderParams,
    Vocab,
    encode_sequence,
    load_sequence_features,
    split_words,
    tokenize,
)
from sarcasm_detect.errors import ConfigError, DataError
from sarcasm_detect.incongruity import cross_modal_mha


@pytest.fixture
def vocab():
    return Vocab.build(["Chocolate chip cookies, again!"])


def test_split_words_lowercases_and_separates_punctuation():
    assert split_words("Chocolate chip cookies, again!") == ["chocolate", "chip", "cookies", ",", "again", "!"]


def test_empty_text_is_cls_then_padding(vocab):
    ids, mask = tokenize("", vocab, 5)
    assert ids == [CLS, PAD, PAD, PAD, PAD]
    assert mask == [True, False, False, False, False]


def test_known_words_in_order(vocab):
    ids, _ = tokenize("Chocolate chip cookies", vocab, 6)
    assert ids == [CLS, vocab.id("chocolate"), vocab.id("chip"), vocab.id("cookies"), PAD, PAD]


def test_unknown_word_and_truncation(vocab):
    ids, mask = tokenize("mystery chip chip chip chip", vocab, 4)
    assert ids == [CLS, UNK, vocab.id("chip"), vocab.id("chip")]
    assert all(mask)


@pytest.mark.parametrize("text", ["", "a b c d e f g h", "!!!"])
def test_position_zero_is_always_cls(vocab, text):
    assert tokenize(text, vocab, 4)[0][0] == CLS


def test_tokenize_rejects_tiny_length(vocab):
    with pytest.raises(ConfigError):
        tokenize("x", vocab, 1)


def test_vocab_round_trip(tmp_path, vocab):
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    assert Vocab.load(path) == vocab
    assert path.read_text(encoding="utf-8").splitlines()[0] == vocab.content_tokens()[0]


def test_vocab_rejects_duplicates(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("a\nb\na\n", encoding="utf-8")
    with pytest.raises(DataError):
        Vocab.load(path)


def _encoder(vocab_size=10, **kw):
    cfg = EncoderConfig(d=8, T=5, U=3, heads=2, **kw)
    return cfg, EncoderParams.init(vocab_size, cfg, np.random.default_rng(0))


def test_identical_ids_give_identical_outputs():
    cfg, params = _encoder()
    a = encode_sequence([1, 4, 5, 0, 0], params, cfg)
    b = encode_sequence([1, 4, 5, 0, 0], params, cfg)
    assert a.shape == (5, 8)
    assert np.array_equal(a.data, b.data)


def test_padding_keys_receive_no_attention():
    cfg, params = _encoder()
    x = Tensor(np.random.default_rng(1).normal(size=(5, 8)))
    mask = np.array([True, True, False, False, False])
    _, weights = cross_modal_mha(x, x, params.layers[0].mha, key_mask=mask, return_weights=True)
    for w in weights:
        assert np.all(w.data[:, 2:] == 0.0)
        assert np.allclose(w.data.sum(axis=1), 1.0)


def test_real_rows_ignore_padding_embeddings():
    cfg, params = _encoder()
    before = encode_sequence([1, 4, 5, 0, 0], params, cfg).data[:3]
    params.embedding.data[PAD] += 10.0
    after = encode_sequence([1, 4, 5, 0, 0], params, cfg).data[:3]
    assert np.allclose(before, after, atol=1e-12)


def test_out_of_range_id_rejected():
    cfg, params = _encoder(vocab_size=6)
    with pytest.raises(DataError):
        encode_sequence([1, 7, 0, 0, 0], params, cfg)


def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(d=7, heads=2).validate()
    with pytest.raises(ConfigError):
        EncoderConfig(provider="bert").validate()


def test_feature_file_round_trip(tmp_path, rng):
    # FT01 stores float32, so the source must be representable exactly
    x = rng.normal(size=(5, 8)).astype(np.float32).astype(np.float64)
    write_tensor_file(tmp_path / "t.ft", x)
    loaded = load_sequence_features(tmp_path / "t.ft", (5, 8))
    assert np.array_equal(loaded.data, x)
    assert not loaded.requires_grad


def test_feature_file_shape_mismatch_names_both_shapes(tmp_path, rng):
    write_tensor_file(tmp_path / "t.ft", rng.normal(size=(4, 8)))
    with pytest.raises(DataError, match=r"\(4, 8\).*\(5, 8\)"):
        load_sequence_features(tmp_path / "t.ft", (5, 8))


def test_truncated_feature_file_rejected(tmp_path, rng):
    path = tmp_path / "t.ft"
    write_tensor_file(path, rng.normal(size=(5, 8)))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(DataError, match="truncated"):
        load_sequence_features(path, (5, 8))
