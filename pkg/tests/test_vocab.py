import pytest

from csattn.errors import DataError, VocabError
from csattn.vocab import EOS, PAD, SOS, UNK, Lang, Vocab, build_vocab


@pytest.fixture
def vocab():
    return build_vocab(["a1 a2", "a1"], ["bb_x bb_x"], threshold=0)


def test_reserved_ids_and_order(vocab):
    assert (PAD, SOS, EOS, UNK) == (0, 1, 2, 3)
    # sorted within language, A before B, after reserved ids
    assert vocab.surface(4) == "a1"
    assert vocab.surface(5) == "a2"
    assert vocab.surface(6) == "bb_x"
    assert len(vocab) == 7


def test_token_language(vocab):
    assert vocab.token_language(PAD) is Lang.SPECIAL
    assert vocab.token_language(vocab.id_of("a1")) is Lang.A
    assert vocab.token_language(vocab.id_of("bb_x")) is Lang.B
    with pytest.raises(VocabError):
        vocab.token_language(99)


def test_language_ids_partition_nonreserved(vocab):
    ids_a = set(vocab.ids_of_language(Lang.A))
    ids_b = set(vocab.ids_of_language(Lang.B))
    ids_s = set(vocab.ids_of_language(Lang.SPECIAL))
    assert ids_a | ids_b | ids_s == set(range(len(vocab)))
    assert not ids_a & ids_b
    assert ids_s == {0, 1, 2, 3}


def test_encode_empty(vocab):
    assert vocab.encode("") == [SOS, EOS]


def test_encode_known_and_oov(vocab):
    assert vocab.encode("a1 bb_x") == [SOS, vocab.id_of("a1"), vocab.id_of("bb_x"), EOS]
    assert vocab.encode("zzz") == [SOS, UNK, EOS]


def test_roundtrip_identity(vocab):
    for line in ("a1 a2 bb_x", "", "bb_x bb_x a1"):
        assert vocab.decode(vocab.encode(line)) == line


def test_threshold_is_strictly_more_than():
    corpus_a = ["rare " + "common " * 3] * 10  # rare: 10, common: 30
    v = build_vocab(corpus_a, ["bb bb"] * 6, threshold=10)
    assert v.id_of("rare") == UNK
    assert v.id_of("common") != UNK


def test_empty_corpus_rejected():
    with pytest.raises(DataError):
        build_vocab(["a1"], [])


def test_overlapping_surface_rejected():
    with pytest.raises(DataError):
        build_vocab(["tok tok"], ["tok tok"], threshold=0)


def test_save_load_roundtrip(tmp_path, vocab):
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    loaded = Vocab.load(path)
    assert len(loaded) == len(vocab)
    for i in range(len(vocab)):
        assert loaded.surface(i) == vocab.surface(i)
        assert loaded.token_language(i) is vocab.token_language(i)


def test_load_rejects_bad_tag(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("a1\tC\n")
    with pytest.raises(DataError):
        Vocab.load(path)
