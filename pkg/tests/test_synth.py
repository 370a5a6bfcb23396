import numpy as np
import pytest

from csattn.errors import DataError
from csattn.synth import (
    SPLITS,
    SynthConfig,
    ToyGrammar,
    check_ec_property,
    default_grammar_a,
    default_grammar_b,
    featurize,
    gen_codeswitch,
    gen_monolingual,
    load_data_cfg,
    load_manifest,
    monolingual_fragments,
    phrase_cover,
    prototype,
    write_dataset,
)
from csattn.vocab import Lang, Vocab

A, B = Lang.A, Lang.B

GA = default_grammar_a()
GB = default_grammar_b()


class TestGrammars:
    def test_default_inventory_sizes(self):
        assert len(GA.phrases) == 60 and len(GB.phrases) == 60
        assert len(GA.alphabet()) == 30 and len(GB.alphabet()) == 40

    def test_alphabets_disjoint(self):
        assert not (GA.alphabet() & GB.alphabet())

    def test_defaults_are_deterministic(self):
        assert default_grammar_a().phrases == GA.phrases
        assert default_grammar_b().phrases == GB.phrases

    def test_empty_inventory_rejected(self):
        with pytest.raises(DataError):
            ToyGrammar(A, [])

    def test_overlong_phrase_rejected(self):
        with pytest.raises(DataError):
            ToyGrammar(A, [("x",) * 5])


class TestMonolingual:
    def test_degenerate_inventory_repeats_the_phrase(self):
        g = ToyGrammar(A, [("a1", "a2")])
        line = gen_monolingual(g, 1, seed=0)[0]
        toks = line.split()
        assert len(toks) % 2 == 0
        assert all(toks[i : i + 2] == ["a1", "a2"] for i in range(0, len(toks), 2))

    def test_same_seed_is_identical(self):
        assert gen_monolingual(GA, 50, seed=7) == gen_monolingual(GA, 50, seed=7)

    def test_different_seeds_differ(self):
        assert gen_monolingual(GA, 50, seed=7) != gen_monolingual(GA, 50, seed=8)

    def test_sentences_are_2_to_6_phrases(self):
        g = ToyGrammar(A, [("a1",)])  # unigram phrases make counting exact
        lengths = [len(l.split()) for l in gen_monolingual(g, 500, seed=1)]
        assert min(lengths) >= 2 and max(lengths) <= 6
        assert set(lengths) == {2, 3, 4, 5, 6}

    def test_token_frequency_matches_uniform_phrase_weights(self):
        # unigram-only inventory: each emitted token is a uniform draw, so
        # each symbol's count is Binomial(total, 1/4); check within 3 sigma
        g = ToyGrammar(A, [("w",), ("x",), ("y",), ("z",)])
        toks = " ".join(gen_monolingual(g, 10_000, seed=2)).split()
        total = len(toks)
        for sym in "wxyz":
            count = toks.count(sym)
            mean = total / 4
            sigma = np.sqrt(total * 0.25 * 0.75)
            assert abs(count - mean) <= 3 * sigma, f"{sym}: {count} vs {mean}"

    def test_count_must_be_positive(self):
        with pytest.raises(DataError):
            gen_monolingual(GA, 0, seed=0)


class TestCodeswitch:
    def test_same_seed_is_identical(self):
        a = gen_codeswitch(GA, GB, 50, 0.4, seed=3)
        assert a == gen_codeswitch(GA, GB, 50, 0.4, seed=3)

    def test_low_switch_prob_is_mostly_monolingual(self):
        lines = gen_codeswitch(GA, GB, 300, 0.01, seed=4)
        mono = sum(
            1 for l in lines if len(monolingual_fragments(l.split(), GA, GB)) == 1
        )
        assert mono > 250

    def test_switch_count_matches_bernoulli_oracle(self):
        # switches per sentence = Binomial(n-1, p) with n uniform on 2..6,
        # so E[total] = N * 3p and Var[total] = N * (3p(1-p) + p^2 * 35/12)
        p, n_sent = 0.4, 10_000
        lines = gen_codeswitch(GA, GB, n_sent, p, seed=5)
        total = sum(
            len(monolingual_fragments(l.split(), GA, GB)) - 1 for l in lines
        )
        mean = n_sent * 3 * p
        sigma = np.sqrt(n_sent * (3 * p * (1 - p) + p * p * 35 / 12))
        assert abs(total - mean) <= 3 * sigma, f"{total} vs {mean} +- {3 * sigma}"

    def test_every_sentence_satisfies_ec_property(self):
        lines = gen_codeswitch(GA, GB, 1000, 0.4, seed=6)
        assert all(check_ec_property(l, GA, GB) for l in lines)

    def test_switch_prob_bounds(self):
        for bad in (0.0, 1.0, -0.1):
            with pytest.raises(DataError):
                gen_codeswitch(GA, GB, 1, bad, seed=0)


class TestPhraseCover:
    def test_single_inventory_phrase_covers(self):
        assert phrase_cover(GA.phrases[35], GA)

    def test_concatenation_of_phrases_covers(self):
        toks = GA.phrases[0] + GA.phrases[40] + GA.phrases[12]
        assert phrase_cover(toks, GA)

    def test_non_inventory_sequence_fails(self):
        g = ToyGrammar(A, [("a1", "a2")])
        assert not phrase_cover(("a2", "a1"), g)
        assert not phrase_cover(("a1",), g)

    def test_empty_sequence_covers_trivially(self):
        assert phrase_cover((), GA)

    def test_fragments_split_at_language_changes(self):
        a1 = next(iter(GA.alphabet()))
        b1 = next(iter(GB.alphabet()))
        frags = monolingual_fragments([a1, a1, b1, a1], GA, GB)
        assert [lang for lang, _ in frags] == [A, B, A]
        assert frags[0][1] == (a1, a1)

    def test_unknown_token_rejected(self):
        with pytest.raises(DataError):
            monolingual_fragments(["zz_not_a_token"], GA, GB)


class TestFeaturize:
    @pytest.fixture(scope="class")
    def vocab(self):
        return Vocab(sorted(GA.alphabet()), sorted(GB.alphabet()))

    def test_prototype_is_unit_norm_and_deterministic(self):
        v = prototype(7)
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
        assert np.array_equal(v, prototype(7))
        assert not np.array_equal(v, prototype(8))

    def test_same_utt_id_and_seed_bit_identical(self, vocab):
        toks = ["a01", "a02", "a03"]
        f1 = featurize(toks, "utt-1", vocab, seed=9)
        f2 = featurize(toks, "utt-1", vocab, seed=9)
        assert np.array_equal(f1, f2)

    def test_different_utt_ids_differ(self, vocab):
        toks = ["a01", "a02"]
        f1 = featurize(toks, "utt-1", vocab, seed=9)
        f2 = featurize(toks, "utt-2", vocab, seed=9)
        assert f1.shape != f2.shape or not np.array_equal(f1, f2)

    def test_zero_noise_frames_equal_prototypes(self, vocab):
        toks = ["a01", "a05"]
        feats = featurize(toks, "u", vocab, seed=0, noise=0.0)
        protos = {t: prototype(vocab.id_of(t)) for t in toks}
        i = 0
        for t in toks:
            r = 0
            while i < len(feats) and np.array_equal(feats[i], protos[t]):
                i += 1
                r += 1
            assert 2 <= r <= 4, f"{t} emitted {r} frames"
        assert i == len(feats)

    def test_frames_per_token_in_range(self, vocab):
        toks = ["a01"] * 20
        feats = featurize(toks, "u2", vocab, seed=1, noise=0.0)
        assert 2 * len(toks) <= len(feats) <= 4 * len(toks)

    def test_nearest_prototype_recovers_tokens(self, vocab):
        lines = gen_codeswitch(GA, GB, 20, 0.4, seed=11)
        protos = np.stack([prototype(i) for i in range(len(vocab))])
        for i, line in enumerate(lines):
            toks = line.split()
            feats = featurize(toks, f"u{i}", vocab, seed=3, noise=0.0)
            frame_ids = np.argmax(feats @ protos.T, axis=1)
            # collapse consecutive repeats back to the token sequence
            rec = [int(frame_ids[0])]
            for fid in frame_ids[1:]:
                if fid != rec[-1]:
                    rec.append(int(fid))
            expect = [vocab.id_of(t) for t in toks]
            collapsed = [expect[0]]
            for t in expect[1:]:
                if t != collapsed[-1]:
                    collapsed.append(t)
            assert rec == collapsed


class TestDataset:
    @pytest.fixture(scope="class")
    def dataset(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("data")
        cfg = SynthConfig(cs_train=30, mono_a=60, mono_b=60, dev=10, test=10, seed=1)
        vocab = write_dataset(out, cfg)
        return out, cfg, vocab

    def test_expected_files_exist(self, dataset):
        out, _, _ = dataset
        for split in SPLITS:
            assert (out / f"{split}.txt").exists()
            assert (out / f"{split}.manifest").exists()
        assert (out / "vocab.txt").exists()
        assert (out / "data.cfg").exists()

    def test_manifest_matches_corpus(self, dataset):
        out, _, _ = dataset
        lines = (out / "train_cs.txt").read_text().splitlines()
        entries = load_manifest(out / "train_cs.manifest")
        assert [line for _, line in entries] == lines
        assert all(uid.startswith("train_cs-") for uid, _ in entries)

    def test_vocab_covers_every_corpus_token(self, dataset):
        out, _, vocab = dataset
        for split in SPLITS:
            for line in (out / f"{split}.txt").read_text().split():
                vocab.id_of(line)

    def test_data_cfg_round_trips(self, dataset):
        out, cfg, _ = dataset
        assert load_data_cfg(out) == cfg

    def test_rerun_is_byte_identical(self, dataset, tmp_path):
        out, cfg, _ = dataset
        write_dataset(tmp_path, cfg)
        for name in [f"{s}.txt" for s in SPLITS] + ["vocab.txt", "data.cfg"]:
            assert (tmp_path / name).read_bytes() == (out / name).read_bytes()

    def test_missing_data_cfg_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_data_cfg(tmp_path)

    def test_malformed_manifest_rejected(self, tmp_path):
        p = tmp_path / "bad.manifest"
        p.write_text("utt-1 no tab here\n")
        with pytest.raises(DataError):
            load_manifest(p)
