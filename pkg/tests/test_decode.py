import numpy as np
import pytest

from conftest import tiny_config

from csattn.decode import Hypothesis, beam_search, log_softmax, score_hypothesis_step
from csattn.errors import DataError
from csattn.langmask import NEG_INF, MaskState, batch_state
from csattn.model import Model
from csattn.vocab import EOS, SOS, UNK, Vocab


@pytest.fixture(scope="module")
def small_vocab():
    # 4 reserved + 3 real tokens keeps exhaustive enumeration cheap
    return Vocab(["a1", "a2"], ["bb_x"])


def make_model(vocab, variant="baseline", seed=0):
    return Model(tiny_config(vocab, variant, seed=seed))


def features_for(seed, frames=6, d_f=4):
    return np.random.default_rng(seed).standard_normal((frames, d_f))


def prefix_logprobs(model, vocab, enc_out, enc_valid, ids):
    """Next-token log-probabilities for one explicit prefix, masks rebuilt
    from scratch. Used as the independent scoring path for the oracles."""
    langs = [vocab.token_language(t) for t in ids]
    state = batch_state(langs, model.cfg.w_same, model.cfg.w_diff, model.cfg.alpha)
    tgt_in = np.array([ids], dtype=np.int64)
    logits = model.decode(
        enc_out, enc_valid, tgt_in, [langs],
        w=state.w[None], scale_a=state.scale_a[None], scale_b=state.scale_b[None],
    )
    row = logits.data[0, -1, :].copy()
    row[UNK] = NEG_INF
    return log_softmax(row)


def exhaustive_best(model, vocab, features, max_len):
    """Brute-force search over every token sequence up to max_len.

    Finished sequences end at their first eos; if any exist they are the
    candidate pool, otherwise the full-length unfinished sequences are.
    Ties break by token id sequence, matching beam_search."""
    enc_out, enc_valid = model.encode(
        features[None], np.ones((1, features.shape[0]), dtype=bool)
    )
    V = len(vocab)
    finished, unfinished = [], []

    def expand(ids, logp, depth):
        if ids[-1] == EOS:
            finished.append((logp, ids))
            return
        if depth == max_len:
            unfinished.append((logp, ids))
            return
        row = prefix_logprobs(model, vocab, enc_out, enc_valid, list(ids))
        for tok in range(V):
            expand(ids + (tok,), logp + float(row[tok]), depth + 1)

    expand((SOS,), 0.0, 0)
    pool = finished if finished else unfinished
    return max(pool, key=lambda c: (c[0], tuple(-t for t in c[1])))


class TestScoreStep:
    def hyp(self):
        return Hypothesis(ids=(SOS,), logp=-1.0, state=MaskState())

    def test_k_equal_v_enumerates_everything(self):
        row = np.log(np.array([0.1, 0.2, 0.3, 0.4]))
        out = score_hypothesis_step(self.hyp(), row, k=4)
        assert len(out) == 4
        assert [t for _, t in out] == [3, 2, 1, 0]

    def test_cumulative_scores(self):
        row = np.array([-1.0, -2.0])
        out = score_hypothesis_step(self.hyp(), row, k=2)
        assert out[0] == (-2.0, 0)
        assert out[1] == (-3.0, 1)

    def test_uniform_row_tie_breaks_to_lowest_ids(self):
        row = np.zeros(6)
        out = score_hypothesis_step(self.hyp(), row, k=3)
        assert [t for _, t in out] == [0, 1, 2]

    def test_k_larger_than_v_is_clamped(self):
        out = score_hypothesis_step(self.hyp(), np.zeros(3), k=10)
        assert len(out) == 3


class TestBeamSearch:
    def test_greedy_equals_argmax_chain(self, small_vocab):
        model = make_model(small_vocab, seed=1)
        feats = features_for(2)
        best, _ = beam_search(model, small_vocab, feats, beam_width=1, max_len=5)

        enc_out, enc_valid = model.encode(
            feats[None], np.ones((1, feats.shape[0]), dtype=bool)
        )
        ids = [SOS]
        for _ in range(5):
            row = prefix_logprobs(model, small_vocab, enc_out, enc_valid, ids)
            ids.append(int(row.argmax()))
            if ids[-1] == EOS:
                break
        assert best.ids == tuple(ids)

    @pytest.mark.parametrize("variant", ["baseline", "score-reweight", "shared", "independent"])
    @pytest.mark.parametrize("seed", [0, 1])
    def test_exhaustive_beam_matches_brute_force(self, small_vocab, variant, seed):
        model = make_model(small_vocab, variant, seed=seed)
        feats = features_for(10 + seed)
        max_len = 3
        width = len(small_vocab) ** max_len
        best, _ = beam_search(model, small_vocab, feats, beam_width=width,
                              max_len=max_len)
        ref_logp, ref_ids = exhaustive_best(model, small_vocab, feats, max_len)
        assert best.ids == ref_ids
        assert best.logp == pytest.approx(ref_logp, abs=1e-9)

    def test_nbest_is_deterministic(self, small_vocab):
        model = make_model(small_vocab, seed=3)
        feats = features_for(4)
        _, first = beam_search(model, small_vocab, feats, beam_width=4, max_len=6)
        _, second = beam_search(model, small_vocab, feats, beam_width=4, max_len=6)
        assert [h.ids for h in first] == [h.ids for h in second]
        assert [h.logp for h in first] == [h.logp for h in second]

    def test_nbest_sorted_best_first(self, small_vocab):
        model = make_model(small_vocab, seed=5)
        _, ranked = beam_search(model, small_vocab, features_for(6), beam_width=5,
                                max_len=6)
        logps = [h.logp for h in ranked]
        assert logps == sorted(logps, reverse=True)

    def test_unk_is_never_emitted(self, small_vocab):
        model = make_model(small_vocab, seed=7)
        _, ranked = beam_search(model, small_vocab, features_for(8),
                                beam_width=len(small_vocab), max_len=6)
        assert all(UNK not in h.ids for h in ranked)

    def test_log_probabilities_are_non_positive(self, small_vocab):
        model = make_model(small_vocab, seed=9)
        _, ranked = beam_search(model, small_vocab, features_for(10), beam_width=3,
                                max_len=6)
        assert all(h.logp <= 0.0 for h in ranked)

    def test_mask_prefix_property_on_survivors(self, small_vocab):
        model = make_model(small_vocab, "independent", seed=11)
        _, ranked = beam_search(model, small_vocab, features_for(12), beam_width=6,
                                max_len=5)
        for h in ranked:
            assert len(h.state) == len(h.ids)
            ref = batch_state(h.state.langs, model.cfg.w_same, model.cfg.w_diff,
                              model.cfg.alpha)
            assert np.array_equal(h.state.w, ref.w)
            assert np.array_equal(h.state.scale_a, ref.scale_a)
            assert np.array_equal(h.state.scale_b, ref.scale_b)

    def test_empty_features_rejected(self, small_vocab):
        model = make_model(small_vocab)
        with pytest.raises(DataError):
            beam_search(model, small_vocab, np.zeros((0, 4)))

    def test_bad_widths_rejected(self, small_vocab):
        model = make_model(small_vocab)
        with pytest.raises(DataError):
            beam_search(model, small_vocab, features_for(0), beam_width=0)
        with pytest.raises(DataError):
            beam_search(model, small_vocab, features_for(0), max_len=0)


class TestBankIsolationDuringDecode:
    def reads_b(self, model):
        return sum(blk["self_b"].reads for blk in model.dec_blocks)

    def test_lang_a_prefix_skips_bank_b(self, small_vocab):
        model = make_model(small_vocab, "independent", seed=13)
        feats = features_for(14)
        enc_out, enc_valid = model.encode(
            feats[None], np.ones((1, feats.shape[0]), dtype=bool)
        )
        a1 = small_vocab.id_of("a1")
        before = self.reads_b(model)
        prefix_logprobs(model, small_vocab, enc_out, enc_valid, [SOS, a1])
        assert self.reads_b(model) == before  # stream B merged with weight 0

    def test_all_special_prefix_reads_both_banks(self, small_vocab):
        model = make_model(small_vocab, "independent", seed=13)
        feats = features_for(14)
        enc_out, enc_valid = model.encode(
            feats[None], np.ones((1, feats.shape[0]), dtype=bool)
        )
        before = self.reads_b(model)
        prefix_logprobs(model, small_vocab, enc_out, enc_valid, [SOS])
        assert self.reads_b(model) == before + len(model.dec_blocks)
