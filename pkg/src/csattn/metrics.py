"""Mixed error rate scoring over language-appropriate units.

One global Levenshtein alignment per utterance; errors are attributed to
a language bucket (A, B, or OTHER for unk): substitutions and deletions
by the reference unit, insertions by the hypothesis unit. Counts are
pooled over the corpus before division.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DataError
from .vocab import Lang, Vocab

OTHER = "OTHER"  # bucket for unk units (undefined language, always wrong)


def to_units(token_ids, vocab: Vocab) -> list[tuple[str, object]]:
    """Decoded token ids -> (surface, bucket) units.

    LangA tokens are character-like units, LangB tokens word units;
    pad/sos/eos are dropped; unk stays, bucketed as OTHER."""
    units = []
    for tid in token_ids:
        lang = vocab.token_language(int(tid))
        if lang is Lang.SPECIAL:
            if vocab.surface(int(tid)) == "<unk>":
                units.append(("<unk>", OTHER))
            continue
        units.append((vocab.surface(int(tid)), lang))
    return units


def edit_align(ref: list, hyp: list):
    """Minimal-cost alignment with unit costs; returns (ops, S, I, D).

    ops is a list of ("match"|"sub"|"ins"|"del", ref_idx|None, hyp_idx|None).
    Ties in the backtrace prefer substitution over insertion over deletion.
    """
    n, m = len(ref), len(hyp)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row = dist[i]
        prev = dist[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ri != hyp[j - 1])
            row[j] = min(sub, row[j - 1] + 1, prev[j] + 1)
    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            kind = "match" if ref[i - 1] == hyp[j - 1] else "sub"
            ops.append((kind, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif j > 0 and dist[i][j] == dist[i][j - 1] + 1:
            ops.append(("ins", None, j - 1))
            j -= 1
        else:
            ops.append(("del", i - 1, None))
            i -= 1
    ops.reverse()
    s = sum(1 for k, _, _ in ops if k == "sub")
    ins = sum(1 for k, _, _ in ops if k == "ins")
    dele = sum(1 for k, _, _ in ops if k == "del")
    return ops, s, ins, dele


@dataclass
class ScoreReport:
    utterances: int = 0
    ref_units: dict = field(default_factory=lambda: {Lang.A: 0, Lang.B: 0, OTHER: 0})
    sub: dict = field(default_factory=lambda: {Lang.A: 0, Lang.B: 0, OTHER: 0})
    ins: dict = field(default_factory=lambda: {Lang.A: 0, Lang.B: 0, OTHER: 0})
    dele: dict = field(default_factory=lambda: {Lang.A: 0, Lang.B: 0, OTHER: 0})

    def _errors(self, bucket) -> int:
        return self.sub[bucket] + self.ins[bucket] + self.dele[bucket]

    @property
    def total_ref(self) -> int:
        return sum(self.ref_units.values())

    @property
    def total_errors(self) -> int:
        return sum(self._errors(b) for b in self.ref_units)

    @property
    def mer(self) -> float:
        if self.total_ref == 0:
            raise DataError("no reference units to score")
        return self.total_errors / self.total_ref

    def _rate(self, bucket):
        """Per-language rate, or None when the language has no reference
        units (absent, never a fake 0)."""
        if self.ref_units[bucket] == 0:
            return None
        return self._errors(bucket) / self.ref_units[bucket]

    @property
    def cer_a(self):
        return self._rate(Lang.A)

    @property
    def wer_b(self):
        return self._rate(Lang.B)


def score_pair(report: ScoreReport, ref_units, hyp_units):
    report.utterances += 1
    for _, bucket in ref_units:
        report.ref_units[bucket] += 1
    ops, _, _, _ = edit_align([u for u, _ in ref_units], [u for u, _ in hyp_units])
    for kind, ri, hj in ops:
        if kind == "sub":
            report.sub[ref_units[ri][1]] += 1
        elif kind == "del":
            report.dele[ref_units[ri][1]] += 1
        elif kind == "ins":
            report.ins[hyp_units[hj][1]] += 1
    return report


def score_corpus(refs: dict, hyps: dict, vocab: Vocab) -> ScoreReport:
    """refs/hyps: utt_id -> token line (surfaces). Counts pooled over the
    whole corpus before division."""
    missing = sorted(set(refs) - set(hyps))
    extra = sorted(set(hyps) - set(refs))
    if missing or extra:
        raise DataError(
            f"utt_id mismatch: missing from hyp {missing[:5]}, extra in hyp {extra[:5]}"
        )
    report = ScoreReport()
    for utt_id in sorted(refs):
        ref_ids = vocab.encode(refs[utt_id])
        hyp_ids = vocab.encode(hyps[utt_id])
        score_pair(report, to_units(ref_ids, vocab), to_units(hyp_ids, vocab))
    # accounting identity: bucket errors sum exactly to the MER numerator
    assert report.total_errors == sum(
        report.sub[b] + report.ins[b] + report.dele[b] for b in (Lang.A, Lang.B, OTHER)
    )
    return report


def format_report(r: ScoreReport) -> str:
    def pct(x):
        return "absent" if x is None else f"{100.0 * x:.2f}"

    rows = [
        ("MER", pct(r.mer), r.total_ref),
        ("CER_A", pct(r.cer_a), r.ref_units[Lang.A]),
        ("WER_B", pct(r.wer_b), r.ref_units[Lang.B]),
    ]
    width = max(len(a) for a, _, _ in rows)
    table = "\n".join(f"{a:<{width}}  {b:>8}  (ref units {c})" for a, b, c in rows)
    kv = [
        f"MER={pct(r.mer)}",
        f"CER_A={pct(r.cer_a)}",
        f"WER_B={pct(r.wer_b)}",
        f"S={sum(r.sub.values())}",
        f"I={sum(r.ins.values())}",
        f"D={sum(r.dele.values())}",
        f"N={r.total_ref}",
        f"utts={r.utterances}",
    ]
    return table + "\n" + " ".join(kv)
