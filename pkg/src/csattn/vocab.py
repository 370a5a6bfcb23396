"""Language-tagged vocabulary: ids, surfaces, language membership, encoding."""
from __future__ import annotations

from collections import Counter
from enum import Enum
from pathlib import Path

from .errors import DataError, VocabError

PAD, SOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_SURFACES = ("<pad>", "<sos>", "<eos>", "<unk>")


class Lang(Enum):
    A = "A"
    B = "B"
    SPECIAL = "S"


class Vocab:
    """Bijective surface<->id table with a language tag per id.

    Ids 0..3 are reserved (pad, sos, eos, unk) and tagged SPECIAL.
    """

    def __init__(self, surfaces_a: list[str], surfaces_b: list[str]):
        overlap = set(surfaces_a) & set(surfaces_b)
        if overlap:
            raise DataError(f"surfaces present in both languages: {sorted(overlap)[:5]}")
        self._id_to_entry: list[tuple[str, Lang]] = [
            (s, Lang.SPECIAL) for s in SPECIAL_SURFACES
        ]
        for s in surfaces_a:
            self._id_to_entry.append((s, Lang.A))
        for s in surfaces_b:
            self._id_to_entry.append((s, Lang.B))
        self._surface_to_id = {s: i for i, (s, _) in enumerate(self._id_to_entry)}
        if len(self._surface_to_id) != len(self._id_to_entry):
            raise DataError("duplicate surface within a language")

    def __len__(self):
        return len(self._id_to_entry)

    def id_of(self, surface: str) -> int:
        return self._surface_to_id.get(surface, UNK)

    def surface(self, tid: int) -> str:
        self._check(tid)
        return self._id_to_entry[tid][0]

    def token_language(self, tid: int) -> Lang:
        self._check(tid)
        return self._id_to_entry[tid][1]

    def _check(self, tid: int):
        if not 0 <= tid < len(self._id_to_entry):
            raise VocabError(f"unknown token id {tid} (vocab size {len(self)})")

    def encode(self, line: str) -> list[int]:
        """Whitespace-tokenized line -> [sos, ids..., eos]; OOV maps to unk."""
        return [SOS] + [self.id_of(t) for t in line.split()] + [EOS]

    def decode(self, ids: list[int]) -> str:
        """Drop specials and join surfaces (unk is kept, as '<unk>')."""
        out = []
        for tid in ids:
            if tid == UNK:
                out.append(self._id_to_entry[UNK][0])
            elif self.token_language(tid) is not Lang.SPECIAL:
                out.append(self._id_to_entry[tid][0])
        return " ".join(out)

    def ids_of_language(self, lang: Lang) -> list[int]:
        return [i for i, (_, l) in enumerate(self._id_to_entry) if l is lang]

    # -- file format: one `surface<TAB>tag` line per non-reserved entry ------

    def save(self, path):
        lines = [
            f"{s}\t{l.value}"
            for s, l in self._id_to_entry[len(SPECIAL_SURFACES):]
        ]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        surfaces_a, surfaces_b = [], []
        for ln, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not raw.strip():
                continue
            parts = raw.split("\t")
            if len(parts) != 2 or parts[1] not in ("A", "B"):
                raise DataError(f"{path}:{ln}: bad vocab line {raw!r}")
            (surfaces_a if parts[1] == "A" else surfaces_b).append(parts[0])
        return cls(surfaces_a, surfaces_b)


def build_vocab(corpus_a: list[str], corpus_b: list[str], threshold: int = 1) -> Vocab:
    """Build a tagged vocabulary from two monolingual corpora.

    A token is kept iff it occurs strictly more than `threshold` times in
    its corpus. Ids are deterministic: reserved, then language A surfaces
    sorted, then language B surfaces sorted.
    """
    if not corpus_a or not corpus_b:
        raise DataError("both corpora must be non-empty")
    counts_a = Counter(t for line in corpus_a for t in line.split())
    counts_b = Counter(t for line in corpus_b for t in line.split())
    if not counts_a or not counts_b:
        raise DataError("a corpus contains no tokens")
    keep_a = sorted(t for t, c in counts_a.items() if c > threshold)
    keep_b = sorted(t for t, c in counts_b.items() if c > threshold)
    if not keep_a or not keep_b:
        raise DataError(f"frequency threshold {threshold} removed an entire language")
    return Vocab(keep_a, keep_b)
