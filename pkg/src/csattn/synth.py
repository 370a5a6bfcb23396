"""Synthetic bilingual corpora with an Equivalence-Constraint guarantee.

Two toy grammars with disjoint alphabets emit phrase-concatenation
sentences. Code-switched sentences switch language only at phrase
boundaries, so every maximal monolingual fragment is a concatenation of
inventory phrases and therefore lies in the monolingual generation space.
Pseudo-acoustic features are deterministic per (utt_id, seed): each token
emits 2-4 frames of its prototype vector plus Gaussian noise.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import DataError
from .vocab import Lang, Vocab, build_vocab

_PROTO_KEY = 0x50524F54  # namespace for prototype vectors


@dataclass
class ToyGrammar:
    lang: Lang
    phrases: list  # list of token tuples, n-grams with n in 1..4

    def __post_init__(self):
        if not self.phrases:
            raise DataError("grammar has an empty phrase inventory")
        if any(not p or len(p) > 4 for p in self.phrases):
            raise DataError("phrases must be 1..4 tokens long")

    def alphabet(self) -> set:
        return {t for p in self.phrases for t in p}


def default_grammar_a() -> ToyGrammar:
    """Character-like language: 30 single-letter-style symbols, 60
    unigram/bigram phrases."""
    symbols = [f"a{i:02d}" for i in range(1, 31)]
    rng = np.random.default_rng(np.random.SeedSequence([0xA5EED, 1]))
    phrases = [(s,) for s in symbols]
    seen = set(phrases)
    while len(phrases) < 60:
        big = tuple(rng.choice(symbols, size=2))
        if big not in seen:
            seen.add(big)
            phrases.append(big)
    return ToyGrammar(Lang.A, phrases)


def default_grammar_b() -> ToyGrammar:
    """Word-piece-like language: 40 multi-character symbols, 60 phrases of
    1-3 tokens."""
    rng = np.random.default_rng(np.random.SeedSequence([0xA5EED, 2]))
    cons = "bdgklmnprst"
    vow = "aeiou"
    symbols = []
    seen = set()
    while len(symbols) < 40:
        s = "".join(rng.choice(list(cons)) + rng.choice(list(vow)) for _ in range(2))
        if s not in seen:
            seen.add(s)
            symbols.append(s)
    phrases = [(s,) for s in symbols[:20]]
    pseen = set(phrases)
    while len(phrases) < 60:
        n = int(rng.integers(2, 4))
        p = tuple(rng.choice(symbols, size=n))
        if p not in pseen:
            pseen.add(p)
            phrases.append(p)
    return ToyGrammar(Lang.B, phrases)


def _utt_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def gen_monolingual(grammar: ToyGrammar, count: int, seed: int,
                    stream: int = 0) -> list[str]:
    """Each sentence concatenates 2-6 uniformly drawn phrases.
    Per-utterance seeding keeps generation order-independent."""
    if count < 1:
        raise DataError("count must be >= 1")
    lines = []
    for i in range(count):
        rng = _utt_rng(seed, stream, i)
        n = int(rng.integers(2, 7))
        toks = []
        for _ in range(n):
            toks.extend(grammar.phrases[int(rng.integers(len(grammar.phrases)))])
        lines.append(" ".join(toks))
    return lines


def gen_codeswitch(grammar_a: ToyGrammar, grammar_b: ToyGrammar, count: int,
                   switch_prob: float, seed: int, stream: int = 3) -> list[str]:
    """Phrase-by-phrase generation; after each phrase the language flips
    with probability switch_prob (switches only at phrase boundaries)."""
    if not 0.0 < switch_prob < 1.0:
        raise DataError(f"switch_prob must be in (0,1), got {switch_prob}")
    if count < 1:
        raise DataError("count must be >= 1")
    grams = {Lang.A: grammar_a, Lang.B: grammar_b}
    lines = []
    for i in range(count):
        rng = _utt_rng(seed, stream, i)
        n = int(rng.integers(2, 7))
        lang = Lang.A if rng.random() < 0.5 else Lang.B
        toks = []
        for k in range(n):
            g = grams[lang]
            toks.extend(g.phrases[int(rng.integers(len(g.phrases)))])
            if k < n - 1 and rng.random() < switch_prob:
                lang = Lang.B if lang is Lang.A else Lang.A
        lines.append(" ".join(toks))
    return lines


def phrase_cover(tokens: tuple, grammar: ToyGrammar) -> bool:
    """Dynamic-programming check that tokens split into inventory phrases."""
    phrases = set(grammar.phrases)
    n = len(tokens)
    reach = [False] * (n + 1)
    reach[0] = True
    for i in range(n):
        if not reach[i]:
            continue
        for j in range(i + 1, min(i + 4, n) + 1):
            if tuple(tokens[i:j]) in phrases:
                reach[j] = True
    return reach[n]


def monolingual_fragments(tokens, grammar_a: ToyGrammar, grammar_b: ToyGrammar):
    """Split a token sequence into maximal same-language runs."""
    alpha_a = grammar_a.alphabet()
    alpha_b = grammar_b.alphabet()
    frags = []
    cur, cur_lang = [], None
    for t in tokens:
        if t in alpha_a:
            lang = Lang.A
        elif t in alpha_b:
            lang = Lang.B
        else:
            raise DataError(f"token {t!r} in neither grammar alphabet")
        if lang is not cur_lang and cur:
            frags.append((cur_lang, tuple(cur)))
            cur = []
        cur_lang = lang
        cur.append(t)
    if cur:
        frags.append((cur_lang, tuple(cur)))
    return frags


def check_ec_property(line: str, grammar_a: ToyGrammar, grammar_b: ToyGrammar) -> bool:
    """Every maximal monolingual fragment must admit a phrase cover."""
    toks = line.split()
    grams = {Lang.A: grammar_a, Lang.B: grammar_b}
    return all(phrase_cover(frag, grams[lang])
               for lang, frag in monolingual_fragments(toks, grammar_a, grammar_b))


# -- pseudo-acoustic features ------------------------------------------------


def prototype(token_id: int, d_f: int = 16) -> np.ndarray:
    """Deterministic pseudo-random unit vector keyed by token id."""
    rng = np.random.default_rng(np.random.SeedSequence([_PROTO_KEY, token_id, d_f]))
    v = rng.standard_normal(d_f)
    return v / np.linalg.norm(v)


def featurize(tokens, utt_id: str, vocab: Vocab, seed: int, d_f: int = 16,
              noise: float = 0.1) -> np.ndarray:
    """2-4 frames per token of prototype + N(0, noise^2); reproducible
    from (utt_id, seed) alone."""
    rng = _utt_rng(seed, 0xFEA7, zlib.crc32(utt_id.encode()))
    frames = []
    for tok in tokens:
        proto = prototype(vocab.id_of(tok), d_f)
        r = int(rng.integers(2, 5))
        for _ in range(r):
            frames.append(proto + noise * rng.standard_normal(d_f))
    return np.array(frames)


# -- dataset on disk ---------------------------------------------------------

SPLITS = ("train_cs", "train_mono_a", "train_mono_b", "dev", "test")


@dataclass
class SynthConfig:
    cs_train: int = 2000
    mono_a: int = 5000
    mono_b: int = 5000
    dev: int = 500
    test: int = 500
    switch_prob: float = 0.4
    vocab_threshold: int = 1
    d_f: int = 16
    noise: float = 0.1
    seed: int = 0

    def to_dict(self):
        return asdict(self)


def write_dataset(outdir, cfg: SynthConfig):
    """Write corpus + manifest per split, the vocabulary, and data.cfg.
    Features are regenerated from manifests on demand, never stored."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    ga, gb = default_grammar_a(), default_grammar_b()
    corpora = {
        "train_mono_a": gen_monolingual(ga, cfg.mono_a, cfg.seed, stream=1),
        "train_mono_b": gen_monolingual(gb, cfg.mono_b, cfg.seed, stream=2),
        "train_cs": gen_codeswitch(ga, gb, cfg.cs_train, cfg.switch_prob, cfg.seed, stream=3),
        "dev": gen_codeswitch(ga, gb, cfg.dev, cfg.switch_prob, cfg.seed, stream=4),
        "test": gen_codeswitch(ga, gb, cfg.test, cfg.switch_prob, cfg.seed, stream=5),
    }
    alpha_a = ga.alphabet()
    vocab_a_lines = [corpora["train_mono_a"]]
    vocab_b_lines = [corpora["train_mono_b"]]
    for split in ("train_cs", "dev", "test"):
        for line in corpora[split]:
            toks = line.split()
            vocab_a_lines.append([" ".join(t for t in toks if t in alpha_a)])
            vocab_b_lines.append([" ".join(t for t in toks if t not in alpha_a)])
    vocab = build_vocab(
        [l for grp in vocab_a_lines for l in grp],
        [l for grp in vocab_b_lines for l in grp],
        threshold=cfg.vocab_threshold,
    )
    vocab.save(out / "vocab.txt")
    for split in SPLITS:
        lines = corpora[split]
        (out / f"{split}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        manifest = [f"{split}-{i:06d}\t{line}" for i, line in enumerate(lines)]
        (out / f"{split}.manifest").write_text(
            "\n".join(manifest) + "\n", encoding="utf-8"
        )
    cfg_lines = [f"{k} = {v}" for k, v in cfg.to_dict().items()]
    (out / "data.cfg").write_text("\n".join(cfg_lines) + "\n", encoding="utf-8")
    return vocab


def load_manifest(path) -> list[tuple[str, str]]:
    entries = []
    for ln, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{ln}: expected `utt_id<TAB>tokens`")
        entries.append((parts[0], parts[1]))
    return entries


def load_data_cfg(datadir) -> SynthConfig:
    path = Path(datadir) / "data.cfg"
    if not path.exists():
        raise DataError(f"missing {path}; is {datadir} a synthesized dataset?")
    kv = {}
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}: bad config line {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        kv[k] = v
    cfg = SynthConfig()
    for k, v in kv.items():
        if not hasattr(cfg, k):
            raise DataError(f"{path}: unknown key {k!r}")
        cur = getattr(cfg, k)
        setattr(cfg, k, type(cur)(v) if not isinstance(cur, float) else float(v))
    return cfg
