"""A generated agglutinative toy language for desk-scale experiments.

Verb-final clauses with case-marked noun phrases in free order. The case
suffix alone determines each noun's dependency label, and POS tags do not
distinguish cases, so a parser has to read the suffix to label (and, for
genitives, attach) nouns it has never seen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus_io import Sentence, Token

CASES = {
    "zak": "nsubj",
    "rom": "obj",
    "lut": "iobj",
    "pek": "obl",
}
GENITIVE = ("ko", "nmod")
VERB_SUFFIXES = ("ta", "nu", "sei")

_ONSETS = "bdfghjkmnprstvw"
_VOWELS = "aeiou"


def _stem(rng: np.random.Generator, syllables: int) -> str:
    return "".join(rng.choice(list(_ONSETS)) + rng.choice(list(_VOWELS)) for _ in range(syllables))


def _stems(rng: np.random.Generator, n: int, exclude: set[str]) -> list[str]:
    out: list[str] = []
    seen = set(exclude)
    while len(out) < n:
        s = _stem(rng, int(rng.integers(2, 4)))
        if s not in seen:
            seen.add(s)
            out.append(s)
    return out


@dataclass
class Lexicon:
    nouns: list[str]
    held_out_nouns: list[str]
    verbs: list[str]
    adjectives: list[str]

    @classmethod
    def generate(cls, rng: np.random.Generator, nouns: int = 300, held_out: int = 300, verbs: int = 40, adjectives: int = 60):
        taken: set[str] = set()
        n = _stems(rng, nouns, taken)
        taken.update(n)
        h = _stems(rng, held_out, taken)
        taken.update(h)
        v = _stems(rng, verbs, taken)
        taken.update(v)
        a = _stems(rng, adjectives, taken)
        return cls(n, h, v, a)


def _sentence(rng: np.random.Generator, lex: Lexicon, held_out_rate: float) -> Sentence:
    def noun() -> str:
        pool = lex.held_out_nouns if rng.random() < held_out_rate else lex.nouns
        return str(rng.choice(pool))

    n_args = int(rng.integers(1, 4))
    cases = list(rng.permutation(list(CASES))[:n_args])
    # (form, tag, label) left to right; heads hold 0-based positions, "verb" or -1 for the root
    words: list[tuple[str, str, str]] = []
    heads: list[int | str] = []
    for case in cases:
        start = len(words)
        has_gen = rng.random() < 0.3
        has_adj = rng.random() < 0.4
        noun_pos = start + has_gen + has_adj
        if has_gen:
            words.append((noun() + GENITIVE[0], "N", GENITIVE[1]))
            heads.append(noun_pos)
        if has_adj:
            words.append((str(rng.choice(lex.adjectives)) + "i", "A", "amod"))
            heads.append(noun_pos)
        words.append((noun() + case, "N", CASES[case]))
        heads.append("verb")
    verb_pos = len(words)
    words.append((str(rng.choice(lex.verbs)) + str(rng.choice(VERB_SUFFIXES)), "V", "root"))
    heads.append(-1)
    words.append((".", "PUNCT", "punct"))
    heads.append(verb_pos)
    tokens = []
    for i, ((form, tag, label), h) in enumerate(zip(words, heads), start=1):
        if h == "verb":
            head = verb_pos + 1
        elif h == -1:
            head = 0
        else:
            head = int(h) + 1
        tokens.append(Token(i, form, tag, head, label))
    return Sentence(tuple(tokens))


def toy_corpus(
    n: int, seed: int = 0, lexicon: Lexicon | None = None, held_out_rate: float = 0.0
) -> list[Sentence]:
    """``n`` sentences; ``held_out_rate`` is the chance a noun uses a held-out stem."""
    rng = np.random.default_rng(seed)
    lex = lexicon or Lexicon.generate(np.random.default_rng(seed + 10_000))
    return [_sentence(rng, lex, held_out_rate) for _ in range(n)]


def oov_splits(
    n_train: int = 2000, n_dev: int = 500, seed: int = 0, held_out_rate: float = 0.6
) -> tuple[list[Sentence], list[Sentence]]:
    """Train and dev sets sharing a lexicon; dev nouns partly use stems unseen in training."""
    lex = Lexicon.generate(np.random.default_rng(seed + 10_000))
    train = toy_corpus(n_train, seed=seed, lexicon=lex, held_out_rate=0.0)
    dev = toy_corpus(n_dev, seed=seed + 1, lexicon=lex, held_out_rate=held_out_rate)
    return train, dev
