"""The 24 token slots read off a parser configuration."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .corpus_io import NOLABEL, ROOT, ROOT_INDEX, Sentence, Vocabulary
from .transition_system import Configuration

N_SLOTS = 24

SLOT_NAMES = (
    "s1", "s2", "s3", "s4",
    "b1", "b2", "b3", "b4",
    "s1.lc1", "s1.lc2", "s1.rc1", "s1.rc2",
    "s2.lc1", "s2.lc2", "s2.rc1", "s2.rc2",
    "s3.lc1", "s3.lc2", "s3.rc1", "s3.rc2",
    "s1.lc1.lc1", "s1.lc1.rc1", "s1.rc1.lc1", "s1.rc1.rc1",
)  # fmt: skip


@dataclass(frozen=True)
class FeatureSlots:
    """Token index per slot (None when absent) and the resolved id triples."""

    tokens: tuple[int | None, ...]
    word_ids: tuple[int, ...]
    tag_ids: tuple[int, ...]
    label_ids: tuple[int, ...]
    forms: tuple[str | None, ...]

    def __len__(self) -> int:
        return len(self.tokens)


class _Children:
    """Left children ascending, right children descending, per head."""

    def __init__(self, config: Configuration):
        self.left: dict[int, list[int]] = {}
        self.right: dict[int, list[int]] = {}
        self.label: dict[int, str] = {}
        for head, dep, label in config.arcs:
            self.label[dep] = label
            side = self.left if dep < head else self.right
            side.setdefault(head, []).append(dep)
        for deps in self.left.values():
            deps.sort()
        for deps in self.right.values():
            deps.sort(reverse=True)

    def lc(self, tok: int | None, i: int) -> int | None:
        if tok is None:
            return None
        deps = self.left.get(tok, ())
        return deps[i - 1] if len(deps) >= i else None

    def rc(self, tok: int | None, i: int) -> int | None:
        if tok is None:
            return None
        deps = self.right.get(tok, ())
        return deps[i - 1] if len(deps) >= i else None


def slot_tokens(config: Configuration) -> tuple[tuple[int | None, ...], dict[int, str]]:
    """Token index for each of the 24 slots, plus the labels of attached tokens."""
    ch = _Children(config)
    stack, buffer = config.stack, config.buffer
    s = [stack[-i] if len(stack) >= i else None for i in range(1, 5)]
    b = [buffer[i] if len(buffer) > i else None for i in range(4)]
    slots: list[int | None] = s + b
    for tok in s[:3]:
        slots += [ch.lc(tok, 1), ch.lc(tok, 2), ch.rc(tok, 1), ch.rc(tok, 2)]
    lc1, rc1 = ch.lc(s[0], 1), ch.rc(s[0], 1)
    slots += [ch.lc(lc1, 1), ch.rc(lc1, 1), ch.lc(rc1, 1), ch.rc(rc1, 1)]
    return tuple(slots), ch.label


def extract(config: Configuration, sentence: Sentence, vocab: Vocabulary) -> FeatureSlots:
    """Resolve the 24 slots of ``config`` to word/tag/label ids.

    Unattached tokens carry the NOLABEL label id; absent slots the NULL triple.
    Children are read from the arcs built so far.
    """
    tokens, labels = slot_tokens(config)
    nolabel = vocab.label_index[NOLABEL]

    def label_of(tok: int) -> int:
        return vocab.label_id(labels[tok]) if tok in labels else nolabel

    words, tags, labs, forms = [], [], [], []
    for tok in tokens:
        if tok is None:
            forms.append(None)
            words.append(vocab.word_id(None))
            tags.append(vocab.tag_id(None))
            labs.append(vocab.label_id(None))
        elif tok == ROOT_INDEX:
            forms.append(ROOT)
            words.append(vocab.word_index[ROOT])
            tags.append(vocab.tag_index[ROOT])
            labs.append(label_of(tok))
        else:
            t = sentence.tokens[tok - 1]
            forms.append(t.form)
            words.append(vocab.word_id(t.form))
            tags.append(vocab.tag_id(t.tag))
            labs.append(label_of(tok))
    return FeatureSlots(tokens, tuple(words), tuple(tags), tuple(labs), tuple(forms))


def extract_many(
    configs: Sequence[Configuration], sentences: Sequence[Sentence], vocab: Vocabulary
) -> list[FeatureSlots]:
    return [extract(c, s, vocab) for c, s in zip(configs, sentences)]
