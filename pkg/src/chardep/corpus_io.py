"""Treebank reading/writing, vocabularies and pre-trained embedding files."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

ROOT_INDEX = 0

# reserved word/tag/label symbols
NULL = "<NULL>"
UNK = "<UNK>"
ROOT = "<ROOT>"
NOLABEL = "<NOLABEL>"

# reserved character symbols
SOW = "<SOW>"
EOW = "<EOW>"
MUL = "<MUL>"
PAD = "<PAD>"
CHAR_RESERVED = tuple(sorted((SOW, EOW, MUL, PAD, UNK)))

# A character that always resolves to the character-level UNK row, used for masking.
MASK_CHAR = "�"


class ConllError(ValueError):
    """Malformed CoNLL input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TreeError(ConllError):
    """Head assignment of a sentence is not a tree."""

    def __init__(self, message: str, sentence: int, line: int | None = None):
        self.sentence = sentence
        super().__init__(f"sentence {sentence}: {message}", line)


class EmbeddingFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    index: int
    form: str
    tag: str
    gold_head: int
    gold_label: str
    # raw CoNLL columns, kept so that writing preserves what we did not consume
    columns: tuple[str, ...] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"token index must be >= 1, got {self.index}")
        if self.gold_head < 0 or self.gold_head == self.index:
            raise ValueError(f"invalid head {self.gold_head} for token {self.index}")
        if not self.form:
            raise ValueError("token form must be non-empty")


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[Token, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]

    @property
    def tags(self) -> list[str]:
        return [t.tag for t in self.tokens]

    @property
    def heads(self) -> list[int]:
        return [t.gold_head for t in self.tokens]

    @property
    def labels(self) -> list[str]:
        return [t.gold_label for t in self.tokens]

    def arcs(self) -> list[tuple[int, str]]:
        """Gold (head, label) per token, in token order."""
        return [(t.gold_head, t.gold_label) for t in self.tokens]

    def with_forms(self, forms: Sequence[str]) -> "Sentence":
        if len(forms) != len(self.tokens):
            raise ValueError("form count does not match token count")
        return Sentence(
            tuple(
                Token(t.index, f, t.tag, t.gold_head, t.gold_label, t.columns)
                for t, f in zip(self.tokens, forms)
            )
        )


def tree_problem(heads: Sequence[int], single_root: bool = True) -> str | None:
    """Describe why 1-based ``heads`` (heads[i-1] is the head of token i) is not a tree."""
    n = len(heads)
    for i, h in enumerate(heads, start=1):
        if not 0 <= h <= n:
            return f"head {h} of token {i} out of range"
        if h == i:
            return f"token {i} is its own head"
    roots = [i for i, h in enumerate(heads, start=1) if h == 0]
    if not roots:
        return "no token attached to the root"
    if single_root and len(roots) > 1:
        return f"multiple root children {roots}"
    # every token must reach the root without revisiting a node
    state = [0] * (n + 1)  # 0 unknown, 1 on current path, 2 reaches root
    state[0] = 2
    for start in range(1, n + 1):
        path = []
        node = start
        while state[node] == 0:
            state[node] = 1
            path.append(node)
            node = heads[node - 1]
        if state[node] == 1:
            return f"cycle through token {node}"
        for p in path:
            state[p] = 2
    return None


def _open_text(source: str | IO[str]) -> IO[str]:
    if isinstance(source, str):
        return io.StringIO(source)
    return source


def read_conll(
    source: str | IO[str],
    tag_column: int = 4,
    single_root: bool = True,
) -> list[Sentence]:
    """Read sentences from CoNLL-X/CoNLL-U text.

    ``source`` is either the text itself or an open text stream. ``tag_column``
    is the 0-based column holding the POS tag used by the parser (4 is the
    fine-grained POSTAG of CoNLL-X; use 3 for the UPOS column of CoNLL-U).
    Multiword (``1-2``) and empty-node (``1.1``) rows are skipped.
    """
    stream = _open_text(source)
    sentences: list[Sentence] = []
    rows: list[tuple[int, list[str]]] = []

    def flush():
        if not rows:
            return
        sent_no = len(sentences) + 1
        first_line = rows[0][0]
        tokens = []
        for expected, (line_no, cols) in enumerate(rows, start=1):
            index = int(cols[0])
            if index != expected:
                raise ConllError(f"expected token id {expected}, found {index}", line_no)
            try:
                head = int(cols[6])
            except ValueError:
                raise ConllError(f"non-numeric HEAD {cols[6]!r}", line_no) from None
            if head == index or head < 0:
                raise TreeError(f"invalid head {head} for token {index}", sent_no, line_no)
            if not cols[1]:
                raise ConllError("empty FORM", line_no)
            tokens.append(Token(index, cols[1], cols[tag_column], head, cols[7], tuple(cols)))
        problem = tree_problem([t.gold_head for t in tokens], single_root)
        if problem:
            raise TreeError(problem, sent_no, first_line)
        sentences.append(Sentence(tuple(tokens)))
        rows.clear()

    for line_no, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) not in (8, 10):
            raise ConllError(f"expected 8 or 10 tab-separated columns, found {len(cols)}", line_no)
        if not cols[0].isdigit():
            if "-" in cols[0] or "." in cols[0]:
                continue
            raise ConllError(f"non-numeric ID {cols[0]!r}", line_no)
        rows.append((line_no, cols))
    flush()
    return sentences


def write_conll(
    sentences: Sequence[Sentence],
    predicted: Sequence[Sequence[tuple[int, str]]] | None = None,
) -> str:
    """Serialize sentences, using ``predicted`` (head, label) pairs when given.

    Columns the reader does not consume are reproduced from the input when the
    tokens carry them and written as ``_`` otherwise.
    """
    if predicted is not None and len(predicted) != len(sentences):
        raise ValueError(f"{len(predicted)} predictions for {len(sentences)} sentences")
    out = io.StringIO()
    for s_no, sent in enumerate(sentences):
        arcs = sent.arcs() if predicted is None else list(predicted[s_no])
        if len(arcs) != len(sent):
            raise ValueError(
                f"sentence {s_no + 1}: {len(arcs)} predicted arcs for {len(sent)} tokens"
            )
        for tok, (head, label) in zip(sent.tokens, arcs):
            if tok.columns is not None and len(tok.columns) == 10:
                cols = list(tok.columns)
            else:
                cols = [str(tok.index), tok.form, "_", tok.tag, tok.tag, "_", "_", "_", "_", "_"]
            cols[1] = tok.form
            cols[6] = str(head)
            cols[7] = label
            out.write("\t".join(cols) + "\n")
        out.write("\n")
    return out.getvalue()


def _index(reserved: Iterable[str], items: Iterable[str]) -> dict[str, int]:
    table: dict[str, int] = {}
    for sym in reserved:
        table[sym] = len(table)
    for item in items:
        if item not in table:
            table[item] = len(table)
    return table


@dataclass(frozen=True)
class Vocabulary:
    """Symbol tables for words, tags, labels and characters.

    Every lookup is total: unseen words, tags and characters resolve to an
    unknown id and absent slots (``None``) to the NULL id.
    """

    word_index: Mapping[str, int]
    tag_index: Mapping[str, int]
    label_index: Mapping[str, int]
    char_index: Mapping[str, int]
    word_counts: Mapping[str, int]

    def word_id(self, form: str | None) -> int:
        if form is None:
            return self.word_index[NULL]
        return self.word_index.get(form, self.word_index[UNK])

    def tag_id(self, tag: str | None) -> int:
        if tag is None:
            return self.tag_index[NULL]
        return self.tag_index.get(tag, self.tag_index[UNK])

    def label_id(self, label: str | None) -> int:
        if label is None:
            return self.label_index[NULL]
        return self.label_index.get(label, self.label_index[NOLABEL])

    def char_id(self, char: str) -> int:
        return self.char_index.get(char, self.char_index[UNK])

    def char_ids(self, symbols: Sequence[str]) -> np.ndarray:
        return np.fromiter((self.char_id(c) for c in symbols), dtype=np.int64, count=len(symbols))

    @property
    def labels(self) -> list[str]:
        """Dependency labels proper, in index order (reserved symbols excluded)."""
        return [lab for lab in self.label_index if lab not in (NULL, NOLABEL)]

    def in_vocabulary(self, form: str) -> bool:
        """True if ``form`` occurred in the training data."""
        return form in self.word_counts

    def extend_words(self, forms: Iterable[str]) -> "Vocabulary":
        """Vocabulary with extra word forms appended (e.g. from an embedding file)."""
        table = dict(self.word_index)
        for form in forms:
            if form not in table:
                table[form] = len(table)
        return Vocabulary(table, self.tag_index, self.label_index, self.char_index, self.word_counts)

    def to_dict(self) -> dict:
        return {
            "words": list(self.word_index),
            "tags": list(self.tag_index),
            "labels": list(self.label_index),
            "chars": list(self.char_index),
            "word_counts": dict(self.word_counts),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Vocabulary":
        def table(items):
            return {sym: i for i, sym in enumerate(items)}

        return cls(
            table(data["words"]),
            table(data["tags"]),
            table(data["labels"]),
            table(data["chars"]),
            dict(data["word_counts"]),
        )


def build_vocab(train: Sequence[Sentence]) -> Vocabulary:
    """Index every form, tag, label and character of the training corpus.

    Reserved symbols come first (sorted), then corpus symbols in order of first
    occurrence, so the assignment is a deterministic function of the corpus.
    """
    if not train:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts: dict[str, int] = {}
    tags: list[str] = []
    labels: list[str] = []
    chars: list[str] = []
    for sent in train:
        for tok in sent.tokens:
            counts[tok.form] = counts.get(tok.form, 0) + 1
            tags.append(tok.tag)
            labels.append(tok.gold_label)
            chars.extend(c for c in tok.form if c != MASK_CHAR)
    return Vocabulary(
        word_index=_index(sorted((NULL, UNK, ROOT)), counts),
        tag_index=_index(sorted((NULL, UNK, ROOT)), tags),
        label_index=_index(sorted((NULL, NOLABEL)), labels),
        char_index=_index(CHAR_RESERVED, chars),
        word_counts=counts,
    )


@dataclass(frozen=True)
class EmbeddingFile:
    dimension: int
    entries: Mapping[str, np.ndarray]

    def __len__(self) -> int:
        return len(self.entries)


def load_embeddings(source: str | IO[str], expected_dim: int) -> EmbeddingFile:
    """Parse a word2vec-style text file: optional ``count dim`` header, then
    one ``form v1 ... vd`` row per line. Duplicate forms keep their first row."""
    stream = _open_text(source)
    entries: dict[str, np.ndarray] = {}
    for line_no, raw in enumerate(stream, start=1):
        parts = raw.split()
        if not parts:
            continue
        if line_no == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
            if int(parts[1]) != expected_dim:
                raise EmbeddingFormatError(
                    f"line 1: header declares dimension {parts[1]}, expected {expected_dim}"
                )
            continue
        if len(parts) - 1 != expected_dim:
            raise EmbeddingFormatError(
                f"line {line_no}: {len(parts) - 1} values, expected {expected_dim}"
            )
        form = parts[0]
        if form in entries:
            continue
        try:
            vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
        except ValueError:
            raise EmbeddingFormatError(f"line {line_no}: non-numeric value") from None
        if not np.all(np.isfinite(vec)):
            raise EmbeddingFormatError(f"line {line_no}: non-finite value")
        entries[form] = vec
    return EmbeddingFile(expected_dim, entries)


def singleton_forms(vocab: Vocabulary) -> set[str]:
    return {form for form, c in vocab.word_counts.items() if c == 1}


def oov_rate(train_vocab: Vocabulary, corpus: Sequence[Sentence], by_type: bool = True) -> float:
    """Fraction of forms in ``corpus`` never seen in training."""
    if by_type:
        forms = {t.form for s in corpus for t in s.tokens}
        if not forms:
            return math.nan
        return sum(not train_vocab.in_vocabulary(f) for f in forms) / len(forms)
    toks = [t.form for s in corpus for t in s.tokens]
    if not toks:
        return math.nan
    return sum(not train_vocab.in_vocabulary(f) for f in toks) / len(toks)
