"""Per-token input vectors: word lookup, character CNN, character bi-LSTM and their combinations."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import nn
from .corpus_io import EOW, MUL, PAD, SOW, EmbeddingFile, Vocabulary
from .optim import Parameter

MODES = ("WORD", "W2V", "CNN", "LSTM", "CNN+WORD", "CNN+W2V", "LSTM+WORD", "LSTM+W2V")

# composition table rows for slots that have no characters
NULL_ROW, ROOT_ROW = 0, 1
N_SPECIAL = 2


def normalize_mode(mode: str) -> str:
    m = mode.strip().upper()
    if m not in MODES:
        raise ValueError(f"unknown representation mode {mode!r}; choose from {', '.join(MODES)}")
    return m


@dataclass(frozen=True)
class ReprConfig:
    mode: str = "WORD"
    word_dim: int = 256
    tag_dim: int = 32
    label_dim: int = 32
    char_dim: int = 32
    kernel_lengths: tuple[int, ...] = (3, 5, 7, 9)
    channels_per_kernel: int = 64
    char_length: int = 32
    lstm_hidden: int = 128

    def __post_init__(self):
        object.__setattr__(self, "mode", normalize_mode(self.mode))
        object.__setattr__(self, "kernel_lengths", tuple(self.kernel_lengths))
        if self.uses_cnn and max(self.kernel_lengths) > self.char_length:
            raise ValueError("kernel longer than the padded character sequence")

    @property
    def composer(self) -> str | None:
        if self.mode.startswith("CNN"):
            return "CNN"
        if self.mode.startswith("LSTM"):
            return "LSTM"
        return None

    @property
    def uses_cnn(self) -> bool:
        return self.composer == "CNN"

    @property
    def uses_lstm(self) -> bool:
        return self.composer == "LSTM"

    @property
    def uses_words(self) -> bool:
        return self.composer is None or "+" in self.mode

    @property
    def uses_pretrained(self) -> bool:
        return self.mode.endswith("W2V")

    @property
    def composed_dim(self) -> int:
        if self.uses_cnn:
            return len(self.kernel_lengths) * self.channels_per_kernel
        if self.uses_lstm:
            return 2 * self.lstm_hidden
        return 0

    @property
    def input_dim(self) -> int:
        """Width of x(t): [composed;] [word;] tag; label."""
        word = self.word_dim if self.uses_words else 0
        return self.composed_dim + word + self.tag_dim + self.label_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_lengths"] = list(self.kernel_lengths)
        return d


def pad_chars(form: str, length: int = 32) -> tuple[str, ...]:
    """Fixed-length character symbols of ``form`` for the CNN.

    ``<SOW> chars <EOW>`` centred between ``<PAD>`` symbols (the extra one on the
    right), or, when too long, its prefix and suffix joined by one ``<MUL>``.
    """
    if length < 5:
        raise ValueError("character length must be at least 5")
    core = [SOW, *form, EOW]
    if len(core) > length:
        head = math.ceil((length - 1) / 2)
        tail = (length - 1) // 2
        return tuple(core[:head] + [MUL] + core[len(core) - tail :])
    pad = length - len(core)
    left = pad // 2
    return tuple([PAD] * left + core + [PAD] * (pad - left))


def lstm_chars(form: str) -> tuple[str, ...]:
    return (SOW, *form, EOW)


@dataclass
class InputBatch:
    """Resolved ids for B instances x 24 slots.

    ``comp_keys`` indexes the composition table: NULL_ROW, ROOT_ROW, or
    N_SPECIAL + position of the slot's form in ``forms``.
    """

    word_ids: np.ndarray
    tag_ids: np.ndarray
    label_ids: np.ndarray
    comp_keys: np.ndarray
    forms: list[str] = field(default_factory=list)


class TokenEncoder:
    """Owns the lookup tables and composition weights, builds x(t) for every slot."""

    def __init__(self, config: ReprConfig, vocab: Vocabulary):
        self.config = config
        self.vocab = vocab
        self._char_cache: dict[str, np.ndarray] = {}

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        cfg, vocab = self.config, self.vocab
        shapes: dict[str, tuple[int, ...]] = {}
        if cfg.uses_words:
            shapes["E_word"] = (len(vocab.word_index), cfg.word_dim)
        shapes["E_tag"] = (len(vocab.tag_index), cfg.tag_dim)
        shapes["E_label"] = (len(vocab.label_index), cfg.label_dim)
        if cfg.composer:
            shapes["E_char"] = (len(vocab.char_index), cfg.char_dim)
            shapes["comp_special"] = (N_SPECIAL, cfg.composed_dim)
        if cfg.uses_cnn:
            for k in cfg.kernel_lengths:
                shapes[f"conv{k}_K"] = (cfg.channels_per_kernel, cfg.char_dim, k)
                shapes[f"conv{k}_b"] = (cfg.channels_per_kernel,)
        if cfg.uses_lstm:
            H = cfg.lstm_hidden
            for direction in ("fw", "bw"):
                shapes[f"lstm_{direction}_W"] = (4 * H, cfg.char_dim + H)
                shapes[f"lstm_{direction}_b"] = (4 * H,)
        return shapes

    def init_params(
        self, rng: np.random.Generator, embeddings: EmbeddingFile | None = None, dtype=np.float32
    ) -> dict[str, Parameter]:
        cfg, vocab = self.config, self.vocab
        p: dict[str, Parameter] = {}
        if cfg.uses_words:
            table = nn.init_he((len(vocab.word_index), cfg.word_dim), cfg.word_dim, rng, dtype)
            if cfg.uses_pretrained:
                if embeddings is None:
                    raise ValueError(f"mode {cfg.mode} needs pre-trained embeddings")
                if embeddings.dimension != cfg.word_dim:
                    raise ValueError(
                        f"embedding dimension {embeddings.dimension} != word_dim {cfg.word_dim}"
                    )
                for form, vec in embeddings.entries.items():
                    idx = vocab.word_index.get(form)
                    if idx is not None:
                        table[idx] = vec
            p["E_word"] = Parameter(table)
        p["E_tag"] = Parameter(nn.init_he((len(vocab.tag_index), cfg.tag_dim), cfg.tag_dim, rng, dtype))
        p["E_label"] = Parameter(
            nn.init_he((len(vocab.label_index), cfg.label_dim), cfg.label_dim, rng, dtype)
        )
        if cfg.composer:
            p["E_char"] = Parameter(
                nn.init_he((len(vocab.char_index), cfg.char_dim), cfg.char_dim, rng, dtype)
            )
            p["comp_special"] = Parameter(
                nn.init_he((N_SPECIAL, cfg.composed_dim), cfg.composed_dim, rng, dtype)
            )
        if cfg.uses_cnn:
            for k in cfg.kernel_lengths:
                shape = (cfg.channels_per_kernel, cfg.char_dim, k)
                p[f"conv{k}_K"] = Parameter(nn.init_he(shape, cfg.char_dim * k, rng, dtype))
                p[f"conv{k}_b"] = Parameter(np.zeros(cfg.channels_per_kernel, dtype=dtype))
        if cfg.uses_lstm:
            H, d = cfg.lstm_hidden, cfg.char_dim
            for direction in ("fw", "bw"):
                W = np.concatenate([nn.init_orthogonal((H, d + H), rng, dtype) for _ in range(4)])
                p[f"lstm_{direction}_W"] = Parameter(W, l2_exempt=True)
                p[f"lstm_{direction}_b"] = Parameter(np.zeros(4 * H, dtype=dtype), l2_exempt=True)
        return p

    # character inputs

    def char_ids(self, form: str) -> np.ndarray:
        ids = self._char_cache.get(form)
        if ids is None:
            if self.config.uses_cnn:
                ids = self.vocab.char_ids(pad_chars(form, self.config.char_length))
            else:
                ids = self.vocab.char_ids(lstm_chars(form))
            self._char_cache[form] = ids
        return ids

    def compose(self, forms: Sequence[str], w: Mapping[str, np.ndarray]):
        """Composed vectors ``(len(forms), composed_dim)`` and a backward cache."""
        cfg = self.config
        if cfg.uses_cnn:
            ids = np.stack([self.char_ids(f) for f in forms])  # (U, L)
            X = w["E_char"][ids]  # (U, L, d)
            outs, caches = [], []
            for k in cfg.kernel_lengths:
                y, c = nn.conv1d_maxpool_nwc(X, w[f"conv{k}_K"], w[f"conv{k}_b"])
                outs.append(y)
                caches.append(c)
            return np.concatenate(outs, axis=1), ("CNN", ids, caches)
        seqs = [self.char_ids(f) for f in forms]
        lengths = np.array([len(s) for s in seqs])
        ids = np.zeros((len(seqs), lengths.max()), dtype=np.int64)
        for r, s in enumerate(seqs):
            ids[r, : len(s)] = s
        X = w["E_char"][ids]
        y, c = nn.bilstm_final(
            X, lengths, w["lstm_fw_W"], w["lstm_fw_b"], w["lstm_bw_W"], w["lstm_bw_b"]
        )
        return y, ("LSTM", ids, c, lengths)

    def compose_backward(self, dy, cache, grads: Mapping[str, np.ndarray]) -> None:
        cfg = self.config
        if cache[0] == "CNN":
            _, ids, caches = cache
            dX = None
            start = 0
            for k, c in zip(cfg.kernel_lengths, caches):
                stop = start + cfg.channels_per_kernel
                dXk, dK, db = nn.conv1d_maxpool_nwc_backward(dy[:, start:stop], c)
                grads[f"conv{k}_K"] += dK
                grads[f"conv{k}_b"] += db
                dX = dXk if dX is None else dX + dXk
                start = stop
            nn.scatter_add_rows(grads["E_char"], ids, dX)
            return
        _, ids, c, lengths = cache
        dX, dWf, dbf, dWb, dbb = nn.bilstm_final_backward(dy, c)
        grads["lstm_fw_W"] += dWf
        grads["lstm_fw_b"] += dbf
        grads["lstm_bw_W"] += dWb
        grads["lstm_bw_b"] += dbb
        valid = np.arange(ids.shape[1])[None, :] < lengths[:, None]
        nn.scatter_add_rows(grads["E_char"], ids[valid], dX[valid])

    def composition_table(self, forms: Sequence[str], w, chunk: int = 512) -> np.ndarray:
        """Special rows followed by the composed vector of each form (inference only)."""
        parts = [w["comp_special"]]
        for i in range(0, len(forms), chunk):
            parts.append(self.compose(forms[i : i + chunk], w)[0])
        return np.concatenate(parts, axis=0)

    # token inputs

    def forward(self, batch: InputBatch, w, table: np.ndarray | None = None):
        """x(t) for every slot: ``(B, 24, input_dim)``.

        ``table`` is a precomputed composition table (see composition_table)
        whose rows ``comp_keys`` index; when absent the batch's forms are composed.
        """
        cfg = self.config
        parts = []
        comp_cache = None
        if cfg.composer:
            if table is None:
                if batch.forms:
                    composed, comp_cache = self.compose(batch.forms, w)
                    table = np.concatenate([w["comp_special"], composed], axis=0)
                else:
                    table = w["comp_special"]
            parts.append(table[batch.comp_keys])
        if cfg.uses_words:
            parts.append(w["E_word"][batch.word_ids])
        parts.append(w["E_tag"][batch.tag_ids])
        parts.append(w["E_label"][batch.label_ids])
        return np.concatenate(parts, axis=-1), comp_cache

    def backward(self, dx, batch: InputBatch, comp_cache, grads) -> None:
        cfg = self.config
        start = 0
        if cfg.composer:
            d = cfg.composed_dim
            dtable = np.zeros((N_SPECIAL + len(batch.forms), d), dtype=dx.dtype)
            nn.scatter_add_rows(dtable, batch.comp_keys, dx[..., start : start + d])
            grads["comp_special"] += dtable[:N_SPECIAL]
            if comp_cache is not None:
                self.compose_backward(dtable[N_SPECIAL:], comp_cache, grads)
            start += d
        if cfg.uses_words:
            nn.scatter_add_rows(grads["E_word"], batch.word_ids, dx[..., start : start + cfg.word_dim])
            start += cfg.word_dim
        nn.scatter_add_rows(grads["E_tag"], batch.tag_ids, dx[..., start : start + cfg.tag_dim])
        start += cfg.tag_dim
        nn.scatter_add_rows(grads["E_label"], batch.label_ids, dx[..., start : start + cfg.label_dim])
