"""Feed-forward transition classifier, greedy decoding, training schedule and model files."""

from __future__ import annotations

import io
import json
import logging
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Callable, Mapping, Sequence

import numpy as np

from . import nn
from .corpus_io import (
    ROOT_INDEX,
    UNK,
    EmbeddingFile,
    Sentence,
    Vocabulary,
    build_vocab,
)
from .features import N_SLOTS, FeatureSlots, extract
from .optim import OptimizerState, Parameter, sgd_step
from .representations import N_SPECIAL, NULL_ROW, ROOT_ROW, InputBatch, ReprConfig, TokenEncoder
from .transition_system import (
    ARC_KINDS,
    Configuration,
    Kind,
    Transition,
    UnreachableTree,
    apply,
    derive,
    initial_config,
    is_terminal,
    legal,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = "chardep-model/1"


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    token_dim: int = 128
    hidden1: int = 512
    hidden2: int = 256
    dropout: float = 0.1
    single_root: bool = True
    # probability of replacing a singleton training form by UNK in each sampled instance
    unk_replace: float = 0.5


@dataclass(frozen=True)
class TrainSchedule:
    max_steps: int = 100_000
    batch_size: int = 100
    eval_every: int = 2000
    patience: int = 3
    lr: float = 0.1
    decay: float = 0.95
    decay_steps: int = 2000
    momentum: float = 0.9
    l2: float = 1e-4
    max_grad_norm: float = 10.0
    log_every: int = 100
    # stop as soon as dev LAS reaches this value (None: schedule only)
    target_las: float | None = None

    def optimizer(self) -> OptimizerState:
        return OptimizerState(
            base_lr=self.lr,
            decay=self.decay,
            decay_steps=self.decay_steps,
            momentum=self.momentum,
            l2=self.l2,
            max_grad_norm=self.max_grad_norm,
        )


class Model:
    """All learned tensors plus the vocabulary and configuration needed to use them."""

    def __init__(
        self,
        vocab: Vocabulary,
        repr_config: ReprConfig,
        net: NetConfig = NetConfig(),
        params: dict[str, Parameter] | None = None,
        seed: int = 0,
        embeddings: EmbeddingFile | None = None,
        dtype=np.float32,
    ):
        self.vocab = vocab
        self.repr_config = repr_config
        self.net = net
        self.encoder = TokenEncoder(repr_config, vocab)
        self.labels = vocab.labels
        self.n_actions = 1 + len(ARC_KINDS) * len(self.labels)
        self._label_pos = {lab: i for i, lab in enumerate(self.labels)}
        # kind of each output unit, for legality masks
        self.action_kinds = np.array(
            [Kind.SHIFT] + [k for k in ARC_KINDS for _ in self.labels], dtype=np.int64
        )
        if params is None:
            params = self._init_params(np.random.default_rng(seed), embeddings, dtype)
        self.params = params

    def _layer_shapes(self) -> dict[str, tuple[int, int]]:
        net = self.net
        return {
            "f": (net.token_dim, self.repr_config.input_dim),
            "1": (net.hidden1, N_SLOTS * net.token_dim),
            "2": (net.hidden2, net.hidden1),
            "3": (self.n_actions, net.hidden2),
        }

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = self.encoder.param_shapes()
        for name, (n_out, n_in) in self._layer_shapes().items():
            shapes[f"W_{name}"] = (n_out, n_in)
            shapes[f"b_{name}"] = (n_out,)
        return shapes

    def _init_params(self, rng, embeddings, dtype) -> dict[str, Parameter]:
        p = self.encoder.init_params(rng, embeddings, dtype)
        for name, (n_out, n_in) in self._layer_shapes().items():
            p[f"W_{name}"] = Parameter(nn.init_he((n_out, n_in), n_in, rng, dtype))
            p[f"b_{name}"] = Parameter(np.zeros(n_out, dtype=dtype))
        return p

    @property
    def mode(self) -> str:
        return self.repr_config.mode

    @property
    def param_list(self) -> list[Parameter]:
        return list(self.params.values())

    def weights(self, averaged: bool = True) -> dict[str, np.ndarray]:
        return {k: (p.average if averaged else p.value) for k, p in self.params.items()}

    # output space

    def action_index(self, t: Transition) -> int:
        if t.kind is Kind.SHIFT:
            return 0
        return 1 + (t.kind - 1) * len(self.labels) + self._label_pos[t.label]

    def action(self, index: int) -> Transition:
        if index == 0:
            return Transition(Kind.SHIFT)
        k, lab = divmod(index - 1, len(self.labels))
        return Transition(Kind(k + 1), self.labels[lab])

    def legal_mask(self, kinds: np.ndarray) -> np.ndarray:
        """Boolean ``(B, n_actions)`` mask from a ``(B, 5)`` legal-kind matrix."""
        return kinds[:, self.action_kinds]

    # network

    def forward(
        self,
        batch: InputBatch,
        w: Mapping[str, np.ndarray],
        training: bool = False,
        rng: np.random.Generator | None = None,
        table: np.ndarray | None = None,
    ):
        x, comp_cache = self.encoder.forward(batch, w, table)
        f, c_f = nn.dense_relu(x, w["W_f"], w["b_f"])
        h0 = f.reshape(f.shape[0], -1)
        h1, c_1 = nn.dense_relu(h0, w["W_1"], w["b_1"])
        h1, keep1 = nn.dropout(h1, self.net.dropout, training, rng)
        h2, c_2 = nn.dense_relu(h1, w["W_2"], w["b_2"])
        h2, keep2 = nn.dropout(h2, self.net.dropout, training, rng)
        logits, c_3 = nn.dense(h2, w["W_3"], w["b_3"])
        return logits, (batch, comp_cache, c_f, f.shape, c_1, keep1, c_2, keep2, c_3)

    def backward(self, dlogits: np.ndarray, cache, grads: Mapping[str, np.ndarray]) -> None:
        batch, comp_cache, c_f, f_shape, c_1, keep1, c_2, keep2, c_3 = cache
        dh2, dW, db = nn.dense_backward(dlogits, c_3)
        grads["W_3"] += dW
        grads["b_3"] += db
        dh2 = nn.dropout_backward(dh2, keep2)
        dh1, dW, db = nn.dense_relu_backward(dh2, c_2)
        grads["W_2"] += dW
        grads["b_2"] += db
        dh1 = nn.dropout_backward(dh1, keep1)
        dh0, dW, db = nn.dense_relu_backward(dh1, c_1)
        grads["W_1"] += dW
        grads["b_1"] += db
        dx, dW, db = nn.dense_relu_backward(dh0.reshape(f_shape), c_f)
        grads["W_f"] += dW
        grads["b_f"] += db
        self.encoder.backward(dx, batch, comp_cache, grads)

    # feature resolution

    def batch_from_slots(self, slots: Sequence[FeatureSlots], form_rows: Mapping[str, int] | None = None):
        """InputBatch for a list of extracted slot sets.

        With ``form_rows`` (form -> composition-table row) the keys index a
        precomputed table; otherwise the batch carries its own unique forms.
        """
        word_ids = np.array([s.word_ids for s in slots], dtype=np.int64).reshape(-1, N_SLOTS)
        tag_ids = np.array([s.tag_ids for s in slots], dtype=np.int64).reshape(-1, N_SLOTS)
        label_ids = np.array([s.label_ids for s in slots], dtype=np.int64).reshape(-1, N_SLOTS)
        keys = np.zeros(word_ids.shape, dtype=np.int64)
        forms: list[str] = []
        if self.repr_config.composer:
            local: dict[str, int] = {}
            for r, s in enumerate(slots):
                for c, (tok, form) in enumerate(zip(s.tokens, s.forms)):
                    if tok is None:
                        keys[r, c] = NULL_ROW
                    elif tok == ROOT_INDEX:
                        keys[r, c] = ROOT_ROW
                    elif form_rows is not None:
                        keys[r, c] = form_rows[form]
                    else:
                        if form not in local:
                            local[form] = N_SPECIAL + len(forms)
                            forms.append(form)
                        keys[r, c] = local[form]
        return InputBatch(word_ids, tag_ids, label_ids, keys, [] if form_rows else forms)

    def score(self, config: Configuration, sentence: Sentence, averaged: bool = True) -> np.ndarray:
        """Logits over all transitions for one configuration (inference mode)."""
        batch = self.batch_from_slots([extract(config, sentence, self.vocab)])
        logits, _ = self.forward(batch, self.weights(averaged))
        return logits[0]

    def loss(self, batch: InputBatch, gold: np.ndarray, mask: np.ndarray, averaged: bool = False) -> float:
        logits, _ = self.forward(batch, self.weights(averaged))
        losses, _, _ = nn.softmax_xent(logits, gold, mask)
        return float(losses.mean())


def _kinds_row(config: Configuration, single_root: bool) -> np.ndarray:
    row = np.zeros(len(Kind), dtype=bool)
    for k in legal(config, single_root):
        row[k] = True
    return row


def parse_batch(
    sentences: Sequence[Sentence],
    model: Model,
    averaged: bool = True,
    chunk: int = 256,
    threads: int = 1,
) -> list[list[tuple[int, str]]]:
    """Greedy decoding of many sentences in lockstep; (head, label) per token.

    Chunks are independent, so with ``threads > 1`` they are decoded in a
    thread pool; the result does not depend on the thread count.
    """
    chunks = [sentences[i : i + chunk] for i in range(0, len(sentences), chunk)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: _parse_chunk(c, model, averaged), chunks))
    else:
        parts = [_parse_chunk(c, model, averaged) for c in chunks]
    return [r for part in parts for r in part]


def _parse_chunk(sentences, model: Model, averaged: bool):
    w = model.weights(averaged)
    single_root = model.net.single_root
    table = None
    form_rows: dict[str, int] | None = None
    if model.repr_config.composer:
        forms = sorted({t.form for s in sentences for t in s.tokens})
        form_rows = {f: N_SPECIAL + i for i, f in enumerate(forms)}
        table = model.encoder.composition_table(forms, w)
    configs = [initial_config(s) for s in sentences]
    active = list(range(len(sentences)))
    while active:
        slots = [extract(configs[i], sentences[i], model.vocab) for i in active]
        batch = model.batch_from_slots(slots, form_rows)
        logits, _ = model.forward(batch, w, table=table)
        kinds = np.stack([_kinds_row(configs[i], single_root) for i in active])
        logits = np.where(model.legal_mask(kinds), logits, -np.inf)
        choice = logits.argmax(axis=1)
        still = []
        for i, a in zip(active, choice):
            configs[i] = apply(configs[i], model.action(int(a)), single_root)
            if not is_terminal(configs[i]):
                still.append(i)
        active = still
    out = []
    for s, c in zip(sentences, configs):
        heads = c.heads()
        out.append([heads[i] for i in range(1, len(s) + 1)])
    return out


def parse(sentence: Sentence, model: Model, averaged: bool = True) -> list[tuple[int, str]]:
    return parse_batch([sentence], model, averaged)[0]


# training


@dataclass
class Instances:
    """Static-oracle training instances: resolved slots, gold action, legal kinds."""

    word_ids: np.ndarray
    tag_ids: np.ndarray
    label_ids: np.ndarray
    form_keys: np.ndarray  # -1 NULL, -2 ROOT, else index into ``forms``
    forms: list[str]
    gold: np.ndarray
    kinds: np.ndarray
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.gold)


def make_instances(sentences: Sequence[Sentence], model: Model) -> Instances:
    vocab = model.vocab
    single_root = model.net.single_root
    words, tags, labels, keys, gold, kinds = [], [], [], [], [], []
    form_pos: dict[str, int] = {}
    skipped = 0
    for s_no, sent in enumerate(sentences):
        try:
            steps = derive(sent, single_root)
        except UnreachableTree as exc:
            skipped += 1
            log.warning("skipping training sentence %d: %s", s_no + 1, exc)
            continue
        for config, t in steps:
            sl = extract(config, sent, vocab)
            words.append(sl.word_ids)
            tags.append(sl.tag_ids)
            labels.append(sl.label_ids)
            row = []
            for tok, form in zip(sl.tokens, sl.forms):
                if tok is None:
                    row.append(-1)
                elif tok == ROOT_INDEX:
                    row.append(-2)
                else:
                    row.append(form_pos.setdefault(form, len(form_pos)))
            keys.append(row)
            gold.append(model.action_index(t))
            kinds.append(_kinds_row(config, single_root))
    if not gold:
        raise ValueError("no derivable training sentences")
    as_int = lambda rows: np.array(rows, dtype=np.int64).reshape(-1, N_SLOTS)  # noqa: E731
    return Instances(
        as_int(words),
        as_int(tags),
        as_int(labels),
        as_int(keys),
        list(form_pos),
        np.array(gold, dtype=np.int64),
        np.array(kinds, dtype=bool).reshape(-1, len(Kind)),
        skipped,
    )


def sample_batch(
    inst: Instances,
    idx: np.ndarray,
    model: Model,
    rng: np.random.Generator | None = None,
    singletons: np.ndarray | None = None,
) -> InputBatch:
    """Batch for instance rows ``idx``; singleton word ids go to UNK at rate ``unk_replace``."""
    word_ids = inst.word_ids[idx]
    if rng is not None and singletons is not None and model.net.unk_replace > 0:
        drop = singletons[word_ids] & (rng.random(word_ids.shape) < model.net.unk_replace)
        word_ids = np.where(drop, model.vocab.word_index[UNK], word_ids)
    keys = inst.form_keys[idx]
    comp = np.where(keys == -1, NULL_ROW, ROOT_ROW)
    forms: list[str] = []
    if model.repr_config.composer:
        real = keys >= 0
        uniq, inv = np.unique(keys[real], return_inverse=True)
        comp[real] = N_SPECIAL + inv.ravel()
        forms = [inst.forms[k] for k in uniq]
    return InputBatch(word_ids, inst.tag_ids[idx], inst.label_ids[idx], comp, forms)


def singleton_mask(vocab: Vocabulary) -> np.ndarray:
    mask = np.zeros(len(vocab.word_index), dtype=bool)
    for form, count in vocab.word_counts.items():
        if count == 1:
            mask[vocab.word_index[form]] = True
    return mask


def train_step(
    model: Model,
    batch: InputBatch,
    gold: np.ndarray,
    mask: np.ndarray,
    opt: OptimizerState,
    rng: np.random.Generator | None = None,
) -> float:
    """Forward/backward on one mini-batch and one optimizer update; returns the mean loss."""
    w = model.weights(averaged=False)
    logits, cache = model.forward(batch, w, training=rng is not None, rng=rng)
    losses, _, dlogits = nn.softmax_xent(logits, gold, mask)
    grads = {k: p.grad for k, p in model.params.items()}
    model.backward(dlogits / len(gold), cache, grads)
    sgd_step(model.param_list, opt)
    return float(losses.mean())


def attachment_scores(gold: Sequence[Sentence], predicted) -> tuple[float, float]:
    from .evaluation import score

    s = score(gold, predicted)
    return s.las, s.uas


@dataclass
class TrainResult:
    model: Model
    log: list[dict] = field(default_factory=list)
    best_step: int = 0
    best_las: float = float("-inf")
    steps: int = 0
    stop_reason: str = ""
    instances: int = 0
    skipped: int = 0


def _snapshot(model: Model, opt: OptimizerState):
    return (
        {k: (p.value.copy(), p.average.copy(), p.velocity.copy()) for k, p in model.params.items()},
        opt.step,
    )


def _restore(model: Model, snap) -> None:
    tensors, _ = snap
    for k, (v, a, vel) in tensors.items():
        p = model.params[k]
        p.value[...] = v
        p.average[...] = a
        p.velocity[...] = vel
        p.zero_grad()


def train(
    train_set: Sequence[Sentence],
    dev_set: Sequence[Sentence],
    repr_config: ReprConfig = ReprConfig(),
    schedule: TrainSchedule = TrainSchedule(),
    net: NetConfig = NetConfig(),
    seed: int = 0,
    embeddings: EmbeddingFile | None = None,
    on_log: Callable[[dict], None] | None = None,
    threads: int = 1,
) -> TrainResult:
    """Train on static-oracle instances with periodic dev evaluation and early stopping.

    Mini-batches are drawn uniformly at random from all instances. Every
    ``eval_every`` updates the averaged parameters parse ``dev_set``; training
    stops after ``patience`` consecutive evaluations without a strictly better
    LAS (or at ``max_steps``) and the best evaluated model is returned.
    ``threads`` only parallelizes dev parsing, which leaves results unchanged.
    """
    if not train_set or not dev_set:
        raise ValueError("training and development corpora must be non-empty")
    vocab = build_vocab(train_set)
    if repr_config.uses_pretrained:
        if embeddings is None:
            raise ValueError(f"mode {repr_config.mode} needs pre-trained embeddings")
        vocab = vocab.extend_words(embeddings.entries)
    init_seq, sample_seq, drop_seq, unk_seq = np.random.SeedSequence(seed).spawn(4)
    model = Model(vocab, repr_config, net, seed=int(init_seq.generate_state(1)[0]), embeddings=embeddings)
    inst = make_instances(train_set, model)
    log.info("%d training instances (%d sentences skipped)", len(inst), inst.skipped)
    sample_rng = np.random.default_rng(sample_seq)
    drop_rng = np.random.default_rng(drop_seq)
    unk_rng = np.random.default_rng(unk_seq)
    singletons = singleton_mask(vocab)
    opt = schedule.optimizer()
    result = TrainResult(model, instances=len(inst), skipped=inst.skipped)

    def emit(row: dict) -> None:
        result.log.append(row)
        if on_log is not None:
            on_log(row)

    best = None
    bad = 0
    while opt.step < schedule.max_steps:
        step, lr = opt.step, opt.lr()
        idx = sample_rng.integers(0, len(inst), size=schedule.batch_size)
        batch = sample_batch(inst, idx, model, unk_rng, singletons)
        loss = train_step(model, batch, inst.gold[idx], model.legal_mask(inst.kinds[idx]), opt, drop_rng)
        if step % schedule.log_every == 0:
            emit({"event": "train", "step": step, "lr": lr, "loss": loss})
        if opt.step % schedule.eval_every == 0:
            las, uas = attachment_scores(dev_set, parse_batch(dev_set, model, averaged=True, threads=threads))
            improved = las > result.best_las
            if improved:
                result.best_las, result.best_step = las, opt.step
                best = _snapshot(model, opt)
                bad = 0
            else:
                bad += 1
            emit(
                {
                    "event": "eval",
                    "step": opt.step,
                    "lr": opt.lr(),
                    "dev_las": las,
                    "dev_uas": uas,
                    "best": improved,
                }
            )
            if bad >= schedule.patience:
                result.stop_reason = f"no improvement in {bad} evaluations"
                break
            if schedule.target_las is not None and las >= schedule.target_las:
                result.stop_reason = "target reached"
                break
    else:
        result.stop_reason = "max steps"
    result.steps = opt.step
    if best is None:
        # never evaluated: keep the final state
        las, _ = attachment_scores(dev_set, parse_batch(dev_set, model, averaged=True, threads=threads))
        result.best_las, result.best_step = las, opt.step
    else:
        _restore(model, best)
    return result


# persistence

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save(model: Model, sink: str | Path | IO[bytes]) -> None:
    """Write a self-describing model file (zip of a JSON header and .npy tensors).

    The output is a pure function of the model, so equal models give equal bytes.
    """
    meta = {
        "format": FORMAT_VERSION,
        "repr_config": model.repr_config.to_dict(),
        "net": asdict(model.net),
        "vocab": model.vocab.to_dict(),
        "params": {k: {"shape": list(p.shape), "l2_exempt": p.l2_exempt} for k, p in model.params.items()},
    }
    target = open(sink, "wb") if isinstance(sink, (str, Path)) else sink
    try:
        with zipfile.ZipFile(target, "w") as zf:
            _write_entry(zf, "meta.json", json.dumps(meta, sort_keys=True).encode("utf-8"))
            for k, p in sorted(model.params.items()):
                _write_entry(zf, f"{k}.value.npy", _npy_bytes(p.value))
                _write_entry(zf, f"{k}.average.npy", _npy_bytes(p.average))
                _write_entry(zf, f"{k}.velocity.npy", _npy_bytes(p.velocity))
    finally:
        if target is not sink:
            target.close()


def load(source: str | Path | IO[bytes]) -> Model:
    try:
        with zipfile.ZipFile(source) as zf:
            meta = json.loads(zf.read("meta.json").decode("utf-8"))
            if meta.get("format") != FORMAT_VERSION:
                raise ModelFormatError(
                    f"unsupported model format {meta.get('format')!r} (expected {FORMAT_VERSION})"
                )
            rc = meta["repr_config"]
            rc["kernel_lengths"] = tuple(rc["kernel_lengths"])
            repr_config = ReprConfig(**rc)
            net = NetConfig(**meta["net"])
            vocab = Vocabulary.from_dict(meta["vocab"])
            params = {}
            for k, spec in meta["params"].items():
                arrays = [
                    np.lib.format.read_array(io.BytesIO(zf.read(f"{k}.{part}.npy")), allow_pickle=False)
                    for part in ("value", "average", "velocity")
                ]
                if any(list(a.shape) != spec["shape"] for a in arrays):
                    raise ModelFormatError(f"tensor {k} has the wrong shape")
                p = Parameter(arrays[0], l2_exempt=spec["l2_exempt"])
                p.average = arrays[1]
                p.velocity = arrays[2]
                params[k] = p
    except ModelFormatError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, EOFError, json.JSONDecodeError, TypeError) as exc:
        raise ModelFormatError(f"cannot read model file: {exc}") from exc
    model = Model(vocab, repr_config, net, params=params)
    if model.param_shapes() != {k: p.shape for k, p in params.items()}:
        raise ModelFormatError("tensor set does not match the model configuration")
    return model
