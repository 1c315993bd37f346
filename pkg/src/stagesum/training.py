"""MLE training loops with dev-based model selection.

Three stage kinds share one loop: "denoise" (masked-token pretraining of
the encoder through the tied embeddings), "summarize" (teacher-forced
seq2seq), and "select" (logistic training of the content selector).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import metrics
from . import model as M
from . import search
from . import selection as sel
from .autodiff import Tensor
from .checkpoint import ParamStore, init_random
from .optim import AdamState, adam_step
from .tokenizer import MASK, Vocabulary, detokenize

CLAMP_FLOOR = 1e-30
clamp_warnings = 0


class StageError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 2e-5
    dropout: float = 0.3
    batch_size: int = 8
    max_epochs: int = 10
    eval_every: int = 1
    seed: int = 0
    stage: str = "summarize"   # denoise | summarize | select

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.stage not in ("denoise", "summarize", "select"):
            raise ValueError(f"unknown stage kind {self.stage!r}")


@dataclass
class TrainReport:
    records: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = -np.inf

    def format(self) -> str:
        lines = []
        for rec in self.records:
            parts = [f"{k}={rec[k]!r}" for k in sorted(rec)]
            lines.append(" ".join(parts))
        lines.append(f"best_epoch={self.best_epoch} best_metric={self.best_metric!r}")
        return "\n".join(lines) + "\n"


def mle_loss(probs: Tensor, target_ids: np.ndarray,
             target_pad_mask: np.ndarray) -> tuple[Tensor, int]:
    """Mean negative log likelihood of targets over non-pad positions.

    Returns (scalar loss, count of non-pad positions).  Probabilities below
    1e-30 are clamped; each clamp bumps the module warning counter.
    """
    global clamp_warnings
    valid = np.flatnonzero(~target_pad_mask)
    if len(valid) == 0:
        raise StageError("mle_loss: no non-pad target positions")
    picked = probs[(valid, target_ids[valid])]
    n_clamped = int((picked.data < CLAMP_FLOOR).sum())
    if n_clamped:
        clamp_warnings += n_clamped
    nll = -ad.log(ad.clamp_min(picked, CLAMP_FLOOR))
    return nll.mean(), len(valid)


def _mask_tokens(ids: np.ndarray, pad_mask: np.ndarray, vocab_size: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """BERT-style corruption: 15% of non-pad positions, 80/10/10 split."""
    positions = np.flatnonzero(~pad_mask)
    picked = positions[rng.random(len(positions)) < 0.15]
    corrupted = ids.copy()
    action = rng.random(len(picked))
    for pos, a in zip(picked, action):
        if a < 0.8:
            corrupted[pos] = MASK
        elif a < 0.9:
            corrupted[pos] = int(rng.integers(5, vocab_size))
    return corrupted, picked


def _denoise_loss(store, config, ex, rng: Optional[np.random.Generator],
                  mask_rng: np.random.Generator) -> tuple[Tensor, int]:
    corrupted, picked = _mask_tokens(ex.source_ids, ex.source_pad_mask,
                                     config.vocab_size, mask_rng)
    if len(picked) == 0:
        return Tensor(0.0), 0
    enc = M.encode(store, config, corrupted, ex.source_pad_mask, rng)
    logits = ad.matmul(enc, store["embedding.word"].transpose()) + store["mlm.bias"]
    probs = ad.softmax(logits, axis=-1)
    picked_p = probs[(picked, ex.source_ids[picked])]
    return -ad.log(ad.clamp_min(picked_p, CLAMP_FLOOR)).sum(), len(picked)


def _summarize_loss(store, config, ex, rng) -> tuple[Tensor, int]:
    probs, _ = M.forward_teacher_forced(store, config, ex, rng=rng,
                                        training=rng is not None)
    loss, n = mle_loss(probs, ex.target_ids, ex.target_pad_mask)
    return loss * n, n


def _select_loss(store, config, item, rng) -> tuple[Tensor, int]:
    ex, labels = item
    enc = M.encode(store, config, ex.source_ids, ex.source_pad_mask, rng)
    pred = sel.selector_forward(store, enc)
    n = int((~ex.source_pad_mask).sum())
    return sel.selector_loss(pred, labels, ex.source_pad_mask) * n, n


def decode_corpus(store, config, examples, vocab: Vocabulary,
                  selected_for=None, mode: str = "greedy",
                  beam_width: int = 4, alpha: float = 0.6) -> list[str]:
    """Decode every example to a detokenized summary string.

    selected_for, when given, maps example index to a boolean selection
    vector masking the copy head during decoding.
    """
    out = []
    for i, ex in enumerate(examples):
        selected = selected_for(i) if selected_for is not None else None
        if mode == "greedy":
            ids = search.greedy_decode(store, config, ex.source_ids,
                                       ex.source_pad_mask, selected)
        else:
            ids = search.beam_decode(store, config, ex.source_ids,
                                     ex.source_pad_mask, selected,
                                     beam_width=beam_width, alpha=alpha)
        out.append(detokenize([vocab.pieces[t] for t in ids]))
    return out


def dev_rouge_l(store, config, dev: list, vocab: Vocabulary) -> float:
    """Mean ROUGE-L F1 of greedy decodes against reference summary text."""
    hyps = decode_corpus(store, config, [ex for ex, _ in dev], vocab)
    total = 0.0
    for (_, ref_text), hyp in zip(dev, hyps):
        _, _, f1 = metrics.rouge_l(metrics.normalize_for_rouge(ref_text),
                                   metrics.normalize_for_rouge(hyp))
        total += f1
    return total / len(dev)


def _dev_metric(store, config, dev, tcfg: TrainConfig,
                vocab: Optional[Vocabulary]) -> float:
    if tcfg.stage == "summarize":
        return dev_rouge_l(store, config, dev, vocab)
    if tcfg.stage == "denoise":
        mask_rng = np.random.default_rng([tcfg.seed, 0xDEF])
        total, count = 0.0, 0
        with ad.no_grad():
            for ex in dev:
                loss, n = _denoise_loss(store, config, ex, None, mask_rng)
                if n:
                    total += float(loss.data)
                    count += n
        return -total / max(count, 1)
    # select: pooled F1 at the best midpoint threshold
    probs, labels = [], []
    with ad.no_grad():
        for ex, y in dev:
            enc = M.encode(store, config, ex.source_ids, ex.source_pad_mask, None)
            p = sel.selector_forward(store, enc)
            probs.append(p.data[~ex.source_pad_mask])
            labels.append(y)
    flat_p = np.concatenate(probs)
    flat_y = np.concatenate(labels)
    try:
        eps = sel.calibrate_threshold(flat_p, flat_y)
    except sel.CalibrationError:
        return 0.0
    _, _, f1 = sel._prf(flat_p > eps, flat_y)
    return f1


_LOSS_FNS = {"summarize": _summarize_loss, "select": _select_loss}


def train_stage(init: ParamStore, config, train_data: list, dev_data: list,
                tcfg: TrainConfig, vocab: Optional[Vocabulary] = None
                ) -> tuple[ParamStore, TrainReport]:
    """Shuffled mini-batch Adam training with best-on-dev checkpointing."""
    if not train_data:
        raise StageError("training corpus is empty")
    config = dataclasses.replace(config, dropout_rate=tcfg.dropout)
    store = init.copy()
    state = AdamState(lr=tcfg.lr)
    rng = np.random.default_rng([tcfg.seed, 1])
    report = TrainReport()
    best_store = store.copy()
    best_eval = _dev_metric(store, config, dev_data, tcfg, vocab) if dev_data else -np.inf
    report.best_metric = best_eval
    report.best_epoch = 0

    for epoch in range(1, tcfg.max_epochs + 1):
        order = rng.permutation(len(train_data))
        epoch_loss, epoch_count = 0.0, 0
        for start in range(0, len(order), tcfg.batch_size):
            batch = [train_data[i] for i in order[start:start + tcfg.batch_size]]
            store.zero_grads()
            with ad.new_tape():
                parts, count = [], 0
                for item in batch:
                    if tcfg.stage == "denoise":
                        loss, n = _denoise_loss(store, config, item,
                                                rng if tcfg.dropout > 0 else None, rng)
                    else:
                        loss, n = _LOSS_FNS[tcfg.stage](
                            store, config, item,
                            rng if tcfg.dropout > 0 else None)
                    if n:
                        parts.append(loss)
                        count += n
                if count == 0:
                    continue
                total = parts[0]
                for p in parts[1:]:
                    total = total + p
                total = total / count
                if np.isnan(total.data):
                    raise StageError("training diverged (NaN loss)")
                total.backward()
            adam_step(store.params, store.grads(), state)
            epoch_loss += float(total.data) * count
            epoch_count += count
        train_loss = epoch_loss / max(epoch_count, 1)
        rec = {"epoch": epoch, "train_loss": train_loss}
        if dev_data and epoch % tcfg.eval_every == 0:
            metric = _dev_metric(store, config, dev_data, tcfg, vocab)
            rec["dev_metric"] = metric
            if metric > report.best_metric:
                report.best_metric = metric
                report.best_epoch = epoch
                best_store = store.copy()
        report.records.append(rec)
    if not dev_data:
        best_store = store.copy()
        report.best_epoch = tcfg.max_epochs
    best_store.provenance = list(init.provenance)
    return best_store, report


def denoise_pretrain(config, tcfg: TrainConfig, train_examples: list,
                     dev_examples: list) -> tuple[ParamStore, TrainReport]:
    """Masked-token pretraining producing an encoder-style source checkpoint."""
    tcfg = dataclasses.replace(tcfg, stage="denoise")
    init = init_random(config, tcfg.seed, arch="mlm_encoder")
    return train_stage(init, config, train_examples, dev_examples, tcfg)
