"""Greedy and beam-search decoding with a sub-linear length penalty."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import model as M
from .tokenizer import BOS, EOS


def length_penalty(length: int, alpha: float) -> float:
    """((5 + |Y|) / 6) ** alpha, the GNMT normalization."""
    return ((5.0 + length) / 6.0) ** alpha


@dataclass
class Hypothesis:
    tokens: list[int] = field(default_factory=list)   # emitted ids, BOS excluded
    log_prob: float = 0.0
    finished: bool = False

    def penalized(self, alpha: float) -> float:
        return self.log_prob / length_penalty(max(len(self.tokens), 1), alpha)


def _step_log_probs(store, config, enc_out, source_ids, source_pad_mask,
                    prefix, selected) -> np.ndarray:
    state = M.decode_step(store, config, enc_out, source_ids, source_pad_mask,
                          np.array(prefix, dtype=np.int64), selected)
    z = state.mixed_logits
    shifted = z - z.max()
    return shifted - np.log(np.exp(shifted).sum())


def greedy_decode(store, config, source_ids, source_pad_mask,
                  selected: Optional[np.ndarray] = None,
                  max_len: Optional[int] = None) -> list[int]:
    """Argmax decoding (ties to the lowest id); stops at EOS or max_len."""
    max_len = max_len or config.decoder_positions - 1
    with ad.no_grad():
        enc = M.encode(store, config, source_ids, source_pad_mask)
        prefix = [BOS]
        out: list[int] = []
        for _ in range(max_len):
            lp = _step_log_probs(store, config, enc, source_ids,
                                 source_pad_mask, prefix, selected)
            tok = int(np.argmax(lp))
            if tok == EOS:
                break
            out.append(tok)
            prefix.append(tok)
    return out


def beam_decode(store, config, source_ids, source_pad_mask,
                selected: Optional[np.ndarray] = None,
                beam_width: int = 4, alpha: float = 0.6,
                max_len: Optional[int] = None) -> list[int]:
    """Beam search; finished hypotheses are compared by penalized score.

    Returns the best finished hypothesis, or the best unfinished one at
    max_len if nothing finished.  Ties break toward lower token ids by
    candidate enumeration order.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    max_len = max_len or config.decoder_positions - 1
    with ad.no_grad():
        enc = M.encode(store, config, source_ids, source_pad_mask)
        beam = [Hypothesis()]
        finished: list[Hypothesis] = []
        for _ in range(max_len):
            candidates: list[Hypothesis] = []
            for hyp in beam:
                lp = _step_log_probs(store, config, enc, source_ids,
                                     source_pad_mask, [BOS] + hyp.tokens, selected)
                order = np.argsort(-lp, kind="stable")[: beam_width + 1]
                for tok in order:
                    tok = int(tok)
                    new = Hypothesis(hyp.tokens + ([] if tok == EOS else [tok]),
                                     hyp.log_prob + float(lp[tok]),
                                     finished=tok == EOS)
                    if new.finished:
                        finished.append(new)
                    else:
                        candidates.append(new)
            if not candidates:
                break
            candidates.sort(key=lambda h: -h.log_prob)
            beam = candidates[:beam_width]
        if finished:
            return max(finished, key=lambda h: h.penalized(alpha)).tokens
        return max(beam, key=lambda h: h.penalized(alpha)).tokens
