"""CTC algorithms over per-frame token distributions.

Everything runs in log space with -inf as the zero-probability sentinel.
The batched forward-backward is shared by the loss (gradients via emission
posteriors) and by plain posterior scoring; the prefix beam search mines the
highest-posterior label sequences from a probability matrix and certifies
against the brute-force enumerator at small sizes.
"""

from __future__ import annotations

import itertools
import math
from typing import NamedTuple

import numpy as np

NEG_INF = float("-inf")


class InfeasibleTargetError(ValueError):
    """Raised when a target sequence has zero probability under every alignment."""


class ScoredSequence(NamedTuple):
    seq: tuple[int, ...]
    log_prob: float


def check_prob_matrix(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 2:
        raise ValueError("probability matrix must be T x (V+1) with T >= 1, V >= 1")
    if np.any(m < -1e-12) or np.any(m > 1 + 1e-12):
        raise ValueError("probability matrix entries must lie in [0, 1]")
    if np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("each row must sum to 1 within 1e-6")
    return m


def _extend_labels(labels: np.ndarray, l_lens: np.ndarray, blank: int) -> np.ndarray:
    """Interleave blanks: (R, Lmax) -> (R, 2*Lmax+1) with blank at even slots."""
    r, lmax = labels.shape
    ext = np.full((r, 2 * lmax + 1), blank, dtype=np.int64)
    ext[:, 1::2] = labels
    return ext


def _skip_allowed(ext: np.ndarray, blank: int) -> np.ndarray:
    """allow[r, s]: the s-2 -> s transition is legal (label state, no repeat)."""
    allow = np.zeros(ext.shape, dtype=bool)
    allow[:, 2:] = (ext[:, 2:] != blank) & (ext[:, 2:] != ext[:, :-2])
    return allow


def _shift_right(a: np.ndarray, k: int) -> np.ndarray:
    out = np.full_like(a, NEG_INF)
    out[..., k:] = a[..., :-k]
    return out


def _shift_left(a: np.ndarray, k: int) -> np.ndarray:
    out = np.full_like(a, NEG_INF)
    out[..., :-k] = a[..., k:]
    return out


def _gather_ext(lp: np.ndarray, ext: np.ndarray) -> np.ndarray:
    """lp_ext[r, t, s] = lp[r, t, ext[r, s]]."""
    r, tmax, _ = lp.shape
    return lp[np.arange(r)[:, None, None], np.arange(tmax)[None, :, None], ext[:, None, :]]


def ctc_forward_batch(
    lp: np.ndarray, labels: np.ndarray, t_lens: np.ndarray, l_lens: np.ndarray
) -> np.ndarray:
    """Log posterior of each label row under its log-prob rows.

    lp: (R, Tmax, V+1) log distributions; labels: (R, Lmax) padded token ids.
    Returns (R,) log P(labels[r] | lp[r]); -inf for infeasible rows.
    """
    r, tmax, c = lp.shape
    blank = c - 1
    ext = _extend_labels(labels, l_lens, blank)
    allow2 = _skip_allowed(ext, blank)
    lp_ext = _gather_ext(lp, ext)
    smax = ext.shape[1]
    s_valid = np.arange(smax)[None, :] < (2 * l_lens + 1)[:, None]

    alpha = np.full((r, smax), NEG_INF)
    alpha[:, 0] = lp_ext[:, 0, 0]
    has1 = l_lens >= 1
    alpha[has1, 1] = lp_ext[has1, 0, 1]
    for t in range(1, tmax):
        cand = _step_forward(alpha, allow2, lp_ext[:, t], s_valid)
        alpha = np.where((t < t_lens)[:, None], cand, alpha)

    rows = np.arange(r)
    s_last = 2 * l_lens
    logz = alpha[rows, s_last]
    tail = np.where(has1, alpha[rows, np.maximum(s_last - 1, 0)], NEG_INF)
    return np.logaddexp(logz, tail)


def ctc_forward_backward_batch(
    lp: np.ndarray, labels: np.ndarray, t_lens: np.ndarray, l_lens: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Forward-backward pass: (log posterior (R,), emission posteriors (R, Tmax, V+1)).

    gamma[r, t, c] is the posterior probability that an alignment of labels[r]
    emits class c at frame t; rows of gamma sum to 1 for t < t_lens[r].
    gamma is all-zero for infeasible rows (log posterior -inf).
    """
    r, tmax, c = lp.shape
    blank = c - 1
    ext = _extend_labels(labels, l_lens, blank)
    allow2 = _skip_allowed(ext, blank)
    lp_ext = _gather_ext(lp, ext)
    smax = ext.shape[1]
    rows = np.arange(r)
    s_idx = np.arange(smax)[None, :]
    s_valid = s_idx < (2 * l_lens + 1)[:, None]
    has1 = l_lens >= 1
    s_last = 2 * l_lens

    alpha = np.full((r, tmax, smax), NEG_INF)
    alpha[:, 0, 0] = lp_ext[:, 0, 0]
    alpha[has1, 0, 1] = lp_ext[has1, 0, 1]
    for t in range(1, tmax):
        prev = alpha[:, t - 1]
        cand = np.logaddexp(prev, _shift_right(prev, 1))
        cand = np.logaddexp(cand, np.where(allow2, _shift_right(prev, 2), NEG_INF))
        cand = np.where(s_valid, cand + lp_ext[:, t], NEG_INF)
        alpha[:, t] = np.where((t < t_lens)[:, None], cand, prev)

    logz = np.logaddexp(
        alpha[rows, -1, s_last],
        np.where(has1, alpha[rows, -1, np.maximum(s_last - 1, 0)], NEG_INF),
    )

    beta = np.full((r, tmax, smax), NEG_INF)
    allow2_left = np.zeros_like(allow2)
    allow2_left[:, :-2] = allow2[:, 2:]
    for t in range(tmax - 1, -1, -1):
        at_end = t == t_lens - 1
        if np.any(at_end):
            beta[at_end, t, :] = NEG_INF
            beta[rows[at_end], t, s_last[at_end]] = lp_ext[rows[at_end], t, s_last[at_end]]
            both = at_end & has1
            beta[rows[both], t, s_last[both] - 1] = lp_ext[rows[both], t, s_last[both] - 1]
        if t < tmax - 1:
            nxt = beta[:, t + 1]
            cand = np.logaddexp(nxt, _shift_left(nxt, 1))
            cand = np.logaddexp(cand, np.where(allow2_left, _shift_left(nxt, 2), NEG_INF))
            cand = np.where(s_valid, cand + lp_ext[:, t], NEG_INF)
            beta[:, t] = np.where((t < t_lens - 1)[:, None], cand, beta[:, t])

    feasible = logz > NEG_INF
    t_valid = np.arange(tmax)[None, :, None] < t_lens[:, None, None]
    mask = t_valid & s_valid[:, None, :] & feasible[:, None, None]
    with np.errstate(invalid="ignore"):
        z = alpha + beta - lp_ext - np.where(feasible, logz, 0.0)[:, None, None]
    contrib = np.exp(np.where(mask, z, NEG_INF))

    # even slots are all blank; odd slot s holds labels[:, s//2]
    gamma = np.zeros((r, tmax, c))
    gamma[:, :, blank] = contrib[:, :, 0::2].sum(axis=2)
    t_idx = np.arange(tmax)[None, :, None]
    np.add.at(
        gamma,
        (rows[:, None, None], t_idx, labels[:, None, :]),
        contrib[:, :, 1::2],
    )
    return logz, gamma


def ctc_log_posterior(m: np.ndarray, y: tuple[int, ...]) -> float:
    """log P(y | m) marginalized over all alignments; -inf when |y| > T.

    m is a T x (V+1) matrix of per-frame distributions (blank last).
    """
    m = check_prob_matrix(m)
    t, c = m.shape
    if len(y) > t:
        return NEG_INF
    with np.errstate(divide="ignore"):
        lp = np.log(m)[None]
    labels = np.zeros((1, max(1, len(y))), dtype=np.int64)
    labels[0, : len(y)] = y
    return float(ctc_forward_batch(lp, labels, np.array([t]), np.array([len(y)]))[0])


def ctc_loss_and_grad(logits: np.ndarray, y: tuple[int, ...]) -> tuple[float, np.ndarray]:
    """Negative log posterior of y under softmax(logits) and its logit gradient.

    Raises InfeasibleTargetError when no alignment of y fits in the T frames
    (training targets must be feasible).
    """
    logits = np.asarray(logits, dtype=np.float64)
    t, c = logits.shape
    if len(y) > t:
        raise InfeasibleTargetError(f"target length {len(y)} exceeds {t} frames")
    lp = log_softmax(logits)[None]
    labels = np.zeros((1, max(1, len(y))), dtype=np.int64)
    labels[0, : len(y)] = y
    logz, gamma = ctc_forward_backward_batch(lp, labels, np.array([t]), np.array([len(y)]))
    if not logz[0] > NEG_INF:
        raise InfeasibleTargetError("target has zero posterior under every alignment")
    grad = np.exp(lp[0]) - gamma[0]
    return float(-logz[0]), grad


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def greedy_decode(m: np.ndarray) -> tuple[int, ...]:
    """Best-path decoding: per-frame argmax, collapse repeats, drop blanks."""
    seq, _ = greedy_decode_with_probs(np.asarray(m))
    return seq


def greedy_decode_with_probs(m: np.ndarray) -> tuple[tuple[int, ...], list[float]]:
    """Greedy decoding plus, per emitted token, the max probability the
    winning class reached inside its run of frames."""
    blank = m.shape[1] - 1
    ids = np.argmax(m, axis=1)
    probs = m[np.arange(m.shape[0]), ids]
    out: list[int] = []
    out_p: list[float] = []
    prev = -1
    for a, p in zip(ids.tolist(), probs.tolist()):
        if a != blank:
            if a == prev:
                out_p[-1] = max(out_p[-1], p)
            else:
                out.append(a)
                out_p.append(p)
        prev = a
    return tuple(out), out_p


def _lae(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def top_n_perception(
    m: np.ndarray, n: int, beam_width: int | float | None = None
) -> list[ScoredSequence]:
    """Top-n label sequences by CTC posterior, found by prefix beam search.

    Each beam entry is a label prefix carrying separate blank-ending and
    non-blank-ending alignment masses, so alignments that collapse to the same
    labeling are merged as they grow. Survivors are rescored with the exact
    posterior before ranking; with beam_width = math.inf the search keeps
    every prefix and the result provably matches brute-force ranking.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if beam_width is None:
        beam_width = 8 * n
    if beam_width != math.inf and beam_width < n:
        raise ValueError("beam_width must be >= n")
    m = check_prob_matrix(m)
    t_total, c = m.shape
    blank = c - 1
    with np.errstate(divide="ignore"):
        lp_rows = np.log(m).tolist()

    beams: dict[tuple[int, ...], list[float]] = {(): [0.0, NEG_INF]}
    for t in range(t_total):
        lpt = lp_rows[t]
        new: dict[tuple[int, ...], list[float]] = {}

        def slot(prefix: tuple[int, ...]) -> list[float]:
            e = new.get(prefix)
            if e is None:
                e = [NEG_INF, NEG_INF]
                new[prefix] = e
            return e

        for prefix, (pb, pnb) in beams.items():
            total = _lae(pb, pnb)
            last = prefix[-1] if prefix else -1
            if lpt[blank] != NEG_INF:
                e = slot(prefix)
                e[0] = _lae(e[0], total + lpt[blank])
            for tok in range(blank):
                lc = lpt[tok]
                if lc == NEG_INF:
                    continue
                if tok == last:
                    e = slot(prefix)
                    e[1] = _lae(e[1], pnb + lc)
                    e2 = slot(prefix + (tok,))
                    e2[1] = _lae(e2[1], pb + lc)
                else:
                    e2 = slot(prefix + (tok,))
                    e2[1] = _lae(e2[1], total + lc)
        if beam_width != math.inf and len(new) > beam_width:
            ranked = sorted(new.items(), key=lambda kv: (-_lae(kv[1][0], kv[1][1]), kv[0]))
            new = dict(ranked[: int(beam_width)])
        beams = new

    survivors = list(beams.keys())
    scored = _exact_rescore(m, survivors)
    scored.sort(key=lambda s: (-s.log_prob, s.seq))
    return scored[:n]


def _exact_rescore(m: np.ndarray, seqs: list[tuple[int, ...]]) -> list[ScoredSequence]:
    if not seqs:
        return []
    t = m.shape[0]
    with np.errstate(divide="ignore"):
        lp = np.log(m)
    lens = np.array([len(s) for s in seqs])
    lmax = max(1, int(lens.max()))
    labels = np.zeros((len(seqs), lmax), dtype=np.int64)
    for i, s in enumerate(seqs):
        labels[i, : len(s)] = s
    lps = ctc_forward_batch(
        np.broadcast_to(lp, (len(seqs), *lp.shape)), labels, np.full(len(seqs), t), lens
    )
    return [ScoredSequence(s, float(v)) for s, v in zip(seqs, lps)]


def enumerate_label_sequences(v: int, max_len: int):
    for length in range(max_len + 1):
        yield from itertools.product(range(v), repeat=length)


def brute_force_rank(m: np.ndarray, n: int) -> list[ScoredSequence]:
    """Exhaustive ranking oracle: score every label sequence of length <= T.

    Also checks that the posterior mass over the full label space sums to 1,
    which certifies the scoring routine on the given matrix.
    """
    m = check_prob_matrix(m)
    t, c = m.shape
    if c**t > 10**6:
        raise ValueError("instance too large for brute-force enumeration")
    seqs = [tuple(s) for s in enumerate_label_sequences(c - 1, t)]
    scored = _exact_rescore(m, seqs)
    total = float(np.logaddexp.reduce([s.log_prob for s in scored]))
    if abs(math.exp(total) - 1.0) > 1e-6:
        raise RuntimeError(f"posterior mass {math.exp(total)} deviates from 1")
    scored.sort(key=lambda s: (-s.log_prob, s.seq))
    return scored[:n]
