"""Rate-1/2 convolutional code with soft-decision Viterbi and brute-force ML decoding.

The encoder is the classic memory-2 feedforward code with octal generators
(7, 5): at step k the two output symbols are

    2*(b_k ^ b_{k-1} ^ b_{k-2}) - 1   and   2*(b_k ^ b_{k-2}) - 1

with b_0 = b_{-1} = 0, so a K-bit message maps to a 2K-symbol codeword over
{-1, +1}.  No termination bits are appended.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

# enumeration guard for the brute-force oracle (2^K codewords)
MAX_BRUTE_FORCE_K = 14

_G0 = (1, 1, 1)  # taps on (b_k, b_{k-1}, b_{k-2}) for the first output
_G1 = (1, 0, 1)  # taps for the second output


def _as_bits(bits) -> np.ndarray:
    b = np.asarray(bits)
    if b.ndim != 1 or b.size == 0:
        raise ValueError("message must be a non-empty 1-D bit vector")
    if not np.isin(b, (0, 1)).all():
        raise ValueError("message bits must be 0 or 1")
    return b.astype(np.uint8)


def _as_signal(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.size == 0 or y.size % 2 != 0:
        raise ValueError("received signal must be a non-empty vector of even length")
    if not np.isfinite(y).all():
        raise ValueError("received signal must be finite")
    return y


def encode_batch(messages: np.ndarray) -> np.ndarray:
    """Encode a (B, K) bit array into a (B, 2K) array of {-1, +1} symbols."""
    b = np.asarray(messages, dtype=np.uint8)
    if b.ndim != 2:
        raise ValueError("expected a 2-D (batch, bits) array")
    prev1 = np.zeros_like(b)
    prev1[:, 1:] = b[:, :-1]
    prev2 = np.zeros_like(b)
    prev2[:, 2:] = b[:, :-2]
    out0 = b ^ prev1 ^ prev2
    out1 = b ^ prev2
    symbols = np.empty((b.shape[0], 2 * b.shape[1]), dtype=np.int8)
    symbols[:, 0::2] = 2 * out0.astype(np.int8) - 1
    symbols[:, 1::2] = 2 * out1.astype(np.int8) - 1
    return symbols


def conv_encode(msg) -> np.ndarray:
    """Encode one K-bit message into its 2K-symbol {-1, +1} codeword."""
    bits = _as_bits(msg)
    return encode_batch(bits[None, :])[0]


# trellis tables over states s = 2*b_{k-1} + b_{k-2}
def _trellis_tables():
    # next_state[s, u], out0[s, u], out1[s, u] for input bit u
    ns = np.zeros((4, 2), dtype=np.int64)
    o0 = np.zeros((4, 2), dtype=np.int64)
    o1 = np.zeros((4, 2), dtype=np.int64)
    for s in range(4):
        b1, b2 = s >> 1, s & 1
        for u in range(2):
            o0[s, u] = 2 * (u ^ b1 ^ b2) - 1
            o1[s, u] = 2 * (u ^ b2) - 1
            ns[s, u] = 2 * u + b1
    return ns, o0, o1


_NEXT_STATE, _OUT0, _OUT1 = _trellis_tables()


def viterbi_decode_batch(y: np.ndarray) -> np.ndarray:
    """Soft-decision Viterbi over a (B, 2K) batch; returns (B, K) bit decisions.

    Branch metrics are squared Euclidean distances, so the survivor path is
    the ML codeword under white Gaussian noise.  Ties at a merge keep the
    predecessor with the smaller state index, and the final state is the
    first minimum, so the decision prefers paths whose most recent input
    bits are 0.  This makes decisions fully deterministic.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] % 2 != 0 or y.shape[1] == 0:
        raise ValueError("expected a (batch, 2K) array with even 2K >= 2")
    n, length = y.shape
    k_msg = length // 2

    metric = np.full((n, 4), np.inf)
    metric[:, 0] = 0.0  # start in state (b_0, b_-1) = (0, 0)
    # chosen predecessor state for each (step, batch, state)
    back = np.zeros((k_msg, n, 4), dtype=np.int8)

    for k in range(k_msg):
        y0 = y[:, 2 * k]
        y1 = y[:, 2 * k + 1]
        new_metric = np.full((n, 4), np.inf)
        for s in range(4):
            for u in range(2):
                bm = (y0 - _OUT0[s, u]) ** 2 + (y1 - _OUT1[s, u]) ** 2
                cand = metric[:, s] + bm
                t = _NEXT_STATE[s, u]
                # strict < keeps the earlier (smaller-index) predecessor on ties
                better = cand < new_metric[:, t]
                new_metric[better, t] = cand[better]
                back[k, better, t] = s
        metric = new_metric

    bits = np.zeros((n, k_msg), dtype=np.uint8)
    state = np.argmin(metric, axis=1)  # first minimum: most recent bit 0 wins ties
    for k in range(k_msg - 1, -1, -1):
        bits[:, k] = state >> 1  # state = 2*b_k + b_{k-1}
        state = back[k, np.arange(n), state].astype(np.int64)
    return bits


def viterbi_decode(y) -> np.ndarray:
    """Decode one received signal of length 2K; returns the K-bit decision."""
    return viterbi_decode_batch(_as_signal(y)[None, :])[0]


@lru_cache(maxsize=8)
def _codebook(k_msg: int) -> tuple[np.ndarray, np.ndarray]:
    """All 2^K messages (lexicographic order, b_1 most significant) and codewords."""
    idx = np.arange(2 ** k_msg, dtype=np.uint32)
    shifts = np.arange(k_msg - 1, -1, -1, dtype=np.uint32)
    messages = ((idx[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    return messages, encode_batch(messages).astype(np.float64)


def brute_force_ml(y) -> np.ndarray:
    """Exhaustive ML decoding: argmin over all 2^K codewords of squared distance.

    Ties resolve to the lexicographically smallest message.  Intended as a
    testing oracle; guarded to K <= 14.
    """
    y = _as_signal(y)
    k_msg = y.size // 2
    if k_msg > MAX_BRUTE_FORCE_K:
        raise ValueError(f"brute-force decoding limited to K <= {MAX_BRUTE_FORCE_K}")
    messages, codewords = _codebook(k_msg)
    dist = ((codewords - y) ** 2).sum(axis=1)
    return messages[int(np.argmin(dist))].copy()


def ber(pred, truth) -> float:
    """Fraction of differing bits; accepts single messages or batches."""
    p = np.asarray(pred)
    t = np.asarray(truth)
    if p.shape != t.shape or p.size == 0:
        raise ValueError("bit arrays must have identical non-empty shapes")
    for arr in (p, t):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("bit arrays must contain only 0 and 1")
    return float(np.mean(p != t))
