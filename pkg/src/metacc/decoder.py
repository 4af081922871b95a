"""CNN bit decoder: received signal (2K reals) -> K bit logits.

The signal is viewed as a height-K, width-2 image (height = code step,
width = the two parity streams).  Four 64-filter conv layers with 3x3
kernels follow; the first uses stride (1, 2) to collapse the width to 1,
the rest stride (1, 1).  Height-"same" padding keeps K rows throughout so
the 64-to-1 linear head can be applied position-wise, one logit per bit.
ReLU activations sit after every conv layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

N_CONV_LAYERS = 4
DEFAULT_FILTERS = 64
DEFAULT_KERNEL = 3


@dataclass
class DecoderParams:
    """All decoder weights plus the architecture metadata they imply."""

    conv_w: list[Tensor]
    conv_b: list[Tensor]
    head_w: Tensor
    head_b: Tensor
    k_message: int = 10
    filters: int = DEFAULT_FILTERS
    kernel: int = DEFAULT_KERNEL
    stride: tuple[int, int] = (1, 2)

    def parameters(self) -> list[Tensor]:
        """Trainable tensors in a fixed, documented order."""
        out = []
        for w, b in zip(self.conv_w, self.conv_b):
            out.extend([w, b])
        out.extend([self.head_w, self.head_b])
        return out

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b), start=1):
            out[f"conv{i}.w"] = w
            out[f"conv{i}.b"] = b
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def copy(self) -> "DecoderParams":
        return DecoderParams(
            conv_w=[w.copy() for w in self.conv_w],
            conv_b=[b.copy() for b in self.conv_b],
            head_w=self.head_w.copy(),
            head_b=self.head_b.copy(),
            k_message=self.k_message,
            filters=self.filters,
            kernel=self.kernel,
            stride=self.stride,
        )


def init_params(seed: int, k_message: int = 10, filters: int = DEFAULT_FILTERS,
                kernel: int = DEFAULT_KERNEL) -> DecoderParams:
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)); seeded."""
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)

    conv_w, conv_b = [], []
    in_ch = 1
    for _ in range(N_CONV_LAYERS):
        fan = in_ch * kernel * kernel
        conv_w.append(uniform((filters, in_ch, kernel, kernel), fan))
        conv_b.append(uniform((filters,), fan))
        in_ch = filters
    head_w = uniform((filters, 1), filters)
    head_b = uniform((1,), filters)
    return DecoderParams(conv_w, conv_b, head_w, head_b, k_message=k_message,
                         filters=filters, kernel=kernel)


def embed_batch(params: DecoderParams, y) -> Tensor:
    """Per-position embeddings (B*K, F) from the conv body, head not applied.

    Row b*K + k holds the embedding of bit position k of signal b.
    """
    k = params.k_message
    yd = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    if yd.ndim != 2 or yd.shape[1] != 2 * k:
        raise ValueError(f"expected input of shape (B, {2 * k})")
    x = T.reshape(Tensor(yd), (yd.shape[0], 1, k, 2))
    pad = (params.kernel // 2, params.kernel // 2)
    h = T.relu(T.conv2d(x, params.conv_w[0], params.conv_b[0],
                        stride=params.stride, padding=pad))
    for i in range(1, N_CONV_LAYERS):
        h = T.relu(T.conv2d(h, params.conv_w[i], params.conv_b[i],
                            stride=(1, 1), padding=pad))
    # (B, F, K, 1) -> per-position rows (B*K, F)
    h = T.transpose(h, (0, 2, 1, 3))
    return T.reshape(h, (yd.shape[0] * k, params.filters))


def forward_batch(params: DecoderParams, y) -> Tensor:
    """Logits (B, K) for a batch of received signals (B, 2K)."""
    yd = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    h = embed_batch(params, y)
    logits = T.linear(h, params.head_w, params.head_b)
    return T.reshape(logits, (yd.shape[0], params.k_message))


def forward(params: DecoderParams, y) -> Tensor:
    """Logits (K,) for one received signal of length 2K."""
    yd = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    if yd.ndim != 1:
        raise ValueError("forward takes a single signal; use forward_batch for batches")
    out = forward_batch(params, yd[None, :])
    return T.reshape(out, (params.k_message,))


def predict_bits(logits) -> np.ndarray:
    """Hard decisions: bit = 1 iff sigmoid(logit) > 0.5 strictly (ties to 0)."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return (z > 0.0).astype(np.uint8)


def save_params(path, params: DecoderParams) -> None:
    arrays = {name: t.data for name, t in params.named_parameters().items()}
    T.save_checkpoint(path, arrays, meta={
        "k_message": params.k_message, "filters": params.filters,
        "kernel": params.kernel, "stride": list(params.stride)})


def load_params(path) -> DecoderParams:
    arrays, meta = T.load_checkpoint(path, with_meta=True)
    k = int(meta["k_message"])
    filters = int(meta["filters"])
    kernel = int(meta["kernel"])
    conv_w = [Tensor(arrays[f"conv{i}.w"], requires_grad=True) for i in range(1, 5)]
    conv_b = [Tensor(arrays[f"conv{i}.b"], requires_grad=True) for i in range(1, 5)]
    return DecoderParams(conv_w, conv_b,
                         Tensor(arrays["head.w"], requires_grad=True),
                         Tensor(arrays["head.b"], requires_grad=True),
                         k_message=k, filters=filters, kernel=kernel,
                         stride=tuple(meta.get("stride", (1, 2))))
