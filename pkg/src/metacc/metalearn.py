"""Episodic meta-training of neural decoders and the baselines they compete with.

Learners produce an initialization that adapts to a new channel from a handful
of labeled pilot transmissions.  All meta-gradients are first-order: the inner
SGD trajectory is not differentiated through, only the query gradient at the
adapted weights (or the weight displacement, for Reptile) drives the outer
Adam update.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import decoder as dec
from . import tensor as T
from .codec import ber, viterbi_decode_batch
from .decoder import DecoderParams
from .taskdist import BenchmarkDataset, Episode, sample_episode
from .tensor import Tape, Tensor, backward

ALGORITHMS = ("erm", "fomaml", "reptile", "anil", "metasgd", "protonet",
              "viterbi")
# learners whose evaluation path runs gradient adaptation on the support set
ADAPTIVE = ("fomaml", "reptile", "anil", "metasgd")


@dataclass(frozen=True)
class MetaConfig:
    algorithm: str
    outer_lr: float = 0.001
    inner_lr: float = 0.1
    inner_steps: int = 2
    meta_batch: int = 10
    meta_iterations: int = 80_000
    n_way: int = 5
    k_shot: int = 5
    l_query: int = 15
    k_message: int = 10

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        positive = (self.outer_lr, self.inner_lr, self.meta_batch,
                    self.meta_iterations, self.n_way, self.k_shot,
                    self.l_query, self.k_message)
        if any(v <= 0 for v in positive) or self.inner_steps < 0:
            raise ValueError("config values must be positive (inner_steps >= 0)")


@dataclass
class MetaState:
    config: MetaConfig
    params: DecoderParams                 # the learned initialization
    alphas: list[Tensor] | None = None    # per-parameter inner rates (metasgd)
    opt: T.AdamState = field(default_factory=T.AdamState)
    iteration: int = 0

    def trainable(self) -> list[Tensor]:
        if self.config.algorithm == "protonet":
            # prototypes replace the linear head; only the body trains
            return self.params.conv_w + self.params.conv_b
        out = list(self.params.parameters())
        if self.alphas is not None:
            out.extend(self.alphas)
        return out


def init_state(config: MetaConfig, seed: int) -> MetaState:
    params = dec.init_params(seed, k_message=config.k_message)
    alphas = None
    if config.algorithm == "metasgd":
        alphas = [Tensor(np.full_like(p.data, config.inner_lr),
                         requires_grad=True)
                  for p in params.parameters()]
    return MetaState(config, params, alphas)


def _loss(params: DecoderParams, signals, bits) -> Tensor:
    logits = dec.forward_batch(params, signals)
    return T.bce_with_logits(logits, Tensor(np.asarray(bits, dtype=np.float64)))


def adapt(state: MetaState, support_signals, support_bits,
          steps: int | None = None, inner_lr: float | None = None) -> DecoderParams:
    """Fine-tune a copy of the initialization on the support set.

    Full-batch SGD on the BCE loss; ANIL touches only the head, MetaSGD uses
    its learned per-parameter rates, ProtoNets does no gradient adaptation.
    """
    signals = np.asarray(support_signals, dtype=np.float64)
    if signals.size == 0:
        raise ValueError("support set is empty")
    cfg = state.config
    steps = cfg.inner_steps if steps is None else steps
    lr = cfg.inner_lr if inner_lr is None else inner_lr
    theta = state.params.copy()
    if steps == 0 or cfg.algorithm == "protonet":
        return theta
    target = cfg.algorithm
    updated = ([theta.head_w, theta.head_b] if target == "anil"
               else list(theta.parameters()))
    for _ in range(steps):
        with Tape() as tape:
            loss = _loss(theta, signals, support_bits)
        backward(loss, tape)
        if target == "metasgd":
            for p, a in zip(theta.parameters(), state.alphas):
                p.data -= a.data * p.grad
        else:
            T.sgd_step(updated, lr)
        T.zero_grad(theta.parameters())
    return theta


def _check_batch(state: MetaState, episodes) -> list[Episode]:
    episodes = list(episodes)
    if len(episodes) != state.config.meta_batch:
        raise ValueError(
            f"expected {state.config.meta_batch} episodes, got {len(episodes)}")
    return episodes


def _apply_outer(state: MetaState, grads: dict[int, np.ndarray]) -> MetaState:
    trainable = state.trainable()
    for p in trainable:
        p.grad = grads.get(id(p))
    T.adam_step(trainable, state.config.outer_lr, state=state.opt)
    T.zero_grad(trainable)
    if state.alphas is not None:
        for a in state.alphas:
            np.maximum(a.data, 0.0, out=a.data)  # rates may not go negative
    state.iteration += 1
    return state


def meta_step_fomaml(state: MetaState, episodes) -> MetaState:
    """Adapt per task, take the query gradient at the adapted weights, and
    treat its task average as the gradient of the initialization."""
    episodes = _check_batch(state, episodes)
    phi = list(state.params.parameters())
    acc = [np.zeros_like(p.data) for p in phi]
    scale = 1.0 / len(episodes)
    for ep in episodes:
        theta = adapt(state, ep.support_signals, ep.support_bits)
        with Tape() as tape:
            loss = _loss(theta, ep.query_signals, ep.query_bits)
        backward(loss, tape)
        for g, p in zip(acc, theta.parameters()):
            g += scale * p.grad
    return _apply_outer(state, {id(p): g for p, g in zip(phi, acc)})


def meta_step_reptile(state: MetaState, episodes) -> MetaState:
    """Inner-train on each task's full data; move the initialization toward
    the mean adapted weights by feeding the displacement to the outer Adam."""
    episodes = _check_batch(state, episodes)
    phi = list(state.params.parameters())
    acc = [np.zeros_like(p.data) for p in phi]
    scale = 1.0 / len(episodes)
    cfg = state.config
    for ep in episodes:
        signals = np.concatenate([ep.support_signals, ep.query_signals])
        bits = np.concatenate([ep.support_bits, ep.query_bits])
        theta = state.params.copy()
        for _ in range(cfg.inner_steps):
            with Tape() as tape:
                loss = _loss(theta, signals, bits)
            backward(loss, tape)
            T.sgd_step(theta.parameters(), cfg.inner_lr)
            T.zero_grad(theta.parameters())
        for g, p, q in zip(acc, phi, theta.parameters()):
            g += scale * (p.data - q.data)
    return _apply_outer(state, {id(p): g for p, g in zip(phi, acc)})


def meta_step_metasgd_fo(state: MetaState, episodes) -> MetaState:
    """FOMAML with learnable per-parameter inner rates.  The rate gradient is
    first-order: query gradient times the negated last inner-step gradient."""
    episodes = _check_batch(state, episodes)
    if state.alphas is None:
        raise ValueError("state has no per-parameter rates; init with metasgd")
    phi = list(state.params.parameters())
    acc_p = [np.zeros_like(p.data) for p in phi]
    acc_a = [np.zeros_like(p.data) for p in phi]
    scale = 1.0 / len(episodes)
    steps = state.config.inner_steps
    for ep in episodes:
        theta = state.params.copy()
        last_inner = None
        for _ in range(steps):
            with Tape() as tape:
                loss = _loss(theta, ep.support_signals, ep.support_bits)
            backward(loss, tape)
            last_inner = [p.grad.copy() for p in theta.parameters()]
            for p, a in zip(theta.parameters(), state.alphas):
                p.data -= a.data * p.grad
            T.zero_grad(theta.parameters())
        with Tape() as tape:
            qloss = _loss(theta, ep.query_signals, ep.query_bits)
        backward(qloss, tape)
        for i, p in enumerate(theta.parameters()):
            acc_p[i] += scale * p.grad
            if last_inner is not None:
                acc_a[i] += scale * (-p.grad * last_inner[i])
    grads = {id(p): g for p, g in zip(phi, acc_p)}
    grads.update({id(a): g for a, g in zip(state.alphas, acc_a)})
    return _apply_outer(state, grads)


# ---------------------------------------------------------------------------
# multi-label prototypical networks

def _prototype_matrices(support_bits: np.ndarray, n_query: int, k: int):
    """Constant matrices that turn stacked per-position embeddings into
    prototypes and map each query row to its two candidate prototypes.

    Prototype row 2k+v is the mean support embedding at position k among
    examples whose bit k equals v; positions missing a value fall back to the
    mean over all support examples at that position.
    """
    ns = support_bits.shape[0]
    avg = np.zeros((2 * k, ns * k))
    for pos in range(k):
        rows = pos + k * np.arange(ns)  # support row s*k + pos
        for v in (0, 1):
            members = rows[support_bits[:, pos] == v]
            if members.size:
                avg[2 * pos + v, members] = 1.0 / members.size
            else:
                avg[2 * pos + v, rows] = 1.0 / ns
    pick0 = np.zeros((n_query * k, 2 * k))
    pick1 = np.zeros((n_query * k, 2 * k))
    for r in range(n_query * k):
        pos = r % k
        pick0[r, 2 * pos] = 1.0
        pick1[r, 2 * pos + 1] = 1.0
    return avg, pick0, pick1


def _protonet_logits(params: DecoderParams, support_signals, support_bits,
                     query_signals) -> Tensor:
    """Distance-to-prototype logits (n_query, K), differentiable in the body."""
    sup = np.asarray(support_signals, dtype=np.float64)
    qry = np.asarray(query_signals, dtype=np.float64)
    bits = np.asarray(support_bits)
    if sup.size == 0:
        raise ValueError("support set is empty")
    k = params.k_message
    es = dec.embed_batch(params, sup)     # (ns*K, F)
    eq = dec.embed_batch(params, qry)     # (nq*K, F)
    avg, pick0, pick1 = _prototype_matrices(bits, qry.shape[0], k)
    protos = T.matmul(Tensor(avg), es)    # (2K, F)
    p0 = T.matmul(Tensor(pick0), protos)  # (nq*K, F)
    p1 = T.matmul(Tensor(pick1), protos)
    # (|e-p0|^2 - |e-p1|^2)/2 = e.(p1-p0) + (|p0|^2 - |p1|^2)/2
    cross = T.reduce_sum(T.mul(eq, T.sub(p1, p0)), axis=1)
    sq0 = T.reduce_sum(T.mul(p0, p0), axis=1)
    sq1 = T.reduce_sum(T.mul(p1, p1), axis=1)
    half = Tensor(0.5)
    logits = T.add(cross, T.mul(T.sub(sq0, sq1), half))
    return T.reshape(logits, (qry.shape[0], k))


def protonet_multilabel(state: MetaState, episode: Episode) -> np.ndarray:
    """Query logits (n_query, K) from support-derived prototypes."""
    return _protonet_logits(state.params, episode.support_signals,
                            episode.support_bits, episode.query_signals).data


def meta_step_protonet(state: MetaState, episodes) -> MetaState:
    episodes = _check_batch(state, episodes)
    body = state.trainable()
    acc = [np.zeros_like(p.data) for p in body]
    scale = 1.0 / len(episodes)
    for ep in episodes:
        with Tape() as tape:
            logits = _protonet_logits(state.params, ep.support_signals,
                                      ep.support_bits, ep.query_signals)
            loss = T.bce_with_logits(
                logits, Tensor(np.asarray(ep.query_bits, dtype=np.float64)))
        backward(loss, tape)
        for g, p in zip(acc, body):
            if p.grad is not None:
                g += scale * p.grad
        T.zero_grad(body)
    return _apply_outer(state, {id(p): g for p, g in zip(body, acc)})


_META_STEPS = {
    "fomaml": meta_step_fomaml,
    "anil": meta_step_fomaml,      # body frozen inside adapt()
    "reptile": meta_step_reptile,
    "metasgd": meta_step_metasgd_fo,
    "protonet": meta_step_protonet,
}


def meta_step(state: MetaState, episodes) -> MetaState:
    alg = state.config.algorithm
    if alg not in _META_STEPS:
        raise ValueError(f"{alg!r} does not meta-train episodically")
    return _META_STEPS[alg](state, episodes)


# ---------------------------------------------------------------------------
# baselines

def erm_train(ds: BenchmarkDataset, iterations: int, lr: float = 0.001,
              batch_size: int = 128, seed: int = 0,
              params: DecoderParams | None = None) -> DecoderParams:
    """Plain Adam training on batches drawn uniformly over every stored
    example of every setup; the resulting decoder is used without adaptation."""
    if params is None:
        params = dec.init_params(seed, k_message=ds.k_message)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    n_setups, n_messages, n_examples = ds.counts
    total = n_setups * n_messages * n_examples
    flat_sig = ds.signals.reshape(total, -1)
    opt = T.AdamState()
    for _ in range(iterations):
        idx = rng.integers(total, size=batch_size)
        x = flat_sig[idx].astype(np.float64)
        bits = ds.messages.reshape(n_setups * n_messages, -1)[idx // n_examples]
        with Tape() as tape:
            loss = _loss(params, x, bits)
        backward(loss, tape)
        T.adam_step(params.parameters(), lr, state=opt)
        T.zero_grad(params.parameters())
    return params


def train_meta(config: MetaConfig, ds: BenchmarkDataset, seed: int,
               iterations: int | None = None,
               callback=None) -> MetaState:
    """Run the meta-training loop; ERM consumes pooled batches instead of
    episodes and the reference decoder trains nothing."""
    iters = config.meta_iterations if iterations is None else iterations
    state = init_state(config, seed)
    if config.algorithm == "viterbi":
        return state
    if config.algorithm == "erm":
        erm_train(ds, iters, lr=config.outer_lr, seed=seed, params=state.params)
        state.iteration = iters
        return state
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    for it in range(iters):
        episodes = [sample_episode(ds, config.n_way, config.k_shot,
                                   config.l_query, rng)
                    for _ in range(config.meta_batch)]
        meta_step(state, episodes)
        if callback is not None:
            callback(state, it)
    return state


def evaluate(state: MetaState, episodes,
             adapt_support: bool | None = None) -> tuple[float, float]:
    """Mean query BER and its standard error across episodes.

    Adaptive learners fine-tune on each support set first; ERM and the
    reference decoder predict directly; ProtoNets scores by prototypes.
    """
    episodes = list(episodes)
    if not episodes:
        raise ValueError("need at least one episode")
    alg = state.config.algorithm
    if adapt_support is None:
        adapt_support = alg in ADAPTIVE
    bers = []
    for ep in episodes:
        truth = ep.query_bits
        if alg == "viterbi":
            pred = viterbi_decode_batch(ep.query_signals)
        elif alg == "protonet":
            pred = dec.predict_bits(protonet_multilabel(state, ep))
        else:
            params = (adapt(state, ep.support_signals, ep.support_bits)
                      if adapt_support else state.params)
            logits = dec.forward_batch(params, ep.query_signals)
            pred = dec.predict_bits(logits)
        bers.append(ber(pred, truth))
    arr = np.array(bers)
    stderr = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return float(arr.mean()), stderr


# ---------------------------------------------------------------------------
# persistence

def save_state(path, state: MetaState) -> None:
    arrays = {name: t.data for name, t in state.params.named_parameters().items()}
    names = list(state.params.named_parameters())
    if state.alphas is not None:
        for name, a in zip(names, state.alphas):
            arrays[f"alpha.{name}"] = a.data
    trainable = state.trainable()
    if state.opt.m is not None:
        t_names = _trainable_names(state)
        for name, m, v in zip(t_names, state.opt.m, state.opt.v):
            arrays[f"adam.m.{name}"] = m
            arrays[f"adam.v.{name}"] = v
        if len(t_names) != len(trainable):
            raise RuntimeError("optimizer state misaligned with parameters")
    T.save_checkpoint(path, arrays, meta={
        "config": asdict(state.config), "iteration": state.iteration,
        "adam_t": state.opt.t})


def _trainable_names(state: MetaState) -> list[str]:
    names = list(state.params.named_parameters())
    if state.config.algorithm == "protonet":
        return [n for n in names if n.startswith("conv")]
    out = list(names)
    if state.alphas is not None:
        out.extend(f"alpha.{n}" for n in names)
    return out


def load_state(path) -> MetaState:
    arrays, meta = T.load_checkpoint(path, with_meta=True)
    config = MetaConfig(**meta["config"])
    params = dec.init_params(0, k_message=config.k_message)
    for name, t in params.named_parameters().items():
        t.data[...] = arrays[name]
    alphas = None
    if config.algorithm == "metasgd":
        alphas = [Tensor(arrays[f"alpha.{n}"].copy(), requires_grad=True)
                  for n in params.named_parameters()]
    state = MetaState(config, params, alphas, iteration=int(meta["iteration"]))
    state.opt.t = int(meta["adam_t"])
    t_names = _trainable_names(state)
    if f"adam.m.{t_names[0]}" in arrays:
        state.opt.m = [arrays[f"adam.m.{n}"].copy() for n in t_names]
        state.opt.v = [arrays[f"adam.v.{n}"].copy() for n in t_names]
    return state
