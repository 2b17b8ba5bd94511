"""End-to-end memory network for response retrieval, in plain numpy.

Forward and backward passes are batched over instances.  The final hop state
doubles as the dialog state vector consumed by the handoff classifier, and
`loss_and_gradients` accepts an extra gradient at that state so classifier
updates can be chained back into the embeddings.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import PAD_ID, CandidateSet, Instance, Vocabulary

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDivergence(FloatingPointError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    d: int = 20
    hops: int = 3
    batch_size: int = 32
    lr0: float = 0.01
    anneal_ratio: float = 0.5
    anneal_period: int = 25
    max_epochs: int = 200
    memory_cap: int = 130
    init_seed: int = 599
    init_std: float = 0.1
    # steps follow the summed batch loss; clipping applies to that summed gradient
    loss_reduction: str = "sum"
    grad_clip: Optional[float] = 40.0

    def __post_init__(self):
        if self.d < 1 or self.hops < 1:
            raise ValueError("d and hops must be >= 1")
        if not 0 < self.anneal_ratio <= 1:
            raise ValueError("anneal_ratio must lie in (0, 1]")
        if self.loss_reduction not in ("sum", "mean"):
            raise ValueError("loss_reduction must be 'sum' or 'mean'")


@dataclass
class ModelParams:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    TA: np.ndarray
    TC: np.ndarray
    W: np.ndarray

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def items(self):
        return [(n, getattr(self, n)) for n in self.names()]

    def copy(self) -> "ModelParams":
        return ModelParams(**{n: a.copy() for n, a in self.items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams(**{n: np.zeros_like(a) for n, a in self.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.items()])

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(a * a) for _, a in self.items())))

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for _, a in self.items())

    def equals(self, other: "ModelParams") -> bool:
        return all(np.array_equal(a, getattr(other, n)) for n, a in self.items())


def init_params(vocab_size: int, hyper: Hyperparams, seed: Optional[int] = None) -> ModelParams:
    rng = np.random.default_rng(hyper.init_seed if seed is None else seed)
    d, s = hyper.d, hyper.init_std
    return ModelParams(
        A=rng.normal(0, s, (vocab_size, d)),
        B=rng.normal(0, s, (vocab_size, d)),
        C=rng.normal(0, s, (vocab_size, d)),
        TA=rng.normal(0, s, (hyper.memory_cap, d)),
        TC=rng.normal(0, s, (hyper.memory_cap, d)),
        W=rng.normal(0, s, (vocab_size, d)),
    )


# -- single-vector building blocks -------------------------------------------

def position_encoding(n_words: int, d: int) -> np.ndarray:
    """Weights l[j, k] for word j of `n_words`, embedding dim k, centred on the midpoints.

    l = 1 + 4 (k - (d+1)/2) (j - (J+1)/2) / (d J) with 1-based j, k; a single
    word gets weight one in every dimension.
    """
    j = np.arange(1, n_words + 1)[:, None]
    k = np.arange(1, d + 1)[None, :]
    return 1.0 + 4.0 * (k - (d + 1) / 2) * (j - (n_words + 1) / 2) / (d * n_words)


def encode_sentence(token_ids: Sequence[int], matrix: np.ndarray) -> np.ndarray:
    ids = [t for t in token_ids if t != PAD_ID]
    if not ids:
        return np.zeros(matrix.shape[1], dtype=matrix.dtype)
    return (position_encoding(len(ids), matrix.shape[1]) * matrix[ids]).sum(axis=0)


def encode_memory(sentences: Sequence[Sequence[int]], params: ModelParams, memory_cap: int):
    """Input/output memory rows, slot 0 being the most recent sentence."""
    recent = list(sentences)[::-1][:memory_cap]
    d = params.A.shape[1]
    a = np.array([encode_sentence(s, params.A) for s in recent]).reshape(-1, d)
    c = np.array([encode_sentence(s, params.C) for s in recent]).reshape(-1, d)
    n = len(recent)
    return a + params.TA[:n], c + params.TC[:n]


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attend(u: np.ndarray, a: np.ndarray) -> np.ndarray:
    if len(a) == 0:
        return np.zeros(0)
    return softmax(a @ u)


def read(p: np.ndarray, c: np.ndarray) -> np.ndarray:
    if len(p) == 0:
        return np.zeros(c.shape[1] if c.ndim == 2 else 0)
    return p @ c


def hop_update(o: np.ndarray, u: np.ndarray) -> np.ndarray:
    return o + u


# -- batched encoding ----------------------------------------------------------

@dataclass
class EncodedInstances:
    """Padded token-id arrays for a set of instances.

    mem[i, n] is the n-th most recent memory sentence of instance i.
    """

    mem: np.ndarray        # (n, N, L) int
    mem_len: np.ndarray    # (n, N) sentence lengths, 0 for empty slots
    n_mem: np.ndarray      # (n,)
    query: np.ndarray      # (n, Lq)
    q_len: np.ndarray      # (n,)
    answer: np.ndarray     # (n,)
    dialog_id: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.answer)

    def take(self, idx) -> "EncodedInstances":
        idx = np.asarray(idx)
        n_mem = self.n_mem[idx]
        N = int(n_mem.max()) if len(idx) else 0
        mem_len = self.mem_len[idx, :N]
        L = max(int(mem_len.max()) if mem_len.size else 0, 1)
        q_len = self.q_len[idx]
        Lq = max(int(q_len.max()) if len(idx) else 0, 1)
        return EncodedInstances(self.mem[idx, :N, :L], mem_len, n_mem, self.query[idx, :Lq],
                                q_len, self.answer[idx], self.dialog_id[idx])

    def dialogs(self) -> list[np.ndarray]:
        """Instance indices grouped by dialog, in order of first appearance."""
        order: dict[int, list[int]] = {}
        for i, did in enumerate(self.dialog_id.tolist()):
            order.setdefault(did, []).append(i)
        return [np.array(v) for v in order.values()]

    @staticmethod
    def concat(parts: Sequence["EncodedInstances"]) -> "EncodedInstances":
        N = max(p.mem.shape[1] for p in parts)
        L = max(p.mem.shape[2] for p in parts)
        Lq = max(p.query.shape[1] for p in parts)

        def pad(a, shape):
            out = np.zeros((a.shape[0],) + shape, dtype=a.dtype)
            out[(slice(None),) + tuple(slice(0, s) for s in a.shape[1:])] = a
            return out

        return EncodedInstances(
            np.concatenate([pad(p.mem, (N, L)) for p in parts]),
            np.concatenate([pad(p.mem_len, (N,)) for p in parts]),
            np.concatenate([p.n_mem for p in parts]),
            np.concatenate([pad(p.query, (Lq,)) for p in parts]),
            np.concatenate([p.q_len for p in parts]),
            np.concatenate([p.answer for p in parts]),
            np.concatenate([p.dialog_id for p in parts]),
        )


class Encoder:
    def __init__(self, vocab: Vocabulary, cands: CandidateSet, memory_cap: int):
        self.vocab = vocab
        self.cands = cands
        self.memory_cap = memory_cap

    def candidate_matrix(self) -> sp.csr_matrix:
        rows, cols = [], []
        for i, c in enumerate(self.cands.candidates):
            for t in self.vocab.ids(c):
                rows.append(i)
                cols.append(t)
        data = np.ones(len(rows))
        return sp.csr_matrix((data, (rows, cols)), shape=(len(self.cands), len(self.vocab)))

    def encode(self, instances: Sequence[Instance]) -> EncodedInstances:
        n = len(instances)
        mems = [inst.memory[::-1][: self.memory_cap] for inst in instances]
        N = max((len(m) for m in mems), default=0)
        L = max((len(s) for m in mems for s in m), default=1)
        Lq = max((len(inst.query) for inst in instances), default=1)
        mem = np.zeros((n, N, L), dtype=np.int32)
        mem_len = np.zeros((n, N), dtype=np.int32)
        query = np.zeros((n, max(Lq, 1)), dtype=np.int32)
        q_len = np.zeros(n, dtype=np.int32)
        ids = self.vocab.ids
        for i, (inst, m) in enumerate(zip(instances, mems)):
            for slot, sent in enumerate(m):
                mem[i, slot, : len(sent)] = ids(sent)
                mem_len[i, slot] = len(sent)
            query[i, : len(inst.query)] = ids(inst.query)
            q_len[i] = len(inst.query)
        return EncodedInstances(
            mem, mem_len, np.array([len(m) for m in mems], dtype=np.int32), query, q_len,
            np.array([inst.answer for inst in instances], dtype=np.int64),
            np.array([inst.dialog_id for inst in instances], dtype=np.int64),
        )


def _bag_operators(ids: np.ndarray, lengths: np.ndarray, vocab_size: int):
    """Sparse operators S, F with encode(sentences) = S @ M + g * (F @ M).

    Position weights factor as 1 + f_j * g_k, so a padded batch of sentences
    (..., L) becomes one counting matrix S and one position matrix F, both of
    shape (n_sentences, |V|).
    """
    L = ids.shape[-1]
    flat_ids = ids.reshape(-1, L)
    J = np.maximum(lengths.reshape(-1), 1)[:, None].astype(float)
    j = np.arange(1, L + 1)[None, :]
    mask = j <= lengths.reshape(-1)[:, None]
    f = (j - (J + 1) / 2) / J
    rows = np.broadcast_to(np.arange(flat_ids.shape[0])[:, None], flat_ids.shape)[mask]
    cols = flat_ids[mask]
    shape = (flat_ids.shape[0], vocab_size)
    S = sp.csr_matrix((np.ones(len(cols)), (rows, cols)), shape=shape)
    F = sp.csr_matrix((f[mask], (rows, cols)), shape=shape)
    return S, F


def _dim_weights(d: int) -> np.ndarray:
    return 4.0 * (np.arange(1, d + 1) - (d + 1) / 2) / d


@dataclass
class ForwardResult:
    scores: np.ndarray
    probs: np.ndarray
    state: np.ndarray
    cache: dict


class MemN2N:
    """Retrieval model over a fixed candidate set."""

    def __init__(self, hyper: Hyperparams, vocab_size: int, cand_bow: sp.csr_matrix):
        self.hyper = hyper
        self.vocab_size = vocab_size
        self.cand_bow = cand_bow.tocsr()
        self.n_candidates = cand_bow.shape[0]
        self._g = _dim_weights(hyper.d)

    @classmethod
    def from_encoder(cls, hyper: Hyperparams, encoder: Encoder) -> "MemN2N":
        return cls(hyper, len(encoder.vocab), encoder.candidate_matrix())

    def init_params(self, seed: Optional[int] = None) -> ModelParams:
        return init_params(self.vocab_size, self.hyper, seed)

    def forward(self, batch: EncodedInstances, params: ModelParams) -> ForwardResult:
        d, g = self.hyper.d, self._g
        B_, N, _ = batch.mem.shape
        S, F = _bag_operators(batch.mem, batch.mem_len, self.vocab_size)
        AC = np.hstack([params.A, params.C])
        enc = S @ AC + np.tile(g, 2) * (F @ AC)
        m_a = enc[:, :d].reshape(B_, N, d) + params.TA[:N]
        m_c = enc[:, d:].reshape(B_, N, d) + params.TC[:N]
        Sq, Fq = _bag_operators(batch.query, batch.q_len, self.vocab_size)
        valid = np.arange(N)[None, :] < batch.n_mem[:, None]
        has_mem = batch.n_mem > 0

        u = Sq @ params.B + g * (Fq @ params.B)
        us, ps = [u], []
        for _ in range(self.hyper.hops):
            logits = np.einsum("bnd,bd->bn", m_a, u)
            logits = np.where(valid, logits, -np.inf)
            p = np.zeros_like(logits)
            if has_mem.any():
                p[has_mem] = softmax(logits[has_mem])
            o = np.einsum("bn,bnd->bd", p, m_c)
            u = hop_update(o, u)
            us.append(u)
            ps.append(p)
        s = u
        cand_emb = self.cand_bow @ params.W                 # (K, d)
        scores = s @ cand_emb.T
        probs = softmax(scores)
        cache = dict(batch=batch, S=S, F=F, Sq=Sq, Fq=Fq, m_a=m_a, m_c=m_c, us=us, ps=ps,
                     cand_emb=cand_emb)
        return ForwardResult(scores, probs, s, cache)

    def _backward(self, fr: ForwardResult, params: ModelParams,
                  d_scores: Optional[np.ndarray], d_state: Optional[np.ndarray]) -> ModelParams:
        c = fr.cache
        batch: EncodedInstances = c["batch"]
        d, g = self.hyper.d, self._g
        N = batch.mem.shape[1]
        ds = np.zeros_like(fr.state)
        W_grad = np.zeros_like(params.W)
        if d_scores is not None:
            ds += d_scores @ c["cand_emb"]
            W_grad = np.asarray(self.cand_bow.T @ (d_scores.T @ fr.state))
        if d_state is not None:
            ds += d_state

        m_a, m_c = c["m_a"], c["m_c"]
        dm_a = np.zeros_like(m_a)
        dm_c = np.zeros_like(m_c)
        du = ds
        for h in reversed(range(self.hyper.hops)):
            p, u_in = c["ps"][h], c["us"][h]
            do = du
            dm_c += p[:, :, None] * do[:, None, :]
            dp = np.einsum("bnd,bd->bn", m_c, do)
            dlogits = p * (dp - (p * dp).sum(axis=1, keepdims=True))
            dm_a += dlogits[:, :, None] * u_in[:, None, :]
            du = du + np.einsum("bn,bnd->bd", dlogits, m_a)

        valid = (np.arange(N)[None, :] < batch.n_mem[:, None])[:, :, None]
        dm_a *= valid
        dm_c *= valid
        TA_grad = np.zeros_like(params.TA)
        TC_grad = np.zeros_like(params.TC)
        TA_grad[:N] = dm_a.sum(axis=0)
        TC_grad[:N] = dm_c.sum(axis=0)
        dm = np.hstack([dm_a.reshape(-1, d), dm_c.reshape(-1, d)])
        S, F = c["S"], c["F"]
        dAC = S.T @ dm + np.tile(g, 2) * (F.T @ dm)
        B_grad = c["Sq"].T @ du + g * (c["Fq"].T @ du)
        return ModelParams(A=np.asarray(dAC[:, :d]), B=np.asarray(B_grad), C=np.asarray(dAC[:, d:]),
                           TA=TA_grad, TC=TC_grad, W=W_grad)

    def loss_and_gradients(self, batch: EncodedInstances, params: ModelParams,
                           state_grad: Optional[np.ndarray] = None) -> tuple[float, ModelParams]:
        """Mean cross-entropy and its gradient.

        `state_grad` (batch x d), if given, is the gradient of an extra
        objective term with respect to each instance's final state; it is
        added to the cross-entropy gradient at the state before backprop.
        """
        if len(batch) == 0:
            raise ValueError("empty batch")
        fr = self.forward(batch, params)
        n = len(batch)
        z = fr.scores - fr.scores.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(z).sum(axis=1))
        loss = float((log_norm - z[np.arange(n), batch.answer]).mean())
        if not np.isfinite(loss):
            raise TrainingDivergence(f"non-finite loss {loss}")
        d_scores = fr.probs.copy()
        d_scores[np.arange(n), batch.answer] -= 1.0
        d_scores /= n
        return loss, self._backward(fr, params, d_scores, state_grad)

    def state_gradients(self, batch: EncodedInstances, params: ModelParams,
                        state_grad: np.ndarray) -> ModelParams:
        """Gradient of sum_i <state_grad_i, s_i> with respect to every parameter."""
        fr = self.forward(batch, params)
        return self._backward(fr, params, None, state_grad)

    def predict(self, data: EncodedInstances, params: ModelParams, chunk: int = 512) -> np.ndarray:
        out = []
        for lo in range(0, len(data), chunk):
            fr = self.forward(data.take(np.arange(lo, min(lo + chunk, len(data)))), params)
            out.append(np.argmax(fr.scores, axis=1))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def states(self, data: EncodedInstances, params: ModelParams, chunk: int = 512) -> np.ndarray:
        out = [self.forward(data.take(np.arange(lo, min(lo + chunk, len(data)))), params).state
               for lo in range(0, len(data), chunk)]
        return np.concatenate(out) if out else np.zeros((0, self.hyper.d))


def learning_rate(epoch: int, hyper: Hyperparams) -> float:
    return hyper.lr0 * hyper.anneal_ratio ** (epoch // hyper.anneal_period)


def sgd_step(params: ModelParams, grads: ModelParams, lr: float,
             grad_clip: Optional[float] = None) -> ModelParams:
    """theta <- theta - lr * g, with g rescaled to global norm `grad_clip` if it is larger."""
    scale = lr
    if grad_clip is not None:
        norm = grads.norm()
        if norm > grad_clip:
            scale = lr * grad_clip / norm
    return ModelParams(**{n: a - scale * getattr(grads, n) for n, a in params.items()})


def scale_grads(grads: ModelParams, factor: float) -> ModelParams:
    return ModelParams(**{n: factor * a for n, a in grads.items()})


def supervised_step(model: "MemN2N", batch: EncodedInstances, params: ModelParams,
                    lr: float) -> tuple[ModelParams, float]:
    """One SGD step on a batch under the model's reduction and clipping settings."""
    loss, grads = model.loss_and_gradients(batch, params)
    if model.hyper.loss_reduction == "sum":
        grads = scale_grads(grads, float(len(batch)))
    return sgd_step(params, grads, lr, model.hyper.grad_clip), loss


def accuracy(pred: np.ndarray, answer: np.ndarray, dialog_id: np.ndarray) -> tuple[float, float]:
    """Per-turn and per-dialog accuracy as fractions."""
    if len(answer) == 0:
        return 0.0, 0.0
    ok = pred == answer
    dialogs = np.unique(dialog_id)
    failed = np.unique(dialog_id[~ok])
    return float(ok.mean()), 1.0 - len(failed) / len(dialogs)


def evaluate(model: MemN2N, data: EncodedInstances, params: ModelParams) -> dict:
    per_turn, per_dialog = accuracy(model.predict(data, params), data.answer, data.dialog_id)
    return {"per_turn": per_turn, "per_dialog": per_dialog}


@dataclass
class TrainResult:
    best_params: ModelParams
    log: list[dict]
    best_dev: float
    best_epoch: int


def train(model: MemN2N, train_set: EncodedInstances, dev_set: EncodedInstances,
          seed: int = 599, params: Optional[ModelParams] = None,
          max_epochs: Optional[int] = None) -> TrainResult:
    """SGD with step annealing; keeps the parameters with the best dev per-turn accuracy."""
    if len(train_set) == 0 or len(dev_set) == 0:
        raise ValueError("training and dev data must be non-empty")
    hyper = model.hyper
    rng = np.random.default_rng(seed)
    params = model.init_params() if params is None else params.copy()
    best = params.copy()
    best_dev, best_epoch = evaluate(model, dev_set, params)["per_turn"], -1
    rows = []
    for epoch in range(hyper.max_epochs if max_epochs is None else max_epochs):
        lr = learning_rate(epoch, hyper)
        order = rng.permutation(len(train_set))
        losses = []
        for lo in range(0, len(order), hyper.batch_size):
            batch = train_set.take(order[lo: lo + hyper.batch_size])
            params, loss = supervised_step(model, batch, params, lr)
            losses.append(loss * len(batch))
        dev = evaluate(model, dev_set, params)["per_turn"]
        if dev > best_dev:
            best, best_dev, best_epoch = params.copy(), dev, epoch
        rows.append({"epoch": epoch, "lr": lr, "train_loss": sum(losses) / len(train_set),
                     "dev_per_turn": dev, "best_dev": best_dev})
        log.info("epoch %d lr %.4g loss %.4f dev %.4f", epoch, lr, rows[-1]["train_loss"], dev)
    return TrainResult(best, rows, best_dev, best_epoch)


def save_checkpoint(path, params: ModelParams, hyper: Hyperparams, vocab: Vocabulary, **extra) -> None:
    meta = {"version": CHECKPOINT_VERSION, "hyper": asdict(hyper), "vocab_digest": vocab.digest(), **extra}
    np.savez(path, meta=np.array(json.dumps(meta)), **dict(params.items()))


def load_checkpoint(path) -> tuple[ModelParams, Hyperparams, dict]:
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        params = ModelParams(**{n: z[n].copy() for n in ModelParams.names()})
    return params, replace(Hyperparams(), **meta["hyper"]), meta
