"""Conditional autoregressive generator p(x | A) and a small built-in GRU model.

Sequences are linearized as ``<bos> MR tokens & response tokens <eos>``; only
positions after the ``&`` separator contribute to the likelihood. Dropout is
variational: one mask per sequence for the embedding output and one for the
hidden state feeding the output projection, fixed across time steps, so a
stochastic pass is a pure function of its mask seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from fewshot_nlg.mr import LabeledPair, MeaningRepresentation, render_mr, tokenize

PAD, BOS, EOS, UNK, SEP = "<pad>", "<bos>", "<eos>", "<unk>", "&"
SPECIALS = (PAD, BOS, EOS, UNK, SEP)
CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or parameter; parameters were restored."""


class CheckpointError(ValueError):
    pass


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        extra = sorted(set(tokens) - set(SPECIALS))
        self.tokens: list[str] = list(SPECIALS) + extra
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        self.pad, self.bos, self.eos, self.unk, self.sep = (self.index[s] for s in SPECIALS)

    @classmethod
    def build(cls, pairs: Sequence[LabeledPair] = (), mrs: Sequence[MeaningRepresentation] = ()) -> "Vocab":
        toks = set()
        for p in pairs:
            toks.update(tokenize(render_mr(p.mr)))
            toks.update(p.text)
        for mr in mrs:
            toks.update(tokenize(render_mr(mr)))
        return cls(sorted(toks))

    def __len__(self) -> int:
        return len(self.tokens)

    def ids(self, tokens: Sequence[str]) -> list[int]:
        return [self.index.get(t, self.unk) for t in tokens]

    def words(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


@dataclass(frozen=True)
class DropoutMask:
    """``seed=None`` disables dropout; otherwise masks are drawn from ``seed``."""

    seed: int | None = None

    @classmethod
    def disabled(cls) -> "DropoutMask":
        return cls(None)

    @classmethod
    def stochastic(cls, seed: int) -> "DropoutMask":
        return cls(int(seed))

    @property
    def is_stochastic(self) -> bool:
        return self.seed is not None


@dataclass
class StepOutput:
    hidden: np.ndarray
    distribution: np.ndarray


@dataclass
class SampleResult:
    tokens: tuple[str, ...]
    truncated: bool = False


@dataclass
class TrainingReport:
    epoch_losses: list[float] = field(default_factory=list)
    steps: int = 0


@dataclass
class DecodeState:
    h: np.ndarray
    emb_mask: np.ndarray
    hid_mask: np.ndarray
    in_mr: np.ndarray | None = None  # (B, V) indicator of tokens present in the MR


class ConditionalGenerator(Protocol):
    """What the self-training loop needs from a generator."""

    vocab: Vocab
    dropout: float

    def encode(self, mr: MeaningRepresentation, text: Sequence[str]) -> list[int]: ...

    def encode_prefix(self, mr: MeaningRepresentation) -> list[int]: ...

    def init_decode(self, prefixes: Sequence[Sequence[int]], masks: Sequence[DropoutMask]) -> tuple[DecodeState, np.ndarray]: ...

    def advance(self, state: DecodeState, tokens: np.ndarray) -> np.ndarray: ...

    def score_batch(self, pairs: Sequence[LabeledPair], masks: Sequence[DropoutMask]) -> list[np.ndarray]: ...

    def train_epochs(self, data: Sequence[LabeledPair], epochs: int, lr: float, **kw) -> TrainingReport: ...


def _dot(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    # single-row products take a different BLAS path; pad so every row is
    # computed identically regardless of batch size
    flat = a.reshape(-1, a.shape[-1])
    if flat.shape[0] == 1:
        flat = np.vstack([flat, np.zeros_like(flat)])
        return (flat @ w)[:1].reshape(*a.shape[:-1], w.shape[1])
    return (flat @ w).reshape(*a.shape[:-1], w.shape[1])


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class GRUGenerator:
    """Single-layer GRU conditional language model with a flat parameter vector."""

    def __init__(
        self,
        vocab: Vocab,
        embed_dim: int = 64,
        hidden_dim: int = 128,
        dropout: float = 0.1,
        seed: int = 0,
        copy: bool = True,
    ):
        """With ``copy`` a scalar gate computed from the hidden state is added to
        the logit of every token that occurs in the MR. The plain GRU has no way
        to learn value copying from a few dozen pairs; the gate lets the regular
        logits pick the slot type while the MR decides the value."""
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        self.vocab = vocab
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.dropout = float(dropout)
        self.copy_gate = bool(copy)
        V, E, H = len(vocab), embed_dim, hidden_dim
        self.shapes = {
            "emb": (V, E),
            "w_in": (E, 3 * H),
            "b_in": (3 * H,),
            "w_rec": (H, 3 * H),
            "b_rec": (3 * H,),
            "w_out": (H, V),
            "b_out": (V,),
        }
        if self.copy_gate:
            self.shapes["w_copy"] = (H, 1)
            self.shapes["b_copy"] = (1,)
        self.theta = np.zeros(sum(math.prod(s) for s in self.shapes.values()))
        self.p = self._views(self.theta)
        rng = np.random.default_rng(seed)
        self.p["emb"][:] = rng.normal(0.0, 0.1, (V, E))
        bound = 1.0 / math.sqrt(H)
        for name in ("w_in", "w_rec"):
            self.p[name][:] = rng.uniform(-bound, bound, self.shapes[name])
        self.p["w_out"][:] = rng.uniform(-bound, bound, (H, V))

    @property
    def n_params(self) -> int:
        return self.theta.size

    def _views(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        views, offset = {}, 0
        for name, shape in self.shapes.items():
            size = math.prod(shape)
            views[name] = flat[offset : offset + size].reshape(shape)
            offset += size
        return views

    def architecture(self) -> dict:
        return {
            "type": "gru",
            "vocab_size": len(self.vocab),
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "dropout": self.dropout,
            "copy": self.copy_gate,
        }

    # -- encoding ---------------------------------------------------------

    def encode_prefix(self, mr: MeaningRepresentation) -> list[int]:
        return [self.vocab.bos] + self.vocab.ids(tokenize(render_mr(mr))) + [self.vocab.sep]

    def encode(self, mr: MeaningRepresentation, text: Sequence[str]) -> list[int]:
        return self.encode_prefix(mr) + self.vocab.ids(text) + [self.vocab.eos]

    def _encode_pairs(self, pairs: Sequence[LabeledPair]) -> list[tuple[list[int], int]]:
        out = []
        for p in pairs:
            prefix = self.encode_prefix(p.mr)
            out.append((prefix + self.vocab.ids(p.text) + [self.vocab.eos], len(prefix) - 1))
        return out

    def _pack(self, seqs: Sequence[tuple[list[int], int]]):
        """Pad ``(ids, separator position)`` rows.

        Returns the ids, target weights marking response tokens, and the (B, V)
        indicator of tokens occurring in each MR.
        """
        L = max(len(s) for s, _ in seqs)
        ids = np.full((len(seqs), L), self.vocab.pad, dtype=np.int64)
        weights = np.zeros((len(seqs), L - 1))
        for i, (s, sep) in enumerate(seqs):
            ids[i, : len(s)] = s
            weights[i, sep : len(s) - 1] = 1.0
        return ids, weights, self.mr_indicator([s[1:sep] for s, sep in seqs])

    # -- dropout ----------------------------------------------------------

    def mask_arrays(self, masks: Sequence[DropoutMask]) -> tuple[np.ndarray, np.ndarray]:
        B, E, H = len(masks), self.embed_dim, self.hidden_dim
        me, mh = np.ones((B, E)), np.ones((B, H))
        keep = 1.0 - self.dropout
        for i, m in enumerate(masks):
            if m.is_stochastic:
                rng = np.random.default_rng(m.seed)
                me[i] = (rng.random(E) >= self.dropout) / keep
                mh[i] = (rng.random(H) >= self.dropout) / keep
        return me, mh

    def _random_masks(self, rng: np.random.Generator, B: int):
        keep = 1.0 - self.dropout
        me = (rng.random((B, self.embed_dim)) >= self.dropout) / keep
        mh = (rng.random((B, self.hidden_dim)) >= self.dropout) / keep
        return me, mh

    # -- forward / backward -----------------------------------------------

    def _gru_step(self, xw, h):
        H = self.hidden_dim
        hw = _dot(h, self.p["w_rec"]) + self.p["b_rec"]
        z = _sigmoid(xw[:, :H] + hw[:, :H])
        r = _sigmoid(xw[:, H : 2 * H] + hw[:, H : 2 * H])
        n = np.tanh(xw[:, 2 * H :] + r * hw[:, 2 * H :])
        return (1.0 - z) * n + z * h, (hw, z, r, n)

    def mr_indicator(self, mr_ids: Sequence[Sequence[int]]) -> np.ndarray:
        """(B, V) 0/1 matrix marking the tokens that occur in each row's MR."""
        ind = np.zeros((len(mr_ids), len(self.vocab)))
        for i, ids in enumerate(mr_ids):
            ind[i, list(ids)] = 1.0
        return ind

    def _output(self, hm, in_mr):
        """Logits from masked hidden states of shape (B, H) or (B, T, H)."""
        logits = _dot(hm, self.p["w_out"]) + self.p["b_out"]
        if self.copy_gate:
            gate = _dot(hm, self.p["w_copy"])[..., 0] + self.p["b_copy"][0]
            if hm.ndim == 3:
                logits += gate[..., None] * in_mr[:, None, :]
            else:
                logits += gate[:, None] * in_mr
        return logits

    def _forward(self, inputs, in_mr, me, mh, cache=False):
        p = self.p
        B, T = inputs.shape
        X = p["emb"][inputs] * me[:, None, :]
        XW = _dot(X, p["w_in"]) + p["b_in"]
        h = np.zeros((B, self.hidden_dim), dtype=self.theta.dtype)
        hs = np.empty((B, T, self.hidden_dim), dtype=self.theta.dtype)
        steps = []
        for t in range(T):
            h_prev = h
            h, parts = self._gru_step(XW[:, t], h)
            hs[:, t] = h
            if cache:
                steps.append((h_prev,) + parts)
        logits = self._output(hs * mh[:, None, :], in_mr)
        return logits, (X, hs, steps)

    def _loss_and_grad(self, ids, weights, in_mr, me, mh, need_grad=True):
        p = self.p
        H = self.hidden_dim
        inputs, targets = ids[:, :-1], ids[:, 1:]
        logits, (X, hs, steps) = self._forward(inputs, in_mr, me, mh, cache=need_grad)
        logp = log_softmax(logits)
        tok_logp = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
        denom = weights.sum()
        loss = -(tok_logp * weights).sum() / denom
        if not need_grad:
            return loss, None
        grad = np.zeros_like(self.theta)
        g = self._views(grad)
        dlogits = np.exp(logp)
        np.put_along_axis(dlogits, targets[..., None], np.take_along_axis(dlogits, targets[..., None], -1) - 1.0, -1)
        dlogits *= (weights / denom)[..., None]
        hm = hs * mh[:, None, :]
        V = dlogits.shape[-1]
        g["w_out"][:] = hm.reshape(-1, H).T @ dlogits.reshape(-1, V)
        g["b_out"][:] = dlogits.sum(axis=(0, 1))
        dhm = _dot(dlogits, p["w_out"].T)
        if self.copy_gate:
            dgate = np.einsum("btv,bv->bt", dlogits, in_mr)
            g["w_copy"][:] = hm.reshape(-1, H).T @ dgate.reshape(-1, 1)
            g["b_copy"][0] = dgate.sum()
            dhm += dgate[..., None] * p["w_copy"][:, 0]
        dhs = dhm * mh[:, None, :]
        dXW = np.empty((inputs.shape[0], inputs.shape[1], 3 * H), dtype=self.theta.dtype)
        dh_next = np.zeros((inputs.shape[0], H), dtype=self.theta.dtype)
        for t in range(inputs.shape[1] - 1, -1, -1):
            h_prev, hw, z, r, n = steps[t]
            dh = dhs[:, t] + dh_next
            dn = dh * (1.0 - z)
            dz = dh * (h_prev - n)
            da_n = dn * (1.0 - n * n)
            da_z = dz * z * (1.0 - z)
            da_r = da_n * hw[:, 2 * H :] * r * (1.0 - r)
            dXW[:, t, :H] = da_z
            dXW[:, t, H : 2 * H] = da_r
            dXW[:, t, 2 * H :] = da_n
            dhw = np.concatenate([da_z, da_r, da_n * r], axis=1)
            g["w_rec"] += h_prev.T @ dhw
            g["b_rec"] += dhw.sum(axis=0)
            dh_next = dh * z + _dot(dhw, p["w_rec"].T)
        E = self.embed_dim
        g["w_in"][:] = X.reshape(-1, E).T @ dXW.reshape(-1, 3 * H)
        g["b_in"][:] = dXW.sum(axis=(0, 1))
        dX = _dot(dXW, p["w_in"].T) * me[:, None, :]
        np.add.at(g["emb"], inputs.reshape(-1), dX.reshape(-1, E))
        return loss, grad

    def loss_and_grad(self, pairs: Sequence[LabeledPair], masks: Sequence[DropoutMask] | None = None):
        """Mean response-token NLL over ``pairs`` and its gradient w.r.t. ``theta``."""
        masks = masks if masks is not None else [DropoutMask.disabled()] * len(pairs)
        ids, weights, in_mr = self._pack(self._encode_pairs(pairs))
        return self._loss_and_grad(ids, weights, in_mr, *self.mask_arrays(masks))

    def mean_nll(self, pairs: Sequence[LabeledPair]) -> float:
        ids, weights, in_mr = self._pack(self._encode_pairs(pairs))
        return float(self._loss_and_grad(ids, weights, in_mr, *self.mask_arrays([DropoutMask()] * len(pairs)), need_grad=False)[0])

    # -- scoring and decoding ----------------------------------------------

    def score_batch(self, pairs: Sequence[LabeledPair], masks: Sequence[DropoutMask], chunk: int = 256) -> list[np.ndarray]:
        """Per-token response log-probabilities (EOS included) for each pair."""
        out = []
        for start in range(0, len(pairs), chunk):
            part = pairs[start : start + chunk]
            ids, weights, in_mr = self._pack(self._encode_pairs(part))
            me, mh = self.mask_arrays(masks[start : start + chunk])
            logits, _ = self._forward(ids[:, :-1], in_mr, me, mh)
            logp = np.take_along_axis(log_softmax(logits), ids[:, 1:, None], -1)[..., 0]
            for i in range(len(part)):
                out.append(logp[i][weights[i] > 0])
        return out

    def init_decode(self, prefixes, masks):
        me, mh = self.mask_arrays(masks)
        lengths = np.array([len(p) for p in prefixes])
        ids = np.full((len(prefixes), lengths.max()), self.vocab.pad, dtype=np.int64)
        for i, pfx in enumerate(prefixes):
            ids[i, : len(pfx)] = pfx
        p = self.p
        XW = _dot(p["emb"][ids] * me[:, None, :], p["w_in"]) + p["b_in"]
        h = np.zeros((len(prefixes), self.hidden_dim))
        for t in range(ids.shape[1]):
            h_new, _ = self._gru_step(XW[:, t], h)
            h = np.where((t < lengths)[:, None], h_new, h)
        state = DecodeState(h, me, mh, self.mr_indicator([self._mr_part(pfx) for pfx in prefixes]))
        return state, self._logits(state)

    def _mr_part(self, prefix: Sequence[int]) -> list[int]:
        """MR token ids of a decoding prefix: after ``<bos>``, before the first ``&``."""
        prefix = list(prefix)
        end = prefix.index(self.vocab.sep) if self.vocab.sep in prefix else len(prefix)
        return prefix[1:end]

    def _logits(self, state: DecodeState) -> np.ndarray:
        return self._output(state.h * state.hid_mask, state.in_mr)

    def advance(self, state: DecodeState, tokens) -> np.ndarray:
        p = self.p
        xw = _dot(p["emb"][np.asarray(tokens)] * state.emb_mask, p["w_in"]) + p["b_in"]
        state.h, _ = self._gru_step(xw, state.h)
        return self._logits(state)

    # -- training ----------------------------------------------------------

    def train_epochs(
        self,
        data: Sequence[LabeledPair],
        epochs: int,
        lr: float,
        batch_size: int = 4,
        seed: int = 0,
        weight_decay: float = 0.01,
        clip_norm: float | None = 1.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> TrainingReport:
        """AdamW with decoupled weight decay and a linear decay of ``lr`` to 0.

        Optimizer moments start fresh on every call.
        """
        if not data:
            raise ValueError("no training data")
        if lr < 0:
            raise ValueError("learning rate must be >= 0")
        report = TrainingReport()
        if epochs <= 0:
            return report
        rng = np.random.default_rng(seed)
        seqs = self._encode_pairs(data)
        n_batches = math.ceil(len(seqs) / batch_size)
        total = epochs * n_batches
        m = np.zeros_like(self.theta)
        v = np.zeros_like(self.theta)
        b1, b2 = betas
        for _ in range(epochs):
            snapshot = self.theta.copy()
            order = rng.permutation(len(seqs))
            loss_sum = tok_sum = 0.0
            for b in range(n_batches):
                idx = order[b * batch_size : (b + 1) * batch_size]
                ids, weights, in_mr = self._pack([seqs[i] for i in idx])
                me, mh = self._random_masks(rng, len(idx))
                loss, grad = self._loss_and_grad(ids, weights, in_mr, me, mh)
                if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                    self.theta[:] = snapshot
                    raise DivergenceError(f"non-finite loss at step {report.steps}")
                if clip_norm is not None:
                    norm = float(np.linalg.norm(grad))
                    if norm > clip_norm:
                        grad *= clip_norm / norm
                step_lr = lr * (1.0 - report.steps / total)
                report.steps += 1
                m = b1 * m + (1 - b1) * grad
                v = b2 * v + (1 - b2) * grad * grad
                m_hat = m / (1 - b1**report.steps)
                v_hat = v / (1 - b2**report.steps)
                self.theta *= 1.0 - step_lr * weight_decay
                self.theta -= step_lr * m_hat / (np.sqrt(v_hat) + eps)
                if not np.all(np.isfinite(self.theta)):
                    self.theta[:] = snapshot
                    raise DivergenceError(f"non-finite parameters at step {report.steps}")
                loss_sum += loss * weights.sum()
                tok_sum += weights.sum()
            report.epoch_losses.append(loss_sum / tok_sum)
        return report

    # -- persistence -------------------------------------------------------

    def copy(self) -> "GRUGenerator":
        other = GRUGenerator(self.vocab, self.embed_dim, self.hidden_dim, self.dropout, copy=self.copy_gate)
        other.theta[:] = self.theta
        return other

    def save(self, path) -> None:
        meta = {"version": CHECKPOINT_VERSION, "architecture": self.architecture(), "vocab": self.vocab.tokens}
        with open(path, "wb") as fh:
            np.savez(fh, theta=self.theta, meta=np.array(json.dumps(meta)))

    @classmethod
    def load(cls, path) -> "GRUGenerator":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            theta = data["theta"]
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        arch = meta["architecture"]
        vocab = Vocab(meta["vocab"])
        if vocab.tokens != meta["vocab"] or len(vocab) != arch["vocab_size"]:
            raise CheckpointError(f"{path}: vocabulary does not match architecture")
        model = cls(vocab, arch["embed_dim"], arch["hidden_dim"], arch["dropout"], copy=arch.get("copy", False))
        if theta.shape != model.theta.shape:
            raise CheckpointError(f"{path}: expected {model.theta.size} parameters, found {theta.size}")
        model.theta[:] = theta
        return model


# -- model-agnostic operations --------------------------------------------


def log_likelihood(model: ConditionalGenerator, mask: DropoutMask, pair: LabeledPair) -> tuple[float, np.ndarray]:
    per_token = model.score_batch([pair], [mask])[0]
    return float(per_token.sum()), per_token


def forward_step(model: ConditionalGenerator, mask: DropoutMask, prefix: Sequence[int]) -> StepOutput:
    if len(prefix) == 0:
        raise ValueError("prefix must be non-empty")
    _, logits = model.init_decode([list(prefix)], [mask])
    return StepOutput(logits[0], softmax(logits[0]))


def nucleus_filter(probs: np.ndarray, nucleus_p: float) -> np.ndarray:
    """Keep the smallest top-probability set with mass >= ``nucleus_p``; renormalize.

    Works row-wise on a 2-D array.
    """
    if not 0.0 < nucleus_p <= 1.0:
        raise ValueError("nucleus_p must be in (0, 1]")
    order = np.argsort(-probs, axis=-1, kind="stable")
    ranked = np.take_along_axis(probs, order, -1)
    mass_before = np.cumsum(ranked, axis=-1) - ranked
    keep = np.zeros(probs.shape, dtype=bool)
    np.put_along_axis(keep, order, mass_before < nucleus_p, -1)
    kept = np.where(keep, probs, 0.0)
    return kept / kept.sum(axis=-1, keepdims=True)


def draw_tokens(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row; never returns a zero-probability token."""
    cdf = np.cumsum(probs, axis=-1)
    threshold = uniforms * cdf[:, -1]
    idx = (cdf <= threshold[:, None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def banned_ids(vocab: Vocab) -> list[int]:
    return [vocab.pad, vocab.bos, vocab.sep, vocab.unk]


def sampling_distribution(probs: np.ndarray, vocab: Vocab, nucleus_p: float) -> np.ndarray:
    probs = probs.copy()
    probs[:, banned_ids(vocab)] = 0.0
    probs /= probs.sum(axis=-1, keepdims=True)
    return nucleus_filter(probs, nucleus_p)


def sample_batch(
    model: ConditionalGenerator,
    mrs: Sequence[MeaningRepresentation],
    seeds: Sequence[int],
    nucleus_p: float = 0.9,
    max_len: int = 40,
) -> list[SampleResult]:
    """Nucleus-sample one response per MR with dropout disabled.

    Row ``i`` depends only on ``(theta, mrs[i], seeds[i])``.
    """
    if not mrs:
        return []
    vocab = model.vocab
    state, logits = model.init_decode([model.encode_prefix(mr) for mr in mrs], [DropoutMask()] * len(mrs))
    rngs = [np.random.default_rng(s) for s in seeds]
    outputs: list[list[int]] = [[] for _ in mrs]
    done = np.zeros(len(mrs), dtype=bool)
    for _ in range(max_len):
        probs = sampling_distribution(softmax(logits), vocab, nucleus_p)
        u = np.array([rngs[i].random() if not done[i] else 0.0 for i in range(len(mrs))])
        toks = draw_tokens(probs, u)
        for i in np.flatnonzero(~done):
            if toks[i] == vocab.eos:
                done[i] = True
            else:
                outputs[i].append(int(toks[i]))
        if done.all():
            break
        logits = model.advance(state, toks)
    return [SampleResult(tuple(vocab.words(o)), truncated=not d) for o, d in zip(outputs, done)]


def sample(model: ConditionalGenerator, mr: MeaningRepresentation, nucleus_p: float = 0.9, max_len: int = 40, seed: int = 0) -> SampleResult:
    return sample_batch(model, [mr], [seed], nucleus_p, max_len)[0]


def train_epochs(model: ConditionalGenerator, data: Sequence[LabeledPair], epochs: int, lr: float, **kw) -> TrainingReport:
    return model.train_epochs(data, epochs, lr, **kw)
