"""Word-level semantic consistency: character n-gram word embeddings, a
cosine-similarity reward, and the self-critical sequence-training loss.

Word vectors follow the subword-embedding recipe: the word is wrapped in
boundary markers, every character n-gram in a small range contributes a
vector, plus one whole-word gram, and the sum is L2-normalized. Instead of
pretrained vectors, each n-gram deterministically hashes to a seeded unit
Gaussian, which preserves the property the reward needs: spelling-similar
words embed similarly, spelling-distinct words embed near-orthogonally, and
out-of-lexicon strings are handled by construction.
"""

from __future__ import annotations

import hashlib

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .recognizer import DEFAULT_CHARS, DecodeTrace


class NGramEmbedder:
    """Deterministic hashed character n-gram word embedder."""

    def __init__(self, dim=64, n_min=1, n_max=3, seed=0, charset=DEFAULT_CHARS):
        self.dim = dim
        self.n_min = n_min
        self.n_max = n_max
        self.seed = seed
        self.charset = frozenset(charset)
        self.dropped_chars = 0  # warning counter for characters outside the charset
        self._cache = {}

    def _gram_vector(self, gram):
        vec = self._cache.get(gram)
        if vec is None:
            h = hashlib.blake2b(gram.encode(), digest_size=8, key=str(self.seed).encode()).digest()
            vec = np.random.default_rng(int.from_bytes(h, "little")).standard_normal(self.dim)
            self._cache[gram] = vec
        return vec

    def embed(self, word):
        """Unit vector for a word; the empty string maps to the zero vector."""
        word = word.casefold()
        kept = [c for c in word if c in self.charset]
        self.dropped_chars += len(word) - len(kept)
        if not kept:
            return np.zeros(self.dim)
        marked = "<" + "".join(kept) + ">"
        total = np.zeros(self.dim)
        for n in range(self.n_min, self.n_max + 1):
            for i in range(len(marked) - n + 1):
                total += self._gram_vector(marked[i:i + n])
        total += self._gram_vector(marked)  # whole-word gram
        return total / np.linalg.norm(total)


def reward(embedder, pred, pseudo):
    """Cosine similarity of the two word embeddings; empty prediction scores 0."""
    if not pseudo:
        raise ValueError("reward: pseudo label must be non-empty")
    a = embedder.embed(pred)
    b = embedder.embed(pseudo)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / (na * nb)


class RewardRecord:
    """Rewards of the sampled and baseline strings against the pseudo label."""

    __slots__ = ("sampled", "baseline", "advantage")

    def __init__(self, sampled, baseline):
        self.sampled = sampled
        self.baseline = baseline
        self.advantage = sampled - baseline


def scst_loss(sample_trace, baseline_trace, pseudo_label, reward_fn, alphabet):
    """Self-critical sequence loss: -(advantage) * mean step log-likelihood.

    The advantage (sampled reward minus greedy-baseline reward) is a constant;
    gradients flow only through the sampled tokens' log-probabilities, EOS
    step included. Returns (loss, RewardRecord | None) where None flags an
    empty sampled string (loss contribution zero).
    """
    sampled_str = alphabet.decode(sample_trace.tokens)
    if not sampled_str:
        return ad.constant(0.0), None
    baseline_str = alphabet.decode(baseline_trace.tokens)
    record = RewardRecord(reward_fn(sampled_str, pseudo_label), reward_fn(baseline_str, pseudo_label))
    if record.advantage == 0.0:
        return ad.constant(0.0), record
    log_lik = sample_trace.chosen_log_probs[0]
    for lp in sample_trace.chosen_log_probs[1:]:
        log_lik = ad.add(log_lik, lp)
    loss = ad.mul(log_lik, -record.advantage / len(sample_trace.chosen_log_probs))
    return loss, record


# ---------------------------------------------------------------------------
# enumeration oracle for the expected SCST gradient
# ---------------------------------------------------------------------------

class TinyAlphabet:
    """Character tokens 0..n-1 plus EOS at id n; no BOS/PAD in output space."""

    def __init__(self, chars="ab"):
        self.chars = chars
        self.eos_id = len(chars)
        self.size = len(chars) + 1

    def decode(self, tokens):
        return "".join(self.chars[t] for t in tokens if t < len(self.chars))


class TinyRecurrentSampler:
    """Small recurrent string sampler with an enumerable sequence space.

    Mirrors the recognizer's decoding interface (tokens, per-step
    distributions, chosen log-probabilities) but is small enough that every
    possible output sequence can be enumerated exactly.
    """

    def __init__(self, alphabet=None, hidden_dim=4, rng=None):
        self.alphabet = alphabet or TinyAlphabet()
        self.hidden_dim = hidden_dim
        rng = rng or np.random.default_rng(0)
        v = self.alphabet.size
        scale = 1.0 / np.sqrt(hidden_dim)
        self.params = {
            "embed": Tensor(rng.normal(0, scale, size=(v + 1, hidden_dim)), requires_grad=True),  # last row: start
            "w_in": Tensor(rng.normal(0, scale, size=(hidden_dim, hidden_dim)), requires_grad=True),
            "w_h": Tensor(rng.normal(0, scale, size=(hidden_dim, hidden_dim)), requires_grad=True),
            "b": Tensor(np.zeros(hidden_dim), requires_grad=True),
            "w_out": Tensor(rng.normal(0, scale, size=(hidden_dim, v)), requires_grad=True),
            "b_out": Tensor(np.zeros(v), requires_grad=True),
        }

    @property
    def start_row(self):
        return self.alphabet.size

    def parameters(self):
        return self.params

    def step(self, prev_token, h):
        p = self.params
        prev = ad.take(p["embed"], self.start_row if prev_token is None else prev_token)
        h_new = ad.tanh(ad.add(ad.add(ad.matmul(prev, p["w_in"]), ad.matmul(h, p["w_h"])), p["b"]))
        logits = ad.add(ad.matmul(h_new, p["w_out"]), p["b_out"])
        return h_new, ad.softmax(logits), ad.log_softmax(logits)

    def _decode(self, max_len, pick):
        h = ad.constant(np.zeros(self.hidden_dim))
        prev = None
        trace = DecodeTrace([], [], [], [], [], 1.0)
        for _ in range(max_len):
            h, probs, log_probs = self.step(prev, h)
            token = pick(probs)
            trace.tokens.append(token)
            trace.probs.append(probs)
            trace.log_probs.append(log_probs)
            trace.glimpses.append(ad.constant(np.zeros(1)))
            trace.chosen_log_probs.append(ad.take(log_probs, token))
            trace.confidence *= float(probs.data.max())
            prev = token
            if token == self.alphabet.eos_id:
                break
        return trace

    def sample(self, rng, max_len):
        return self._decode(max_len, lambda p: int(rng.choice(self.alphabet.size, p=p.data / p.data.sum())))

    def greedy(self, max_len):
        return self._decode(max_len, lambda p: int(np.argmax(p.data)))


def exact_expected_scst_gradient(model, pseudo_label, reward_fn, max_len):
    """Expectation of the self-critical gradient over every possible sequence.

    Enumerates the full sequence space (sequences end at EOS or max_len),
    weights each sequence's loss by its exact probability, and differentiates
    once. Sequences that decode to the empty string are skipped, mirroring
    the zero-loss guard in scst_loss. Returns {param name: gradient array}.
    """
    v = model.alphabet.size
    if v > 4 or max_len > 3:
        raise ValueError(f"enumeration oracle limited to 4 tokens / 3 steps, got {v} tokens, {max_len} steps")

    baseline_str = model.alphabet.decode(model.greedy(max_len).tokens)
    r_base = reward_fn(baseline_str, pseudo_label)

    terms = []

    def walk(prev_token, h, depth, prob, log_lik_terms, tokens):
        h_new, probs, log_probs = model.step(prev_token, h)
        for tok in range(v):
            seq_prob = prob * float(probs.data[tok])
            lps = log_lik_terms + [ad.take(log_probs, tok)]
            seq = tokens + [tok]
            if tok == model.alphabet.eos_id or depth + 1 == max_len:
                decoded = model.alphabet.decode(seq)
                if not decoded:
                    continue
                advantage = reward_fn(decoded, pseudo_label) - r_base
                if advantage == 0.0 or seq_prob == 0.0:
                    continue
                log_lik = lps[0]
                for lp in lps[1:]:
                    log_lik = ad.add(log_lik, lp)
                terms.append(ad.mul(log_lik, -advantage * seq_prob / len(lps)))
            else:
                walk(tok, h_new, depth + 1, seq_prob, lps, seq)

    walk(None, ad.constant(np.zeros(model.hidden_dim)), 0, 1.0, [], [])

    names = list(model.params)
    if not terms:
        return {n: np.zeros_like(model.params[n].data) for n in names}
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    ad.zero_grads(model.params.values())
    ad.backward(total)
    grads = {n: (np.zeros_like(model.params[n].data) if model.params[n].grad is None
                 else np.array(model.params[n].grad, copy=True)) for n in names}
    ad.zero_grads(model.params.values())
    return grads


def flatten_gradients(grads, names):
    return np.concatenate([grads[n].reshape(-1) for n in names])
