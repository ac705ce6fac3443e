"""Toy attention-based glyph-word recognizer.

A grayscale image is split into non-overlapping pixel-column blocks, each
embedded by a shared two-layer perceptron; a single recurrent cell with
additive attention decodes characters autoregressively. The attention
context vector at each step is the "glimpse" the word-level visual
consistency loss aligns.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEFAULT_CHARS = "abcdefghijklmnopqrstuvwxyz0123456789"

CHECKPOINT_MAGIC = b"TSSL"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Alphabet:
    """Character set plus BOS/EOS/PAD specials with dense token ids."""

    chars: str = DEFAULT_CHARS

    @property
    def bos_id(self):
        return len(self.chars)

    @property
    def eos_id(self):
        return len(self.chars) + 1

    @property
    def pad_id(self):
        return len(self.chars) + 2

    @property
    def size(self):
        return len(self.chars) + 3

    def encode(self, word):
        try:
            return [self.chars.index(c) for c in word]
        except ValueError:
            raise ValueError(f"character outside alphabet in {word!r}") from None

    def targets(self, word):
        """Token sequence the decoder is trained to emit: characters then EOS."""
        return self.encode(word) + [self.eos_id]

    def decode(self, tokens):
        """Character string up to the first EOS, non-character tokens dropped."""
        out = []
        for t in tokens:
            if t == self.eos_id:
                break
            if 0 <= t < len(self.chars):
                out.append(self.chars[t])
        return "".join(out)


@dataclass(frozen=True)
class RecognizerConfig:
    image_height: int = 16
    image_width: int = 64
    column_stride: int = 4
    feature_dim: int = 64
    hidden_dim: int = 64
    embed_dim: int = 64
    attention_dim: int = 64
    max_len: int = 12

    @property
    def n_columns(self):
        return self.image_width // self.column_stride

    @property
    def column_dim(self):
        return self.image_height * self.column_stride


@dataclass
class DecodeTrace:
    """Per-step outputs of one decoded image.

    tokens is EOS-terminated or truncated at max_len; probs/log_probs are the
    per-step output distributions, glimpses the attention context vectors,
    chosen_log_probs the scalar log-likelihoods of the emitted tokens, and
    confidence the product of per-step distribution maxima.
    """

    tokens: list
    probs: list
    log_probs: list
    glimpses: list
    chosen_log_probs: list
    confidence: float

    @property
    def length(self):
        return len(self.tokens)


def confidence(trace):
    """Cumulative product of the per-step maximum output probability."""
    score = 1.0
    for p in trace.probs:
        score *= float(p.data.max())
    return score


class ModelState:
    """Parameter container shared by the student and the EMA teacher."""

    def __init__(self, config=None, alphabet=None, rng=None, params=None, requires_grad=True):
        self.config = config or RecognizerConfig()
        self.alphabet = alphabet or Alphabet()
        if params is not None:
            self.params = params
        else:
            self.params = self._init_params(rng or np.random.default_rng(0), requires_grad)

    def _init_params(self, rng, requires_grad):
        cfg = self.config
        vocab = self.alphabet.size

        def weight(rows, cols):
            return Tensor(rng.normal(0.0, 1.0 / np.sqrt(rows), size=(rows, cols)), requires_grad)

        def bias(n):
            return Tensor(np.zeros(n), requires_grad)

        return {
            "enc_w1": weight(cfg.column_dim, cfg.hidden_dim),
            "enc_b1": bias(cfg.hidden_dim),
            "enc_w2": weight(cfg.hidden_dim, cfg.feature_dim),
            "enc_b2": bias(cfg.feature_dim),
            "embed": weight(vocab, cfg.embed_dim),
            "dec_w_in": weight(cfg.embed_dim, cfg.hidden_dim),
            "dec_w_h": weight(cfg.hidden_dim, cfg.hidden_dim),
            "dec_b": bias(cfg.hidden_dim),
            "att_w_f": weight(cfg.feature_dim, cfg.attention_dim),
            "att_w_h": weight(cfg.hidden_dim, cfg.attention_dim),
            "att_pos": weight(cfg.n_columns, cfg.attention_dim),  # column-position code
            "att_b": bias(cfg.attention_dim),
            "att_v": Tensor(rng.normal(0.0, 1.0 / np.sqrt(cfg.attention_dim), size=cfg.attention_dim), requires_grad),
            "out_w": weight(cfg.hidden_dim + cfg.feature_dim, vocab),
            "out_b": bias(vocab),
        }

    def parameters(self):
        return self.params

    def copy(self, requires_grad=False):
        params = {k: Tensor(v.data.copy(), requires_grad) for k, v in self.params.items()}
        return ModelState(self.config, self.alphabet, params=params)

    def all_finite(self):
        return all(np.all(np.isfinite(p.data)) for p in self.params.values())


def encode(state, image):
    """Column-block features for a grayscale image in [0, 1].

    Every width-`column_stride` block is flattened and pushed through the
    shared two-layer perceptron, so identical pixel columns map to identical
    feature vectors.
    """
    cfg = state.config
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (cfg.image_height, cfg.image_width):
        raise ValueError(
            f"encode: expected image {cfg.image_height}x{cfg.image_width}, got {image.shape[0]}x{image.shape[1]}"
        )
    s = cfg.column_stride
    cols = np.stack([image[:, j * s:(j + 1) * s].reshape(-1) for j in range(cfg.n_columns)])
    p = state.params
    hidden = ad.tanh(ad.add(ad.matmul(ad.constant(cols), p["enc_w1"]), p["enc_b1"]))
    return ad.tanh(ad.add(ad.matmul(hidden, p["enc_w2"]), p["enc_b2"]))


def _decode_step(state, features, features_proj, prev_embed, h):
    # features_proj = features @ att_w_f + att_pos, hoisted out of the step loop;
    # the positional code lets attention order repeated glyphs the (deliberately
    # translation-invariant) encoder cannot distinguish
    p = state.params
    h_new = ad.tanh(ad.add(ad.add(ad.matmul(prev_embed, p["dec_w_in"]), ad.matmul(h, p["dec_w_h"])), p["dec_b"]))
    att = ad.tanh(ad.add(ad.add(features_proj, ad.matmul(h_new, p["att_w_h"])), p["att_b"]))
    alpha = ad.softmax(ad.matmul(att, p["att_v"]), axis=-1)
    glimpse = ad.matmul(alpha, features)
    logits = ad.add(ad.matmul(ad.concat([h_new, glimpse]), p["out_w"]), p["out_b"])
    return h_new, glimpse, logits


def _initial_hidden(state):
    return ad.constant(np.zeros(state.config.hidden_dim))


def decode_teacher_forcing(state, features, token_seq):
    """Run the decoder feeding the given tokens as previous-step inputs.

    Step t consumes token t-1 (BOS at the first step) and is scored against
    token t; the trace has exactly len(token_seq) steps.
    """
    alpha = state.alphabet
    cfg = state.config
    token_seq = list(token_seq)
    if not token_seq or len(token_seq) > cfg.max_len:
        raise ValueError(f"teacher forcing: sequence length {len(token_seq)} outside 1..{cfg.max_len}")
    if any(not 0 <= t < alpha.size for t in token_seq):
        raise ValueError(f"teacher forcing: token outside alphabet in {token_seq}")
    if token_seq[-1] != alpha.eos_id and len(token_seq) < cfg.max_len:
        raise ValueError("teacher forcing: sequence must be EOS-terminated or max_len long")

    p = state.params
    h = _initial_hidden(state)
    prev = ad.take(p["embed"], alpha.bos_id)
    features_proj = ad.add(ad.matmul(features, p["att_w_f"]), p["att_pos"])
    trace = DecodeTrace([], [], [], [], [], 1.0)
    for target in token_seq:
        h, glimpse, logits = _decode_step(state, features, features_proj, prev, h)
        probs = ad.softmax(logits, axis=-1)
        log_probs = ad.log_softmax(logits, axis=-1)
        trace.tokens.append(int(target))
        trace.probs.append(probs)
        trace.log_probs.append(log_probs)
        trace.glimpses.append(glimpse)
        trace.chosen_log_probs.append(ad.take(log_probs, target))
        trace.confidence *= float(probs.data.max())
        prev = ad.take(p["embed"], target)
    return trace


def decode_greedy(state, features, feedback_mode="argmax", max_len=None, rng=None, temperature=1.0):
    """Autoregressive decode feeding back the model's own prediction.

    feedback_mode chooses how the previous token re-enters the decoder:
    "argmax" uses the hard embedding row (deterministic), "st_gumbel" feeds
    the straight-through one-hot-weighted sum of embedding rows (keeps the
    feedback path differentiable), "sample" draws from the step distribution
    and records its log-probability. Stops after EOS or at max_len.
    """
    if feedback_mode not in ("argmax", "st_gumbel", "sample"):
        raise ValueError(f"unknown feedback mode {feedback_mode!r}")
    if feedback_mode != "argmax" and rng is None:
        raise ValueError(f"feedback mode {feedback_mode!r} needs an rng")
    alpha = state.alphabet
    max_len = max_len or state.config.max_len
    if max_len < 1:
        raise ValueError("decode_greedy: max_len must be >= 1")

    p = state.params
    h = _initial_hidden(state)
    prev = ad.take(p["embed"], alpha.bos_id)
    features_proj = ad.add(ad.matmul(features, p["att_w_f"]), p["att_pos"])
    trace = DecodeTrace([], [], [], [], [], 1.0)
    for _ in range(max_len):
        h, glimpse, logits = _decode_step(state, features, features_proj, prev, h)
        probs = ad.softmax(logits, axis=-1)
        log_probs = ad.log_softmax(logits, axis=-1)
        if feedback_mode == "argmax":
            token = int(np.argmax(probs.data))
            prev = ad.take(p["embed"], token)
        elif feedback_mode == "st_gumbel":
            one_hot = ad.st_gumbel(logits, temperature, rng)
            token = int(np.argmax(one_hot.data))
            prev = ad.matmul(one_hot, p["embed"])
        else:
            weights = probs.data / probs.data.sum()
            token = int(rng.choice(alpha.size, p=weights))
            prev = ad.take(p["embed"], token)
        trace.tokens.append(token)
        trace.probs.append(probs)
        trace.log_probs.append(log_probs)
        trace.glimpses.append(glimpse)
        trace.chosen_log_probs.append(ad.take(log_probs, token))
        trace.confidence *= float(probs.data.max())
        if token == alpha.eos_id:
            break
    return trace


# ---------------------------------------------------------------------------
# checkpoint io: magic, version, config digest, then named float64 payloads
# ---------------------------------------------------------------------------

def save_checkpoint(path, named_states, config_digest):
    """Write model parameters as a versioned little-endian binary file.

    named_states maps a prefix ("student", "teacher") to a ModelState.
    """
    entries = []
    for prefix, state in named_states.items():
        for name, tensor in state.parameters().items():
            entries.append((f"{prefix}/{name}", tensor.data))

    digest = config_digest.encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<H", len(digest)))
        fh.write(digest)
        fh.write(struct.pack("<I", len(entries)))
        for name, data in entries:
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(data.astype("<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (config_digest, {qualified name: array})."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def fail(offset, why):
        raise ValueError(f"checkpoint {path}: {why} at byte {offset}")

    if blob[:4] != CHECKPOINT_MAGIC:
        fail(0, "bad magic")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        fail(4, f"unsupported version {version}")
    (digest_len,) = struct.unpack_from("<H", blob, 8)
    pos = 10
    digest = blob[pos:pos + digest_len].decode()
    pos += digest_len
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        if pos + 2 > len(blob):
            fail(pos, "truncated entry header")
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + name_len].decode()
        pos += name_len
        ndim = blob[pos]
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos) if ndim else ()
        pos += 4 * ndim
        n_bytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        if pos + n_bytes > len(blob):
            fail(pos, f"truncated payload for {name}")
        arrays[name] = np.frombuffer(blob[pos:pos + n_bytes], dtype="<f8").reshape(shape).astype(np.float64)
        pos += n_bytes
    return digest, arrays


def state_from_arrays(arrays, prefix, config=None, alphabet=None, requires_grad=False):
    """Rebuild a ModelState from checkpoint arrays under the given prefix."""
    params = {}
    for key, value in arrays.items():
        head, _, name = key.partition("/")
        if head == prefix:
            params[name] = Tensor(value.copy(), requires_grad)
    if not params:
        raise ValueError(f"no parameters under prefix {prefix!r}")
    return ModelState(config, alphabet, params=params)
