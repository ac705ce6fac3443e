"""End-to-end training: supervised branch plus the Mean-Teacher unsupervised
branch with character-level, word-level visual, and word-level semantic
consistency, under a warmup+cosine schedule and decoupled-weight-decay Adam.

Single-threaded runs are deterministic: every random draw comes from a seeded
stream dedicated to one purpose (init, batching, augmentation, decoding), and
metrics files are written with a fixed numeric format.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np

from . import alignment, autodiff as ad, datagen, meanteacher, objective, recognizer, semantics

logger = logging.getLogger("textssl")

METRICS_HEADER = "step,epoch,ce,ccr,wvcr,scst,total,gate_frac,lr,acc_clean,acc_distorted,acc_occluded"

TEST_SPLITS = ("test_clean", "test_distorted", "test_occluded")


@dataclass
class TrainConfig:
    """Every knob of a run; round-trips through `key = value` config files."""

    # loss weights and confidence gate
    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda3: float = 0.1
    tau: float = 0.5
    # teacher EMA retention
    gamma_r: float = 0.9999
    # optimizer; desk-scale defaults (reference-scale values: lr 8e-4, batch 1024)
    learning_rate: float = 1e-3
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    grad_clip: float = 5.0
    # schedule
    epochs: int = 10
    warmup_epochs: int = 1
    batch_size: int = 64
    unlabeled_ratio: float = 1.0
    # decoding
    st_gumbel_temperature: float = 1.0
    max_len: int = 12
    # ablation switches
    use_ccr: bool = True
    use_wvcr: bool = True
    use_wscr: bool = True
    # seeds
    seed: int = 0
    data_seed: int = 0
    embedder_seed: int = 0
    # dataset sizes
    n_labeled: int = 2000
    n_unlabeled: int = 10000
    n_test: int = 1000
    lexicon_size: int = 1000

    def validate(self):
        problems = []
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be non-negative")
        if not 0.0 <= self.tau <= 1.0:
            problems.append("tau must be in [0, 1]")
        if not 0.0 <= self.gamma_r < 1.0:
            problems.append("gamma_r must be in [0, 1)")
        if self.learning_rate <= 0:
            problems.append("learning_rate must be positive")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            problems.append("betas must be in [0, 1)")
        if self.epochs < 0 or self.warmup_epochs < 0:
            problems.append("epochs and warmup_epochs must be non-negative")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.unlabeled_ratio < 0:
            problems.append("unlabeled_ratio must be non-negative")
        if self.st_gumbel_temperature <= 0:
            problems.append("st_gumbel_temperature must be positive")
        if self.max_len < 1:
            problems.append("max_len must be >= 1")
        if min(self.n_labeled, self.n_unlabeled, self.n_test, self.lexicon_size) < 1:
            problems.append("dataset sizes must be >= 1")
        if problems:
            raise ValueError("invalid config: " + "; ".join(problems))
        return self

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def digest(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path):
        known = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (part.strip() for part in line.partition("="))
            if not sep or not key:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            ftype = known[key].type
            if ftype in ("bool", bool):
                if value not in ("true", "false"):
                    raise ValueError(f"{path}:{lineno}: {key} must be true or false")
                values[key] = value == "true"
            elif ftype in ("int", int):
                values[key] = int(value)
            else:
                values[key] = float(value)
        return cls(**values).validate()

    def data_config(self):
        return datagen.DataConfig(
            n_labeled=self.n_labeled, n_unlabeled=self.n_unlabeled, n_test=self.n_test,
            lexicon_size=self.lexicon_size, seed=self.data_seed,
        )


@dataclass
class MetricsRow:
    step: int
    epoch: int
    ce: float
    ccr: float
    wvcr: float
    scst: float
    total: float
    gate_frac: float
    lr: float
    acc_clean: float
    acc_distorted: float
    acc_occluded: float

    def format(self):
        nums = (self.ce, self.ccr, self.wvcr, self.scst, self.total, self.gate_frac,
                self.lr, self.acc_clean, self.acc_distorted, self.acc_occluded)
        return f"{self.step},{self.epoch}," + ",".join(f"{v:.10g}" for v in nums)


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay applied directly to the parameters."""

    def __init__(self, params, beta1=0.9, beta2=0.999, weight_decay=0.0, eps=1e-8):
        self.params = dict(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else 0.0
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
            p.data -= lr * (update + self.weight_decay * p.data)


def clip_global_norm(params, max_norm):
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    sq = 0.0
    grads = [p.grad for p in params if p.grad is not None]
    for g in grads:
        sq += float(np.sum(g * g))
    norm = np.sqrt(sq)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


def cosine_warmup_lr(step, total_steps, warmup_steps, base_lr):
    """Linear warmup from zero, then cosine decay toward zero."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    if total_steps <= warmup_steps:
        return base_lr
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * progress))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    student: recognizer.ModelState
    teacher: meanteacher.TeacherState
    metrics_path: Path
    checkpoint_path: Path
    rows: list


def _stream(seed, tag):
    return np.random.default_rng(np.random.SeedSequence((seed, tag)))


def _mean_chain(terms, denominator):
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.mul(total, 1.0 / denominator)


def train(config, datasets, out_dir):
    """Run the full semi-supervised loop; writes metrics.csv and model.ckpt."""
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rng_model = _stream(config.seed, 1)
    rng_batch = _stream(config.seed, 2)
    rng_augment = _stream(config.seed, 3)
    rng_decode = _stream(config.seed, 4)

    rec_config = recognizer.RecognizerConfig(max_len=config.max_len)
    alphabet = recognizer.Alphabet()
    student = recognizer.ModelState(rec_config, alphabet, rng=rng_model)
    teacher = meanteacher.TeacherState(student)
    embedder = semantics.NGramEmbedder(seed=config.embedder_seed)
    reward_fn = partial(semantics.reward, embedder)

    labeled = datasets["labeled_train"].samples
    unlabeled = datasets["unlabeled_train"].samples
    steps_per_epoch = max(1, len(labeled) // config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    warmup_steps = config.warmup_epochs * steps_per_epoch
    unlabeled_bs = int(round(config.batch_size * config.unlabeled_ratio))
    ssl_on = config.use_ccr or config.use_wvcr or config.use_wscr

    optimizer = AdamW(student.params, config.beta1, config.beta2, config.weight_decay)
    metrics_path = out_dir / "metrics.csv"
    checkpoint_path = out_dir / "model.ckpt"
    rows = []

    unlabeled_queue = []
    step = 0
    with open(metrics_path, "w") as mf:
        mf.write(METRICS_HEADER + "\n")
        for epoch in range(config.epochs):
            order = rng_batch.permutation(len(labeled))
            sums = {"ce": 0.0, "ccr": 0.0, "wvcr": 0.0, "scst": 0.0, "total": 0.0, "gate": 0.0}
            skipped_alignments = 0
            for b in range(steps_per_epoch):
                lr = cosine_warmup_lr(step, total_steps, warmup_steps, config.learning_rate)

                # supervised branch: teacher-forced cross entropy
                ce_terms = []
                labeled_batch = order[b * config.batch_size:(b + 1) * config.batch_size].tolist()
                for i in labeled_batch:
                    sample = labeled[i]
                    feats = recognizer.encode(student, sample.image)
                    seq = alphabet.targets(sample.label)
                    trace = recognizer.decode_teacher_forcing(student, feats, seq)
                    ce_terms.append(objective.ce_loss(trace, seq))
                ce = _mean_chain(ce_terms, len(ce_terms))

                # unsupervised branch, active after warmup
                ccr_t = wvcr_t = scst_t = None
                gate_frac = 0.0
                batch = []
                if ssl_on and epoch >= config.warmup_epochs and unlabeled_bs > 0:
                    if len(unlabeled_queue) < unlabeled_bs:
                        unlabeled_queue.extend(rng_batch.permutation(len(unlabeled)).tolist())
                    batch = [unlabeled_queue.pop() for _ in range(unlabeled_bs)]
                    ccr_terms, wvcr_terms, scst_terms = [], [], []
                    n_gated = 0
                    for j in batch:
                        sample = unlabeled[j]
                        weak = datagen.weak_augment(sample.image, rng_augment)
                        teacher_trace = meanteacher.teacher_predict(teacher, weak)
                        if teacher_trace.confidence <= config.tau:
                            continue
                        n_gated += 1
                        strong = datagen.strong_augment(sample.image, rng_augment)
                        feats = recognizer.encode(student, strong)
                        pseudo_tokens = teacher_trace.tokens
                        pseudo_word = alphabet.decode(pseudo_tokens)
                        if config.use_ccr:
                            forced = recognizer.decode_teacher_forcing(student, feats, pseudo_tokens)
                            ccr_terms.append(objective.ccr_loss(teacher_trace, forced, config.tau))
                        if config.use_wvcr:
                            stg_trace = recognizer.decode_greedy(
                                student, feats, feedback_mode="st_gumbel", rng=rng_decode,
                                temperature=config.st_gumbel_temperature)
                            loss, result = alignment.wvcr_loss(teacher_trace, stg_trace, alphabet.eos_id)
                            if result is None:
                                skipped_alignments += 1
                            wvcr_terms.append(loss)
                        if config.use_wscr and pseudo_word:
                            sampled = recognizer.decode_greedy(student, feats, feedback_mode="sample", rng=rng_decode)
                            with ad.no_grad():
                                baseline = recognizer.decode_greedy(student, feats, feedback_mode="argmax")
                            loss, _ = semantics.scst_loss(sampled, baseline, pseudo_word, reward_fn, alphabet)
                            scst_terms.append(loss)
                    gate_frac = n_gated / unlabeled_bs
                    if config.use_ccr:
                        ccr_t = _mean_chain(ccr_terms, n_gated) if ccr_terms else ad.constant(0.0)
                    if config.use_wvcr:
                        wvcr_t = _mean_chain(wvcr_terms, n_gated) if wvcr_terms else ad.constant(0.0)
                    if config.use_wscr:
                        scst_t = _mean_chain(scst_terms, n_gated) if scst_terms else ad.constant(0.0)

                total, breakdown = objective.total_loss(
                    ce, ccr_t, wvcr_t, scst_t,
                    config.lambda1, config.lambda2, config.lambda3, gate_frac)

                if not np.isfinite(breakdown.total):
                    failure_path = out_dir / "failed_batch.txt"
                    failure_path.write_text(
                        f"step = {step}\nepoch = {epoch}\nbatch_in_epoch = {b}\n"
                        f"labeled_indices = {labeled_batch}\nunlabeled_indices = {batch}\n"
                        f"breakdown = {breakdown}\n")
                    raise RuntimeError(f"non-finite loss at step {step}; batch persisted to {failure_path}")

                optimizer.zero_grad()
                ad.backward(total)
                clip_global_norm(student.params.values(), config.grad_clip)
                optimizer.step(lr)
                meanteacher.ema_update(teacher, student, config.gamma_r)

                sums["ce"] += breakdown.ce
                sums["ccr"] += breakdown.ccr
                sums["wvcr"] += breakdown.wvcr
                sums["scst"] += breakdown.scst
                sums["total"] += breakdown.total
                sums["gate"] += gate_frac
                step += 1

            accs = {split: evaluate(student, datasets[split]) for split in TEST_SPLITS}
            row = MetricsRow(
                step=step, epoch=epoch,
                ce=sums["ce"] / steps_per_epoch, ccr=sums["ccr"] / steps_per_epoch,
                wvcr=sums["wvcr"] / steps_per_epoch, scst=sums["scst"] / steps_per_epoch,
                total=sums["total"] / steps_per_epoch, gate_frac=sums["gate"] / steps_per_epoch,
                lr=cosine_warmup_lr(step - 1, total_steps, warmup_steps, config.learning_rate),
                acc_clean=accs["test_clean"], acc_distorted=accs["test_distorted"],
                acc_occluded=accs["test_occluded"],
            )
            rows.append(row)
            mf.write(row.format() + "\n")
            logger.info("epoch %d: %s (skipped alignments: %d)", epoch, row.format(), skipped_alignments)

    recognizer.save_checkpoint(checkpoint_path, {"student": student, "teacher": teacher.model}, config.digest())
    return TrainResult(student, teacher, metrics_path, checkpoint_path, rows)


def evaluate(model_state, dataset):
    """Word accuracy under greedy argmax decoding, case-folded exact match."""
    if len(dataset) == 0:
        return 0.0
    correct = 0
    with ad.no_grad():
        for sample in dataset.samples:
            feats = recognizer.encode(model_state, sample.image)
            trace = recognizer.decode_greedy(model_state, feats, feedback_mode="argmax")
            pred = model_state.alphabet.decode(trace.tokens)
            correct += pred.casefold() == datagen.evaluation_label(sample).casefold()
    return correct / len(dataset)


# ---------------------------------------------------------------------------
# metrics parsing and reporting
# ---------------------------------------------------------------------------

def read_metrics(path):
    """Parse a metrics CSV; returns (rows, errors) with malformed lines listed."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        return [], [(1, "missing or wrong header")]
    rows, errors = [], []
    n_cols = len(METRICS_HEADER.split(","))
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != n_cols:
            errors.append((lineno, f"expected {n_cols} fields, got {len(parts)}"))
            continue
        try:
            rows.append(MetricsRow(int(parts[0]), int(parts[1]), *[float(v) for v in parts[2:]]))
        except ValueError as e:
            errors.append((lineno, str(e)))
    return rows, errors


def report(run_paths, out_dir):
    """Loss/accuracy plots per run plus a text summary with an ablation grid."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = []
    summary = []
    for path in run_paths:
        path = Path(path)
        metrics = path / "metrics.csv" if path.is_dir() else path
        name = path.stem if path.is_file() else path.name
        rows, errors = read_metrics(metrics)
        for lineno, msg in errors:
            summary.append(f"WARNING {metrics}:{lineno}: {msg}")
        runs.append((name, rows))

        if rows:
            steps = [r.step for r in rows]
            fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
            for key in ("ce", "ccr", "wvcr", "scst", "total"):
                ax1.plot(steps, [getattr(r, key) for r in rows], label=key)
            ax1.set_xlabel("step")
            ax1.set_ylabel("loss")
            ax1.legend()
            for key in ("acc_clean", "acc_distorted", "acc_occluded"):
                ax2.plot(steps, [getattr(r, key) for r in rows], label=key)
            ax2.set_xlabel("step")
            ax2.set_ylabel("word accuracy")
            ax2.legend()
            fig.suptitle(name)
            fig.tight_layout()
            fig.savefig(out_dir / f"{name}_curves.png", dpi=110)
            plt.close(fig)

    summary.append(f"{'run':24s} {'acc_clean':>10s} {'acc_distorted':>14s} {'acc_occluded':>13s}")
    finals = {}
    for name, rows in runs:
        if not rows:
            summary.append(f"{name:24s} {'-':>10s} {'-':>14s} {'-':>13s}")
            continue
        last = rows[-1]
        finals[name] = (last.acc_clean, last.acc_distorted, last.acc_occluded)
        summary.append(f"{name:24s} {last.acc_clean:10.4f} {last.acc_distorted:14.4f} {last.acc_occluded:13.4f}")
    if len(finals) > 1:
        base_name = next(iter(finals))
        base = finals[base_name]
        summary.append("")
        summary.append(f"deltas vs {base_name}:")
        for name, vals in finals.items():
            if name == base_name:
                continue
            deltas = " ".join(f"{v - b:+.4f}" for v, b in zip(vals, base))
            summary.append(f"  {name:22s} {deltas}")
    text = "\n".join(summary) + "\n"
    (out_dir / "summary.txt").write_text(text)
    return out_dir / "summary.txt"
