"""Command-line surface: data generation, training, evaluation, reporting,
and the verification subcommands (gradient checks and alignment/SCST oracles).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

ABLATIONS = {
    "sup": (False, False, False),
    "ccr": (True, False, False),
    "+wvcr": (True, True, False),
    "+wscr": (True, True, True),
    "full": (True, True, True),
}


def _load_config(path):
    from .trainer import TrainConfig

    return TrainConfig.load(path) if path else TrainConfig()


def cmd_generate_data(args):
    from . import datagen

    config = _load_config(args.config)
    datasets = datagen.make_datasets(config.data_config())
    out = Path(args.out)
    datagen.save_all(datasets, out)
    for split, fname in datagen.SPLIT_FILES.items():
        print(f"wrote {out / fname} ({len(datasets[split])} samples)")
    return 0


def cmd_train(args):
    import dataclasses

    from . import datagen, trainer

    config = _load_config(args.config)
    if args.ablation:
        use_ccr, use_wvcr, use_wscr = ABLATIONS[args.ablation]
        config = dataclasses.replace(config, use_ccr=use_ccr, use_wvcr=use_wvcr, use_wscr=use_wscr)
    datasets = datagen.load_all(Path(args.data))
    result = trainer.train(config, datasets, Path(args.out))
    last = result.rows[-1] if result.rows else None
    print(f"wrote {result.metrics_path}")
    print(f"wrote {result.checkpoint_path}")
    if last:
        print(f"final accuracy: clean={last.acc_clean:.4f} distorted={last.acc_distorted:.4f} "
              f"occluded={last.acc_occluded:.4f}")
    return 0


def cmd_eval(args):
    from . import datagen, recognizer, trainer

    digest, arrays = recognizer.load_checkpoint(args.checkpoint)
    state = recognizer.state_from_arrays(arrays, args.model)
    dataset = datagen.load_dataset(Path(args.data) / datagen.SPLIT_FILES[args.split],
                                   sealed=args.split == "unlabeled_train")
    acc = trainer.evaluate(state, dataset)
    print(f"{args.split}: word accuracy {acc:.4f} ({len(dataset)} samples, checkpoint digest {digest})")
    return 0


def cmd_report(args):
    from .trainer import report

    summary = report([Path(p) for p in args.runs], Path(args.out))
    print(summary.read_text())
    print(f"wrote {summary}")
    return 0


def cmd_gradcheck(args):
    from . import autodiff as ad
    from . import objective, recognizer

    rng = np.random.default_rng(args.seed)
    failures = 0

    def run(name, f, params):
        nonlocal failures
        err = ad.grad_check(f, params)
        status = "ok" if err < 1e-4 else "FAIL"
        failures += status == "FAIL"
        print(f"{name:28s} rel error {err:.3e}  {status}")

    # catalog ops at random small shapes
    v = ad.parameter(rng.normal(size=5))
    w = ad.parameter(rng.normal(size=5))
    m = ad.parameter(rng.normal(size=(3, 4)))
    n = ad.parameter(rng.normal(size=(4, 2)))
    pos = ad.parameter(rng.uniform(0.5, 2.0, size=5))
    cases = {
        "add": (lambda ps: ad.add(ps[0], ps[1]).sum(), [v, w]),
        "sub": (lambda ps: (ad.sub(ps[0], ps[1]) * ad.sub(ps[0], ps[1])).sum(), [v, w]),
        "elementwise-mul": (lambda ps: ad.mul(ps[0], ps[1]).sum(), [v, w]),
        "scalar-mul": (lambda ps: ad.mul(ps[0], 1.7).sum(), [v]),
        "matmul": (lambda ps: ad.matmul(ps[0], ps[1]).sum(), [m, n]),
        "exp": (lambda ps: ad.exp(ps[0]).sum(), [v]),
        "log": (lambda ps: ad.log(ps[0]).sum(), [pos]),
        "tanh": (lambda ps: ad.tanh(ps[0]).sum(), [v]),
        "relu": (lambda ps: (ad.relu(ps[0]) * ps[1]).sum(), [v, w]),
        "softmax": (lambda ps: (ad.softmax(ps[0]) * ps[1]).sum(), [v, w]),
        "log-softmax": (lambda ps: (ad.log_softmax(ps[0]) * ps[1]).sum(), [v, w]),
        "sum": (lambda ps: ps[0].sum(), [m]),
        "mean": (lambda ps: ps[0].mean(), [m]),
        "concat": (lambda ps: (ad.concat([ps[0], ps[1]]) * ad.concat([ps[1], ps[0]])).sum(), [v, w]),
        "take": (lambda ps: (ad.take(ps[0], 1) * ad.take(ps[0], 2)).sum(), [m]),
        "max": (lambda ps: ad.amax(ps[0]) * ad.amax(ps[0]), [v]),
        "l2-norm": (lambda ps: ad.l2_norm(ps[0]) * 2.0, [v]),
        "cosine-similarity": (lambda ps: ad.cosine_similarity(ps[0], ps[1]) * 1.0, [v, w]),
    }
    for name, (f, params) in cases.items():
        run(name, f, params)

    # full pipeline losses on a reduced model
    cfg = recognizer.RecognizerConfig(image_height=4, image_width=8, column_stride=2,
                                      feature_dim=6, hidden_dim=5, embed_dim=4,
                                      attention_dim=5, max_len=4)
    alpha = recognizer.Alphabet("abc")
    state = recognizer.ModelState(cfg, alpha, rng=np.random.default_rng(103))
    img_rng = np.random.default_rng(203)
    images = [img_rng.uniform(size=(4, 8)) for _ in range(2)]
    seqs = [alpha.targets("ab"), alpha.targets("cba")]
    params = list(state.params.values())

    def ce_f(_):
        total = None
        for img, seq in zip(images, seqs):
            feats = recognizer.encode(state, img)
            loss = objective.ce_loss(recognizer.decode_teacher_forcing(state, feats, seq), seq)
            total = loss if total is None else ad.add(total, loss)
        return total

    run("recognizer-ce", ce_f, params)
    print("all checks passed" if failures == 0 else f"{failures} checks FAILED")
    return 1 if failures else 0


def cmd_oracle(args):
    from functools import partial as _partial

    from . import alignment, semantics

    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.matrices):
        shape = rng.integers(1, 7, size=2)
        d = rng.uniform(0.0, 2.0, size=shape)
        worst = max(worst, abs(alignment.shortest_path(d).total - alignment.brute_force_shortest_path(d)))
    print(f"alignment: {args.matrices} random matrices, worst |dp - brute force| = {worst:.3e}")

    embedder = semantics.NGramEmbedder()
    reward_fn = _partial(semantics.reward, embedder)
    model = semantics.TinyRecurrentSampler(rng=np.random.default_rng(10))
    names = list(model.params)
    oracle = semantics.flatten_gradients(
        semantics.exact_expected_scst_gradient(model, "ab", reward_fn, max_len=2), names)
    from . import autodiff as ad

    cache = {}
    acc = np.zeros_like(oracle)
    draw_rng = np.random.default_rng(11)
    for _ in range(args.draws):
        with ad.no_grad():
            tokens = tuple(model.sample(draw_rng, max_len=2).tokens)
        g = cache.get(tokens)
        if g is None:
            trace = _force_tiny(model, tokens)
            loss, _ = semantics.scst_loss(trace, model.greedy(2), "ab", reward_fn, model.alphabet)
            ad.zero_grads(model.params.values())
            if loss.requires_grad:
                ad.backward(loss)
            g = semantics.flatten_gradients(
                {k: (np.zeros_like(model.params[k].data) if model.params[k].grad is None
                     else model.params[k].grad) for k in names}, names)
            ad.zero_grads(model.params.values())
            cache[tokens] = g
        acc += g
    mc = acc / args.draws
    cos = float(mc @ oracle / (np.linalg.norm(mc) * np.linalg.norm(oracle)))
    print(f"scst: {args.draws} Monte-Carlo draws vs enumeration, gradient cosine = {cos:.5f}")
    ok = worst < 1e-9 and cos > 0.99
    print("oracles agree" if ok else "ORACLE MISMATCH")
    return 0 if ok else 1


def _force_tiny(model, tokens):
    from . import autodiff as ad
    from .recognizer import DecodeTrace

    h = ad.constant(np.zeros(model.hidden_dim))
    prev = None
    trace = DecodeTrace([], [], [], [], [], 1.0)
    for tok in tokens:
        h, probs, log_probs = model.step(prev, h)
        trace.tokens.append(tok)
        trace.probs.append(probs)
        trace.log_probs.append(log_probs)
        trace.glimpses.append(ad.constant(np.zeros(1)))
        trace.chosen_log_probs.append(ad.take(log_probs, tok))
        prev = tok
    return trace


def main(argv=None):
    logging.basicConfig(level=os.environ.get("TEXTSSL_LOG_LEVEL", "INFO"),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(prog="textssl",
                                     description="semi-supervised glyph-word recognition")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="render all dataset splits to a directory")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate_data)

    p = sub.add_parser("train", help="train on generated datasets")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ablation", choices=sorted(ABLATIONS), default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test_clean", choices=sorted(
        ("labeled_train", "unlabeled_train", "test_clean", "test_distorted", "test_occluded")))
    p.add_argument("--model", default="student", choices=("student", "teacher"))
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="plots and summary table for one or more runs")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", default="report")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference verification of ops and losses")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("oracle", help="alignment brute-force and SCST enumeration oracles")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--matrices", type=int, default=1000)
    p.add_argument("--draws", type=int, default=5000)
    p.set_defaults(fn=cmd_oracle)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
