"""Command-line entry point.

Subcommands: gen-corpus, gen-trials, train, evaluate, probe, selfcheck.
Exit codes: 0 success, 1 usage or config error, 2 runtime failure,
3 selfcheck failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

RUN_DIR_ENV = "DUOTASK_RUN_DIR"


def build_parser():
    parser = argparse.ArgumentParser(prog="duotask",
                                     description="multi-task speech + speaker recognition")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="synthesize a jointly labeled tone corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--speakers", type=int, default=20)
    g.add_argument("--utts-per-speaker", type=int, default=20)
    g.add_argument("--sessions-per-speaker", type=int, default=2)
    g.add_argument("--letters", default="abcdefghijk")
    g.add_argument("--min-duration", type=float, default=3.0)
    g.add_argument("--max-duration", type=float, default=6.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dev-speakers", type=int, default=0,
                   help="hold out whole speakers into dev.csv")
    g.add_argument("--val-per-speaker", type=int, default=0,
                   help="hold out recordings per train speaker into val.csv")

    t = sub.add_parser("gen-trials", help="build a verification trial list")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--positives", type=int, required=True)
    t.add_argument("--negatives", type=int, required=True)
    t.add_argument("--seed", type=int, default=0)

    tr = sub.add_parser("train", help="run the training protocol")
    tr.add_argument("--config", help="JSON config file")
    tr.add_argument("--set", dest="overrides", action="append", default=[],
                    metavar="SECTION.KEY=VALUE")
    tr.add_argument("--train-manifest", required=True)
    tr.add_argument("--val-manifest", required=True)
    tr.add_argument("--trials", help="validation trial list (dev split)")
    tr.add_argument("--trial-manifest", help="manifest covering the trial utterances")
    tr.add_argument("--vocab", help="vocab.json; defaults to the train manifest directory")
    tr.add_argument("--run-dir", default=None)

    e = sub.add_parser("evaluate", help="WER plus EER under audio conditions")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--trials", required=True)
    e.add_argument("--conditions", default="full,first_2s")
    e.add_argument("--out", required=True)

    p = sub.add_parser("probe", help="per-layer mean-pooling EER probe")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--condition", default="full")

    sub.add_parser("selfcheck", help="run the built-in correctness oracles")
    return parser


def _default_run_dir(args_run_dir):
    if args_run_dir is not None:
        return args_run_dir
    base = os.environ.get(RUN_DIR_ENV, "runs")
    return os.path.join(base, "run")


def cmd_gen_corpus(args):
    from .corpus import CorpusConfig, generate_corpus, split_manifest
    from .seeds import derive_rng

    cfg = CorpusConfig(
        n_speakers=args.speakers, utts_per_speaker=args.utts_per_speaker,
        sessions_per_speaker=args.sessions_per_speaker, letters=args.letters,
        duration_range=(args.min_duration, args.max_duration), seed=args.seed,
    )
    manifest = generate_corpus(cfg, args.out)
    print(f"wrote {len(manifest)} utterances under {args.out}")
    if args.dev_speakers or args.val_per_speaker:
        rng = derive_rng(args.seed, "split")
        train, val, dev = split_manifest(manifest, args.dev_speakers,
                                         args.val_per_speaker, rng)
        for name, part in (("train", train), ("val", val), ("dev", dev)):
            path = os.path.join(args.out, f"{name}.csv")
            part.save(path)
            print(f"  {name}.csv: {len(part)} utterances")
    return 0


def cmd_gen_trials(args):
    from .corpus import CorpusManifest, generate_trials, save_trials, validate_trials
    from .seeds import derive_rng

    manifest = CorpusManifest.load(args.manifest)
    trials = generate_trials(manifest, args.positives, args.negatives,
                             derive_rng(args.seed, "trials"))
    problems = validate_trials(trials, manifest)
    if problems:
        raise RuntimeError(f"generated trials failed validation: {problems[:3]}")
    save_trials(trials, args.out)
    print(f"wrote {len(trials)} trials to {args.out}")
    return 0


def cmd_train(args):
    from .config import load_config
    from .corpus import CorpusManifest, load_trials
    from .corpus.synth import load_vocab
    from .trainer import Trainer

    cfg = load_config(args.config, args.overrides)
    train_man = CorpusManifest.load(args.train_manifest)
    val_man = CorpusManifest.load(args.val_manifest)
    vocab_dir = args.vocab or os.path.dirname(os.path.abspath(args.train_manifest))
    vocab = load_vocab(vocab_dir if os.path.isdir(vocab_dir) else os.path.dirname(vocab_dir))
    trials = load_trials(args.trials) if args.trials else None
    trial_man = CorpusManifest.load(args.trial_manifest) if args.trial_manifest else None

    run_dir = _default_run_dir(args.run_dir)
    trainer = Trainer(cfg, vocab, train_man, val_man, trials, trial_man, run_dir=run_dir)
    report = trainer.run()
    with open(os.path.join(run_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    print(json.dumps(report, indent=2))
    return 0


def cmd_evaluate(args):
    from . import evaluation
    from .checkpoint import model_from_checkpoint
    from .corpus import CorpusManifest, load_trials
    from .seeds import derive_rng

    model, run_cfg, vocab = model_from_checkpoint(args.checkpoint)
    manifest = CorpusManifest.load(args.manifest)
    trials = load_trials(args.trials)
    conditions = [c for c in args.conditions.split(",") if c]
    report, scored = evaluation.evaluate(
        model, manifest, trials, conditions, vocab,
        checkpoint_path=args.checkpoint,
        crop_rng=derive_rng(run_cfg.trainer.seed, "eval-crop"))
    evaluation.write_evaluation(report, scored, trials, args.out)
    print(json.dumps(report, indent=2))
    return 0


def cmd_probe(args):
    from . import evaluation
    from .checkpoint import model_from_checkpoint
    from .corpus import CorpusManifest, load_trials
    from .seeds import derive_rng

    model, run_cfg, vocab = model_from_checkpoint(args.checkpoint)
    manifest = CorpusManifest.load(args.manifest)
    trials = load_trials(args.trials)
    rng = derive_rng(run_cfg.trainer.seed, "eval-crop")
    report = evaluation.layer_probe(model, manifest, trials, condition=args.condition, rng=rng)
    evaluation.write_probe_csv(report, args.out)
    meta = {"trials": args.trials, "checkpoint": args.checkpoint,
            "condition": report.condition, "n_trials": report.n_trials}
    with open(args.out + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    for layer, value in report.rows:
        print(f"layer {layer}: eer {value:.4f}")
    return 0


def cmd_selfcheck(_args):
    from . import tensor as T
    from .losses import ctc_loss
    from .evaluation import ScoredTrial, eer
    from .oracles import ctc_loss_enumeration, eer_sweep_oracle

    rng = np.random.default_rng(20240101)
    failures = 0

    def report(name, ok, detail):
        nonlocal failures
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        failures += 0 if ok else 1

    # finite differences over a composite of every core op family
    x = T.parameter(rng.normal(size=(3, 4)))
    w = T.parameter(rng.normal(size=(4, 5)))
    g = T.parameter(np.ones(5))
    b = T.parameter(np.zeros(5))
    cw = T.parameter(rng.normal(size=(2, 1, 3)) * 0.5)

    def f():
        h = T.layer_norm(T.gelu(T.matmul(x, w)), g, b)
        h = T.log_softmax(h, axis=-1)
        c = T.conv1d(T.reshape(h, (3, 1, 5)), cw, stride=2, padding=1)
        return T.tsum(T.tanh(c) * 0.3) + T.tmean(T.l2_normalize(x) ** 2.0)

    err = T.finite_diff_check(f, [x, w, g, b, cw])
    report("finite-difference oracle", err < 1e-6, f"max rel err {err:.2e}")

    # CTC vs exhaustive path enumeration
    worst = 0.0
    for _ in range(40):
        T_len = int(rng.integers(2, 7))
        V = int(rng.integers(2, 5))
        y = list(rng.integers(1, V, size=rng.integers(1, 4)))
        from .losses import ctc_required_frames
        if ctc_required_frames(y) > T_len:
            continue
        logits = rng.normal(size=(T_len, V))
        lp = logits - np.log(np.exp(logits).sum(-1, keepdims=True))
        mine = ctc_loss(T.Tensor(lp), [T_len], [y]).item()
        ref = ctc_loss_enumeration(lp, y)
        worst = max(worst, abs(mine - ref))
    report("CTC enumeration oracle", worst < 1e-9, f"max abs err {worst:.2e}")

    # EER vs naive sweep
    worst = 0.0
    for _ in range(40):
        n = int(rng.integers(4, 200))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = rng.normal(size=n)
        mine = eer([ScoredTrial(int(l), float(s)) for l, s in zip(labels, scores)])
        ref = eer_sweep_oracle(labels, scores)
        worst = max(worst, abs(mine - ref))
    report("EER sweep oracle", worst < 1e-12, f"max abs err {worst:.2e}")

    return 0 if failures == 0 else 3


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0

    handlers = {
        "gen-corpus": cmd_gen_corpus,
        "gen-trials": cmd_gen_trials,
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "probe": cmd_probe,
        "selfcheck": cmd_selfcheck,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, KeyError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
