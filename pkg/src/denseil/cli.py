"""Command-line entry point.

Exit codes: 0 success, 1 usage or bad-value error, 2 numeric failure,
3 I/O error.
"""

import argparse
import os
import sys

# Pin BLAS to one thread before numpy ever loads: reduction order inside a
# threaded GEMM is not fixed, and the run artifacts promise bit-identical
# repeats. Explicit user overrides win.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="denseil",
                     description="Video identity retrieval at desk scale.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen-data", help="render the synthetic corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score a checkpoint on the eval split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--allow-self-match", action="store_true",
                   help="sanity mode: gallery = query set, no camera filter")

    p = sub.add_parser("ablate", help="sweep one axis, same seed and corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("dump-attn",
                       help="write interaction attention weights as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tracklet", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("flops", help="analytic decoder cost for a config")
    p.add_argument("--config", required=True)
    return parser


def _sibling_config(checkpoint_path):
    from .config import ConfigError, load_run_config
    path = os.path.join(os.path.dirname(os.path.abspath(checkpoint_path)),
                        "config.json")
    if not os.path.exists(path):
        raise ConfigError(
            "no config.json next to %s; checkpoints are read with the run "
            "config that produced them" % checkpoint_path)
    return load_run_config(path)


def cmd_gen_data(args):
    from .config import load_run_config
    from .data import generate_dataset, write_corpus
    cfg = load_run_config(args.config)
    corpus = generate_dataset(cfg.data)
    write_corpus(corpus, args.out)
    for split, tracklets in corpus.splits():
        print("%s: %d tracklets" % (split, len(tracklets)))
    print("wrote %s" % os.path.join(args.out, "manifest.csv"))
    return 0


def cmd_train(args):
    from .config import load_run_config
    from .data import load_corpus
    from .harness import train_run
    cfg = load_run_config(args.config)
    corpus = load_corpus(args.data)
    _, report = train_run(cfg, corpus, outdir=args.out, log=print)
    for name, value in report.metric_rows:
        print("%s,%s" % (name, value))
    print("artifacts in %s" % args.out)
    return 0


def cmd_eval(args):
    from .data import load_corpus
    from .harness import evaluate_model
    from .model import load_model
    cfg = _sibling_config(args.checkpoint)
    model = load_model(args.checkpoint, cfg)
    corpus = load_corpus(args.data)
    rows = evaluate_model(model, cfg, corpus,
                          self_match=args.allow_self_match)
    print("metric,value")
    for name, value in rows:
        print("%s,%s" % (name, value))
    return 0


def cmd_ablate(args):
    from .config import load_run_config
    from .data import load_corpus
    from .harness import ablate
    cfg = load_run_config(args.config)
    corpus = load_corpus(args.data)
    ablate(cfg, args.axis, corpus, outdir=args.out, log=print)
    print("wrote %s" % os.path.join(args.out,
                                    "ablation_%s.csv" % args.axis))
    return 0


def cmd_dump_attn(args):
    from .data import read_tracklet, restricted_sample
    from .decoder import dump_attention
    from .harness import TRACKLET_STRIDE
    from .model import forward_batch, load_model
    from .rng import EVAL_STREAM, stream
    cfg = _sibling_config(args.checkpoint)
    model = load_model(args.checkpoint, cfg)
    tracklet = read_tracklet(args.tracklet)
    rng = stream(cfg.seed, EVAL_STREAM
                 + tracklet.identity * TRACKLET_STRIDE + tracklet.tracklet_id)
    clip = restricted_sample(tracklet, cfg.sampling.chunks, rng)
    clip = clip[None].astype(cfg.np_dtype())
    _, _, state = forward_batch(model, clip, training=False)
    source_ids = cfg.decoder.sources_for(cfg.encoder.num_blocks)
    rows = dump_attention(state, cfg.decoder, cfg.sampling.chunks,
                          cfg.partitions, source_ids, args.out)
    print("wrote %d weights to %s" % (rows, args.out))
    return 0


def cmd_flops(args):
    from .config import load_run_config
    from .harness import decoder_flops
    cfg = load_run_config(args.config)
    est = decoder_flops(cfg)
    print("component,multiply_adds")
    for key in ("total", "per_block", "self_attention", "dense", "ffn",
                "adapters"):
        print("%s,%d" % (key, est[key]))
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "dump-attn": cmd_dump_attn,
    "flops": cmd_flops,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
    except UsageError as err:
        print("denseil: error: %s" % err, file=sys.stderr)
        return 1

    from .config import ConfigError
    from .data import CorpusError
    from .harness import TrainingDiverged
    from .imageops import RunningStatsError
    from .tensor import NumericError, ShapeError

    try:
        return _COMMANDS[args.command](args)
    except (TrainingDiverged, NumericError) as err:
        print("denseil: numeric failure: %s" % err, file=sys.stderr)
        return 2
    except (ConfigError, CorpusError, ShapeError, RunningStatsError,
            ValueError) as err:
        print("denseil: error: %s" % err, file=sys.stderr)
        return 1
    except OSError as err:
        print("denseil: i/o error: %s" % err, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
