"""Command-line entry point: ``hybridasr [global flags] <command> ...``.

Exit codes: 0 success, 1 validation error, 2 missing artifact, 3 internal error.
"""
import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from .config import dump_config, load_config
from .errors import MissingArtifact, ValidationError
from .pipeline import STAGES, Workspace, run_pipeline, score_files
from .synth import generate_corpus

EXIT_OK, EXIT_VALIDATION, EXIT_MISSING, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("hybridasr")


def _name(arg):
    return Path(arg).name


def cmd_synth(args, cfg, ws):
    kw = {}
    if args.vocab is not None:
        kw["vocab_size"] = args.vocab
    if args.utterances is not None:
        kw["num_train"] = args.utterances
    if args.test_utterances is not None:
        kw["num_test"] = args.test_utterances
    if args.snr is not None:
        kw["noise_snr_db"] = args.snr
    scfg = dataclasses.replace(cfg.synth, **kw)
    generate_corpus(args.out, scfg)
    print(f"wrote {args.out}/train, {args.out}/test and {args.out}/lexicon.txt")


def cmd_prep(args, cfg, ws):
    d = ws.prep(args.data, args.lexicon, args.name)
    print(f"{args.name or _name(args.data)}: {len(d.utts)} utterances, {len(d.spk2utt)} speakers")


def cmd_feats(args, cfg, ws):
    ws.feats(_name(args.data))


def cmd_lm(args, cfg, ws):
    if args.order is not None or args.smoothing is not None:
        lm = dataclasses.replace(cfg.lm, **{k: v for k, v in (("order", args.order), ("smoothing", args.smoothing)) if v is not None})
        ws.cfg = dataclasses.replace(cfg, lm=lm)
    ws.lm(_name(args.train))


def cmd_train_gmm(args, cfg, ws):
    ws.train_gmm(_name(args.train))


def cmd_train_chain(args, cfg, ws):
    ws.train_chain(_name(args.train))


def cmd_mkgraph(args, cfg, ws):
    ws.mkgraph(args.stage)


def cmd_decode(args, cfg, ws):
    print(ws.decode(args.stage, _name(args.data)))


def cmd_score(args, cfg, ws):
    if args.hyp or args.ref:
        if not (args.hyp and args.ref):
            raise ValidationError("--hyp and --ref go together")
        out = Path(args.out or ".")
        score_files(args.hyp, args.ref, out)
        print((out / "report.txt").read_text().splitlines()[-1])
        return
    if not args.stage:
        raise ValidationError("give a stage or --hyp/--ref")
    ws.score(args.stage, _name(args.data))
    print((ws.score_dir(args.stage, _name(args.data)) / "report.txt").read_text().splitlines()[-1])


def cmd_run(args, cfg, ws):
    reports = run_pipeline(ws.root, cfg, args.corpus, ws.jobs, tuple(args.stages))
    for stage, rep in reports.items():
        print(f"{stage:6s} WER {rep['wer'] * 100:6.2f}  SER {rep['ser'] * 100:6.2f}")


def cmd_config(args, cfg, ws):
    sys.stdout.write(dump_config(cfg))


def build_parser():
    p = argparse.ArgumentParser(prog="hybridasr", description="Desk-scale hybrid HMM/DNN speech recognition.")
    p.add_argument("--work-dir", default="exp", help="artifact directory (default: exp)")
    p.add_argument("--seed", type=int, default=None, help="single seed for every random choice")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="utterance-parallel workers")
    p.add_argument("--config", default=None, help="key = value configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate the synthetic corpus")
    s.add_argument("out")
    s.add_argument("--vocab", type=int)
    s.add_argument("--utterances", type=int, help="training utterances")
    s.add_argument("--test-utterances", type=int)
    s.add_argument("--snr", type=float, help="noise level of the noisy copies in dB")
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("prep", help="validate and register a data directory")
    s.add_argument("data")
    s.add_argument("--lexicon")
    s.add_argument("--name")
    s.set_defaults(fn=cmd_prep)

    s = sub.add_parser("feats", help="MFCC and filterbank features plus CMVN stats")
    s.add_argument("data")
    s.set_defaults(fn=cmd_feats)

    s = sub.add_parser("lm", help="word n-gram LM in ARPA format")
    s.add_argument("--train", default="train")
    s.add_argument("--order", type=int)
    s.add_argument("--smoothing", choices=("witten_bell", "none"))
    s.set_defaults(fn=cmd_lm)

    s = sub.add_parser("train-gmm", help="monophone then triphone GMM-HMM training")
    s.add_argument("--train", default="train")
    s.set_defaults(fn=cmd_train_gmm)

    s = sub.add_parser("train-chain", help="chain (LF-MMI) network training")
    s.add_argument("--train", default="train")
    s.set_defaults(fn=cmd_train_chain)

    s = sub.add_parser("mkgraph", help="compile the HCLG decoding graph")
    s.add_argument("stage", choices=STAGES)
    s.set_defaults(fn=cmd_mkgraph)

    s = sub.add_parser("decode", help="decode a prepared data set")
    s.add_argument("stage", choices=STAGES)
    s.add_argument("--data", default="test")
    s.set_defaults(fn=cmd_decode)

    s = sub.add_parser("score", help="WER/SER/CER/MER/WIL/PER report")
    s.add_argument("stage", nargs="?", choices=STAGES)
    s.add_argument("--data", default="test")
    s.add_argument("--hyp")
    s.add_argument("--ref")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_score)

    s = sub.add_parser("run", help="the whole pipeline, synthesizing a corpus unless --corpus is given")
    s.add_argument("--corpus")
    s.add_argument("--stages", nargs="+", choices=STAGES, default=list(STAGES))
    s.set_defaults(fn=cmd_run)

    s = sub.add_parser("config", help="print the effective configuration")
    s.set_defaults(fn=cmd_config)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set, args.seed)
        standalone = args.command in ("synth", "config") or (args.command == "score" and (args.hyp or args.ref))
        ws = None if standalone else Workspace(args.work_dir, cfg, args.jobs)
        args.fn(args, cfg, ws)
    except MissingArtifact as e:
        print(f"error: missing artifact: {e}", file=sys.stderr)
        return EXIT_MISSING
    except ValidationError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"error: internal: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
