"""Command-line entry points.

Subcommands: train, score, score-unseen, simulate, verify, eval. Exit codes:
0 success, 1 runtime or verification failure, 2 I/O or data error, 64 usage
error.
"""

import argparse
import sys

import numpy as np

from . import fileio
from .em import TrainConfig, train
from .exceptions import CapacityError, DataFormatError, NumericalError
from .model import HypothesisPriors
from .posterior import DENSE_SOLVE_LIMIT
from .scoring import compute_eer, score_trial_list, score_unseen_channel
from .simulate import CHANNEL_POLICIES, simulate_dataset
from .verify import SUITES, run_suites

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_IO = 2
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    """Argument parser that exits with the documented usage code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {value}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def _priors(text):
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(
            "priors must be four comma-separated values pss,pds,psd,pdd")
    try:
        values = [float(p) for p in parts]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"malformed priors: {exc}") from exc
    try:
        return HypothesisPriors(*values)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser():
    parser = _Parser(prog="jplda",
                     description="Tied-channel PLDA training, scoring and "
                                 "self-verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", parents=[], help="train a model with EM")
    p_train.add_argument("--data", required=True, help="embedding file")
    p_train.add_argument("--ry", required=True, type=_positive_int,
                         help="speaker subspace rank")
    p_train.add_argument("--rx", required=True, type=_positive_int,
                         help="channel subspace rank")
    p_train.add_argument("--out", required=True, help="output model file")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--max-iters", type=_positive_int, default=200)
    p_train.add_argument("--rel-tol", type=_positive_float, default=1e-6)
    p_train.add_argument("--log", default=None,
                         help="training log path (default: <out>.log)")
    p_train.add_argument("--dense-limit", type=_positive_int,
                         default=DENSE_SOLVE_LIMIT)
    p_train.set_defaults(func=_cmd_train)

    p_score = sub.add_parser("score", help="score enroll/test trials")
    p_score.add_argument("--model", required=True)
    p_score.add_argument("--enroll", required=True, help="enrollment embeddings")
    p_score.add_argument("--test", required=True, help="test embeddings")
    p_score.add_argument("--trials", required=True, help="trial list")
    p_score.add_argument("--out", required=True, help="output score file")
    p_score.add_argument("--priors", type=_priors,
                         default=HypothesisPriors.uniform(),
                         help="channel-tie priors pss,pds,psd,pdd "
                              "(default 0.5,0.5,0.5,0.5)")
    p_score.set_defaults(func=_cmd_score)

    p_unseen = sub.add_parser("score-unseen",
                              help="score speaker enrollment sets against "
                                   "tests with a new channel")
    p_unseen.add_argument("--model", required=True)
    p_unseen.add_argument("--enroll", required=True,
                          help="enrollment embeddings with channel labels")
    p_unseen.add_argument("--test", required=True, help="test embeddings")
    p_unseen.add_argument("--trials", required=True,
                          help="trial list of speaker<TAB>test_id")
    p_unseen.add_argument("--out", required=True)
    p_unseen.set_defaults(func=_cmd_score_unseen)

    p_sim = sub.add_parser("simulate", help="generate synthetic embeddings")
    p_sim.add_argument("--out", required=True, help="output embedding file")
    p_sim.add_argument("--model-out", default=None,
                       help="true model output (default: <out>.model)")
    p_sim.add_argument("--dim", required=True, type=_positive_int)
    p_sim.add_argument("--speakers", required=True, type=_positive_int)
    p_sim.add_argument("--channels", required=True, type=_positive_int)
    p_sim.add_argument("--per-speaker", required=True, type=_positive_int)
    p_sim.add_argument("--policy", choices=CHANNEL_POLICIES,
                       default="round-robin")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--ry", type=_positive_int, default=None)
    p_sim.add_argument("--rx", type=_positive_int, default=None)
    p_sim.add_argument("--speaker-scale", type=float, default=1.0)
    p_sim.add_argument("--channel-scale", type=float, default=1.0)
    p_sim.add_argument("--noise-var", type=_positive_float, default=1.0)
    p_sim.add_argument("--mean-scale", type=float, default=0.0)
    p_sim.add_argument("--binary", action="store_true",
                       help="write the binary embedding form")
    p_sim.set_defaults(func=_cmd_simulate)

    p_verify = sub.add_parser("verify", help="run the self-verification suites")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--suite", action="append", choices=sorted(SUITES),
                          default=None, help="run only the named suite "
                          "(repeatable; default: all)")
    p_verify.set_defaults(func=_cmd_verify)

    p_eval = sub.add_parser("eval", help="equal error rate from keyed scores")
    p_eval.add_argument("--scores", required=True)
    p_eval.add_argument("--key", default=None,
                        help="keyed trial list; optional when the score file "
                             "carries a key column")
    p_eval.set_defaults(func=_cmd_eval)

    return parser


def _cmd_train(args):
    table = fileio.read_embeddings(args.data)
    config = TrainConfig(r_y=args.ry, r_x=args.rx, max_iters=args.max_iters,
                         rel_tol=args.rel_tol, seed=args.seed)
    trace = train(table, config, dense_limit=args.dense_limit)
    fileio.write_model(args.out, trace.params)
    log_path = args.log if args.log is not None else args.out + ".log"
    fileio.write_train_log(log_path, trace.log_likelihoods)
    print(f"trained {trace.iterations} iterations ({trace.stop_reason}), "
          f"final loglik {trace.log_likelihoods[-1]:.17g}")
    return EXIT_OK


def _cmd_score(args):
    params = fileio.read_model(args.model)
    table_enroll = fileio.read_embeddings(args.enroll)
    table_test = fileio.read_embeddings(args.test)
    trials = fileio.read_trials(args.trials)
    scores = score_trial_list(params, args.priors, table_enroll, table_test,
                              [(e, t) for e, t, _ in trials])
    fileio.write_scores(args.out, trials, scores, priors=args.priors,
                        header_extra=(f"model {args.model}",))
    print(f"scored {len(scores)} trials")
    return EXIT_OK


def _cmd_score_unseen(args):
    params = fileio.read_model(args.model)
    table_enroll = fileio.read_embeddings(args.enroll)
    table_test = fileio.read_embeddings(args.test)
    trials = fileio.read_trials(args.trials)

    speaker_rows = {name: np.flatnonzero(table_enroll.speaker_labels == s)
                    for s, name in enumerate(table_enroll.speaker_names)}
    test_rows = {}
    for row, sid in enumerate(table_test.sample_ids):
        test_rows.setdefault(sid, []).append(row)

    scores = []
    for line_no, (speaker, test_id, _key) in enumerate(trials, start=1):
        rows = speaker_rows.get(speaker)
        if rows is None or rows.size == 0:
            raise DataFormatError(
                f"trial line {line_no}: unknown enrollment speaker '{speaker}'")
        candidates = test_rows.get(test_id)
        if candidates is None:
            raise DataFormatError(
                f"trial line {line_no}: unknown test id '{test_id}'")
        if len(candidates) != 1:
            raise DataFormatError(
                f"trial line {line_no}: test id '{test_id}' matches "
                f"{len(candidates)} samples")
        enrollment = [(table_enroll.samples[r],
                       int(table_enroll.channel_labels[r])) for r in rows]
        scores.append(score_unseen_channel(params, enrollment,
                                           table_test.samples[candidates[0]]))
    fileio.write_scores(args.out, trials, scores,
                        header_extra=(f"model {args.model}",
                                      "scorer unseen-channel"))
    print(f"scored {len(scores)} trials")
    return EXIT_OK


def _cmd_simulate(args):
    table, params = simulate_dataset(
        args.dim, args.speakers, args.channels, args.per_speaker, args.policy,
        args.seed, r_y=args.ry, r_x=args.rx, speaker_scale=args.speaker_scale,
        channel_scale=args.channel_scale, noise_var=args.noise_var,
        mean_scale=args.mean_scale)
    if args.binary:
        fileio.write_embeddings_binary(args.out, table)
    else:
        fileio.write_embeddings_text(args.out, table)
    model_out = args.model_out if args.model_out is not None else args.out + ".model"
    fileio.write_model(model_out, params)
    print(f"wrote {table.n_samples} samples ({table.n_speakers} speakers, "
          f"{table.n_channels} channels) to {args.out}")
    return EXIT_OK


def _cmd_verify(args):
    results = run_suites(args.suite, seed=args.seed)
    failed = False
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        failed = failed or not result.passed
        print(f"{status} {result.name} - {result.detail}")
    return EXIT_FAILURE if failed else EXIT_OK


def _cmd_eval(args):
    rows = fileio.read_scores(args.scores)
    if args.key is not None:
        keyed = {(e, t): key for e, t, key in fileio.read_trials(args.key)}
        missing = [pair for pair in ((r[0], r[1]) for r in rows)
                   if keyed.get(pair) is None]
        if missing:
            raise DataFormatError(
                f"no key for trial {missing[0][0]}/{missing[0][1]} "
                f"in '{args.key}'")
        labeled = [(keyed[(e, t)], llr) for e, t, llr, _o, _i, _k in rows]
    else:
        if any(r[5] is None for r in rows):
            raise DataFormatError(
                "score file carries no key column; pass --key with a keyed "
                "trial list")
        labeled = [(r[5], r[2]) for r in rows]
    targets = [llr for key, llr in labeled if key == "target"]
    nontargets = [llr for key, llr in labeled if key == "nontarget"]
    if not targets or not nontargets:
        raise DataFormatError(
            "need at least one target and one nontarget trial to compute EER")
    eer = compute_eer(targets, nontargets)
    print(f"eer {eer:.17g}")
    print(f"targets {len(targets)}")
    print(f"nontargets {len(nontargets)}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
