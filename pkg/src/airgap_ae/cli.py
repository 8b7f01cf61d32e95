"""Command line entry point: ``airgap-ae <subcommand> [flags]``.

Every subcommand writes CSV files into ``--out`` (a directory) and is a pure
function of the configuration and the seed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import analysis, baselines
from .channels import Channel
from .comm import CommSystem, bler_curve
from .config import ConfigError, load_config, parse_list, parse_transport
from .estimators import AlternatingAutoencoder, FeedbackLink
from .feedback import DIRECTIONS, evaluate_link_mse, evaluate_mse
from .io import emit_csv, load_model, save_model
from .nn import ConfigurationError, TrainingError

logger = logging.getLogger("airgap_ae")

SUBCOMMANDS = ("train-comm", "train-feedback", "eval-bler", "eval-mse", "variance-sweep",
               "bler-vs-mse", "full-pipeline")


class UsageError(Exception):
    pass


def build_parser():
    parser = argparse.ArgumentParser(prog="airgap-ae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--channel", choices=("awgn", "rbf"))
        p.add_argument("--seed", type=int)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--out", metavar="PATH")
        p.add_argument("--snr-db", type=float, help="training SNR for both the comm and feedback systems")
        p.add_argument("--snr-grid", metavar="A:B:STEP")
        p.add_argument("--transport", metavar="{perfect|gaussian:S|learned}")
        p.add_argument("--preset", choices=("desk", "paper"))
        p.add_argument("--codebook", metavar="PATH")
        p.add_argument("--agrell-fallback", action="store_true", default=None)
        p.add_argument("--timing", action="store_true", help="add wall-clock time to training logs")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("eval-bler", "eval-mse", "train-comm"):
            p.add_argument("--model", metavar="PATH", help="saved model to evaluate")
        if name == "eval-bler":
            p.add_argument("--scheme", choices=("qpsk", "agrell", "model"), default="qpsk")
        if name == "eval-mse":
            p.add_argument("--scheme", choices=("analog", "model"), default="analog")
        if name in ("train-comm", "full-pipeline"):
            p.add_argument("--feedback-model", metavar="PATH")
    return parser


def config_from_args(args):
    flags = {
        "channel": args.channel, "seed": args.seed, "out": args.out, "eval_snr_grid": args.snr_grid,
        "transport": args.transport, "preset": args.preset, "codebook": args.codebook,
        "agrell_fallback": args.agrell_fallback,
    }
    if args.snr_db is not None:
        flags["snr_comm_db"] = flags["snr_feedback_db"] = args.snr_db
    return load_config(args.config, flags)


# --------------------------------------------------------------------------
# building blocks


def comm_estimator(cfg, transport=None, feedback=None, clip=None):
    return AlternatingAutoencoder(
        n_messages=cfg.n_messages, n_channel=cfg.n_channel, channel=cfg.channel, snr_db=cfg.snr_comm_db,
        sigma_c2=cfg.sigma_c2, batch_size=cfg.batch_comm, n_iter=cfg.comm_iterations,
        learning_rate=cfg.learning_rate, final_learning_rate=cfg.final_learning_rate,
        rx_steps=cfg.rx_steps, tx_steps=cfg.tx_steps, transport=transport or cfg.transport,
        clip_losses=cfg.clip_losses if clip is None else clip, plateau_tol=cfg.plateau_tol,
        feedback=feedback, optimizer=cfg.optimizer, random_state=cfg.seed)


def feedback_estimator(cfg):
    return FeedbackLink(
        n_uses=cfg.n_feedback, channel=cfg.channel, snr_db=cfg.snr_feedback_db, sigma_f2=cfg.sigma_f2,
        batch_size=cfg.batch_feedback, n_outer=cfg.feedback_outer, inner_steps=cfg.feedback_inner,
        learning_rate=cfg.feedback_learning_rate, final_learning_rate=cfg.feedback_final_learning_rate,
        plateau_tol=cfg.feedback_plateau_tol, optimizer=cfg.optimizer, random_state=cfg.seed)


def agrell_codebook(cfg, required=True):
    if cfg.codebook:
        return baselines.agrell_load(cfg.codebook, cfg.n_messages)
    if cfg.agrell_fallback:
        return baselines.agrell_generate_fallback(cfg.n_messages)
    if required:
        raise UsageError("Agrell requested but no --codebook given; pass --agrell-fallback "
                         "to use the E8-shell stand-in")
    return None


def baseline_modems(cfg, include_agrell_if_available=True):
    pilot = cfg.channel == "rbf"
    out = {"qpsk": baselines.QPSKModem(pilot=pilot)}
    if include_agrell_if_available:
        cb = agrell_codebook(cfg, required=False)
        if cb is not None:
            out["agrell" if cfg.codebook else "agrell-fallback"] = cb.with_pilot(pilot)
    return out


def get_feedback(cfg, path):
    if path:
        system = load_model(path)
        return FeedbackLink.from_system(system, snr_db=cfg.snr_feedback_db)
    return feedback_estimator(cfg).fit()


def mse_rows(cfg, link, grid, seed):
    channel = Channel(cfg.channel, cfg.snr_feedback_db)
    rows = []
    for d in DIRECTIONS:
        for snr in grid:
            rows.append((snr, *evaluate_mse(link.system_, d, channel.at_snr(snr), cfg.eval_samples, seed),
                         f"learned-{d}"))
    analog = baselines.AnalogLink(cfg.n_feedback, pilot=cfg.channel == "rbf")
    for snr in grid:
        rows.append((snr, *evaluate_link_mse(analog, channel.at_snr(snr), cfg.eval_samples, seed), "analog"))
    return rows


def bler_rows(modem, cfg, grid, scheme, seed):
    channel = Channel(cfg.channel, cfg.snr_comm_db)
    return [(snr, b, h, scheme) for snr, b, h in bler_curve(modem, channel, grid, cfg.eval_samples, seed)]


def log_rows(log, timing):
    if timing:
        return "train_log_timed", log.rows
    return "train_log", [(r["iteration"], r["phase"], r["loss"]) for r in log.rows]


# --------------------------------------------------------------------------
# subcommands


def cmd_train_comm(cfg, args):
    feedback = None
    if parse_transport(cfg.transport)[0] == "learned":
        feedback = get_feedback(cfg, args.feedback_model)
    est = comm_estimator(cfg, feedback=feedback).fit()
    save_model(est.system_, os.path.join(cfg.out, "comm_model.txt"))
    schema, rows = log_rows(est.log_, args.timing)
    emit_csv(rows, schema, os.path.join(cfg.out, "train_log.csv"))
    rows = bler_rows(est.system_, cfg, cfg.snr_grid(), f"autoencoder-{cfg.transport}", cfg.seed + 1)
    emit_csv(rows, "bler", os.path.join(cfg.out, "bler.csv"))


def cmd_train_feedback(cfg, args):
    link = feedback_estimator(cfg).fit()
    save_model(link.system_, os.path.join(cfg.out, "feedback_model.txt"))
    emit_csv(link.log_, "feedback_log", os.path.join(cfg.out, "feedback_log.csv"))
    emit_csv(mse_rows(cfg, link, cfg.snr_grid(), cfg.seed + 1), "mse", os.path.join(cfg.out, "mse.csv"))


def cmd_eval_bler(cfg, args):
    grid = cfg.snr_grid()
    pilot = cfg.channel == "rbf"
    if args.scheme == "qpsk":
        rows = bler_rows(baselines.QPSKModem(pilot=pilot), cfg, grid, "qpsk", cfg.seed)
        if not pilot:
            rows += [(snr, baselines.qpsk_bler_closed_form(snr), 0.0, "qpsk-closed-form") for snr in grid]
    elif args.scheme == "agrell":
        rows = bler_rows(agrell_codebook(cfg).with_pilot(pilot), cfg, grid, "agrell", cfg.seed)
    else:
        if not args.model:
            raise UsageError("--scheme model needs --model PATH")
        system = load_model(args.model)
        if not isinstance(system, CommSystem):
            raise UsageError(f"{args.model} is not a communication system model")
        rows = bler_rows(system, cfg, grid, "autoencoder", cfg.seed)
    emit_csv(rows, "bler", os.path.join(cfg.out, "bler.csv"))


def cmd_eval_mse(cfg, args):
    grid = cfg.snr_grid()
    channel = Channel(cfg.channel, cfg.snr_feedback_db)
    if args.scheme == "analog":
        link = baselines.AnalogLink(cfg.n_feedback, pilot=cfg.channel == "rbf")
        rows = [(snr, *evaluate_link_mse(link, channel.at_snr(snr), cfg.eval_samples, cfg.seed), "analog")
                for snr in grid]
    else:
        if not args.model:
            raise UsageError("--scheme model needs --model PATH")
        system = load_model(args.model)
        rows = [(snr, *evaluate_mse(system, d, channel.at_snr(snr), cfg.eval_samples, cfg.seed), f"learned-{d}")
                for d in DIRECTIONS for snr in grid]
    emit_csv(rows, "mse", os.path.join(cfg.out, "mse.csv"))


def cmd_variance_sweep(cfg, args):
    grid = parse_list(cfg.variance_grid)
    channel = Channel(cfg.channel, cfg.snr_comm_db)
    untrained = CommSystem(cfg.n_messages, cfg.n_channel, cfg.channel, cfg.sigma_c2, seed=cfg.seed)
    reports = [analysis.variance_curve(untrained, channel, grid, cfg.variance_batch,
                                       cfg.variance_replications, cfg.seed, stage="untrained")]
    est = comm_estimator(cfg, transport="perfect").fit()
    reports.append(analysis.variance_curve(est.system_, channel, grid, cfg.variance_batch,
                                           cfg.variance_replications, cfg.seed, stage="trained"))
    rows = [row for rep in reports for row in rep.rows()]
    emit_csv(rows, "variance", os.path.join(cfg.out, "variance.csv"))


def cmd_bler_vs_mse(cfg, args):
    grid = parse_list(cfg.sigma_l2_grid)
    channel = Channel(cfg.channel, cfg.snr_comm_db)
    sweep = analysis.bler_vs_feedback_mse_sweep(
        [0.0] + [s for s in grid if s > 0], channel, n_iter=cfg.comm_iterations, batch_size=cfg.batch_comm,
        seed=cfg.seed, n_messages=cfg.n_messages, n_channel=cfg.n_channel, sigma_c2=cfg.sigma_c2,
        learning_rate=cfg.learning_rate, final_learning_rate=cfg.final_learning_rate,
        eval_samples=cfg.eval_samples)
    perfect = sweep[0][1]
    rows = [(s, b, perfect) for s, b, _, _ in sweep[1:]]
    if 0.0 in grid:
        rows.insert(0, (0.0, perfect, perfect))
    emit_csv(rows, "bler_vs_mse", os.path.join(cfg.out, "bler_vs_mse.csv"))


def cmd_full_pipeline(cfg, args):
    grid = cfg.snr_grid()
    link = get_feedback(cfg, args.feedback_model)
    save_model(link.system_, os.path.join(cfg.out, "feedback_model.txt"))
    emit_csv(mse_rows(cfg, link, grid, cfg.seed + 1), "mse", os.path.join(cfg.out, "mse.csv"))

    learned = comm_estimator(cfg, transport="learned", feedback=link, clip=True).fit()
    perfect = comm_estimator(cfg, transport="perfect", clip=True).fit()
    save_model(learned.system_, os.path.join(cfg.out, "comm_model_learned.txt"))
    save_model(perfect.system_, os.path.join(cfg.out, "comm_model_perfect.txt"))

    rows = bler_rows(learned.system_, cfg, grid, "autoencoder-learned", cfg.seed + 2)
    rows += bler_rows(perfect.system_, cfg, grid, "autoencoder-perfect", cfg.seed + 2)
    for name, modem in baseline_modems(cfg).items():
        rows += bler_rows(modem, cfg, grid, name, cfg.seed + 2)
    emit_csv(rows, "bler", os.path.join(cfg.out, "bler.csv"))


COMMANDS = {
    "train-comm": cmd_train_comm,
    "train-feedback": cmd_train_feedback,
    "eval-bler": cmd_eval_bler,
    "eval-mse": cmd_eval_mse,
    "variance-sweep": cmd_variance_sweep,
    "bler-vs-mse": cmd_bler_vs_mse,
    "full-pipeline": cmd_full_pipeline,
}


def run(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError, baselines.CodebookError) as exc:
        print(f"airgap-ae {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, TrainingError, OSError) as exc:
        print(f"airgap-ae {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
