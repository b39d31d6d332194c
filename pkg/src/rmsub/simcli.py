"""Command-line interface: construct, ranks, simulate, train, profile.

Every flag can also come from a config file of key=value lines (keys are
the long option names with dashes or underscores); explicit flags override
the file.  Outputs are CSV or plain text; the exit code is 0 on success and
1 with a one-line diagnostic on stderr otherwise.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import construct, decode, prune, project, train as train_mod
from .sim import (StopRule, profile_csv, results_csv, run_montecarlo,
                  snr_convert)

__all__ = ["main", "build_parser"]


def _parse_grid(text: str) -> list[float]:
    """Parse 'a:b:step' (inclusive endpoints, within half a step) or 'a,b,c'."""
    if ":" in text:
        parts = [float(t) for t in text.split(":")]
        if len(parts) != 3:
            raise ValueError("grid must be a:b:step")
        a, b, step = parts
        if step <= 0:
            raise ValueError("grid step must be positive")
        return [float(v) for v in np.arange(a, b + step / 2, step)]
    return [float(t) for t in text.split(",")]


def _parse_prune(text: str, tree: project.ProjectionTree):
    """Parse --prune: full | minrank:P | maxrank:P | random:P:SEED | weights:FILE:P | plan:FILE."""
    if text == "full":
        return "full", None
    kind, _, rest = text.partition(":")
    if kind == "minrank":
        return prune.plan_minrank(tree, int(rest)), None
    if kind == "maxrank":
        return prune.plan_maxrank(tree, int(rest)), None
    if kind == "random":
        p_str, _, seed_str = rest.partition(":")
        return prune.plan_random(tree, int(p_str), int(seed_str or 0)), None
    if kind == "weights":
        path, _, p_str = rest.rpartition(":")
        state, _meta = train_mod.load_weights(path)
        return prune.plan_from_weights(state, int(p_str)), state
    if kind == "plan":
        return prune.load_plan(rest), None
    raise ValueError(f"unknown pruning spec {text!r}")


def _load_spec(args) -> construct.CodeSpec:
    if getattr(args, "gen", None):
        return construct.load_generator(args.gen)
    if args.m is None or args.r is None or args.k is None:
        raise ValueError("either --gen or all of --m/--r/--k are required")
    if args.selection:
        sel = [int(t) for t in args.selection.split(",")]
        return construct.subcode_generator(args.m, args.r, args.k, sel)
    raise ValueError("without --gen, --selection is required to define the code")


def _coerce(value: str):
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            continue
    return value


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Pull defaults from a key=value config file; flags still override."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    path = argv[i + 1]
    defaults = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            defaults[key.strip().replace("-", "_")] = _coerce(value.strip())
    parser.set_defaults(**defaults)
    return argv[:i] + argv[i + 2:]


def _add_code_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gen", help="generator file (header 'm r k' + 0/1 rows)")
    p.add_argument("--m", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--selection", help="comma-separated candidate row indices")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmsub",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value file of flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("construct", help="encoder search / generator export")
    _add_code_args(p)
    p.add_argument("--objective", default="min-L",
                   choices=["min-L", "max-L", "min-L-subset"])
    p.add_argument("--q0", type=int, help="subset size for min-L-subset")
    p.add_argument("--guard", type=int, default=10 ** 6)
    p.add_argument("--samples", type=int, help="sampled instead of exhaustive search")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="generator file to write")
    p.add_argument("--top", type=int, default=1, help="print the best N selections")

    p = sub.add_parser("ranks", help="projection rank, L and memory report (CSV)")
    _add_code_args(p)
    p.add_argument("--prune", default="full")
    p.add_argument("--out", help="CSV path (stdout when omitted)")

    p = sub.add_parser("simulate", help="Monte-Carlo BLER/BER estimation")
    _add_code_args(p)
    p.add_argument("--decoder", default="soft-subrpa",
                   choices=["map", "fht", "subrpa", "soft-subrpa"])
    p.add_argument("--aggregation", default="soft", choices=["soft", "logsum"])
    p.add_argument("--prune", default="full")
    p.add_argument("--nmax", type=int, default=3)
    p.add_argument("--no-early-exit", action="store_true")
    p.add_argument("--snr-grid", help="a:b:step or comma list, in dB (required; "
                                      "may come from the config file)")
    p.add_argument("--metric", default="ebn0", choices=["snr", "ebn0"])
    p.add_argument("--channel", default="awgn", choices=["awgn", "bsc"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-trials", type=int, default=100_000)
    p.add_argument("--min-errors", type=int, default=100)
    p.add_argument("--max-trials", type=int, default=1_000_000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="results CSV path (stdout when omitted)")
    p.add_argument("--profile-out", help="bit-error profile CSV path")

    p = sub.add_parser("train", help="learn projection weights, export weight file")
    _add_code_args(p)
    p.add_argument("--q0", type=int, required=True)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--sinkhorn-eps", type=float, default=0.1)
    p.add_argument("--nmax", type=int, default=3)
    p.add_argument("--grad-mode", default="reverse", choices=["reverse", "fd"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metric", default="snr", choices=["snr", "ebn0"])
    p.add_argument("--train-snr-db", type=float,
                   help="training SNR in dB; omit to search it")
    p.add_argument("--target-bler", type=float, default=1e-3)
    p.add_argument("--offset-db", type=float, default=1.0)
    p.add_argument("--out", required=True, help="weight file to write")

    p = sub.add_parser("profile", help="bit-error profile at one operating point")
    _add_code_args(p)
    p.add_argument("--decoder", default="soft-subrpa",
                   choices=["map", "fht", "subrpa", "soft-subrpa"])
    p.add_argument("--aggregation", default="soft", choices=["soft", "logsum"])
    p.add_argument("--prune", default="full")
    p.add_argument("--nmax", type=int, default=3)
    p.add_argument("--snr-db", type=float, required=True)
    p.add_argument("--metric", default="ebn0", choices=["snr", "ebn0"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-trials", type=int, default=100_000)
    p.add_argument("--min-errors", type=int, default=100)
    p.add_argument("--max-trials", type=int, default=1_000_000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--profile-out", required=True)
    return parser


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _tree_for(args, spec):
    """Build the decode tree honoring --decoder and --prune."""
    decoder = getattr(args, "decoder", "soft-subrpa")
    if decoder in ("map", "fht"):
        if spec.k > 20:
            raise ValueError("exhaustive MAP needs k <= 20")
        leaf = project.ProjNode(gen=spec.generator, n=spec.n, depth=0, path=(),
                                rank=spec.k)
        u, cb = project.build_u_and_codebook(spec.generator)
        leaf.u, leaf.codebook = u, cb
        return project.ProjectionTree(m=spec.m, r=spec.r, k=spec.k, root=leaf), None
    full_tree = project.build_projection_tree(spec, "full")
    plan, _state = _parse_prune(getattr(args, "prune", "full"), full_tree)
    if plan == "full":
        return full_tree, None
    return project.build_projection_tree(spec, plan), plan


def _cmd_construct(args) -> int:
    if args.selection:
        spec = _load_spec(args)
        construct.save_generator(spec, args.out)
        print(f"wrote {args.out} (selection {spec.selection})")
        return 0
    if args.m is None or args.r is None or args.k is None:
        raise ValueError("--m/--r/--k are required for a search")
    res = construct.encoder_search(args.m, args.r, args.k, objective=args.objective,
                                   q0=args.q0, guard=args.guard,
                                   samples=args.samples, seed=args.seed)
    order = np.argsort(res.l_full if res.objective != "min-L-subset" else res.l_subset)
    if res.objective == "max-L":
        order = order[::-1]
    for i in order[:args.top]:
        subset = "" if res.l_subset is None else f"  L_subset={int(res.l_subset[i])}"
        print(f"selection {res.selections[i]}  L={int(res.l_full[i])}{subset}")
    spec = res.best_spec()
    construct.save_generator(spec, args.out)
    print(f"wrote {args.out} (objective {args.objective}, selection {spec.selection})")
    return 0


def _cmd_ranks(args) -> int:
    spec = _load_spec(args)
    full_tree = project.build_projection_tree(spec, "full")
    plan, _ = _parse_prune(args.prune, full_tree)
    tree = full_tree if plan == "full" else project.build_projection_tree(spec, plan)
    _emit(project.rank_report_csv(tree), args.out)
    return 0


def _decoder_config(args) -> decode.DecoderConfig:
    return decode.DecoderConfig(kind=args.decoder, aggregation=args.aggregation,
                                n_max=args.nmax,
                                early_exit=not getattr(args, "no_early_exit", False))


def _cmd_simulate(args) -> int:
    if not args.snr_grid:
        raise ValueError("--snr-grid is required (flag or config file)")
    spec = _load_spec(args)
    tree, _ = _tree_for(args, spec)
    cfg = _decoder_config(args)
    stop = StopRule(min_trials=args.min_trials, min_errors=args.min_errors,
                    max_trials=args.max_trials)
    result = run_montecarlo(spec, tree, cfg, _parse_grid(args.snr_grid),
                            metric=args.metric, stop=stop, seed=args.seed,
                            workers=args.workers, channel_kind=args.channel)
    _emit(results_csv(result), args.out)
    if args.profile_out:
        _emit(profile_csv(result), args.profile_out)
    return 0


def _cmd_train(args) -> int:
    spec = _load_spec(args)
    tree = project.build_projection_tree(spec, "full")
    snr_db = args.train_snr_db
    if snr_db is None:
        snr_db = train_mod.pick_training_snr(spec, tree, target_bler=args.target_bler,
                                             offset_db=args.offset_db,
                                             metric=args.metric, seed=args.seed)
        print(f"training SNR: {snr_db:.2f} dB ({args.metric})")
    config = train_mod.TrainConfig(q0=args.q0, snr_db=snr_db, snr_metric=args.metric,
                                   batch_size=args.batch_size,
                                   iterations=args.iterations,
                                   learning_rate=args.lr, eps=args.sinkhorn_eps,
                                   seed=args.seed, grad_mode=args.grad_mode,
                                   n_max=args.nmax)
    state, trace = train_mod.train(spec, config, tree=tree)
    meta = {"seed": args.seed, "snr_db": snr_db, "snr_metric": args.metric,
            "iterations": args.iterations, "batch_size": args.batch_size,
            "lr": args.lr, "final_loss": trace[-1], "initial_loss": trace[0]}
    train_mod.save_weights(state, args.out, meta=meta)
    print(f"wrote {args.out} (loss {trace[0]:.4f} -> {trace[-1]:.4f})")
    return 0


def _cmd_profile(args) -> int:
    spec = _load_spec(args)
    tree, _ = _tree_for(args, spec)
    args.no_early_exit = False
    cfg = _decoder_config(args)
    stop = StopRule(min_trials=args.min_trials, min_errors=args.min_errors,
                    max_trials=args.max_trials)
    result = run_montecarlo(spec, tree, cfg, [args.snr_db], metric=args.metric,
                            stop=stop, seed=args.seed, workers=args.workers)
    _emit(profile_csv(result), args.profile_out)
    point = result.points[0]
    print(f"BLER {point.bler:.3e} over {point.trials} trials")
    return 0


_COMMANDS = {
    "construct": _cmd_construct,
    "ranks": _cmd_ranks,
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "profile": _cmd_profile,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"rmsub: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
