"""Command-line front end.

Subcommands::

    run         one filter over one scenario -> run.csv, summary.txt
    montecarlo  NEES averaged over seeds seed..seed+runs-1 -> montecarlo.csv, summary.txt
    verify      bound systems and their dominance over the run -> verify.csv, summary.txt
    ranks       observability rank of the relayed outputs, one line per depth

Exit codes: 0 success, 1 configuration error, 2 verification failure.
``DINCIKF_THREADS`` caps the Monte-Carlo worker processes (0 or unset = all CPUs).
"""

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from .config import FILTERS, bundled_scenario, load_config, parse_config
from .errors import ConfigError, InvalidArgument, PreconditionViolation
from .simulator import run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2
RANK_DEPTHS = 9  # m = 0..8
FULL_RANK = 9

log = logging.getLogger(__name__)


def fmt(x):
    return "%.17g" % x


def header(config_hash):
    return f"# dincikf version={__version__} config_hash={config_hash}"


def _write_csv(path, config_hash, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write(header(config_hash) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def _write_summary(path, config_hash, items):
    lines = [header(config_hash)]
    for key, value in items:
        if isinstance(value, (float, np.floating)):
            value = fmt(value)
        lines.append(f"{key}={value}")
    Path(path).write_text("\n".join(lines) + "\n")


def thread_count(env=None):
    env = os.environ if env is None else env
    raw = env.get("DINCIKF_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("DINCIKF_THREADS", f"expected a non-negative integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("DINCIKF_THREADS", f"expected a non-negative integer, got {n}")
    return n or (os.cpu_count() or 1)


def resolve_scenario(name):
    """A path, or the file name of a bundled scenario (with or without ``.json``)."""
    path = Path(name)
    if path.is_file():
        return path
    for candidate in (name, f"{name}.json"):
        b = bundled_scenario(candidate)
        if "/" not in name and b.is_file():
            return b
    return path


def load_invocation(args):
    cfg = load_config(resolve_scenario(args.scenario))
    if args.seed is not None or args.filter is not None:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed", "must be non-negative")
        cfg = cfg.with_overrides(seed=args.seed, filter=args.filter)
    return cfg


def _out_dir(args):
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(str(out), f"cannot create output directory: {exc.strerror}") from exc
    return out


# --- run --------------------------------------------------------------------------


def run_rows(record):
    rm = an.rmse_of(record)
    er, ep, tr = record.err_rot(), record.err_pos(), record.trace()
    n = record.n_agents
    columns = ["tick", "time_s", "rmse_rot", "rmse_pos"]
    for i in range(n):
        columns += [f"err_rot_{i}", f"err_pos_{i}", f"trace_P_{i}"]
    rows = []
    for k, t in enumerate(record.times):
        row = [str(k), t, rm.rot[k], rm.pos[k]]
        for i in range(n):
            row += [er[k, i], ep[k, i], tr[k, i]]
        rows.append(row)
    return columns, rows


def cmd_run(args):
    cfg = load_invocation(args)
    out = _out_dir(args)
    record = run_scenario(cfg)
    columns, rows = run_rows(record)
    h = cfg.hash()
    _write_csv(out / "run.csv", h, columns, rows)
    rm = an.rmse_of(record)
    _write_summary(
        out / "summary.txt",
        h,
        [
            ("command", "run"),
            ("scenario", cfg.name),
            ("filter", record.filter),
            ("seed", cfg.seed),
            ("ticks", len(record.times) - 1),
            ("final_rmse_rot", float(rm.rot[-1])),
            ("final_rmse_pos", float(rm.pos[-1])),
            ("max_rmse_pos", float(rm.pos.max())),
            ("rejected_observations", record.rejected),
            ("digest", record.digest()),
        ],
    )
    print(out / "run.csv")
    return EXIT_OK


# --- montecarlo -------------------------------------------------------------------


def _nees_job(job):
    raw, seed = job
    cfg = parse_config(raw).with_overrides(seed=seed)
    record = run_scenario(cfg)
    ticks = record.checkpoint_ticks(cfg.checkpoints)
    return ticks, record.times[ticks], an.nees_series(record, ticks)


def monte_carlo_nees(cfg, seed, runs, threads=1):
    """Per-seed NEES at the checkpoints, stacked as ``(runs, checkpoints, n)``."""
    jobs = [(cfg.raw, seed + r) for r in range(runs)]
    if threads <= 1 or runs <= 1:
        results = [_nees_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(threads, runs)) as pool:
            results = list(pool.map(_nees_job, jobs))
    ticks, times = results[0][0], results[0][1]
    return ticks, times, np.stack([r[2] for r in results])


def cmd_montecarlo(args):
    cfg = load_invocation(args)
    if args.runs < 1:
        raise ConfigError("--runs", "must be at least 1")
    threads = thread_count()
    out = _out_dir(args)
    seed = cfg.seed
    ticks, times, values = monte_carlo_nees(cfg, seed, args.runs, threads)
    n = cfg.n_agents
    per_agent = values.mean(axis=0)  # (checkpoints, n)
    joint = values.sum(axis=2).mean(axis=0)  # 9n dof per run
    bound_agent = an.chi2_mean_bound(9, args.runs)
    bound_joint = an.chi2_mean_bound(9 * n, args.runs)
    columns = ["checkpoint", "tick", "time_s"] + [f"nees_{i}" for i in range(n)] + ["nees_joint", "bound_joint"]
    rows = [
        [str(c), str(int(k)), t, *per_agent[c], joint[c], bound_joint]
        for c, (k, t) in enumerate(zip(ticks, times))
    ]
    h = cfg.hash()
    _write_csv(out / "montecarlo.csv", h, columns, rows)
    exceed = int((joint > bound_joint).sum())
    _write_summary(
        out / "summary.txt",
        h,
        [
            ("command", "montecarlo"),
            ("scenario", cfg.name),
            ("filter", cfg.filter),
            ("seeds", f"{seed}..{seed + args.runs - 1}"),
            ("checkpoints", len(ticks)),
            ("bound_per_agent", bound_agent),
            ("bound_joint", bound_joint),
            ("max_nees_joint", float(joint.max())),
            ("checkpoints_above_bound", exceed),
        ],
    )
    print(out / "montecarlo.csv")
    return EXIT_OK


# --- verify -----------------------------------------------------------------------


def verify_record(record, cfg, mode="chain"):
    summary = an.summarize_run(record, cfg)
    tree = an.bound_tree(cfg, summary)
    aubs = an.build_aubs(tree, summary, mode)
    report = an.verify_dominance(record, aubs, start=summary.start)
    return summary, aubs, report


def cmd_verify(args):
    cfg = load_invocation(args)
    if cfg.filter != "dincikf":
        raise ConfigError("filter", f"verify needs the dincikf filter, got {cfg.filter!r}")
    out = _out_dir(args)
    record = run_scenario(cfg)
    try:
        summary, aubs, report = verify_record(record, cfg)
    except (InvalidArgument, PreconditionViolation) as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    columns = ["agent", "parent", "rank", "converged", "iterations", "c", "min_eig", "violations"]
    rows = []
    failed = False
    for i in range(cfg.n_agents):
        st = aubs.get(i)
        if st is None:
            rows.append([str(i), "none", "0", "0", "0", float("nan"), float("nan"), "1"])
            failed = True
            continue
        col = report.min_eig[summary.start :, i]
        nv = sum(1 for _, a, _ in report.violations if a == i)
        tr = st.trajectory
        ok = st.rank == FULL_RANK and tr.converged and not tr.diverging and nv == 0
        failed |= not ok
        rows.append(
            [
                str(i),
                str(st.parent),
                str(st.rank),
                str(int(tr.converged)),
                str(tr.iterations),
                float(st.constants.get("c", 1.0)),
                float(np.nanmin(col)),
                str(nv),
            ]
        )
    h = cfg.hash()
    _write_csv(out / "verify.csv", h, columns, rows)
    _write_summary(
        out / "summary.txt",
        h,
        [
            ("command", "verify"),
            ("scenario", cfg.name),
            ("seed", cfg.seed),
            ("bound_start_fusion", summary.start),
            ("fusions_checked", summary.n_fusions),
            ("violations", len(report.violations)),
            ("result", "fail" if failed else "pass"),
        ],
    )
    print(out / "verify.csv")
    return EXIT_VERIFY if failed else EXIT_OK


# --- ranks ------------------------------------------------------------------------


def cmd_ranks(args):
    ranks = an.relay_ranks(dt=args.dt, m_max=RANK_DEPTHS - 1)
    lines = [f"m={m} rank={r}" for m, r in enumerate(ranks)]
    print("\n".join(lines))
    if args.out:
        out = _out_dir(args)
        (out / "ranks.txt").write_text(header("none") + "\n" + "\n".join(lines) + "\n")
    return EXIT_OK if all(r == FULL_RANK for r in ranks) else EXIT_VERIFY


# --- entry point ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not verification failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="dincikf", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario_args(sp, default_out):
        sp.add_argument("--scenario", required=True, help="scenario JSON path or bundled scenario name")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--filter", choices=FILTERS, help="override the filter")
        sp.add_argument("--out", default=default_out, help="output directory")

    scenario_args(sub.add_parser("run", help="run one scenario"), "out/run")
    mc = sub.add_parser("montecarlo", help="NEES over consecutive seeds")
    scenario_args(mc, "out/montecarlo")
    mc.add_argument("--runs", type=int, default=2, help="number of seeds")
    scenario_args(sub.add_parser("verify", help="bound-system dominance check"), "out/verify")
    rk = sub.add_parser("ranks", help="observability ranks of the relayed outputs")
    rk.add_argument("--dt", type=float, default=0.01)
    rk.add_argument("--out", default=None)
    return p


COMMANDS = {"run": cmd_run, "montecarlo": cmd_montecarlo, "verify": cmd_verify, "ranks": cmd_ranks}


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
