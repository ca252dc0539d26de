"""``dissd-lab`` command line entry point.

    dissd-lab run [config] [--preset NAME] [--key value ...]
    dissd-lab presets
    dissd-lab ingest data.csv config

Exit status is 0 on success, 2 for configuration errors and 3 when a
numerical routine fails (divergence, non-convergent precision rows,
degenerate curvature).
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from dissd.baselines import LocalFitError
from dissd.bench import (
    PRESETS,
    ConfigError,
    build_config,
    dump_config,
    format_summary,
    run_experiment,
    summarize,
    write_csv,
)
from dissd.dissd_glm import run_dissd_glm
from dissd.dissd_mest import DegenerateCurvatureError, run_dissd_mest
from dissd.inference import coordinate_intervals
from dissd.scio import ScioConvergenceError
from dissd.sparse_init import DivergenceError
from dissd.synth_data import read_labeled_csv

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
NUMERIC_ERRORS = (DivergenceError, ScioConvergenceError, DegenerateCurvatureError, LocalFitError,
                  FloatingPointError, np.linalg.LinAlgError)


def split_args(tokens: list[str]) -> tuple[list[str], dict[str, str]]:
    """Positional arguments and ``--key value`` / ``--key=value`` pairs."""
    positional, pairs = [], {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            positional.append(tok)
            i += 1
            continue
        if "=" in tok:
            key, value = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"missing value for {tok}")
            key, value = tok[2:], tokens[i + 1]
            i += 2
        if not key:
            raise ConfigError(f"bad flag {tok!r}")
        pairs[key] = value
    return positional, pairs


def _config(positional: list[str], pairs: dict[str, str], names: tuple[str, ...]):
    if len(positional) > len(names):
        raise ConfigError(f"unexpected argument {positional[len(names)]!r}")
    preset = pairs.pop("preset", None)
    found = dict(zip(names, positional))
    return found, build_config(found.get("config"), preset, pairs)


def cmd_run(tokens) -> int:
    _, cfg = _config(*split_args(tokens), ("config",))
    rows = run_experiment(cfg)
    write_csv(rows, cfg.out_path)
    print(format_summary(summarize(rows)))
    print(f"wrote {len(rows)} rows to {cfg.out_path}")
    return 0


def cmd_presets(tokens) -> int:
    if tokens:
        raise ConfigError(f"unexpected arguments {tokens}")
    for name in PRESETS:
        print(f"[{name}]")
        print(dump_config(build_config(preset=name)))
    return 0


def cmd_ingest(tokens) -> int:
    found, cfg = _config(*split_args(tokens), ("csv", "config"))
    if "csv" not in found:
        raise ConfigError("ingest needs a CSV path")
    try:
        data, names = read_labeled_csv(found["csv"], cfg.m)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot ingest {found['csv']}: {exc}") from None
    loss = cfg.loss()
    dcfg = cfg.dissd_config(cfg.seed)
    if cfg.model == "logistic":
        run = run_dissd_glm(data, loss, dcfg)
    else:
        run = run_dissd_mest(data, loss, dcfg)
    final = run.final
    intervals = coordinate_intervals(run, loss) if final.round else np.full((data.p, 2), np.nan)
    with Path(cfg.out_path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["feature", "estimate", "debiased", "ci_lo", "ci_hi"])
        for name, b, d, (lo, hi) in zip(names, final.beta_hat, final.beta_bar, intervals):
            writer.writerow([name] + [format(float(v), ".9g") for v in (b, d, lo, hi)])
    print(f"m={data.m} n={data.n} n_star={data.n_star} p={data.p} rounds={final.round} "
          f"nonzero={int(np.count_nonzero(final.beta_hat))} floats_sent={final.floats_sent}")
    print(f"wrote coefficients to {cfg.out_path}")
    return 0


COMMANDS = {"run": cmd_run, "presets": cmd_presets, "ingest": cmd_ingest}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dissd-lab",
        description="Distributed semi-supervised debiased estimation experiments.",
        epilog="run [config] [--preset NAME] [--key value ...] | presets | ingest data.csv [config] [--key value ...]",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("args", nargs=argparse.REMAINDER)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args.args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
