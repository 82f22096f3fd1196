"""Command-line interface: ``psdme {bands,simulate,compare-widths,guaranteed-kpi,synth}``.

Data goes to stdout (or ``--output``), diagnostics to stderr.  Exit codes:
0 success, 1 I/O error, 2 invalid input.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from . import __version__
from ._validation import check_open_unit
from .bands import load_band_records
from .calibrate import ECalibrator
from .data import (
    DatasetError,
    SynthLinearGaussianConfig,
    dataset_to_csv,
    dataset_to_json,
    load_dataset,
    synth_linear_gaussian,
)
from .posthoc import (
    GaussianGridScenario,
    LinearGaussianScenario,
    _resolve_tau,
    best_over_selection,
    evaluate_pipeline,
    parse_selection_rule,
    simulate_fcr,
    width_comparison,
    width_sweep,
)

EXIT_IO = 1
EXIT_USAGE = 2
METHOD_CHOICES = {"ss": "ss-dme", "naive": "naive", "ps": "ps-dme", "bj": "berk-jones"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def dumps(obj) -> str:
    """Serialization used for every JSON document the CLI emits."""
    return json.dumps(obj, indent=2) + "\n"


# ------------------------------------------------------------ flag parsing


def _unit(name):
    def parse(text):
        try:
            return check_open_unit(float(text), name)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _tau(text):
    if text == "auto":
        return "auto"
    return _unit("tau")(text)


def _tau_list(text):
    return [_tau(t.strip()) for t in text.split(",")]


def _gammas(text):
    return [_unit("gamma")(t.strip()) for t in text.split(",") if t.strip()]


def _uint(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an unsigned integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected an unsigned integer, got {text!r}")
    return value


def _pos(text):
    value = _uint(text)
    if value < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return value


def _select(text):
    try:
        parse_selection_rule(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def _sweep(text):
    try:
        start, stop, step = (float(p) for p in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("sweep must be START:STOP:STEP") from None
    if not (0 <= start <= stop <= 1 and step > 0):
        raise argparse.ArgumentTypeError("sweep needs 0 <= START <= STOP <= 1 and STEP > 0")
    count = int(round((stop - start) / step))
    return [round(start + i * step, 12) for i in range(count + 1)]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="psdme", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"psdme {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--output", help="write data here instead of stdout")
        if seed:
            sp.add_argument("--seed", type=_uint, default=0)

    b = sub.add_parser("bands", help="select configurations and build CDF bands")
    b.add_argument("--input", required=True)
    b.add_argument("--format", choices=["csv", "json"])
    b.add_argument("--method", choices=list(METHOD_CHOICES), default="ps")
    b.add_argument("--delta", type=_unit("delta"), default=0.1)
    b.add_argument("--tau", type=_tau, default="auto")
    b.add_argument("--alpha", type=_unit("alpha"))
    b.add_argument("--split-ratio", type=_unit("split-ratio"))
    b.add_argument("--select", type=_select, default="top-m:10")
    b.add_argument("--gamma", type=_gammas, default=[])
    common(b)

    s = sub.add_parser("simulate", help="Monte Carlo false coverage rate")
    s.add_argument("--scenario", choices=["gaussian-grid", "linear-gaussian"],
                   default="gaussian-grid")
    s.add_argument("--method", choices=list(METHOD_CHOICES), default="ps")
    s.add_argument("--delta", type=_unit("delta"), default=0.1)
    s.add_argument("--tau", type=_tau, default="auto")
    s.add_argument("--alpha", type=_unit("alpha"))
    s.add_argument("--split-ratio", type=_unit("split-ratio"), default=0.5)
    s.add_argument("--select", type=_select, default="top-m:10")
    s.add_argument("--trials", type=_pos, default=1000)
    s.add_argument("--workers", type=_pos, default=1)
    s.add_argument("--k", type=_pos, default=50)
    s.add_argument("--n", type=_pos, default=40, help="samples per config (gaussian-grid)")
    s.add_argument("--n-cal", type=_pos, default=20, help="calibration size (linear-gaussian)")
    s.add_argument("--holdout", type=_pos, default=100_000)
    common(s)

    c = sub.add_parser("compare-widths", help="split vs calibrated full-data band widths")
    c.add_argument("--n", type=_pos, required=True)
    c.add_argument("--n-eval", type=_pos)
    c.add_argument("--k", type=_pos, required=True)
    c.add_argument("--selected", type=_pos, required=True)
    c.add_argument("--delta", type=_unit("delta"), default=0.1)
    c.add_argument("--tau", type=_tau_list, default=["auto"])
    c.add_argument("--sweep", type=_sweep)
    common(c, seed=False)

    g = sub.add_parser("guaranteed-kpi", help="best guaranteed KPI from a bands file")
    g.add_argument("--input", required=True)
    g.add_argument("--gamma", type=_gammas, required=True)
    common(g, seed=False)

    y = sub.add_parser("synth", help="write a synthetic KPI dataset")
    y.add_argument("--scenario", choices=["gaussian-grid", "linear-gaussian"],
                   default="gaussian-grid")
    y.add_argument("--k", type=_pos, default=50)
    y.add_argument("--n", type=_pos, default=40)
    y.add_argument("--n-cal", type=_pos, default=20)
    y.add_argument("--holdout", type=_pos, default=1000)
    y.add_argument("--format", choices=["csv", "json"], default="csv")
    common(y)
    return p


# ---------------------------------------------------------------- commands


def _emit(text: str, output) -> None:
    if output:
        with open(output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _linear_cfg(args, n_cal=None):
    return SynthLinearGaussianConfig(lambda_grid=tuple(np.logspace(-4, 2, args.k)),
                                     n_cal=n_cal or args.n_cal, seed=args.seed,
                                     holdout_size=args.holdout)


def run_bands(args) -> int:
    method = METHOD_CHOICES[args.method]
    if method == "ss-dme" and args.split_ratio is None:
        raise UsageError("--method ss requires --split-ratio")
    data = load_dataset(args.input, args.format)
    result = evaluate_pipeline(data, None, method, args.select, args.delta, args.gamma,
                               args.tau, args.split_ratio, args.seed, args.alpha)
    if result.heuristic_optimal:
        print("psdme: tau resolved for the realized selection size (heuristic-optimal)",
              file=sys.stderr)
    _emit(dumps(result.to_dict()), args.output)
    return 0


def _scenario(args):
    if args.scenario == "gaussian-grid":
        return GaussianGridScenario(args.k, args.n)
    return LinearGaussianScenario(_linear_cfg(args))


def run_simulate(args) -> int:
    method = METHOD_CHOICES[args.method]
    report = simulate_fcr(_scenario(args), method, args.select, args.delta, args.trials,
                          args.seed, args.workers, args.tau, args.split_ratio, args.alpha)
    _emit(dumps(report.to_dict()), args.output)
    return 0


def _sweep_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def run_compare_widths(args) -> int:
    if args.selected > args.k:
        raise UsageError("--selected must not exceed --k")
    if args.n_eval is None and args.sweep is None:
        raise UsageError("give --n-eval, --sweep, or both")
    if args.n_eval is not None and args.n_eval > args.n:
        raise UsageError("--n-eval must not exceed --n")
    if args.sweep is not None:
        if args.n_eval is not None and args.output is None:
            raise UsageError("--sweep together with --n-eval needs --output for the table")
        rows = width_sweep(args.n, args.k, args.selected, args.delta, args.tau, args.sweep)
        _emit(_sweep_csv(rows), args.output)
        if args.n_eval is None:
            return 0
    tau, _ = _resolve_tau(args.tau[0], args.delta, args.k, args.selected)
    comp = width_comparison(args.n, args.n_eval, args.k, args.selected, args.delta,
                            ECalibrator(tau))
    sys.stdout.write(dumps(comp.to_dict()))
    return 0


def run_guaranteed_kpi(args) -> int:
    records = load_band_records(args.input)
    if not records:
        raise UsageError(f"{args.input}: no band records")
    out = [best_over_selection(records, g).to_dict() for g in args.gamma]
    _emit(dumps(out), args.output)
    return 0


def run_synth(args) -> int:
    if args.scenario == "gaussian-grid":
        data, _ = GaussianGridScenario(args.k, args.n).draw(np.random.default_rng(args.seed))
    else:
        data, _ = synth_linear_gaussian(_linear_cfg(args))
    text = dataset_to_csv(data) if args.format == "csv" else dumps(dataset_to_json(data))
    _emit(text, args.output)
    return 0


COMMANDS = {
    "bands": run_bands,
    "simulate": run_simulate,
    "compare-widths": run_compare_widths,
    "guaranteed-kpi": run_guaranteed_kpi,
    "synth": run_synth,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"psdme: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"psdme: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DatasetError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"psdme: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
