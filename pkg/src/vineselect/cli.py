"""Command-line interface: ``vineselect <command> [options]``.

Every command writes into ``--out`` a set of files plus ``run.json`` holding
the full configuration, seed and library version.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .io import DataError, read_matrix_csv, read_prices_csv, write_json, write_matrix_csv, write_rows_csv
from .pair_copulas import EstimationError, NumericalError, ParameterError
from .portfolio import PortfolioError
from .rjmcmc import GROUPS, ConfigError, PriorConfig, TuningParams
from .vine import StructureError, VineCopula

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
R_RANGE = (15000, 30000)


def _provenance(args) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return {"version": __version__, "command": args.command, "seed": args.seed, "config": cfg}


def _families(text: str) -> tuple:
    fams = tuple(x.strip() for x in text.split(",") if x.strip())
    for g in fams:
        if g not in GROUPS:
            raise ConfigError(f"unknown family {g!r}; choose from {','.join(GROUPS)}")
    return fams


def _tuning(args) -> TuningParams:
    if not R_RANGE[0] <= args.R <= R_RANGE[1]:
        raise ConfigError(f"R must lie in [{R_RANGE[0]}, {R_RANGE[1]}], got {args.R}")
    return TuningParams(R=args.R, burn_in=args.burn_in, families=_families(args.families),
                        paper_cancellation=args.paper_cancellation)


def _prior(args) -> PriorConfig:
    return PriorConfig(lam=args.lam, df_prior=args.df_prior)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(args, out: Path, files) -> None:
    write_json(out / "run.json", {**_provenance(args), "files": sorted(files)})


def _model_doc(copula: VineCopula, args, extra=None) -> dict:
    doc = copula.to_dict()
    if extra:
        doc.update(extra)
    doc["provenance"] = _provenance(args)
    return doc


# -- commands ------------------------------------------------------------------------------

def cmd_fit_bayes(args) -> int:
    from .plotting import trace_plot
    from .rjmcmc import select_vine

    prior, tuning = _prior(args), _tuning(args)
    _, U = read_matrix_csv(args.data, rank=args.rank_transform)
    out = _out(args)
    res = select_vine(U, prior, tuning, seed=args.seed, levels=args.levels)
    files = ["model.json"]
    posterior = []
    for est in res.levels:
        k = est.level
        tr = est.trace
        recs = list(tr.records())
        write_rows_csv(out / f"trace_level{k}.csv", ["iter", "level", "model_hash", "loglik", "accepted_move"], recs)
        with (out / f"trace_level{k}.jsonl").open("w") as fh:
            for r in recs:
                fh.write(json.dumps(r) + "\n")
        table = [{"rank": i + 1, "model": lab, "frequency": f}
                 for i, (lab, f) in enumerate(est.model_table)]
        write_rows_csv(out / f"models_level{k}.csv", ["rank", "model", "frequency"], table)
        trace_plot(tr, out / f"trace_level{k}.png", burn_in=tuning.burn_in)
        files += [f"trace_level{k}.csv", f"trace_level{k}.jsonl", f"models_level{k}.csv",
                  f"trace_level{k}.png"]
        posterior.append({"level": k, "mode": est.mode_label, "mode_frequency": est.mode_frequency,
                          "acceptance": est.acceptance, "models": table[:20]})
    write_json(out / "model.json", _model_doc(res.copula, args, {"posterior": {"levels": posterior}}))
    _finish(args, out, files)
    return EXIT_OK


def cmd_fit_dissmann(args) -> int:
    from .baselines import dissmann_select

    _, U = read_matrix_csv(args.data, rank=args.rank_transform)
    out = _out(args)
    cop = dissmann_select(U, families=_families(args.families), levels=args.levels)
    write_json(out / "model.json", _model_doc(cop, args))
    _finish(args, out, ["model.json"])
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .baselines import scenario
    from .streams import stream
    from .vine import simulate

    if (args.scenario is None) == (args.model is None):
        raise ConfigError("give exactly one of --scenario and --model")
    if args.n < 1:
        raise ConfigError("--n must be positive")
    if args.scenario is not None:
        cop = scenario(args.scenario)
    else:
        try:
            cop = VineCopula.from_json(Path(args.model).read_text())
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"cannot read model {args.model}: {exc}") from exc
    out = _out(args)
    U = simulate(cop, args.n, stream(args.seed, "simulate"))
    write_matrix_csv(out / "data.csv", [f"u{j + 1}" for j in range(cop.d)], U)
    write_json(out / "model.json", _model_doc(cop, args))
    _finish(args, out, ["data.csv", "model.json"])
    return EXIT_OK


def cmd_replicate_study(args) -> int:
    from .plotting import study_scatter
    from .study import STUDY_FIELDS, SUMMARY_FIELDS, replicate, summarize

    prior, tuning = _prior(args), _tuning(args)
    for s in args.scenarios:
        if s not in (1, 2, 3, 4):
            raise ConfigError(f"unknown scenario {s}")
    out = _out(args)
    rows = []
    for s in args.scenarios:
        for rep in range(1, args.reps + 1):
            rows.append(replicate(s, rep, args.n, prior, tuning, seed=args.seed).row)
            if not args.quiet:
                r = rows[-1]
                print(f"scenario {s} rep {rep}: bayes {r['bayes_rel']:.1f}% "
                      f"dissmann {r['dissmann_rel']:.1f}%", file=sys.stderr)
    write_rows_csv(out / "replications.csv", STUDY_FIELDS, rows)
    write_rows_csv(out / "summary.csv", SUMMARY_FIELDS, summarize(rows))
    study_scatter(rows, out / "bayes_vs_dissmann.png")
    _finish(args, out, ["replications.csv", "summary.csv", "bayes_vs_dissmann.png"])
    return EXIT_OK


def cmd_backtest(args) -> int:
    from .baselines import dissmann_select, gaussian_copula_mle
    from .plotting import backtest_plot
    from .portfolio import BacktestConfig, backtest, log_returns
    from .rjmcmc import select_vine

    dates, names, P = read_prices_csv(args.prices)
    Y = log_returns(P)
    if args.method == "bayes":
        prior, tuning = _prior(args), _tuning(args)
        fit = lambda U: select_vine(U, prior, tuning, seed=args.seed).copula  # noqa: E731
    elif args.method == "dissmann":
        fit = dissmann_select
    elif args.method == "gaussian":
        fit = gaussian_copula_mle
    else:
        fit = lambda U: None  # noqa: E731
    cfg = BacktestConfig(train=args.train, N=args.N, level=args.level, weights=args.weights,
                         refit_every=args.refit_every, seed=args.seed)
    if not 2 <= args.train < Y.shape[0]:
        raise ConfigError(f"--train must be in [2, {Y.shape[0] - 1}] for {Y.shape[0]} returns")
    out = _out(args)
    report = backtest(Y, fit, cfg, dates=dates[1:])
    report["assets"] = names
    report["provenance"] = _provenance(args)
    write_json(out / "report.json", report)
    series = [{k: x[k] for k in ("t", "date", "realized", "forecast_mean", "var", "exceed")}
              for x in report["daily"]]
    write_rows_csv(out / "series.csv", ["t", "date", "realized", "forecast_mean", "var", "exceed"], series)
    backtest_plot(report, out / "backtest.png")
    _finish(args, out, ["report.json", "series.csv", "backtest.png"])
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------------------

def _add_sampler_opts(p):
    p.add_argument("--R", type=int, default=15000, help="iterations per level (15000..30000)")
    p.add_argument("--burn-in", type=int, default=2500)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="shrinkage intensity")
    p.add_argument("--families", default=",".join(GROUPS))
    p.add_argument("--paper-cancellation", action="store_true",
                   help="treat the tree-proposal normalizers as equal")
    p.add_argument("--df-prior", choices=("log", "flat-log"), default="log")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vineselect", description="Bayesian selection of regular vine copulas")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit-bayes", help="tree-by-tree Bayesian selection")
    p.add_argument("--data", required=True)
    p.add_argument("--rank-transform", action="store_true")
    p.add_argument("--levels", type=int, default=None, help="stop after this many trees")
    _add_sampler_opts(p)
    common(p)
    p.set_defaults(func=cmd_fit_bayes)

    p = sub.add_parser("fit-dissmann", help="greedy maximum-spanning-tree selection")
    p.add_argument("--data", required=True)
    p.add_argument("--rank-transform", action="store_true")
    p.add_argument("--levels", type=int, default=None)
    p.add_argument("--families", default=",".join(GROUPS))
    common(p)
    p.set_defaults(func=cmd_fit_dissmann)

    p = sub.add_parser("simulate", help="draw data from a scenario or a model JSON")
    p.add_argument("--scenario", type=int, default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--n", type=int, default=500)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replicate-study", help="replicated simulation study")
    p.add_argument("--scenarios", type=int, nargs="+", default=[1, 2, 3, 4])
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--quiet", action="store_true")
    _add_sampler_opts(p)
    common(p)
    p.set_defaults(func=cmd_replicate_study)

    p = sub.add_parser("backtest", help="daily out-of-sample portfolio backtest")
    p.add_argument("--prices", required=True)
    p.add_argument("--method", choices=("bayes", "dissmann", "gaussian", "independence"), default="bayes")
    p.add_argument("--train", type=int, default=252)
    p.add_argument("--N", type=int, default=10000)
    p.add_argument("--level", type=float, default=0.10)
    p.add_argument("--weights", choices=("sharpe", "equal"), default="sharpe")
    p.add_argument("--refit-every", type=int, default=None)
    _add_sampler_opts(p)
    common(p)
    p.set_defaults(func=cmd_backtest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except EstimationError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ParameterError, StructureError, PortfolioError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
