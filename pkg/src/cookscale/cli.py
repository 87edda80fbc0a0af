"""Command-line front end.

Subcommands: ``fit`` (parameter estimates as JSON), ``diagnose`` (the
per-subset influence report), ``simulate`` (scenario datasets as CSV),
``experiment`` (aggregate study drivers).  Exit codes: 0 success, 2
validation error, 3 numerical failure.

A plain ``key = value`` config file can supply any long option; explicit
flags win.  The thread count falls back to the COOKSCALE_THREADS
environment variable.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .data import ClusteredData
from .deletion import enumerate_subsets
from .exceptions import NumericalError, ValidationError
from .experiments import run_figure1, run_table1
from .fitting import fit_lmm_em, fit_ols
from .io import read_clustered, read_cross_section, read_subsets, write_clustered
from .report import build_report, write_report
from .simulate import ScenarioConfig, gen_scenario


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cookscale",
        description="Deletion influence diagnostics with bootstrap scaling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p: argparse.ArgumentParser, data: bool = True) -> None:
        if data:
            p.add_argument("--data", help="input CSV path")
            p.add_argument("--model", choices=("lm", "lmm"))
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--config", default=None,
                       help="key = value file; flags override")

    p_fit = sub.add_parser("fit", help="fit a model, write estimates as JSON")
    shared(p_fit)
    p_fit.add_argument("--info", choices=("observed", "expected"), default=None)

    p_diag = sub.add_parser("diagnose", help="per-subset influence report")
    shared(p_diag)
    p_diag.add_argument("--subsets", default=None,
                        help="singletons | clusters | file with one subset per line")
    p_diag.add_argument("--S", type=int, default=None, dest="S",
                        help="bootstrap replicates (0 disables)")
    p_diag.add_argument("--mode", choices=("exact", "approx"), default=None)
    p_diag.add_argument("--conditional", choices=("true", "false"), default=None)
    p_diag.add_argument("--mc-draws", type=int, default=None, dest="mc_draws")
    p_diag.add_argument("--info", choices=("observed", "expected"), default=None)

    p_sim = sub.add_parser("simulate", help="write scenario datasets as CSV")
    shared(p_sim, data=False)
    p_sim.add_argument("--scenario", choices=("clean", "injected", "sweep"),
                       default=None)
    p_sim.add_argument("--n", type=int, default=None, help="cluster count")
    p_sim.add_argument("--n-datasets", type=int, default=None, dest="n_datasets")
    p_sim.add_argument("--m-n", type=int, default=None, dest="m_n",
                       help="swept cluster size (sweep scenario)")
    p_sim.add_argument("--b-n", type=float, default=None, dest="b_n",
                       help="swept cluster effect (sweep scenario)")

    p_exp = sub.add_parser("experiment", help="aggregate study drivers")
    p_exp.add_argument("name", choices=("table1", "figure1"))
    shared(p_exp, data=False)
    p_exp.add_argument("--n", type=int, default=None, help="cluster count")
    p_exp.add_argument("--n-datasets", type=int, default=None, dest="n_datasets")
    p_exp.add_argument("--S", type=int, default=None, dest="S")
    return parser


def _load_config(path: str) -> dict:
    cfg = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValidationError(
                        f"{path}: line {lineno} is not of the form key = value"
                    )
                key, value = line.split("=", 1)
                cfg[key.strip().replace("-", "_")] = value.strip()
    except OSError as err:
        raise ValidationError(f"cannot read config {path}: {err}") from None
    return cfg


_BOOL = {"true": True, "false": False, "1": True, "0": False}


def _resolve(args, cfg: dict, key: str, default, kind=str):
    value = getattr(args, key, None)
    if value is not None:
        return _BOOL[value] if kind is bool and isinstance(value, str) else value
    if key in cfg:
        raw = cfg[key]
        if kind is bool:
            if raw.lower() not in _BOOL:
                raise ValidationError(f"config {key}: expected true or false, got {raw!r}")
            return _BOOL[raw.lower()]
        try:
            return kind(raw)
        except ValueError:
            raise ValidationError(f"config {key}: cannot parse {raw!r}") from None
    return default


def _threads_default() -> int:
    env = os.environ.get("COOKSCALE_THREADS")
    if env is None:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        raise ValidationError(f"COOKSCALE_THREADS is not an integer: {env!r}") from None


def _read_data(args, cfg):
    path = _resolve(args, cfg, "data", None)
    model = _resolve(args, cfg, "model", None)
    if path is None:
        raise ValidationError("--data is required")
    if model is None:
        raise ValidationError("--model is required (lm or lmm)")
    try:
        data = read_clustered(path) if model == "lmm" else read_cross_section(path)
    except OSError as err:
        raise ValidationError(f"cannot read {path}: {err}") from None
    return data, model


def _cmd_fit(args, cfg) -> int:
    data, model = _read_data(args, cfg)
    info = _resolve(args, cfg, "info", "observed")
    if model == "lm":
        fit = fit_ols(data, info_mode=info)
    else:
        fit = fit_lmm_em(data, info_mode=info)
    payload = json.dumps(fit.to_json_dict(), indent=2) + "\n"
    out = _resolve(args, cfg, "out", None)
    if out:
        with open(out, "w") as fh:
            fh.write(payload)
    else:
        sys.stdout.write(payload)
    return 0


def _pick_subsets(spec: str | None, data, model: str):
    if spec is None:
        spec = "clusters" if model == "lmm" else "singletons"
    if spec in ("singletons", "clusters"):
        if spec == "clusters" and model == "lm":
            raise ValidationError("the lm model has no clusters; use singletons")
        return enumerate_subsets(data)
    return read_subsets(spec, data)


def _cmd_diagnose(args, cfg) -> int:
    data, model = _read_data(args, cfg)
    info = _resolve(args, cfg, "info", "observed")
    if model == "lm":
        fit = fit_ols(data, info_mode=info)
    else:
        fit = fit_lmm_em(data, info_mode=info, interest="beta")
    subsets = _pick_subsets(_resolve(args, cfg, "subsets", None), data, model)
    report = build_report(
        data, fit, subsets,
        n_replicates=_resolve(args, cfg, "S", 100, int),
        mode=_resolve(args, cfg, "mode", None),
        conditional=_resolve(args, cfg, "conditional", True, bool),
        seed=_resolve(args, cfg, "seed", 0, int),
        threads=_resolve(args, cfg, "threads", _threads_default(), int),
        mc_draws=_resolve(args, cfg, "mc_draws", None, int),
    )
    prefix = _resolve(args, cfg, "out", "report")
    csv_path, json_path = write_report(report, prefix)
    print(f"wrote {csv_path} and {json_path}")
    return 0


def _cmd_simulate(args, cfg) -> int:
    scenario = _resolve(args, cfg, "scenario", "clean")
    n = _resolve(args, cfg, "n", 12, int)
    kwargs = dict(
        n=n,
        scenario=scenario,
        n_datasets=_resolve(args, cfg, "n_datasets", 1, int),
        seed=_resolve(args, cfg, "seed", 0, int),
    )
    if scenario == "sweep":
        m_n = _resolve(args, cfg, "m_n", None, int)
        b_n = _resolve(args, cfg, "b_n", None, float)
        if m_n is None or b_n is None:
            raise ValidationError("sweep scenario needs --m-n and --b-n")
        kwargs["sweep"] = (m_n, b_n)
    datasets = gen_scenario(ScenarioConfig(**kwargs))
    prefix = _resolve(args, cfg, "out", "scenario")
    for d, dataset in enumerate(datasets):
        path = f"{prefix}_{d:03d}.csv"
        write_clustered(dataset, path)
        print(f"wrote {path}")
    return 0


def _cmd_experiment(args, cfg) -> int:
    name = args.name
    seed = _resolve(args, cfg, "seed", 0, int)
    threads = _resolve(args, cfg, "threads", _threads_default(), int)
    n = _resolve(args, cfg, "n", 12, int)
    n_datasets = _resolve(args, cfg, "n_datasets", 100, int)
    if name == "table1":
        out = _resolve(args, cfg, "out", "table1.csv")
        run_table1(n_datasets=n_datasets,
                   n_replicates=_resolve(args, cfg, "S", 200, int),
                   seed=seed, threads=threads, n=n, out=out)
    else:
        out = _resolve(args, cfg, "out", "figure1.csv")
        run_figure1(n_datasets=n_datasets,
                    n_replicates=_resolve(args, cfg, "S", 100, int),
                    seed=seed, threads=threads, n=n, out=out)
    print(f"wrote {out}")
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "diagnose": _cmd_diagnose,
    "simulate": _cmd_simulate,
    "experiment": _cmd_experiment,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = {}
        config_path = getattr(args, "config", None)
        if config_path:
            cfg = _load_config(config_path)
        return _COMMANDS[args.command](args, cfg)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
