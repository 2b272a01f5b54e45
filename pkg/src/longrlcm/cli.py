"""Batch command line: simulate, fit, diagnose, waic and recover."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import geweke_z, iact, summarize_chain, waic
from .dist import RngStream
from .identifiability import check_identifiability
from .io import load_chain, load_dataset, read_config, save_chain, save_dataset
from .model import MeasurementParams, ModelSpec, StructuralParams
from .sampler import ChainConfig, run_chain
from .simulation import (
    RECOVERY_COLUMNS,
    STREAM_CHAIN,
    STREAM_DATA,
    STREAM_MISSING,
    STREAM_PARAMS,
    ScenarioSpec,
    apply_missingness,
    generate_data,
    generate_params,
    recovery_metrics,
    run_replication,
)

logger = logging.getLogger("longrlcm")



def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return repr(float(x))


def _chain_config(cfg: dict, seed: int | None) -> ChainConfig:
    c = ChainConfig(**cfg.get("chain", {}))
    return c if seed is None else replace(c, seed=seed)


def _scenario(cfg: dict, seed: int | None) -> ScenarioSpec:
    if "scenario" not in cfg:
        raise ValueError("config needs a [scenario] section")
    s = ScenarioSpec(**cfg["scenario"])
    return s if seed is None else replace(s, seed=seed)


def _model_spec(cfg: dict, M, D: int) -> ModelSpec:
    m = dict(cfg.get("model", {}))
    m.pop("categories", None)
    if "K" not in m or "L" not in m:
        raise ValueError("[model] needs K and L")
    return ModelSpec(M=tuple(M), D=D, **m)


def _categories(cfg: dict):
    text = cfg.get("model", {}).get("categories")
    if text is None:
        return None
    vals = [int(v) for v in text.replace(",", " ").split()]
    return vals[0] if len(vals) == 1 else vals


def _save_truth(path: Path, meas: MeasurementParams, structural: StructuralParams, alpha) -> None:
    np.savez(path, beta=meas.beta, delta=meas.delta, kappa=meas.kappa, omega=meas.omega,
             gamma=structural.gamma, lam=structural.lam, xi=structural.xi, R=structural.R, alpha=alpha)


def cmd_simulate(cfg, args, out: Path) -> list[str]:
    sc = _scenario(cfg, args.seed)
    root = RngStream(sc.seed)
    meas, structural = generate_params(sc, root.child(STREAM_PARAMS).generator())
    data, alpha = generate_data((meas, structural), sc, root.child(STREAM_DATA).generator())
    data = apply_missingness(data, sc.missing_rate, root.child(STREAM_MISSING).generator())
    save_dataset(data, out / "responses.csv", out / "covariates.csv")
    _save_truth(out / "truth.npz", meas, structural, alpha)
    return ["responses.csv", "covariates.csv", "truth.npz"]


def _estimates_for_report(chain, spec: ModelSpec):
    s = summarize_chain(chain)
    p = s.mean
    meas = MeasurementParams(p.beta * (p.delta == 1), p.kappa, p.delta, float(chain.draws["omega"].mean()))
    structural = StructuralParams(p.gamma, p.lam, p.xi, p.R)
    alpha = spec.profiles[chain.alpha_counts.argmax(axis=2)]
    return meas, structural, alpha


def cmd_fit(cfg, args, out: Path) -> list[str]:
    data_cfg = cfg.get("data", {})
    if "responses" not in data_cfg or "covariates" not in data_cfg:
        raise ValueError("[data] needs responses and covariates paths")
    for key in ("responses", "covariates"):
        if not Path(data_cfg[key]).is_file():
            raise FileNotFoundError(f"{key} file not found: {data_cfg[key]}")
    data = load_dataset(data_cfg["responses"], data_cfg["covariates"], _categories(cfg))
    spec = _model_spec(cfg, data.M, data.D)
    config = _chain_config(cfg, args.seed)
    chain = run_chain(data, spec, config, RngStream(config.seed, STREAM_CHAIN).generator())
    save_chain(chain, out / "chain.rlcm")
    _write_csv(out / "acceptance.csv", ["item", "kappa_acceptance"],
               [[j + 1, _fmt(r)] for j, r in enumerate(chain.kappa_accept_rate)])
    meas, structural, alpha = _estimates_for_report(chain, spec)
    report = check_identifiability(meas, structural, data.X, spec, alpha)
    (out / "identifiability.txt").write_text("\n".join(report.lines()) + "\n")
    return ["chain.rlcm", "acceptance.csv", "identifiability.txt"]


def _flat_series(chain):
    """(name, index, series) for every free scalar parameter."""
    d = chain.draws
    for name in ("beta", "lam", "xi", "R", "gamma", "kappa", "omega"):
        arr = d[name]
        flat = arr.reshape(arr.shape[0], -1)
        for i in range(flat.shape[1]):
            x = flat[:, i]
            if np.all(np.isfinite(x)) and np.ptp(x) > 0:
                yield name, np.unravel_index(i, arr.shape[1:]) if arr.ndim > 1 else (), x


def cmd_diagnose(cfg, args, out: Path) -> list[str]:
    dcfg = cfg.get("diagnose", {})
    if "chain" not in dcfg:
        raise ValueError("[diagnose] needs a chain path")
    chain = load_chain(dcfg["chain"])
    level = dcfg.get("level", 0.95)
    rows = []
    for name, idx, x in _flat_series(chain):
        if x.size < 100:
            continue
        tau = iact(x)
        rows.append([name, "-".join(str(i + 1) for i in idx), _fmt(geweke_z(x)), _fmt(tau), _fmt(x.size / tau)])
    _write_csv(out / "convergence.csv", ["parameter", "index", "geweke_z", "iact", "ess"], rows)

    s = summarize_chain(chain, level)
    srows = []
    for name in ("beta", "lam", "xi", "R"):
        mean = getattr(s.mean, name)
        for idx in np.ndindex(mean.shape):
            srows.append([name, "-".join(str(i + 1) for i in idx), _fmt(mean[idx]), _fmt(s.lower[name][idx]),
                          _fmt(s.upper[name][idx]), int(s.zero_in_ci[name][idx])])
    for idx in np.ndindex(s.delta_mean.shape):
        srows.append(["delta", "-".join(str(i + 1) for i in idx), _fmt(s.delta_mean[idx]), "", "",
                      int(s.mean.delta[idx])])
    _write_csv(out / "summary.csv", ["parameter", "index", "mean", "lower", "upper", "flag"], srows)

    n_out = sum(abs(float(r[2])) > 1.96 for r in rows)
    text = [
        f"draws: {chain.n_draws}",
        f"parameters checked: {len(rows)}",
        f"geweke |z| > 1.96: {n_out} ({n_out / max(len(rows), 1):.1%})",
        f"mean ESS: {np.mean([float(r[4]) for r in rows]) if rows else float('nan'):.1f}",
        f"interval level: {level} (type-7 quantiles); flag = zero inside interval (delta: posterior mode)",
    ]
    (out / "diagnostics.txt").write_text("\n".join(text) + "\n")
    return ["convergence.csv", "summary.csv", "diagnostics.txt"]


def cmd_waic(cfg, args, out: Path) -> list[str]:
    paths = [p.strip() for p in cfg.get("waic", {}).get("chains", "").split(",") if p.strip()]
    if not paths:
        raise ValueError("[waic] needs a comma-separated list of chain paths")
    rows = []
    for p in paths:
        chain = load_chain(p)
        w, lppd, pw = waic(chain.draws["loglik"])
        rows.append((w, [p, chain.spec.K, chain.spec.L, _fmt(w), _fmt(lppd), _fmt(pw)]))
    rows.sort(key=lambda r: r[0])
    _write_csv(out / "waic.csv", ["chain", "K", "L", "waic", "lppd", "p_waic"], [r[1] for r in rows])
    return ["waic.csv"]


def _one_replication(args):
    truth, chain = run_replication(*args)
    return truth, summarize_chain(chain).mean


def cmd_recover(cfg, args, out: Path) -> list[str]:
    sc = _scenario(cfg, args.seed)
    config = _chain_config(cfg, None)
    jobs = [(sc, config, r) for r in range(sc.replications)]
    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(_one_replication, jobs))
    else:
        results = [_one_replication(j) for j in jobs]
    report = recovery_metrics([r[0] for r in results], [r[1] for r in results], sc.model_spec())
    rows = [[i + 1] + [_fmt(m[c]) for c in RECOVERY_COLUMNS] for i, m in enumerate(report.per_replication)]
    rows.append(["mean"] + [_fmt(report.metrics[c]) for c in RECOVERY_COLUMNS])
    _write_csv(out / "recovery.csv", ["replication", *RECOVERY_COLUMNS], rows)
    return ["recovery.csv"]


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "waic": cmd_waic,
    "recover": cmd_recover,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="longrlcm", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="INI run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker processes (recover only)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise ValueError("--seed must be a nonnegative integer")
        if args.threads < 1:
            raise ValueError("--threads must be >= 1")
        cfg, cfg_hash = read_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.command](cfg, args, args.out)
        seed = args.seed
        if seed is None:
            seed = cfg.get("scenario", cfg.get("chain", {})).get("seed", 0)
        manifest = {
            "command": args.command,
            "config": str(args.config),
            "config_sha256": cfg_hash,
            "seed": seed,
            "version": __version__,
            "outputs": outputs,
        }
        (args.out / f"manifest_{args.command}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except Exception as exc:  # every module error becomes a structured nonzero exit
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
