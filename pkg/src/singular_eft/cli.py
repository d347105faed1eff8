"""Experiment runner: each figure and diagnostic as a reproducible command.

Usage::

    singular-eft <experiment> [--config file] [--set key=value ...] --out dir

Configs are flat ``key = value`` text files; ``--set`` overrides win over
the file, which wins over the experiment's defaults.  Derived defaults
(cutoff ladders, scan windows) are resolved to concrete numbers before the
configuration is hashed, so the hash column in every CSV row identifies the
exact inputs that produced it.  Each run writes three files into the output
directory: ``<experiment>.csv`` (12 significant digits, plain decimal),
``<experiment>.meta.json`` echoing the resolved configuration plus derived
results, and ``<experiment>.png`` rendering the same arrays.  Identical
configuration gives byte-identical CSV.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .analysis import born_check, fit_oscillation
from .model import CountertermSet, ModelParams
from .nlo import basis_amplitudes, calibrate_nlo, fractional_correction
from .renorm import analytic_c0, calibrate_c0, trace_limit_cycle
from .solver import PoleError, build_grid, eval_offshell, solve_k

__all__ = ["ConfigError", "main", "run"]


class ConfigError(Exception):
    """The configuration cannot be used to run the experiment."""


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        values[key.strip()] = val.strip()
    return values


@dataclass
class Resolved:
    """Fully resolved configuration: every key maps to a concrete string."""

    experiment: str
    values: dict[str, str]

    def digest(self) -> str:
        canon = "\n".join(
            f"{k} = {self.values[k]}" for k in sorted(self.values)
        )
        payload = f"{self.experiment}\n{canon}".encode()
        return hashlib.sha256(payload).hexdigest()[:12]

    def float(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError as err:
            raise ConfigError(f"{key}: not a number: {self.values[key]!r}") from err

    def int(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError as err:
            raise ConfigError(f"{key}: not an integer: {self.values[key]!r}") from err

    def floats(self, key: str) -> list[float]:
        raw = self.values[key].replace(",", " ").split()
        try:
            return [float(tok) for tok in raw]
        except ValueError as err:
            raise ConfigError(f"{key}: not a number list: {self.values[key]!r}") from err

    def params(self) -> ModelParams:
        try:
            return ModelParams(
                lam=self.float("lam"),
                g=self.float("g"),
                big_m=self.float("big_m"),
                reduced_mass=self.float("reduced_mass"),
                l=self.int("l"),
            )
        except ValueError as err:
            raise ConfigError(str(err)) from err


@dataclass
class ExperimentResult:
    header: list[str]
    rows: list[tuple]
    meta: dict
    draw: Callable


_COMMON = {
    "g": "0",
    "big_m": "1",
    "reduced_mass": "1",
    "nodes_per_panel": "40",
    "seed": "0",
}


def _geom_ladder(spec: list[float], what: str) -> np.ndarray:
    if len(spec) != 3 or spec[0] <= 0 or spec[1] <= spec[0] or spec[2] < 2:
        raise ConfigError(f"{what}: expected 'lo hi npoints' with 0 < lo < hi")
    return np.geomspace(spec[0], spec[1], int(spec[2]))


def _check_momenta(momenta, cutoffs, what: str):
    if len(momenta) == 0:
        raise ConfigError(f"{what}: empty momentum list")
    low = min(cutoffs)
    for p in momenta:
        if not 0.0 < p < low / 10.0:
            raise ConfigError(
                f"{what}: momentum {p:g} must sit below min(cutoff)/10 = {low / 10:g}"
            )


# ---------------------------------------------------------------- experiments


def _offshell_scan(cfg: Resolved, renormalized: bool) -> ExperimentResult:
    params = cfg.params()
    p = cfg.float("p")
    cutoffs = cfg.floats("cutoffs")
    if not cutoffs:
        raise ConfigError("cutoffs: empty list")
    _check_momenta([p], cutoffs, cfg.experiment)
    xs = np.geomspace(cfg.float("x_min"), cfg.float("x_max"), cfg.int("x_points"))
    if xs[-1] * p >= min(cutoffs):
        raise ConfigError("x_max: off-shell momentum p*x must stay below min(cutoff)")

    npp = cfg.int("nodes_per_panel")
    curves, c_values, onshell = {}, {}, {}
    for cu in cutoffs:
        c_lo = (
            analytic_c0(params, cu, cfg.float("lambda_star")) if renormalized else 0.0
        )
        grid = build_grid(cu, p, nodes_per_panel=npp)
        sol = solve_k(params, CountertermSet(cutoff=cu, c_lo=c_lo), p, grid)
        curves[cu] = eval_offshell(sol, p * xs)
        c_values[cu] = c_lo
        onshell[cu] = sol.onshell_value

    rows = [
        (cu, float(x), float(k))
        for cu in cutoffs
        for x, k in zip(xs, curves[cu])
    ]
    meta = {"onshell": {_fmt(cu): onshell[cu] for cu in cutoffs}}
    if renormalized:
        meta["c_lo"] = {_fmt(cu): c_values[cu] for cu in cutoffs}

    def draw(ax):
        for cu in cutoffs:
            ax.plot(xs, curves[cu], label=f"cutoff {cu:g}")
        ax.set_xscale("log")
        ax.axhline(0.0, color="0.7", lw=0.8)
        ax.set_xlabel("x = p'/p")
        ax.set_ylabel("k(px, p)")
        ax.set_title(cfg.experiment)
        ax.legend(fontsize=8)

    return ExperimentResult(["cutoff", "x", "k"], rows, meta, draw)


def _run_lo_cutoff_scan(cfg: Resolved) -> ExperimentResult:
    return _offshell_scan(cfg, renormalized=False)


def _run_lo_renormalized(cfg: Resolved) -> ExperimentResult:
    return _offshell_scan(cfg, renormalized=True)


def _run_rg_flow(cfg: Resolved) -> ExperimentResult:
    params = cfg.params()
    lo, hi = cfg.float("cutoff_lo"), cfg.float("cutoff_hi")
    datum = (cfg.float("datum_p"), cfg.float("datum_k"))
    _check_momenta([datum[0]], [lo], cfg.experiment)
    traj = trace_limit_cycle(
        params,
        datum,
        (lo, hi),
        samples_per_decade=cfg.int("samples_per_decade"),
    )
    n = 2 * params.l + 1
    rows = []
    for cu, c in zip(traj.cutoffs, traj.couplings):
        try:
            c_ana = analytic_c0(params, float(cu), traj.lambda_star)
        except PoleError:
            c_ana = math.nan
        rows.append((float(cu), float(c), float(cu**n * c), c_ana, float(cu**n * c_ana)))
    meta = {
        "lambda_star": traj.lambda_star,
        "branch_id": traj.branch_id,
        "poles": list(traj.poles),
    }

    def draw(ax):
        cuts = traj.cutoffs
        ax.plot(cuts, traj.reduced_couplings, "o", ms=3, label="calibrated")
        ax.plot(cuts, [r[4] for r in rows], "-", lw=1, label="closed-form running")
        for pole in traj.poles:
            ax.axvline(pole, color="0.6", ls="--", lw=0.8)
        ax.set_xscale("log")
        ax.set_ylim(-12 * params.lam, 12 * params.lam)
        ax.set_xlabel("cutoff")
        ax.set_ylabel("reduced coupling")
        ax.set_title("limit cycle")
        ax.legend(fontsize=8)

    return ExperimentResult(
        ["cutoff", "c_numeric", "y_numeric", "c_analytic", "y_analytic"],
        rows,
        meta,
        draw,
    )


def _run_nlo_x_scan(cfg: Resolved) -> ExperimentResult:
    params = cfg.params()
    data = [
        (cfg.float("datum_p"), cfg.float("datum_k")),
        (cfg.float("datum2_p"), cfg.float("datum2_k")),
    ]
    px = cfg.float("x_momentum")
    with_d = _geom_ladder(cfg.floats("cutoff_range"), "cutoff_range")
    without_d = _geom_ladder(cfg.floats("extended_range"), "extended_range")
    _check_momenta(
        [data[0][0], data[1][0], px],
        [with_d.min(), without_d.min()],
        cfg.experiment,
    )
    npp = cfg.int("nodes_per_panel")

    rows = []
    for cu in with_d:
        cu = float(cu)
        c_lo = calibrate_c0(params, cu, data[0], nodes_per_panel=npp)
        c1, d1 = calibrate_nlo(params, cu, data, nodes_per_panel=npp)
        cts = CountertermSet(cutoff=cu, c_lo=c_lo, c_nlo=c1, d_nlo=d1)
        rows.append(("with_d", cu, fractional_correction(params, cts, px, cu, npp)))
    for cu in without_d:
        cu = float(cu)
        c_lo = calibrate_c0(params, cu, data[0], nodes_per_panel=npp)
        cts0 = CountertermSet(cutoff=cu, c_lo=c_lo)
        b = basis_amplitudes(params, cts0, data[0][0], nodes_per_panel=npp)
        c1 = -params.g * b.from_long_range / b.from_c
        cts = CountertermSet(cutoff=cu, c_lo=c_lo, c_nlo=c1)
        rows.append(("without_d", cu, fractional_correction(params, cts, px, cu, npp)))

    xs_with = [r[2] for r in rows if r[0] == "with_d"]
    xs_without = [r[2] for r in rows if r[0] == "without_d"]
    meta = {
        "with_d": {"mean": float(np.mean(xs_with)), "span": float(np.ptp(xs_with))},
        "without_d": {
            "mean": float(np.mean(xs_without)),
            "span": float(np.ptp(xs_without)),
        },
    }

    def draw(ax):
        ax.plot(with_d, xs_with, "o-", ms=3, label="C and D fitted")
        ax.plot(without_d, xs_without, "s--", ms=3, label="C only")
        ax.set_xscale("log")
        ax.set_xlabel("cutoff")
        ax.set_ylabel(f"|k1/k0| at p = {px:g}")
        ax.set_title("fractional correction vs cutoff")
        ax.legend(fontsize=8)

    return ExperimentResult(["series", "cutoff", "x_value"], rows, meta, draw)


def _run_nlo_energy_scan(cfg: Resolved) -> ExperimentResult:
    params = cfg.params()
    data = [
        (cfg.float("datum_p"), cfg.float("datum_k")),
        (cfg.float("datum2_p"), cfg.float("datum2_k")),
    ]
    cutoffs = cfg.floats("cutoffs")
    momenta = cfg.floats("momenta")
    if not cutoffs:
        raise ConfigError("cutoffs: empty list")
    if not momenta:
        raise ConfigError("momenta: empty list")
    _check_momenta(momenta + [d[0] for d in data], cutoffs, cfg.experiment)
    npp = cfg.int("nodes_per_panel")

    rows = []
    for cu in cutoffs:
        c_lo = calibrate_c0(params, cu, data[0], nodes_per_panel=npp)
        c1, d1 = calibrate_nlo(params, cu, data, nodes_per_panel=npp)
        cts = CountertermSet(cutoff=cu, c_lo=c_lo)
        for p in momenta:
            grid = build_grid(cu, p, nodes_per_panel=npp)
            k0 = solve_k(params, cts, p, grid).onshell_value
            b = basis_amplitudes(params, cts, p, nodes_per_panel=npp)
            k1 = b.total(params.g, c1, d1)
            rows.append((cu, p, float(k0), float(k0 + k1)))

    per_p = {}
    for cu, p, k0, kt in rows:
        per_p.setdefault(p, []).append(kt)
    spread = {
        _fmt(p): float((max(v) - min(v)) / abs(np.mean(v))) for p, v in per_p.items()
    }
    meta = {"cross_cutoff_spread_total": spread}

    def draw(ax):
        for cu in cutoffs:
            ps = [r[1] for r in rows if r[0] == cu]
            ax.plot(ps, [r[2] for r in rows if r[0] == cu], "--", lw=1)
            ax.plot(
                ps,
                [r[3] for r in rows if r[0] == cu],
                "o-",
                ms=3,
                label=f"cutoff {cu:g}",
            )
        ax.set_xlabel("p")
        ax.set_ylabel("k(p, p)")
        ax.set_title("on-shell amplitude: dashed LO, solid LO+NLO")
        ax.legend(fontsize=8)

    return ExperimentResult(["cutoff", "p", "k_lo", "k_total"], rows, meta, draw)


def _run_born_check(cfg: Resolved) -> ExperimentResult:
    params = cfg.params()
    p, cutoff = cfg.float("p"), cfg.float("cutoff")
    lams = cfg.floats("lams")
    if not lams:
        raise ConfigError("lams: empty list")
    _check_momenta([p], [cutoff], cfg.experiment)

    rows = []
    for lam in lams:
        rep = born_check(
            ModelParams(lam=lam, l=params.l, reduced_mass=params.reduced_mass),
            p,
            cutoff,
            nodes_per_panel=cfg.int("nodes_per_panel"),
        )
        rows.append(
            (
                lam,
                rep.k_onshell,
                rep.first_born,
                rep.second_born,
                abs(rep.k_onshell - rep.first_born),
                abs(rep.k_onshell - rep.first_born - rep.second_born),
                rep.residual_power,
            )
        )
    meta = {"residual_power": {_fmt(r[0]): r[6] for r in rows}}

    def draw(ax):
        ls = [r[0] for r in rows]
        ax.loglog(ls, [r[4] for r in rows], "o-", label="|k - born1|")
        ax.loglog(ls, [r[5] for r in rows], "s-", label="|k - born1 - born2|")
        ax.loglog(ls, [v**2 for v in ls], ":", color="0.5", label="coupling^2")
        ax.set_xlabel("coupling")
        ax.set_ylabel("residual")
        ax.set_title("Born-series onset")
        ax.legend(fontsize=8)

    return ExperimentResult(
        [
            "lam",
            "k_onshell",
            "first_born",
            "second_born",
            "residual_first",
            "residual_second",
            "residual_power",
        ],
        rows,
        meta,
        draw,
    )


def _run_oscillation_fit(cfg: Resolved) -> ExperimentResult:
    params = cfg.params()
    p, cutoff = cfg.float("p"), cfg.float("cutoff")
    _check_momenta([p], [cutoff], cfg.experiment)
    c_lo = analytic_c0(params, cutoff, cfg.float("lambda_star"))
    grid = build_grid(cutoff, p, nodes_per_panel=cfg.int("nodes_per_panel"))
    sol = solve_k(params, CountertermSet(cutoff=cutoff, c_lo=c_lo), p, grid)
    xs = np.geomspace(cfg.float("x_min"), cfg.float("x_max"), cfg.int("x_points"))
    ks = eval_offshell(sol, p * xs)
    fit = fit_oscillation(np.column_stack([xs, ks]))
    model = fit.amplitude * xs**fit.envelope_power * np.cos(
        fit.nu_fit * np.log(xs) + fit.phase_fit
    )
    rows = [(float(x), float(k), float(m)) for x, k, m in zip(xs, ks, model)]
    meta = {
        "nu_fit": fit.nu_fit,
        "envelope_power": fit.envelope_power,
        "phase_fit": fit.phase_fit,
        "amplitude": fit.amplitude,
        "residual": fit.residual,
        "lambda_star_estimate": fit.lambda_star(p),
        "fit_window": list(fit.fit_window),
    }

    def draw(ax):
        ax.plot(xs, ks, "o", ms=2.5, label="solved")
        ax.plot(xs, model, "-", lw=1, label="fitted oscillation")
        ax.set_xscale("log")
        ax.axhline(0.0, color="0.7", lw=0.8)
        ax.set_xlabel("x = p'/p")
        ax.set_ylabel("k(px, p)")
        ax.set_title("log-periodic asymptotics")
        ax.legend(fontsize=8)

    return ExperimentResult(["x", "k", "k_model"], rows, meta, draw)


# ---------------------------------------------------------------- registry


def _finalize_offshell(values: dict[str, str]):
    p = float(values["p"])
    if not values.get("cutoffs"):
        ladder = np.geomspace(50.0 * p, 5000.0 * p, 5)
        values["cutoffs"] = " ".join(_fmt(float(c)) for c in ladder)
    if not values.get("x_max"):
        low = min(float(tok) for tok in values["cutoffs"].replace(",", " ").split())
        values["x_max"] = _fmt(0.95 * low / p)


def _finalize_rg_flow(values: dict[str, str]):
    if not values.get("datum_k"):
        params = ModelParams(
            lam=float(values["lam"]),
            l=int(values["l"]),
            reduced_mass=float(values["reduced_mass"]),
        )
        ref = math.sqrt(float(values["cutoff_lo"]) * float(values["cutoff_hi"]))
        c = analytic_c0(params, ref, float(values["lambda_star"]))
        p_d = float(values["datum_p"])
        grid = build_grid(ref, p_d, nodes_per_panel=int(values["nodes_per_panel"]))
        sol = solve_k(params, CountertermSet(cutoff=ref, c_lo=c), p_d, grid)
        values["datum_k"] = _fmt(sol.onshell_value)


def _finalize_oscillation(values: dict[str, str]):
    if not values.get("x_max"):
        values["x_max"] = _fmt(
            float(values["cutoff"]) / (4.0 * float(values["p"]))
        )


_EXPERIMENTS: dict[str, tuple[dict[str, str], Callable, Callable | None]] = {
    "lo-cutoff-scan": (
        {
            **_COMMON,
            "lam": "4.25",
            "l": "1",
            "p": "0.1",
            "cutoffs": "",
            "x_min": "1.2",
            "x_max": "",
            "x_points": "160",
        },
        _run_lo_cutoff_scan,
        _finalize_offshell,
    ),
    "lo-renormalized": (
        {
            **_COMMON,
            "lam": "4.25",
            "l": "1",
            "p": "0.1",
            "lambda_star": "0.2",
            "cutoffs": "",
            "x_min": "1.2",
            "x_max": "",
            "x_points": "160",
        },
        _run_lo_renormalized,
        _finalize_offshell,
    ),
    "rg-flow": (
        {
            **_COMMON,
            "lam": "4.25",
            "l": "1",
            "lambda_star": "0.2",
            "datum_p": "0.02",
            "datum_k": "",
            "cutoff_lo": "2",
            "cutoff_hi": "200",
            "samples_per_decade": "16",
        },
        _run_rg_flow,
        _finalize_rg_flow,
    ),
    "nlo-x-scan": (
        {
            **_COMMON,
            "lam": "2",
            "g": "1",
            "big_m": "0.5",
            "l": "0",
            "datum_p": "0.1",
            "datum_k": "-1.05",
            "datum2_p": "0.15",
            "datum2_k": "-0.34",
            "x_momentum": "0.175",
            "cutoff_range": "5.5 8.5 13",
            "extended_range": "5 50 28",
        },
        _run_nlo_x_scan,
        None,
    ),
    "nlo-energy-scan": (
        {
            **_COMMON,
            "lam": "2",
            "g": "1",
            "big_m": "0.5",
            "l": "0",
            "datum_p": "0.1",
            "datum_k": "-1.05",
            "datum2_p": "0.15",
            "datum2_k": "-0.34",
            "cutoffs": "5.5 6.5 7.5 8.5",
            "momenta": "0.02 0.04 0.06 0.08 0.1 0.12 0.14 0.16 0.18 0.2",
        },
        _run_nlo_energy_scan,
        None,
    ),
    "born-check": (
        {
            **_COMMON,
            "lam": "0.001",
            "l": "0",
            "p": "0.1",
            "cutoff": "10",
            "lams": "0.001 0.002 0.004 0.008",
        },
        _run_born_check,
        None,
    ),
    "oscillation-fit": (
        {
            **_COMMON,
            "lam": "4.25",
            "l": "1",
            "lambda_star": "0.2",
            "p": "0.1",
            "cutoff": "2000",
            "x_min": "20",
            "x_max": "",
            "x_points": "320",
        },
        _run_oscillation_fit,
        _finalize_oscillation,
    ),
}


def resolve(experiment: str, file_values: dict[str, str], overrides: dict[str, str]) -> Resolved:
    if experiment not in _EXPERIMENTS:
        known = ", ".join(sorted(_EXPERIMENTS))
        raise ConfigError(f"unknown experiment {experiment!r}; expected one of {known}")
    defaults, _, finalize = _EXPERIMENTS[experiment]
    values = dict(defaults)
    for source in (file_values, overrides):
        for key, val in source.items():
            if key not in defaults:
                raise ConfigError(f"unknown config key {key!r} for {experiment}")
            values[key] = val
    if finalize is not None:
        finalize(values)
    return Resolved(experiment=experiment, values=values)


# ---------------------------------------------------------------- output


def _write_outputs(out_dir: Path, cfg: Resolved, result: ExperimentResult) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    digest = cfg.digest()
    try:
        csv_path = out_dir / f"{cfg.experiment}.csv"
        lines = [",".join(result.header + ["config_hash"])]
        lines.extend(
            ",".join([_fmt(cell) for cell in row] + [digest]) for row in result.rows
        )
        csv_path.write_text("\n".join(lines) + "\n")
        written.append(csv_path)

        meta_path = out_dir / f"{cfg.experiment}.meta.json"
        meta = {
            "experiment": cfg.experiment,
            "config": dict(sorted(cfg.values.items())),
            "config_hash": digest,
            "results": result.meta,
        }
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        written.append(meta_path)

        fig, ax = plt.subplots(figsize=(6.4, 4.2), dpi=120)
        result.draw(ax)
        fig.tight_layout()
        png_path = out_dir / f"{cfg.experiment}.png"
        fig.savefig(png_path)
        plt.close(fig)
        written.append(png_path)
    except Exception:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return written


def run(experiment: str, config_path: str | None, overrides: dict[str, str], out_dir: str) -> list[Path]:
    """Resolve the configuration, run the experiment, write its artifacts."""
    file_values: dict[str, str] = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {config_path}")
        file_values = parse_config_text(path.read_text())
    cfg = resolve(experiment, file_values, overrides)
    _, runner, _ = _EXPERIMENTS[experiment]
    result = runner(cfg)
    return _write_outputs(Path(out_dir), cfg, result)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="singular-eft",
        description="run one of the registered scattering experiments",
    )
    parser.add_argument("experiment", help=", ".join(sorted(_EXPERIMENTS)))
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config value (repeatable)",
    )
    parser.add_argument("--out", required=True, help="output directory")
    args = parser.parse_args(argv)

    overrides = {}
    for item in args.overrides:
        key, sep, val = item.partition("=")
        if not sep or not key:
            print(f"--set takes KEY=VALUE, got {item!r}", file=sys.stderr)
            return 2
        overrides[key.strip()] = val.strip()

    try:
        written = run(args.experiment, args.config, overrides, args.out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # numerical failure: partial outputs already removed
        print(f"{type(err).__name__}: {err}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
