"""Command-line entry point: ``stickyflow {eppf,sample,semigroup,verify,eigen} [options]``.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines, then flags; later sources win.  Every output embeds
the resolved configuration.

Exit codes: 0 success / all checks passed, 1 a check failed, 2 invalid input.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import os
import sys
import tempfile
from dataclasses import dataclass

import numpy as np

from . import forms, verify
from .paintbox import sample_mn_urn, sample_mu
from .partition import SetPartition, StickyParam, enumerate_partitions, eppf, sample_crp_labels
from .spectral_levy import LevySymbol, grid_generator

SUITES = ("identities", "intertwining", "relaxation", "moments", "atomicity")


@dataclass
class RunConfig:
    tau: float = 0.5
    symbol: str = "brownian"
    sigma: float = 1.0
    alpha: float = 1.5
    c: float = 1.0
    n: int = 2
    grid: int = 16
    t: str = "0.05,0.2,1.0"
    alpha_res: str = "0.5,2"
    samples: int = 100_000
    seed: int = 0
    out: str | None = None
    format: str = "csv"
    tol_algebraic: float = verify.TOL_ALGEBRAIC
    tol_iterative: float = verify.TOL_ITERATIVE
    solver_tol: float = 1e-10
    trunc_eps: float = 1e-10
    nu0: str = "point"

    def validate(self):
        StickyParam(self.tau)
        self.levy()
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        if self.format not in ("csv", "json"):
            raise ValueError(f"format must be csv or json, got {self.format!r}")
        if self.samples < 1:
            raise ValueError("samples must be positive")
        for v in self.t_list + self.alpha_list:
            if v < 0:
                raise ValueError("times and resolvent parameters must be nonnegative")
        if any(a == 0 for a in self.alpha_list):
            raise ValueError("resolvent parameters must be positive")

    @property
    def param(self) -> StickyParam:
        return StickyParam(self.tau)

    def levy(self) -> LevySymbol:
        if self.symbol == "brownian":
            return LevySymbol.brownian(self.sigma)
        if self.symbol == "stable":
            return LevySymbol.stable(self.alpha, self.c)
        raise ValueError(f"symbol must be brownian or stable, got {self.symbol!r}")

    @property
    def t_list(self) -> list[float]:
        return [float(v) for v in str(self.t).split(",") if v.strip()]

    @property
    def alpha_list(self) -> list[float]:
        return [float(v) for v in str(self.alpha_res).split(",") if v.strip()]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    default = _FIELDS[name].default
    if isinstance(default, bool):
        return str(value).lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return None if value in (None, "", "none") else str(value)


def read_config_file(path: str) -> dict:
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_string("[run]\n" + fh.read())
    out = {}
    for key, value in parser.items("run"):
        name = key.replace("-", "_")
        if name not in _FIELDS:
            raise ValueError(f"{path}: unknown key {key!r}")
        out[name] = _coerce(name, value)
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    for name in _FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def _atomic_write(path: str, data: bytes | str):
    mode = "wb" if isinstance(data, bytes) else "w"
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _emit(cfg: RunConfig, text: str, name: str | None = None):
    if cfg.out is None:
        sys.stdout.write(text)
        return
    path = cfg.out if name is None else os.path.join(cfg.out, name)
    _atomic_write(path, text)


def _config_line(cfg: RunConfig) -> str:
    return "# config: " + json.dumps(cfg.to_dict(), sort_keys=True) + "\n"


def cmd_eppf(cfg: RunConfig) -> int:
    p = cfg.param
    rows = [(pi, eppf(pi.sizes, p)) for pi in enumerate_partitions(cfg.n)]
    total = sum(v for _, v in rows)
    if cfg.format == "json":
        doc = {
            "config": cfg.to_dict(),
            "rows": [{"partition": pi.to_list(), "sizes": list(pi.sizes), "probability": v} for pi, v in rows],
            "total": total,
        }
        _emit(cfg, json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return 0
    lines = [_config_line(cfg).rstrip("\n"), "partition,sizes,probability"]
    for pi, v in rows:
        lines.append(f"\"{pi.to_json()}\",\"{' '.join(map(str, pi.sizes))}\",{v:.17g}")
    lines.append(f"total,,{total:.17g}")
    _emit(cfg, "\n".join(lines) + "\n")
    return 0


def cmd_sample(cfg: RunConfig, what: str) -> int:
    p = cfg.param
    rng = np.random.default_rng(cfg.seed)
    lines = [json.dumps({"config": cfg.to_dict(), "what": what}, sort_keys=True)]
    if what == "crp":
        for lab in sample_crp_labels(cfg.n, p, rng, cfg.samples):
            lines.append(json.dumps(SetPartition.from_labels(lab).to_list()))
    elif what == "urn":
        for x in sample_mn_urn(cfg.n, p, rng, size=cfg.samples):
            lines.append(json.dumps([float(v) for v in x]))
    elif what == "paintbox":
        if p.tau == 0.0:
            raise ValueError("paintbox sampling needs tau > 0: at tau = 0 the stationary measure is "
                             "Lebesgue measure, which has no atoms")
        for _ in range(cfg.samples):
            lines.append(json.dumps(sample_mu(p, cfg.trunc_eps, rng).to_dict()))
    else:
        raise ValueError(f"unknown sampler {what!r}")
    _emit(cfg, "\n".join(lines) + "\n")
    return 0


def _header(cfg: RunConfig, **extra) -> dict:
    head = {"n": cfg.n, "L": cfg.grid, "tau": cfg.tau, "symbol": cfg.levy().describe(),
            "config": cfg.to_dict()}
    head.update(extra)
    return head


def _slice_csv(f: np.ndarray) -> str:
    """CSV of f restricted to x_3 = ... = x_n = 0 (a column for n = 1, a matrix otherwise)."""
    if f.ndim == 1:
        return "x,value\n" + "".join(f"{i},{v:.17g}\n" for i, v in enumerate(f))
    sl = f[(slice(None), slice(None)) + (0,) * (f.ndim - 2)]
    head = "x1\\x2," + ",".join(str(j) for j in range(sl.shape[1])) + "\n"
    return head + "".join(f"{i}," + ",".join(f"{v:.17g}" for v in row) + "\n" for i, row in enumerate(sl))


def cmd_semigroup(cfg: RunConfig, input_path: str) -> int:
    f, header = forms.load_array(input_path)
    if f.shape != (cfg.grid,) * cfg.n:
        raise ValueError(f"input has shape {f.shape}, config expects n={cfg.n}, L={cfg.grid}")
    ts = cfg.t_list
    if len(ts) != 1:
        raise ValueError("semigroup takes a single time via --t")
    op = forms.FormOperator(cfg.n, cfg.param, grid_generator(cfg.levy(), cfg.grid))
    out = forms.apply_semigroup(op, f, ts[0], cfg.solver_tol)
    if cfg.format == "csv":
        _emit(cfg, _config_line(cfg) + _slice_csv(out))
        return 0
    if cfg.out is None:
        raise ValueError("binary output needs --out")
    directory = os.path.dirname(os.path.abspath(cfg.out))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    os.close(fd)
    try:
        forms.save_array(tmp, out, _header(cfg, t=ts[0], input=os.path.basename(input_path)))
        os.replace(tmp + ".json", cfg.out + ".json")
        os.replace(tmp, cfg.out)
    finally:
        for leftover in (tmp, tmp + ".json"):
            if os.path.exists(leftover):
                os.unlink(leftover)
    return 0


def cmd_eigen(cfg: RunConfig) -> int:
    gen = grid_generator(cfg.levy(), cfg.grid)
    lines = [_config_line(cfg).rstrip("\n"), "k,lambda_k,psi_k,rel_err"]
    for k, lam, psi, rel in gen.eigen_table():
        lines.append(f"{k},{lam:.17g},{psi:.17g},{rel:.17g}")
    _emit(cfg, "\n".join(lines) + "\n")
    return 0


def run_suite(cfg: RunConfig, suite: str) -> tuple[list[verify.CheckReport], dict]:
    """Run one suite; returns its reports and any extra CSV artifacts by file name."""
    p, sym, L, n = cfg.param, cfg.levy(), cfg.grid, cfg.n
    if suite == "identities":
        return [verify.check_form_identities(n, p, sym, L, cfg.seed, cfg.tol_algebraic)], {}
    if suite == "intertwining":
        return [verify.check_intertwining(n, p, sym, L, cfg.t_list, cfg.alpha_list, cfg.seed,
                                          cfg.tol_iterative)], {}
    if suite == "relaxation":
        report, curve = verify.check_relaxation(n, p, sym, L, cfg.nu0, seed=cfg.seed)
        return [report], {"relaxation.csv": curve.to_csv()}
    if suite == "moments":
        res = verify.mc_moment_suite(min(n, 3), p, cfg.samples, cfg.seed, trunc_eps=cfg.trunc_eps)
        return [res.summary], {"moments.csv": res.to_csv()}
    if suite == "atomicity":
        reports = []
        if p.tau > 0:
            reports.append(verify.atomicity_suite(p, cfg.samples, cfg.seed, cfg.trunc_eps))
        reports.append(verify.atomicity_ordering(samples=cfg.samples, seed=cfg.seed))
        return reports, {}
    raise ValueError(f"unknown suite {suite!r}")


def cmd_verify(cfg: RunConfig, suite: str) -> int:
    suites = SUITES if suite == "all" else (suite,)
    reports: list[verify.CheckReport] = []
    artifacts: dict[str, str] = {}
    for s in suites:
        r, extra = run_suite(cfg, s)
        reports.extend(r)
        artifacts.update(extra)
    doc = {
        "config": cfg.to_dict(),
        "passed": all(r.passed for r in reports),
        "data": [r.to_dict(include_runtime=False) for r in reports],
        "runtime": {r.name: r.metadata.get("runtime") for r in reports},
    }
    text = "\n".join(r.to_text() for r in reports) + "\n"
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        os.makedirs(cfg.out, exist_ok=True)
        _emit(cfg, json.dumps(doc, indent=2, sort_keys=True) + "\n", f"{suite}.json")
        _emit(cfg, text, f"{suite}.txt")
        for name, body in artifacts.items():
            _emit(cfg, _config_line(cfg) + body, name)
    for r in reports:
        if not r.passed:
            key = r.failures()[0]
            print(f"FAILED {r.name}: {key} = {r.residuals[key]:.3e} "
                  f"exceeds {r.tolerance_for(key):.1e}", file=sys.stderr)
            return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="file of key = value lines")
    common.add_argument("--tau", type=float)
    common.add_argument("--symbol", choices=["brownian", "stable"])
    common.add_argument("--sigma", type=float)
    common.add_argument("--alpha", type=float, help="stable index in (1, 2]")
    common.add_argument("--c", type=float, help="stable scale")
    common.add_argument("--n", type=int)
    common.add_argument("--grid", type=int, help="lattice size L")
    common.add_argument("--t", help="time, or comma-separated times")
    common.add_argument("--alpha-res", dest="alpha_res", help="comma-separated resolvent parameters")
    common.add_argument("--samples", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--format", choices=["csv", "json"])
    common.add_argument("--tol-algebraic", dest="tol_algebraic", type=float)
    common.add_argument("--tol-iterative", dest="tol_iterative", type=float)
    common.add_argument("--solver-tol", dest="solver_tol", type=float)
    common.add_argument("--trunc-eps", dest="trunc_eps", type=float)
    common.add_argument("--nu0", help="initial law for relaxation: uniform, point[:j], cosine")

    parser = argparse.ArgumentParser(prog="stickyflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("eppf", parents=[common], help="table of EPPF values over all partitions of [n]")
    s = sub.add_parser("sample", parents=[common], help="JSON-lines samples")
    s.add_argument("what", choices=["crp", "paintbox", "urn"])
    s = sub.add_parser("semigroup", parents=[common], help="apply P^(n)_t to a stored function")
    s.add_argument("--input", required=True, help="binary array file with .json header")
    sub.add_parser("eigen", parents=[common], help="grid generator eigenvalues vs psi")
    s = sub.add_parser("verify", parents=[common], help="run verification suites")
    s.add_argument("suite", choices=SUITES + ("all",))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "eppf":
            return cmd_eppf(cfg)
        if args.command == "sample":
            return cmd_sample(cfg, args.what)
        if args.command == "semigroup":
            return cmd_semigroup(cfg, args.input)
        if args.command == "eigen":
            return cmd_eigen(cfg)
        return cmd_verify(cfg, args.suite)
    except (ValueError, OSError, forms.ConvergenceError) as exc:
        print(f"stickyflow: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
