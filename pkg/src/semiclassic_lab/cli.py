"""Command line entry point ``semiclassic-lab``.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure,
4 failed acceptance check (``--check``).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericalError
from .harness import check_report, fit_slope, load_config, run_pair, sweep
from .io import dump, load
from .metrics import hs_norm, norm_report, sobolev_norm
from .residuals import kinetic_residual, remainder_operator_C, symbol_bound_check
from .states import DensityOperator, build_initial_state

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default is exit 2 too; keep the usage text
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="semiclassic-lab", description="Hartree/Vlasov semiclassical comparison lab")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", required=True, help="TOML file, or a preset name: standard, free")
        sp.add_argument("--out", help="directory for reports")

    r = sub.add_parser("run", help="one Hartree/Vlasov pair")
    with_config(r)
    r.add_argument("--eps-index", type=int, default=0)

    s = sub.add_parser("sweep", help="all eps of a config, with slope fits")
    with_config(s)
    s.add_argument("--workers", type=int)
    s.add_argument("--check", action="store_true", help="exit 4 unless all slopes lie in the config's band")

    rs = sub.add_parser("residuals", help="kinetic and remainder residual scaling, symbol bounds")
    with_config(rs)

    n = sub.add_parser("norms", help="norm report of a dump file")
    n.add_argument("--in", dest="inp", required=True)
    n.add_argument("--out")

    d = sub.add_parser("dump", help="write the initial state of a config to a binary dump")
    d.add_argument("--config", required=True)
    d.add_argument("--eps-index", type=int, default=0)
    d.add_argument("--what", choices=("operator", "wigner"), default="operator")
    d.add_argument("--out", required=True, help="output file")

    ld = sub.add_parser("load", help="summarize a binary dump")
    ld.add_argument("--in", dest="inp", required=True)
    return p


def _emit(obj: dict, out: str | None, name: str) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=float)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / name).write_text(text)
    print(text)


def _cmd_run(a) -> int:
    cfg = load_config(a.config)
    if not 0 <= a.eps_index < len(cfg.N):
        raise ConfigurationError(f"eps index {a.eps_index} out of range for {len(cfg.N)} values")
    res = run_pair(cfg, a.eps_index, keep_snapshots=False)
    _emit(res.summary(), a.out, "run.json")
    return EXIT_OK


def _cmd_sweep(a) -> int:
    cfg = load_config(a.config)
    rep = sweep(cfg, workers=a.workers)
    status = EXIT_OK
    if a.check:
        res = check_report(rep)
        for metric, r in res["families"].items():
            slope = "n/a" if r["slope"] is None else f"{r['slope']:.3f}"
            print(f"{'PASS' if r['pass'] else 'FAIL'} {metric} slope {slope} band {res['band']}", file=sys.stderr)
        if not res["pass"]:
            status = EXIT_CHECK
    if a.out:
        rep.write(a.out)
    else:
        print(rep.to_json())
    if not rep.complete and status == EXIT_OK:
        status = EXIT_NUMERIC
    return status


def _cmd_residuals(a) -> int:
    cfg = load_config(a.config)
    V = cfg.build_potential()
    rows = []
    for i, eps in enumerate(cfg.eps_list):
        st = build_initial_state(cfg.profile, cfg.N[i], eps, cfg.grid(i), cfg.profile_params, commutators=False)
        h = st.op.grid.h
        rows.append(
            {
                "eps": eps,
                "N": cfg.N[i],
                "kinetic_residual_per_sqrtN": hs_norm(kinetic_residual(st.op), h) / math.sqrt(cfg.N[i]),
                "remainder_C_per_sqrtN": hs_norm(remainder_operator_C(st.wigner, V), h) / math.sqrt(cfg.N[i]),
                "symbol_bounds": symbol_bound_check(eps),
            }
        )
    eps = [r["eps"] for r in rows]
    out = {
        "rows": rows,
        "slopes": {
            k: fit_slope(eps, [r[k] for r in rows]).to_dict()
            for k in ("kinetic_residual_per_sqrtN", "remainder_C_per_sqrtN")
        },
    }
    _emit(out, a.out, "residuals.json")
    return EXIT_OK


def _cmd_norms(a) -> int:
    state = load(a.inp)
    if isinstance(state, DensityOperator):
        rep = norm_report(state).to_dict()
    else:
        rep = {
            "mass": state.mass,
            "l2": state.l2_norm(),
            "sobolev": {f"{s},{w}": sobolev_norm(state, s, w) for s, w in ((0, 0), (2, 1), (2, 4))},
        }
    _emit(rep, a.out, "norms.json")
    return EXIT_OK


def _cmd_dump(a) -> int:
    cfg = load_config(a.config)
    i = a.eps_index
    st = build_initial_state(cfg.profile, cfg.N[i], cfg.eps_list[i], cfg.grid(i), cfg.profile_params, commutators=False)
    dump(st.op if a.what == "operator" else st.wigner, a.out)
    print(a.out)
    return EXIT_OK


def _cmd_load(a) -> int:
    state = load(a.inp)
    if isinstance(state, DensityOperator):
        info = {"kind": "operator", "n": state.grid.n, "L": state.grid.L, "eps": state.eps, "N": state.N,
                "trace": state.trace, "hermiticity": float(np.abs(state.kernel - state.kernel.conj().T).max())}
    else:
        info = {"kind": "phase_space", "m": state.grid.m, "n": state.grid.spatial.n, "L": state.grid.spatial.L,
                "v_max": state.grid.v_max, "eps": state.eps, "N": state.N, "mass": state.mass}
    _emit(info, None, "")
    return EXIT_OK


COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "residuals": _cmd_residuals,
    "norms": _cmd_norms,
    "dump": _cmd_dump,
    "load": _cmd_load,
}


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[a.command](a)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def cli(argv: list[str] | None = None) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
