"""Independent reference for the deterministic OPF on a bundled case.

Solves the plain AC OPF (no margins, routers at identity) with SciPy's trust-constr
on a bus-admittance formulation and writes the result as a golden file for
the Rust test suite:

    python3 tools/reference_opf.py cases/ieee33.m cases/ieee33.sidecar.json \
        crates/core/tests/data/ieee33_opf_reference.json
"""

import json
import re
import sys

import numpy as np
from scipy.optimize import Bounds, NonlinearConstraint, minimize


def matrix(text, name):
    body = re.search(rf"mpc\.{name}\s*=\s*\[(.*?)\];", text, re.S).group(1)
    rows = []
    for line in body.splitlines():
        line = line.split("%")[0].strip().rstrip(";")
        if line:
            rows.append([float(t) for t in line.split()])
    return np.array(rows)


def main(case_path, sidecar_path, out_path):
    text = open(case_path).read()
    base = float(re.search(r"mpc\.baseMVA\s*=\s*([\d.]+)", text).group(1))
    bus = matrix(text, "bus")
    branch = matrix(text, "branch")
    side = json.load(open(sidecar_path))

    ids = [int(b) for b in bus[:, 0]]
    idx = {b: i for i, b in enumerate(ids)}
    n = len(ids)
    y = np.zeros((n, n), dtype=complex)
    for f, t, r, x, *_rest in branch:
        if _rest[6] == 0:
            continue
        ys = 1.0 / complex(r, x)
        i, j = idx[int(f)], idx[int(t)]
        y[i, i] += ys
        y[j, j] += ys
        y[i, j] -= ys
        y[j, i] -= ys

    pl = bus[:, 2] / base
    ql = bus[:, 3] / base
    pw = np.zeros(n)
    qw = np.zeros(n)
    for r in side["renewable_dgs"]:
        pw[idx[r["bus"]]] += r["p_forecast_mw"] / base
        qw[idx[r["bus"]]] += r["power_factor_tan"] * r["p_forecast_mw"] / base
    dgs = side["dispatchable_dgs"]
    g = len(dgs)
    gbus = [idx[d["bus"]] for d in dgs]
    ref = idx[side["reference_bus"]]

    # x = [theta (n), v (n), pg (g), qg (g)], generator outputs in MW for scaling
    def split(x):
        return x[:n], x[n:2 * n], x[2 * n:2 * n + g], x[2 * n + g:]

    def cost(x):
        _, _, pg, _ = split(x)
        return sum(d["cost"]["c2"] * p * p + d["cost"]["c1"] * p + d["cost"]["c0"] for d, p in zip(dgs, pg))

    def balance(x):
        th, v, pg, qg = split(x)
        vc = v * np.exp(1j * th)
        s = vc * np.conj(y @ vc)
        inj_p = pw - pl
        inj_q = qw - ql
        for k, b in enumerate(gbus):
            inj_p[b] += pg[k] / base
            inj_q[b] += qg[k] / base
        return np.concatenate([inj_p - s.real, inj_q - s.imag, [th[ref]]])

    lo = np.concatenate([np.full(n, -np.pi / 2), bus[:, 12], [d["p_min_mw"] for d in dgs], [d["q_min_mvar"] for d in dgs]])
    hi = np.concatenate([np.full(n, np.pi / 2), bus[:, 11], [d["p_max_mw"] for d in dgs], [d["q_max_mvar"] for d in dgs]])
    share = (pl.sum() - pw.sum()) * base / g
    x0 = np.concatenate([np.zeros(n), np.ones(n), np.full(g, share), np.zeros(g)])
    def balance_jac(x):
        th, v, _, _ = split(x)
        vc = v * np.exp(1j * th)
        ibus = y @ vc
        dv = np.diag(vc)
        ds_dth = 1j * dv @ np.conj(np.diag(ibus) - y @ dv)
        ds_dv = dv @ np.conj(y @ np.diag(np.exp(1j * th))) + np.diag(np.exp(1j * th) * np.conj(ibus))
        jac = np.zeros((2 * n + 1, 2 * n + 2 * g))
        jac[:n, :n], jac[:n, n:2 * n] = -ds_dth.real, -ds_dv.real
        jac[n:2 * n, :n], jac[n:2 * n, n:2 * n] = -ds_dth.imag, -ds_dv.imag
        for k, b in enumerate(gbus):
            jac[b, 2 * n + k] = 1.0 / base
            jac[n + b, 2 * n + g + k] = 1.0 / base
        jac[2 * n, ref] = 1.0
        return jac

    def grad(x):
        _, _, pg, _ = split(x)
        gr = np.zeros_like(x)
        gr[2 * n:2 * n + g] = [2 * d["cost"]["c2"] * p + d["cost"]["c1"] for d, p in zip(dgs, pg)]
        return gr

    res = minimize(cost, x0, jac=grad, method="trust-constr", bounds=Bounds(lo, hi),
                   constraints=[NonlinearConstraint(balance, 0.0, 0.0, jac=balance_jac)],
                   options={"gtol": 1e-10, "xtol": 1e-14, "maxiter": 5000})
    if res.status not in (1, 2):
        sys.exit(f"trust-constr failed: {res.message}")
    th, v, pg, qg = split(res.x)
    out = {
        "solver": "scipy trust-constr on a bus-admittance AC OPF",
        "cost": float(cost(res.x)),
        "max_balance_residual": float(np.abs(balance(res.x)).max()),
        "v": v.tolist(),
        "p_g_mw": pg.tolist(),
    }
    with open(out_path, "w") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")
    print(f"cost {cost(res.x):.6f}, residual {out['max_balance_residual']:.2e}")


if __name__ == "__main__":
    main(*sys.argv[1:4])
