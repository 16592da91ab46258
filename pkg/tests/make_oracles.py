"""Regenerate ``oracle_values.json`` from an independent implementation.

Reads the shipped problem files as plain JSON (no package code), integrates
the coupled Riccati, offset and cost-to-go equations backward with scipy's
DOP853 at tight tolerances, and writes the initial values. The cost-to-go
``c(t, e)`` of the offset terms is solved as its own backward system, a
different route from the forward regime probabilities used by the package.

Run with ``python3 tests/make_oracles.py`` from the repository root.
"""

import json
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

ROOT = Path(__file__).resolve().parents[1]
PROBLEMS = ROOT / "src" / "mflq" / "problems"
FILES = ("two_regime_scalar.json", "two_regime_planar.json", "null_space.json")


def load(path):
    doc = json.loads(Path(path).read_text())
    rates = np.array(doc["chain"]["rates"], float)
    L = len(rates)
    n, m = doc["dims"]["n"], doc["dims"]["m"]
    shapes = {"A": (n, n), "B": (n, m), "C": (n, n), "D": (n, m), "Q": (n, n), "S": (m, n),
              "R": (m, m), "b": (n,), "sigma": (n,), "q": (n,), "r": (m,)}
    c = {}
    for key, shp in shapes.items():
        for name in (key, key + "_bar"):
            v = np.array(doc["coefficients"].get(name, 0.0), float)
            c[name] = np.broadcast_to(v, (L,) + shp).copy() if v.ndim < len(shp) + 1 else v
    t = {}
    for key, shp in {"G": (n, n), "g": (n,)}.items():
        for name in (key, key + "_bar"):
            v = np.array(doc["terminal"].get(name, 0.0), float)
            t[name] = np.broadcast_to(v, (L,) + shp).copy() if v.ndim < len(shp) + 1 else v
    ics = [(np.array(i["x0"], float), int(i.get("regime", 0))) for i in doc["initial_conditions"]]
    return doc, rates, n, m, c, t, ics


def second(c, key):
    return c[key] + c[key + "_bar"]


def solve(path):
    doc, rates, n, m, c, term, ics = load(path)
    L = len(rates)
    T = doc["grid"]["T"]
    s = doc["grid"].get("s", 0.0)
    fam = {1: {k: c[k] for k in "ABCDQSR"}, 2: {k: second(c, k) for k in "ABCDQSR"}}
    b2, sig2 = second(c, "b"), second(c, "sigma")
    q2, r2 = second(c, "q"), second(c, "r")
    G = {1: term["G"], 2: term["G"] + term["G_bar"]}
    g2 = term["g"] + term["g_bar"]
    nn = n * n
    size = 2 * L * nn + L * n + L

    def unpack(y):
        P = y[:2 * L * nn].reshape(2, L, n, n)
        eta = y[2 * L * nn:2 * L * nn + L * n].reshape(L, n)
        cost = y[2 * L * nn + L * n:]
        return P, eta, cost

    def rhs(_, y):
        P, eta, cost = unpack(y)
        dP = np.zeros_like(P)
        deta = np.zeros_like(eta)
        dcost = np.zeros_like(cost)
        for e in range(L):
            P1 = P[0, e]
            for i in (1, 2):
                f = {k: v[e] for k, v in fam[i].items()}
                Pi = P[i - 1, e]
                Qc = Pi @ f["A"] + f["A"].T @ Pi + f["C"].T @ P1 @ f["C"] + f["Q"]
                Rc = f["R"] + f["D"].T @ P1 @ f["D"]
                Sc = f["B"].T @ Pi + f["D"].T @ P1 @ f["C"] + f["S"]
                Rp = np.linalg.pinv(Rc, rcond=1e-10, hermitian=True)
                coupling = sum(rates[e, k] * P[i - 1, k] for k in range(L))
                dP[i - 1, e] = -(Qc - Sc.T @ Rp @ Sc) - coupling
            f = {k: v[e] for k, v in fam[2].items()}
            P2 = P[1, e]
            Rc = f["R"] + f["D"].T @ P1 @ f["D"]
            Sc = f["B"].T @ P2 + f["D"].T @ P1 @ f["C"] + f["S"]
            Rp = np.linalg.pinv(Rc, rcond=1e-10, hermitian=True)
            rv = f["B"].T @ eta[e] + f["D"].T @ P1 @ sig2[e] + r2[e]
            drive = (f["A"].T @ eta[e] + P2 @ b2[e] + f["C"].T @ P1 @ sig2[e] + q2[e]
                     - Sc.T @ Rp @ rv)
            deta[e] = -drive - sum(rates[e, k] * eta[k] for k in range(L))
            run = 2 * eta[e] @ b2[e] + sig2[e] @ P1 @ sig2[e] - rv @ Rp @ rv
            dcost[e] = -run - rates[e] @ cost
        return np.concatenate([dP.ravel(), deta.ravel(), dcost])

    yT = np.concatenate([np.stack([G[1], G[2]]).ravel(), g2.ravel(), np.zeros(L)])
    assert len(yT) == size
    sol = solve_ivp(rhs, (T, s), yT, method="DOP853", rtol=1e-13, atol=1e-14)
    P, eta, cost = unpack(sol.y[:, -1])
    values = [0.5 * (x @ P[1, e] @ x + 2 * eta[e] @ x + cost[e]) for x, e in ics]
    return {"P": P.tolist(), "eta2": eta.tolist(), "offset_cost": cost.tolist(),
            "values": values, "initial_conditions": [[x.tolist(), e] for x, e in ics]}


def main():
    out = {name: solve(PROBLEMS / name) for name in FILES}
    dest = Path(__file__).with_name("oracle_values.json")
    dest.write_text(json.dumps(out, indent=1) + "\n")
    print(f"wrote {dest}")


if __name__ == "__main__":
    main()
