"""Independent high-precision reference values for the bivariate Weibull
model and the cost integrals.

The density is taken as the mixed partial derivative of the reliability
function, computed numerically at high precision, so it does not reuse the
closed form implemented in Rust. Run with `python3 model_oracle.py` to
regenerate `frozen.json`.
"""

import json
import os

import mpmath as mp

mp.mp.dps = 20

PSIS = [
    (1.522, 1.015, 0.722, 0.930, 0.172),
    (2.0, 1.8, 5.8, 1.9, 0.6),
]
POINTS = [(0.3, 0.1), (1.0, 0.5), (2.0, 0.05), (0.05, 3.0)]


def reliability(psi, t, u):
    eta_t, lam_t, eta_u, lam_u, theta = [mp.mpf(x) for x in psi]
    a = (t / eta_t) ** (lam_t / theta)
    b = (u / eta_u) ** (lam_u / theta)
    return mp.e ** (-((a + b) ** theta))


def marginal_rel(psi, scale, x):
    eta, lam = (psi[0], psi[1]) if scale == "age" else (psi[2], psi[3])
    return mp.e ** (-((x / mp.mpf(eta)) ** mp.mpf(lam)))


def density(psi, t, u):
    return mp.diff(lambda x, y: reliability(psi, x, y), (t, u), (1, 1), direction=1)


def distribution(psi, t, u):
    if t == 0 or u == 0:
        return mp.mpf(0)
    return 1 - marginal_rel(psi, "age", t) - marginal_rel(psi, "usage", u) + reliability(psi, t, u)


def quantile(psi, scale, p):
    return mp.findroot(lambda x: 1 - marginal_rel(psi, scale, x) - p, (mp.mpf('1e-6'), mp.mpf(100)), solver='illinois')


def box_moments(psi, t0, t1, u0, u1):
    out = []
    for g in (lambda t, u: 1, lambda t, u: t, lambda t, u: u, lambda t, u: t * u):
        out.append(mp.quad(lambda t, u: g(t, u) * density(psi, t, u), [t0, t1], [u0, u1]))
    return out


def prorata(x, x1, x2):
    if x <= x1:
        return mp.mpf(1)
    if x < x2:
        return (x2 - x) / (x2 - x1)
    return mp.mpf(0)


def proportion(x, x1, x2, l, q1, q2):
    if x <= x1:
        return mp.mpf(q1)
    if x <= x2:
        return q1 - (q1 - q2) * (x - x1) / (x2 - x1)
    if x <= l:
        return q2 * (l - x) / (l - x2)
    return mp.mpf(0)


def expected_costs(psi, region, cfg):
    """Mass times integral over every grid cell, with the per-unit cost as
    the integrand."""
    t1, t2, u1, u2 = [mp.mpf(x) for x in region]
    lt, lu = mp.mpf(cfg["lt"]), mp.mpf(cfg["lu"])
    ts = [mp.mpf(0), t1, t2, lt]
    us = [mp.mpf(0), u1, u2, lu]
    s, m = mp.mpf(cfg["s"]), mp.mpf(cfg["m"])
    w_total = mp.mpf(0)
    d_total = mp.mpf(0)
    for i in range(3):
        for j in range(3):
            a, b, c, d = ts[i], ts[i + 1], us[j], us[j + 1]
            if not (b > a and d > c):
                continue
            mass = (
                distribution(psi, b, d)
                - distribution(psi, a, d)
                - distribution(psi, b, c)
                + distribution(psi, a, c)
            )

            def warranty(t, u):
                return s * prorata(t, t1, t2) * prorata(u, u1, u2)

            def dissat(t, u):
                return (
                    s
                    / 2
                    * (
                        proportion(t, t1, t2, lt, cfg["q1t"], cfg["q2t"])
                        + proportion(u, u1, u2, lu, cfg["q1u"], cfg["q2u"])
                    )
                )

            if i <= 1 and j <= 1:
                iw = mp.quad(lambda t, u: warranty(t, u) * density(psi, t, u), [a, b], [c, d])
                w_total += m * mass * iw
            idd = mp.quad(lambda t, u: dissat(t, u) * density(psi, t, u), [a, b], [c, d])
            d_total += m * mass * idd
    return w_total, d_total


def main():
    out = {"points": [], "quantiles": [], "moments": [], "costs": []}
    for psi in PSIS:
        for t, u in POINTS:
            t, u = mp.mpf(t), mp.mpf(u)
            out["points"].append(
                {
                    "psi": psi,
                    "t": float(t),
                    "u": float(u),
                    "reliability": float(reliability(psi, t, u)),
                    "pdf": float(density(psi, t, u)),
                    "distribution": float(distribution(psi, t, u)),
                }
            )
        for scale in ("age", "usage"):
            for p in (0.1, 0.5, 0.9):
                out["quantiles"].append(
                    {"psi": psi, "scale": scale, "p": p, "x": float(quantile(psi, scale, mp.mpf(p)))}
                )
    psi = PSIS[0]
    for box in [(0.1435, 0.9373, 0.1105, 0.2048), (0.0, 0.1435, 0.2048, 0.6547)]:
        mom = box_moments(psi, *[mp.mpf(x) for x in box])
        out["moments"].append({"psi": psi, "box": box, "moments": [float(v) for v in mom]})
    cfg = {
        "s": 700.0,
        "m": 1.0,
        "q1t": 0.10,
        "q2t": 0.05,
        "q1u": 0.10,
        "q2u": 0.05,
        "lt": 1.020,
        "lu": 0.6547,
    }
    region = (0.1435, 0.9373, 0.1105, 0.2048)
    w, d = expected_costs(psi, region, cfg)
    out["costs"].append({"psi": psi, "region": region, "cfg": cfg, "warranty": float(w), "dissatisfaction": float(d)})
    path = os.path.join(os.path.dirname(os.path.abspath(__file__)), "frozen.json")
    with open(path, "w") as f:
        json.dump(out, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
