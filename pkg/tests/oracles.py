"""Independent reference implementations used only by the tests.

None of these import solver code from the package; they work on plain
python lists/complex numbers or on scipy directly.
"""

from __future__ import annotations

import cmath
import math

import numpy as np


def manual_ybus(net):
    """Stamp branches one by one into a dense list-of-lists matrix."""
    ids = [b.id for b in net.buses]
    pos = {b: k for k, b in enumerate(ids)}
    n = len(ids)
    y = [[0j] * n for _ in range(n)]
    for br in net.branches:
        i, j = pos[br.from_bus], pos[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        half = 0.5j * br.b_sh
        t = br.tap if br.tap else 1.0
        y[i][i] += ys / (t * t) + half
        y[j][j] += ys + half
        y[i][j] += -ys / t
        y[j][i] += -ys / t
    return np.array(y)


def gauss_seidel_pf(net, p_load, q_load, v_set, p_set, tol=1e-13, max_iter=200000, accel=1.6):
    """Classic Gauss-Seidel power flow with PV-bus reactive update.

    ``v_set`` follows the generator-bus order (sorted dense bus index of PV and
    slack buses), ``p_set`` the PV order; loads follow the PQ order.
    """
    y = manual_ybus(net)
    n = len(net.buses)
    kinds = [b.kind.value for b in net.buses]
    gen_buses = sorted(k for k in range(n) if kinds[k] != "PQ")
    pv = [k for k in range(n) if kinds[k] == "PV"]
    pq = [k for k in range(n) if kinds[k] == "PQ"]
    slack = kinds.index("SLACK")
    v = [1.0 + 0j] * n
    for k, b in enumerate(gen_buses):
        v[b] = complex(v_set[k])
    p = [0.0] * n
    q = [0.0] * n
    for k, b in enumerate(pq):
        p[b] = -p_load[k]
        q[b] = -q_load[k]
    for k, b in enumerate(pv):
        p[b] = p_set[k]
    vmag = {b: abs(v[b]) for b in gen_buses}

    for _ in range(max_iter):
        delta = 0.0
        for i in range(n):
            if i == slack:
                continue
            s = sum(y[i][k] * v[k] for k in range(n))
            if kinds[i] == "PV":
                q[i] = (v[i] * s.conjugate()).imag
            acc = sum(y[i][k] * v[k] for k in range(n) if k != i)
            new = (complex(p[i], -q[i]) / v[i].conjugate() - acc) / y[i][i]
            if kinds[i] == "PV":
                new = vmag[i] * new / abs(new)
            else:
                new = v[i] + accel * (new - v[i])
            delta = max(delta, abs(new - v[i]))
            v[i] = new
        if delta < tol:
            break
    else:
        raise RuntimeError("Gauss-Seidel did not converge")
    vm = np.array([abs(x) for x in v])
    va = np.array([cmath.phase(x) for x in v])
    return vm, va


def two_bus_closed_form(v1, p_load, x):
    """Lossless 2-bus line with a purely active load at the far end.

    With r = 0 and no shunt, P = (V1 V2 / x) sin(d) and
    Q_load = 0 = (V2^2 - V1 V2 cos d) / x on the receiving side, giving
    V2 = V1 cos d and P = V1^2 sin(2d) / (2x).
    """
    s2d = 2.0 * x * p_load / v1 ** 2
    d = 0.5 * math.asin(s2d)
    return v1 * math.cos(d), -d


def two_bus_pf(v1, p, q, r, x, b_sh=0.0):
    """Fixed-point solve of the 2-bus receiving-end voltage (complex)."""
    z = complex(r, x)
    ysh = 0.5j * b_sh
    v2 = complex(v1)
    for _ in range(10000):
        s2 = complex(-p, -q)
        i2 = (s2 / v2).conjugate()  # net injection current at bus 2
        # KCL at bus 2: i2 = (v2 - v1)/z + ysh*v2
        new = (i2 + v1 / z) / (1.0 / z + ysh)
        if abs(new - v2) < 1e-15:
            v2 = new
            break
        v2 = new
    i1 = (v1 - v2) / z + ysh * v1
    s1 = v1 * i1.conjugate()
    return v2, s1


def monte_carlo_area(poly_a, poly_b, n=1_000_000, seed=0):
    """Area of the intersection by uniform sampling over A's bounding box."""
    rng = np.random.default_rng(seed)
    va = np.asarray(poly_a, dtype=float)
    x0, y0 = va.min(axis=0)
    x1, y1 = va.max(axis=0)
    pts = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
    inside = _pip(pts, va) & _pip(pts, np.asarray(poly_b, dtype=float))
    return inside.mean() * (x1 - x0) * (y1 - y0)


def _pip(pts, v):
    x, y = pts[:, 0], pts[:, 1]
    res = np.zeros(len(pts), dtype=bool)
    for (xa, ya), (xb, yb) in zip(v, np.roll(v, -1, axis=0)):
        c = (ya > y) != (yb > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = xa + (y - ya) * (xb - xa) / (yb - ya)
        res ^= c & (x < xi)
    return res


def scipy_opf(net, p_load, q_load):
    """Polar AC-OPF through scipy's SLSQP with numeric derivatives.

    Variables [Va (non-slack), Vm, Pg, Qg] in per-unit.  Slow but shares no
    code with the package's interior-point solver.
    """
    from scipy.optimize import minimize

    y = manual_ybus(net)
    n = len(net.buses)
    gens = net.generators
    ng = len(gens)
    pos = {b.id: k for k, b in enumerate(net.buses)}
    slack = [k for k, b in enumerate(net.buses) if b.kind.value == "SLACK"][0]
    pq = [k for k, b in enumerate(net.buses) if b.kind.value == "PQ"]
    gbus = [pos[g.bus_id] for g in gens]
    pd = np.zeros(n)
    qd = np.zeros(n)
    pd[pq] = p_load
    qd[pq] = q_load
    ns = [k for k in range(n) if k != slack]
    base = net.base_mva
    lim = [br.s_max for br in net.branches]

    def unpack(z):
        va = np.zeros(n)
        va[ns] = z[:n - 1]
        vm = z[n - 1:2 * n - 1]
        pg = z[2 * n - 1:2 * n - 1 + ng]
        qg = z[2 * n - 1 + ng:]
        return va, vm, pg, qg

    def cost(z):
        _, _, pg, _ = unpack(z)
        return sum(g.cost.c0 + g.cost.c1 * p * base + g.cost.c2 * (p * base) ** 2 for g, p in zip(gens, pg))

    def balance(z):
        va, vm, pg, qg = unpack(z)
        v = vm * np.exp(1j * va)
        s = v * np.conj(y @ v)
        sg = np.zeros(n, dtype=complex)
        for k, b in enumerate(gbus):
            sg[b] += pg[k] + 1j * qg[k]
        mis = s - sg + pd + 1j * qd
        return np.concatenate([mis.real, mis.imag])

    def flows(z):
        va, vm, _, _ = unpack(z)
        v = vm * np.exp(1j * va)
        out = []
        for br, smax in zip(net.branches, lim):
            if smax <= 0:
                continue
            i, j = pos[br.from_bus], pos[br.to_bus]
            ys = 1.0 / complex(br.r, br.x)
            t = br.tap or 1.0
            ii = (ys / t ** 2 + 0.5j * br.b_sh) * v[i] - ys / t * v[j]
            ij = (ys + 0.5j * br.b_sh) * v[j] - ys / t * v[i]
            out += [smax ** 2 - abs(v[i] * np.conj(ii)) ** 2, smax ** 2 - abs(v[j] * np.conj(ij)) ** 2]
        return np.array(out)

    bounds = [(-math.pi, math.pi)] * (n - 1)
    bounds += [(b.v_min, b.v_max) for b in net.buses]
    bounds += [(g.p_min, g.p_max) for g in gens]
    bounds += [(g.q_min, g.q_max) for g in gens]
    z0 = np.concatenate([np.zeros(n - 1), np.ones(n), [0.5 * (g.p_min + g.p_max) for g in gens],
                         [0.5 * (g.q_min + g.q_max) for g in gens]])
    cons = [{"type": "eq", "fun": balance}]
    if any(s > 0 for s in lim):
        cons.append({"type": "ineq", "fun": flows})
    res = minimize(cost, z0, method="SLSQP", bounds=bounds, constraints=cons,
                   options={"maxiter": 500, "ftol": 1e-12})
    assert res.success, res.message
    return res.fun, unpack(res.x)
