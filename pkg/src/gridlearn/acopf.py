"""Ground-truth AC-OPF by a primal-dual interior-point method.

The formulation is the polar one: variables are bus angles, bus voltage
magnitudes and generator P/Q.  Equalities are the bus power balances plus the
reference angle; inequalities are the variable boxes and the squared apparent
power limits at both branch ends.  The Newton-KKT iteration follows the
classic log-barrier primal-dual scheme with a fraction-to-boundary step rule.

Everything runs over a leading batch axis of scenarios that share one
network, which is how large training sets get labeled in reasonable time.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .netmodel import Network, branch_matrices, build_ybus
from .powerflow import branch_flows, power_injection, sbus_derivatives

log = logging.getLogger(__name__)


class OpfStatus(str, enum.Enum):
    OPTIMAL = "OPTIMAL"
    INFEASIBLE = "INFEASIBLE"
    MAX_ITER = "MAX_ITER"


@dataclass(frozen=True)
class OpfOptions:
    feastol: float = 1e-6
    gradtol: float = 1e-6
    comptol: float = 1e-6
    costtol: float = 1e-6
    max_iter: int = 150
    sigma: float = 0.2       # barrier reduction factor
    step_ratio: float = 0.99995
    z0: float = 1.0


@dataclass(frozen=True)
class DispatchSolution:
    p_gen: np.ndarray
    q_gen: np.ndarray
    v_mag: np.ndarray
    theta: np.ndarray
    objective: float
    status: OpfStatus = OpfStatus.OPTIMAL
    iterations: int = 0
    kkt: dict = field(default_factory=dict, compare=False)
    duals: Optional[dict] = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict:
        out = {
            "status": self.status.value,
            "objective": self.objective,
            "iterations": self.iterations,
            "p_gen": self.p_gen.tolist(),
            "q_gen": self.q_gen.tolist(),
            "v_mag": self.v_mag.tolist(),
            "theta": self.theta.tolist(),
            "kkt": {k: float(v) for k, v in self.kkt.items()},
        }
        if self.duals is not None:
            out["duals"] = {k: np.asarray(v).tolist() for k, v in self.duals.items()}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DispatchSolution":
        duals = d.get("duals")
        if duals is not None:
            duals = {k: np.asarray(v, dtype=float) for k, v in duals.items()}
        return cls(np.asarray(d["p_gen"], dtype=float), np.asarray(d["q_gen"], dtype=float),
                   np.asarray(d["v_mag"], dtype=float), np.asarray(d["theta"], dtype=float),
                   float(d["objective"]), OpfStatus(d.get("status", "OPTIMAL")),
                   int(d.get("iterations", 0)), dict(d.get("kkt", {})), duals)


@dataclass(frozen=True)
class ViolationReport:
    """Worst per-class constraint violation, per-unit.

    Violations no larger than ``tol`` count as satisfied and are reported as 0.
    """

    delta_pg: float
    delta_qg: float
    delta_v: float
    delta_s: float
    balance: float
    feasible: bool
    pg_violators: tuple[int, ...] = ()


# ---------------------------------------------------------------------------
# second derivatives of bus and branch power (batched polar forms)

def _bdiag(d: np.ndarray) -> np.ndarray:
    out = np.zeros(d.shape + (d.shape[-1],), dtype=d.dtype)
    idx = np.arange(d.shape[-1])
    out[..., idx, idx] = d
    return out


def _t(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def d2sbus(ybus: np.ndarray, v: np.ndarray, lam: np.ndarray):
    """Hessian blocks of ``lam^T S(V)`` w.r.t. (angle, magnitude)."""
    ibus = v @ ybus.T
    a = lam * v
    bm = ybus * v[:, None, :]
    c = a[:, :, None] * np.conj(bm)
    d = np.conj(ybus.T) * v[:, None, :]
    dlam = np.einsum("bij,bj->bi", d, lam)
    e = np.conj(v)[:, :, None] * (d * lam[:, None, :] - _bdiag(dlam))
    f = c - _bdiag(a * np.conj(ibus))
    g = 1.0 / np.abs(v)
    gaa = e + f
    gva = 1j * g[:, :, None] * (e - f)
    gvv = g[:, :, None] * (c + _t(c)) * g[:, None, :]
    return gaa, _t(gva), gva, gvv


def dsbr(cbr: np.ndarray, ybr: np.ndarray, v: np.ndarray):
    """Branch-end complex power and its (angle, magnitude) Jacobians."""
    ibr = v @ ybr.T
    vbr = v @ cbr.T
    vnorm = v / np.abs(v)
    dsa = 1j * (np.conj(ibr)[:, :, None] * (cbr * v[:, None, :])
                - vbr[:, :, None] * np.conj(ybr * v[:, None, :]))
    dsm = (vbr[:, :, None] * np.conj(ybr * vnorm[:, None, :])
           + np.conj(ibr)[:, :, None] * (cbr * vnorm[:, None, :]))
    return vbr * np.conj(ibr), dsa, dsm


def _d2sbr(cbr, ybr, v, lam):
    a = np.einsum("lj,bl,lk->bjk", np.conj(ybr), lam, cbr)
    bm = np.conj(v)[:, :, None] * a * v[:, None, :]
    d = _bdiag(np.einsum("bjk,bk->bj", a, v) * np.conj(v))
    e = _bdiag(np.einsum("bkj,bk->bj", a, np.conj(v)) * v)
    f = bm + _t(bm)
    g = 1.0 / np.abs(v)
    haa = f - d - e
    hva = 1j * g[:, :, None] * (bm - _t(bm) - d + e)
    hvv = g[:, :, None] * f * g[:, None, :]
    return haa, _t(hva), hva, hvv


def d2asbr(dsa, dsm, s, cbr, ybr, v, mu):
    """Hessian blocks of ``mu^T |S_br|^2``."""
    saa, sav, sva, svv = _d2sbr(cbr, ybr, v, np.conj(s) * mu)
    haa = 2 * np.real(saa + np.einsum("bli,bl,blj->bij", dsa, mu, np.conj(dsa)))
    hva = 2 * np.real(sva + np.einsum("bli,bl,blj->bij", dsm, mu, np.conj(dsa)))
    hav = 2 * np.real(sav + np.einsum("bli,bl,blj->bij", dsa, mu, np.conj(dsm)))
    hvv = 2 * np.real(svv + np.einsum("bli,bl,blj->bij", dsm, mu, np.conj(dsm)))
    return haa, hav, hva, hvv


# ---------------------------------------------------------------------------
# problem definition

class _OpfProblem:
    def __init__(self, net: Network, p_load: np.ndarray, q_load: np.ndarray):
        self.net = net
        nb, ng = net.n_bus, len(net.generators)
        self.nb, self.ng = nb, ng
        self.nx = 2 * nb + 2 * ng
        self.ybus = build_ybus(net)
        yf, yt, cf, ct = branch_matrices(net)
        lim = np.flatnonzero(net.s_max > 0)
        self.lim = lim
        self.yf, self.yt, self.cf, self.ct = yf[lim], yt[lim], cf[lim], ct[lim]
        self.smax2 = net.s_max[lim] ** 2
        self.cg = net.gen_incidence

        bsz = p_load.shape[0]
        self.pd = np.zeros((bsz, nb))
        self.qd = np.zeros((bsz, nb))
        self.pd[:, net.pq] = p_load
        self.qd[:, net.pq] = q_load

        base = net.base_mva
        c = net.cost_matrix
        self.c0 = c[:, 0]
        self.c1 = c[:, 1] * base
        self.c2 = c[:, 2] * base ** 2
        p_hi = net.p_bounds[1]
        marg = np.abs(self.c1 + 2 * self.c2 * p_hi)
        self.cost_mult = 1.0 / max(1.0, float(marg.max()) if ng else 1.0)

        v_lo, v_hi = net.v_bounds
        p_lo, p_hi = net.p_bounds
        q_lo, q_hi = net.q_bounds
        lo = np.concatenate([np.full(nb, -np.inf), v_lo, p_lo, q_lo])
        hi = np.concatenate([np.full(nb, np.inf), v_hi, p_hi, q_hi])
        fixed = np.flatnonzero(lo == hi)
        box = np.flatnonzero(lo < hi)
        up = box[np.isfinite(hi[box])]
        dn = box[np.isfinite(lo[box])]
        self.fixed, self.fixed_val = fixed, lo[fixed]
        self.lo, self.hi = lo, hi
        self.up, self.dn = up, dn
        self.neq = 2 * nb + 1 + len(fixed)
        self.nbox = len(up) + len(dn)
        self.niq = self.nbox + 2 * len(lim)

        dg_lin = np.zeros((self.neq, self.nx))
        dg_lin[:nb, 2 * nb:2 * nb + ng] = -self.cg
        dg_lin[nb:2 * nb, 2 * nb + ng:] = -self.cg
        dg_lin[2 * nb, net.slack] = 1.0
        dg_lin[2 * nb + 1 + np.arange(len(fixed)), fixed] = 1.0
        self.dg_lin = dg_lin
        dh_box = np.zeros((self.nbox, self.nx))
        dh_box[np.arange(len(up)), up] = 1.0
        dh_box[len(up) + np.arange(len(dn)), dn] = -1.0
        self.dh_box = dh_box

    def split(self, x):
        nb, ng = self.nb, self.ng
        return x[:, :nb], x[:, nb:2 * nb], x[:, 2 * nb:2 * nb + ng], x[:, 2 * nb + ng:]

    def cost(self, x):
        pg = self.split(x)[2]
        return (self.c0 + self.c1 * pg + self.c2 * pg ** 2).sum(axis=1)

    def evaluate(self, x, rows):
        """f, df, g, dg, h, dh for the instances ``rows`` of the batch."""
        nb, ng = self.nb, self.ng
        bsz = x.shape[0]
        va, vm, pg, qg = self.split(x)
        v = vm * np.exp(1j * va)
        cm = self.cost_mult

        f = cm * (self.c0 + self.c1 * pg + self.c2 * pg ** 2).sum(axis=1)
        df = np.zeros((bsz, self.nx))
        df[:, 2 * nb:2 * nb + ng] = cm * (self.c1 + 2 * self.c2 * pg)

        s = v * np.conj(v @ self.ybus.T)
        g = np.empty((bsz, self.neq))
        g[:, :nb] = s.real + self.pd[rows] - pg @ self.cg.T
        g[:, nb:2 * nb] = s.imag + self.qd[rows] - qg @ self.cg.T
        g[:, 2 * nb] = va[:, self.net.slack]
        g[:, 2 * nb + 1:] = x[:, self.fixed] - self.fixed_val
        ds_da, ds_dm = sbus_derivatives(self.ybus, v)
        dg = np.broadcast_to(self.dg_lin, (bsz,) + self.dg_lin.shape).copy()
        dg[:, :nb, :nb] = ds_da.real
        dg[:, :nb, nb:2 * nb] = ds_dm.real
        dg[:, nb:2 * nb, :nb] = ds_da.imag
        dg[:, nb:2 * nb, nb:2 * nb] = ds_dm.imag

        h = np.empty((bsz, self.niq))
        nu = len(self.up)
        h[:, :nu] = x[:, self.up] - self.hi[self.up]
        h[:, nu:self.nbox] = self.lo[self.dn] - x[:, self.dn]
        dh = np.zeros((bsz, self.niq, self.nx))
        dh[:, :self.nbox] = self.dh_box
        nl = len(self.lim)
        if nl:
            for k, (c, y) in enumerate(((self.cf, self.yf), (self.ct, self.yt))):
                sb, dsa, dsm = dsbr(c, y, v)
                r0 = self.nbox + k * nl
                h[:, r0:r0 + nl] = np.abs(sb) ** 2 - self.smax2
                sc = np.conj(sb)[:, :, None]
                dh[:, r0:r0 + nl, :nb] = 2 * np.real(sc * dsa)
                dh[:, r0:r0 + nl, nb:2 * nb] = 2 * np.real(sc * dsm)
        return f, df, g, dg, h, dh

    def hessian(self, x, lam, mu):
        nb, ng = self.nb, self.ng
        bsz = x.shape[0]
        va, vm, pg, _ = self.split(x)
        v = vm * np.exp(1j * va)
        hx = np.zeros((bsz, self.nx, self.nx))
        ip = 2 * nb + np.arange(ng)
        hx[:, ip, ip] = self.cost_mult * 2 * self.c2

        pa, pav, pva, pvv = d2sbus(self.ybus, v, lam[:, :nb])
        qa, qav, qva, qvv = d2sbus(self.ybus, v, lam[:, nb:2 * nb])
        hx[:, :nb, :nb] += pa.real + qa.imag
        hx[:, :nb, nb:2 * nb] += pav.real + qav.imag
        hx[:, nb:2 * nb, :nb] += pva.real + qva.imag
        hx[:, nb:2 * nb, nb:2 * nb] += pvv.real + qvv.imag

        nl = len(self.lim)
        if nl:
            for k, (c, y) in enumerate(((self.cf, self.yf), (self.ct, self.yt))):
                r0 = self.nbox + k * nl
                sb, dsa, dsm = dsbr(c, y, v)
                haa, hav, hva, hvv = d2asbr(dsa, dsm, sb, c, y, v, mu[:, r0:r0 + nl])
                hx[:, :nb, :nb] += haa
                hx[:, :nb, nb:2 * nb] += hav
                hx[:, nb:2 * nb, :nb] += hva
                hx[:, nb:2 * nb, nb:2 * nb] += hvv
        return hx

    def x_start(self, bsz, p_hint=None):
        nb, ng = self.nb, self.ng
        v_lo, v_hi = self.net.v_bounds
        p_lo, p_hi = self.net.p_bounds
        q_lo, q_hi = self.net.q_bounds
        x = np.zeros((bsz, self.nx))
        x[:, nb:2 * nb] = np.clip(1.0, v_lo, v_hi)
        x[:, 2 * nb:2 * nb + ng] = 0.5 * (p_lo + p_hi) if p_hint is None else p_hint
        x[:, 2 * nb + ng:] = 0.5 * (q_lo + q_hi)
        return x


def _conditions(x, z, lam, mu, g, h, lx, f, f_prev):
    inf = lambda a: np.abs(a).max(axis=1) if a.shape[1] else np.zeros(a.shape[0])
    maxh = h.max(axis=1) if h.shape[1] else np.full(x.shape[0], -np.inf)
    feas = np.maximum(inf(g), maxh) / (1 + np.maximum(inf(x), inf(z)))
    grad = inf(lx) / (1 + np.maximum(inf(lam), inf(mu)))
    comp = (z * mu).sum(axis=1) / (1 + inf(x))
    cost = np.abs(f - f_prev) / (1 + np.abs(f_prev))
    return feas, grad, comp, cost


def _step_length(v, dv, ratio):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(dv < 0, -v / dv, np.inf)
    if r.shape[1] == 0:
        return np.ones(v.shape[0])
    return np.minimum(ratio * r.min(axis=1), 1.0)


def solve_opf_batch(net: Network, p_load, q_load, warm=None,
                    opts: Optional[OpfOptions] = None) -> list[DispatchSolution]:
    """Solve one OPF per row of ``p_load``/``q_load`` (per-unit, PQ buses).

    ``warm`` may be a sequence of :class:`DispatchSolution` (one per row, or a
    single one broadcast) or an array of generator P hints.
    """
    opts = opts or OpfOptions()
    p_load = np.atleast_2d(np.asarray(p_load, dtype=float))
    q_load = np.atleast_2d(np.asarray(q_load, dtype=float))
    bsz = p_load.shape[0]
    prob = _OpfProblem(net, p_load, q_load)
    nb, ng, neq, niq = prob.nb, prob.ng, prob.neq, prob.niq

    x, z, mu, lam = _initial_point(prob, bsz, warm, opts)
    rows = np.arange(bsz)
    f, df, g, dg, h, dh = prob.evaluate(x, rows)
    if warm is None or z is None:
        z = np.maximum(opts.z0, -h)
        mu = np.full((bsz, niq), opts.z0)
        lam = np.zeros((bsz, neq))
        gamma = np.ones(bsz)
    else:
        gamma = opts.sigma * (z * mu).sum(axis=1) / max(niq, 1)
    lx = df + np.einsum("bki,bk->bi", dg, lam) + np.einsum("bki,bk->bi", dh, mu)
    feas, grad, comp, cost = _conditions(x, z, lam, mu, g, h, lx, f, f)
    cost[:] = 0.0

    status = np.empty(bsz, dtype=object)
    status[:] = [OpfStatus.MAX_ITER] * bsz
    iters = np.zeros(bsz, dtype=int)
    conds = np.stack([feas, grad, comp, cost], axis=1)
    done = ((feas < opts.feastol) & (grad < opts.gradtol) & (comp < opts.comptol))
    status[done] = OpfStatus.OPTIMAL
    active = np.flatnonzero(~done)

    for it in range(1, opts.max_iter + 1):
        if active.size == 0:
            break
        xa, za, mua, lama = x[active], z[active], mu[active], lam[active]
        ga, ha, dga, dha = g[active], h[active], dg[active], dh[active]
        lxa, gam = lx[active], gamma[active]

        hxx = prob.hessian(xa, lama, mua)
        zinv = 1.0 / za
        m = hxx + np.einsum("bki,bk,bkj->bij", dha, mua * zinv, dha)
        n = lxa + np.einsum("bki,bk->bi", dha, (mua * ha + gam[:, None]) * zinv)
        kkt = np.zeros((active.size, prob.nx + neq, prob.nx + neq))
        kkt[:, :prob.nx, :prob.nx] = m
        kkt[:, :prob.nx, prob.nx:] = _t(dga)
        kkt[:, prob.nx:, :prob.nx] = dga
        rhs = np.concatenate([-n, -ga], axis=1)
        sol, ok = _solve(kkt, rhs)
        dx, dlam = sol[:, :prob.nx], sol[:, prob.nx:]
        dz = -ha - za - np.einsum("bki,bi->bk", dha, dx)
        dmu = -mua + zinv * (gam[:, None] - mua * dz)
        ap = _step_length(za, dz, opts.step_ratio)
        ad = _step_length(mua, dmu, opts.step_ratio)
        xa = xa + ap[:, None] * dx
        za = za + ap[:, None] * dz
        lama = lama + ad[:, None] * dlam
        mua = mua + ad[:, None] * dmu
        gam = opts.sigma * (za * mua).sum(axis=1) / max(niq, 1)

        fa_prev = f[active]
        fa, dfa, ga, dga, ha, dha = prob.evaluate(xa, active)
        lxa = dfa + np.einsum("bki,bk->bi", dga, lama) + np.einsum("bki,bk->bi", dha, mua)
        c = np.stack(_conditions(xa, za, lama, mua, ga, ha, lxa, fa, fa_prev), axis=1)

        x[active], z[active], mu[active], lam[active] = xa, za, mua, lama
        f[active], df[active], g[active], dg[active] = fa, dfa, ga, dga
        h[active], dh[active], lx[active], gamma[active] = ha, dha, lxa, gam
        conds[active] = c
        iters[active] = it

        bad = (~ok | ~np.isfinite(xa).all(axis=1) | (np.abs(xa).max(axis=1) > 1e6))
        conv = ((c[:, 0] < opts.feastol) & (c[:, 1] < opts.gradtol)
                & (c[:, 2] < opts.comptol) & (c[:, 3] < opts.costtol) & ~bad)
        status[active[conv]] = OpfStatus.OPTIMAL
        status[active[bad]] = OpfStatus.INFEASIBLE
        active = active[~(conv | bad)]

    # out of iterations: tell "nearly there" apart from hopeless
    for k in active:
        if conds[k, 0] > 1e-3:
            status[k] = OpfStatus.INFEASIBLE

    va, vm, pg, qg = prob.split(x)
    objective = prob.cost(x)
    out = []
    for k in range(bsz):
        kkt = dict(zip(("feascond", "gradcond", "compcond", "costcond"), conds[k]))
        kkt["primal_residual"] = float(max(np.abs(g[k]).max(), h[k].max() if niq else 0.0, 0.0))
        out.append(DispatchSolution(
            pg[k].copy(), qg[k].copy(), vm[k].copy(), va[k].copy(), float(objective[k]),
            status[k], int(iters[k]), kkt,
            {"lam": lam[k].copy(), "mu": mu[k].copy(), "z": z[k].copy(),
             "cost_mult": np.array(prob.cost_mult)},
        ))
    return out


def _solve(a, b):
    ok = np.ones(a.shape[0], dtype=bool)
    try:
        return np.linalg.solve(a, b[..., None])[..., 0], ok
    except np.linalg.LinAlgError:
        pass
    out = np.zeros_like(b)
    for k in range(a.shape[0]):
        try:
            out[k] = np.linalg.solve(a[k], b[k])
        except np.linalg.LinAlgError:
            ok[k] = False
    return out, ok


def _initial_point(prob: _OpfProblem, bsz: int, warm, opts: OpfOptions):
    if warm is None:
        return prob.x_start(bsz), None, None, None
    if isinstance(warm, DispatchSolution):
        warm = [warm] * bsz
    if isinstance(warm, np.ndarray) or (len(warm) and not isinstance(warm[0], DispatchSolution)):
        hint = np.broadcast_to(np.asarray(warm, dtype=float), (bsz, prob.ng))
        return prob.x_start(bsz, hint), None, None, None
    if len(warm) != bsz:
        raise ValueError(f"got {len(warm)} warm starts for {bsz} scenarios")
    x = np.stack([np.concatenate([w.theta, w.v_mag, w.p_gen, w.q_gen]) for w in warm])
    duals = [w.duals for w in warm]
    if all(d is not None and len(d["z"]) == prob.niq and len(d["lam"]) == prob.neq
           for d in duals):
        z = np.stack([d["z"] for d in duals])
        mu = np.stack([d["mu"] for d in duals])
        lam = np.stack([d["lam"] for d in duals])
        return x, np.maximum(z, 1e-12), mu, lam
    return x, None, None, None


def solve_opf(net: Network, scenario, warm=None, opts: Optional[OpfOptions] = None
              ) -> DispatchSolution:
    """Solve the AC-OPF for one load scenario."""
    if isinstance(warm, DispatchSolution):
        warm = [warm]
    elif warm is not None:
        warm = np.asarray(warm, dtype=float)[None]
    return solve_opf_batch(net, scenario.p_load[None], scenario.q_load[None], warm, opts)[0]


def relax_branch_limits(net: Network, level: float) -> Network:
    """Copy of ``net`` with every branch rating set to ``level`` (per-unit)."""
    return net.with_branches(replace(br, s_max=float(level)) for br in net.branches)


def max_experienced_flows(net: Network, solutions: Sequence[DispatchSolution]) -> np.ndarray:
    """Per-branch maximum apparent flow (either end) over a set of dispatches."""
    vm = np.stack([s.v_mag for s in solutions])
    va = np.stack([s.theta for s in solutions])
    sf, st = branch_flows(net, vm, va)
    return np.maximum(np.abs(sf), np.abs(st)).max(axis=0)


def check_feasibility(net: Network, solution, tol: float = 1e-4, scenario=None,
                      mats=None, ybus=None) -> ViolationReport:
    """Audit the operating limits of a complete variable assignment.

    ``solution`` needs ``p_gen``, ``q_gen`` (per generator), ``v_mag`` and
    ``theta``.  The power-balance residual is reported when ``scenario`` is
    given but does not enter ``feasible``.
    """
    p_lo, p_hi = net.p_bounds
    q_lo, q_hi = net.q_bounds
    v_lo, v_hi = net.v_bounds
    pg = np.asarray(solution.p_gen)
    qg = np.asarray(solution.q_gen)
    vm = np.asarray(solution.v_mag)
    pv = np.maximum(pg - p_hi, p_lo - pg).clip(min=0)
    qv = np.maximum(qg - q_hi, q_lo - qg).clip(min=0)
    vv = np.maximum(vm - v_hi, v_lo - vm).clip(min=0)
    sf, st = branch_flows(net, vm, solution.theta, mats)
    smax = net.s_max
    sv = np.where(smax > 0, np.maximum(np.abs(sf), np.abs(st)) - smax, 0.0).clip(min=0)

    def worst(a):
        w = float(a.max()) if a.size else 0.0
        return w if w > tol else 0.0

    balance = 0.0
    if scenario is not None:
        ybus = build_ybus(net) if ybus is None else ybus
        s = power_injection(ybus, vm, solution.theta)
        sd = np.zeros(net.n_bus, dtype=complex)
        sd[net.pq] = np.asarray(scenario.p_load) + 1j * np.asarray(scenario.q_load)
        sg = net.gen_incidence @ (pg + 1j * qg)
        balance = float(np.abs(s - sg + sd).max())
    d = (worst(pv), worst(qv), worst(vv), worst(sv))
    return ViolationReport(*d, balance=balance, feasible=max(d) == 0.0,
                           pg_violators=tuple(int(k) for k in np.flatnonzero(pv > tol)))
