"""Newton-Raphson AC power flow in polar coordinates.

The solver is written over a leading batch axis so that the training loop
can push hundreds of perturbed setpoints through one call; :func:`solve_pf`
is the single-scenario wrapper.  Generator reactive limits are not enforced:
violations are left for the penalty and feasibility checks downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .netmodel import Network, branch_matrices, build_ybus


class SingularJacobianError(RuntimeError):
    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(f"singular power-flow Jacobian at iteration {iteration}")


@dataclass(frozen=True)
class PfOptions:
    tol: float = 1e-8
    max_iter: int = 30


@dataclass(frozen=True)
class PfSetpoint:
    """Independent variables of the power flow.

    ``v_set`` is ordered as ``net.gen_buses`` (slack included) and ``p_set``
    as ``net.pv``; both per-unit.
    """

    v_set: np.ndarray
    p_set: np.ndarray


@dataclass(frozen=True)
class PfInit:
    v_mag0: np.ndarray
    theta0: np.ndarray

    @classmethod
    def flat(cls, net: Network) -> "PfInit":
        return cls(np.ones(net.n_bus), np.zeros(net.n_bus))


@dataclass(frozen=True)
class PfSolution:
    v_mag: np.ndarray
    theta: np.ndarray
    p_slack: float
    q_gen: np.ndarray  # per generator bus, ordered as net.gen_buses
    converged: bool
    iterations: int
    mismatch: float


class PfBatch(NamedTuple):
    v_mag: np.ndarray       # (B, n_bus)
    theta: np.ndarray       # (B, n_bus)
    p_slack: np.ndarray     # (B,)
    q_gen: np.ndarray       # (B, n_gen_bus)
    converged: np.ndarray   # (B,) bool
    iterations: np.ndarray  # (B,) int
    mismatch: np.ndarray    # (B,)
    singular: np.ndarray    # (B,) bool; iteration number stored in ``iterations``


def power_injection(ybus: np.ndarray, v_mag, theta) -> np.ndarray:
    """Complex bus injections ``V * conj(Y V)``; batched over leading axes."""
    v = np.asarray(v_mag) * np.exp(1j * np.asarray(theta))
    return v * np.conj(v @ ybus.T)


def sbus_derivatives(ybus: np.ndarray, v: np.ndarray):
    """Batched ``dS/dtheta`` and ``dS/d|V|`` for complex voltages ``v`` (B, n)."""
    ibus = v @ ybus.T
    vnorm = v / np.abs(v)
    eye = np.eye(v.shape[-1])
    ds_da = 1j * v[..., :, None] * np.conj(ibus[..., :, None] * eye - ybus * v[..., None, :])
    ds_dm = (v[..., :, None] * np.conj(ybus * vnorm[..., None, :])
             + (np.conj(ibus) * vnorm)[..., :, None] * eye)
    return ds_da, ds_dm


def _specified(net: Network, p_load, q_load, p_set):
    nb = net.n_bus
    bsz = p_load.shape[0]
    p_spec = np.zeros((bsz, nb))
    q_spec = np.zeros((bsz, nb))
    p_spec[:, net.pq] = -p_load
    q_spec[:, net.pq] = -q_load
    p_spec[:, net.pv] = p_set
    return p_spec, q_spec


def solve_pf_batch(net: Network, p_load, q_load, v_set, p_set,
                   v_mag0=None, theta0=None, opts: Optional[PfOptions] = None,
                   ybus: Optional[np.ndarray] = None) -> PfBatch:
    """Solve a batch of power flows that share a network.

    Arrays carry a leading batch axis: ``p_load``/``q_load`` (B, n_pq),
    ``v_set`` (B, n_gen_bus), ``p_set`` (B, n_pv).  Initial guesses may be
    per-bus vectors or (B, n_bus) arrays.
    """
    opts = opts or PfOptions()
    ybus = build_ybus(net) if ybus is None else ybus
    p_load = np.atleast_2d(np.asarray(p_load, dtype=float))
    q_load = np.atleast_2d(np.asarray(q_load, dtype=float))
    v_set = np.atleast_2d(np.asarray(v_set, dtype=float))
    p_set = np.asarray(p_set, dtype=float).reshape(v_set.shape[0], -1)
    bsz, nb = p_load.shape[0], net.n_bus
    v_mag0 = np.ones(nb) if v_mag0 is None else v_mag0
    theta0 = np.zeros(nb) if theta0 is None else theta0

    vm = np.broadcast_to(np.asarray(v_mag0, dtype=float), (bsz, nb)).copy()
    va = np.broadcast_to(np.asarray(theta0, dtype=float), (bsz, nb)).copy()
    vm[:, net.gen_buses] = v_set
    va[:, net.slack] = 0.0
    p_spec, q_spec = _specified(net, p_load, q_load, p_set)

    ns = np.array([i for i in range(nb) if i != net.slack], dtype=int)
    pq = net.pq
    n_ns = len(ns)

    converged = np.zeros(bsz, dtype=bool)
    failed = np.zeros(bsz, dtype=bool)
    singular = np.zeros(bsz, dtype=bool)
    iterations = np.zeros(bsz, dtype=int)
    mismatch = np.full(bsz, np.inf)
    active = np.arange(bsz)

    for it in range(opts.max_iter + 1):
        v = vm[active] * np.exp(1j * va[active])
        s = v * np.conj(v @ ybus.T)
        f = np.concatenate([s.real[:, ns] - p_spec[active][:, ns],
                            s.imag[:, pq] - q_spec[active][:, pq]], axis=1)
        norm = np.abs(f).max(axis=1) if f.shape[1] else np.zeros(len(active))
        mismatch[active] = norm
        done = norm <= opts.tol
        bad = ~np.isfinite(norm)
        converged[active[done]] = True
        failed[active[bad]] = True
        keep = ~(done | bad)
        active, v, f = active[keep], v[keep], f[keep]
        if it == opts.max_iter or active.size == 0:
            break

        ds_da, ds_dm = sbus_derivatives(ybus, v)
        jac = np.empty((active.size, f.shape[1], f.shape[1]))
        jac[:, :n_ns, :n_ns] = ds_da.real[:, ns][:, :, ns]
        jac[:, :n_ns, n_ns:] = ds_dm.real[:, ns][:, :, pq]
        jac[:, n_ns:, :n_ns] = ds_da.imag[:, pq][:, :, ns]
        jac[:, n_ns:, n_ns:] = ds_dm.imag[:, pq][:, :, pq]
        dx, ok = _batched_solve(jac, -f)
        if not ok.all():
            lost = active[~ok]
            singular[lost] = True
            failed[lost] = True
            iterations[lost] = it + 1
            active, dx = active[ok], dx[ok]
        iterations[active] = it + 1
        va[np.ix_(active, ns)] += dx[:, :n_ns]
        vm[np.ix_(active, pq)] += dx[:, n_ns:]

    s = power_injection(ybus, vm, va)
    # generator buses carry no load, so injection equals generation
    return PfBatch(vm, va, s.real[:, net.slack], s.imag[:, net.gen_buses], converged & ~failed,
                   iterations, mismatch, singular)


def _batched_solve(a: np.ndarray, b: np.ndarray):
    """Solve stacked systems, isolating the singular ones."""
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


def solve_pf(net: Network, scenario, setpoint: PfSetpoint, init: Optional[PfInit] = None,
             opts: Optional[PfOptions] = None, ybus: Optional[np.ndarray] = None) -> PfSolution:
    """Single-scenario Newton power flow.

    Raises :class:`SingularJacobianError` if the Jacobian cannot be factored;
    non-convergence is reported through ``converged=False``.
    """
    init = init or PfInit.flat(net)
    res = solve_pf_batch(net, scenario.p_load[None], scenario.q_load[None],
                         setpoint.v_set[None], np.asarray(setpoint.p_set)[None],
                         init.v_mag0, init.theta0, opts, ybus)
    if res.singular[0]:
        raise SingularJacobianError(int(res.iterations[0]))
    return PfSolution(res.v_mag[0], res.theta[0], float(res.p_slack[0]), res.q_gen[0],
                      bool(res.converged[0]), int(res.iterations[0]), float(res.mismatch[0]))


def branch_flows(net: Network, v_mag, theta, mats=None):
    """Complex apparent power entering each branch at its (from, to) ends.

    Shunt charging is included; batched over leading axes of the voltages.
    """
    yf, yt, cf, ct = branch_matrices(net) if mats is None else mats
    v = np.asarray(v_mag) * np.exp(1j * np.asarray(theta))
    s_from = (v @ cf.T) * np.conj(v @ yf.T)
    s_to = (v @ ct.T) * np.conj(v @ yt.T)
    return s_from, s_to


def mean_init(training_solutions: Sequence) -> PfInit:
    """Average voltage magnitudes and angles of solved training points."""
    if len(training_solutions) == 0:
        raise ValueError("mean_init needs at least one solution")
    vm = np.mean([np.asarray(s.v_mag) for s in training_solutions], axis=0)
    va = np.mean([np.asarray(s.theta) for s in training_solutions], axis=0)
    return PfInit(vm, va)


def split_to_generators(net: Network, p_bus, q_bus):
    """Distribute per-generator-bus P and Q onto individual generators.

    A bus total is placed at the same fraction of every co-located unit's
    range, so a bus total inside its aggregate limits keeps every unit
    inside its own.  ``p_bus``/``q_bus`` are ordered as ``net.gen_buses``
    and may carry batch axes.
    """
    p_bus = np.asarray(p_bus, dtype=float)
    q_bus = np.asarray(q_bus, dtype=float)
    pos = {b: k for k, b in enumerate(net.gen_buses)}
    slot = np.array([pos[i] for i in net.gen_bus_index], dtype=int)
    counts = np.bincount(slot, minlength=len(net.gen_buses))
    if np.all(counts == 1):
        return p_bus[..., slot], q_bus[..., slot]
    return (_split(p_bus, slot, *net.p_bounds, counts),
            _split(q_bus, slot, *net.q_bounds, counts))


def _split(total, slot, lo, hi, counts):
    agg_lo = np.bincount(slot, weights=lo, minlength=len(counts))
    agg_hi = np.bincount(slot, weights=hi, minlength=len(counts))
    span = agg_hi - agg_lo
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(span > 0, (total - agg_lo) / np.where(span > 0, span, 1.0), 0.0)
    even = (total - agg_lo) / counts
    per = lo + frac[..., slot] * (hi - lo)
    return np.where(span[slot] > 0, per, lo + even[..., slot])


def bus_setpoint_limits(net: Network):
    """Aggregate (lo, hi) limits of the power-flow independent variables.

    Returns ``(v_lo, v_hi, p_lo, p_hi)`` with voltages ordered as
    ``net.gen_buses`` and active powers as ``net.pv``.
    """
    v_lo, v_hi = net.v_bounds
    p_lo, p_hi = net.p_bounds
    nb = net.n_bus
    agg_lo = np.bincount(net.gen_bus_index, weights=p_lo, minlength=nb)
    agg_hi = np.bincount(net.gen_bus_index, weights=p_hi, minlength=nb)
    return v_lo[net.gen_buses], v_hi[net.gen_buses], agg_lo[net.pv], agg_hi[net.pv]
