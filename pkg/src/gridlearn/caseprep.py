"""Heuristics that turn a topology-only case into an OPF-ready one.

Generator limits inside a :class:`Network` are per-unit, while the
thresholds and tables here are stated in MW, so the functions that need
both take ``base_mva``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .netmodel import CostFunction, Fuel, Generator, Network

log = logging.getLogger(__name__)

HYDRO_COST = 6.724778
SMALL_HYDRO_COST = 1.5 * HYDRO_COST  # 10.087167


def assign_cost_functions(gens: Sequence[Generator], threshold: float = 100.0,
                          gas_table: Optional[Mapping[float, Sequence[float]]] = None,
                          base_mva: float = 100.0) -> list[Generator]:
    """Attach cost curves by fuel type.

    Hydro units get a linear cost, scaled up by 1.5 below ``threshold`` MW.
    Gas units copy the coefficients of the ``gas_table`` entry whose
    capacity (MW) is nearest their own; ties go to the smaller capacity.
    Other fuels are left alone.
    """
    table = sorted((float(k), tuple(float(c) for c in v)) for k, v in (gas_table or {}).items())
    out = []
    for g in gens:
        cap_mw = g.p_max * base_mva
        if g.fuel is Fuel.HYDRO:
            c1 = HYDRO_COST if cap_mw >= threshold else round(SMALL_HYDRO_COST, 6)
            g = replace(g, cost=CostFunction((0.0, c1, 0.0)))
        elif g.fuel is Fuel.GAS:
            if not table:
                raise ValueError(f"gas generator at bus {g.bus_id} but the gas cost table is empty")
            caps = np.array([c for c, _ in table])
            k = int(np.argmin(np.abs(caps - cap_mw)))
            g = replace(g, cost=CostFunction(table[k][1]))
        out.append(g)
    return out


def estimate_reactive_limits(gens: Sequence[Generator], fraction: float = 0.5,
                             overrides: Optional[Mapping[int, float]] = None) -> list[Generator]:
    """Set ``q_min = -fraction*p_max`` and ``q_max = fraction*p_max``.

    ``overrides`` maps a bus id to an extra multiplier on both limits.
    """
    if fraction <= 0:
        raise ValueError("fraction must be positive")
    overrides = {int(k): float(v) for k, v in (overrides or {}).items()}
    out = []
    for g in gens:
        q = fraction * g.p_max * overrides.get(g.bus_id, 1.0)
        out.append(replace(g, q_min=-q if q else 0.0, q_max=q))
    return out


class BranchLimitEstimate(NamedTuple):
    limits: np.ndarray
    shortfall: np.ndarray  # branch indices whose limit is below the observed max flow


def estimate_branch_limits_by_quantile(max_flows, reference_limits) -> BranchLimitEstimate:
    """Rank-match observed branch maxima to quantiles of a reference rating set.

    A branch whose maximum flow has mean rank r among n branches sits at
    empirical level k = (r - 1)/(n - 1) and is given the linearly
    interpolated k-quantile of ``reference_limits``.
    """
    flows = np.asarray(max_flows, dtype=float)
    ref = np.asarray(reference_limits, dtype=float)
    if ref.size == 0:
        raise ValueError("reference_limits is empty")
    n = flows.size
    if n == 0:
        return BranchLimitEstimate(np.zeros(0), np.zeros(0, dtype=int))
    ranks = rankdata(flows, method="average")
    k = (ranks - 1.0) / (n - 1.0) if n > 1 else np.full(n, 0.5)
    limits = np.quantile(ref, k, method="linear")
    short = np.flatnonzero(limits < flows)
    for i in short:
        log.warning("branch %d: estimated limit %.4g is below its max flow %.4g", i, limits[i], flows[i])
    return BranchLimitEstimate(limits, short)


def boost_capacity(net: Network, bus_id: int, delta_mw: float) -> Network:
    """Raise ``p_max`` of every generator at ``bus_id`` by ``delta_mw`` in total.

    With several units on the bus the increase is shared equally.
    """
    idx = [k for k, g in enumerate(net.generators) if g.bus_id == bus_id]
    if not idx:
        known = any(b.id == bus_id for b in net.buses)
        raise KeyError(f"bus {bus_id} has no generator" if known else f"unknown bus id {bus_id}")
    if delta_mw == 0:
        return net
    share = delta_mw / net.base_mva / len(idx)
    gens = list(net.generators)
    for k in idx:
        gens[k] = replace(gens[k], p_max=gens[k].p_max + share)
    return net.with_generators(gens)


@dataclass
class CaseprepConfig:
    """Sidecar settings for ``case prep``; MW/MVA throughout."""

    hydro_threshold_mw: float = 100.0
    gas_costs: dict[float, tuple] = field(default_factory=dict)
    reactive_fraction: Optional[float] = None
    reactive_overrides: dict[int, float] = field(default_factory=dict)
    reference_limits_mva: list[float] = field(default_factory=list)
    relax_level_mva: float = 1e4
    boosts: dict[int, float] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping) -> "CaseprepConfig":
        gas = d.get("gas_costs", {})
        if isinstance(gas, list):
            gas = {e["capacity_mw"]: e["cost"] for e in gas}
        return cls(
            hydro_threshold_mw=float(d.get("hydro_threshold_mw", 100.0)),
            gas_costs={float(k): tuple(v) for k, v in gas.items()},
            reactive_fraction=d.get("reactive_fraction"),
            reactive_overrides={int(k): float(v) for k, v in d.get("reactive_overrides", {}).items()},
            reference_limits_mva=[float(v) for v in d.get("reference_limits_mva", [])],
            relax_level_mva=float(d.get("relax_level_mva", 1e4)),
            boosts={int(k): float(v) for k, v in d.get("boosts", {}).items()},
        )

    @classmethod
    def load(cls, path) -> "CaseprepConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def prepare_case(net: Network, config: CaseprepConfig, scenarios=None, jobs: int = 1):
    """Apply the configured heuristics in order: costs, reactive limits,
    capacity boosts, then branch limits.

    Branch limits need ``scenarios``: OPF is run on each with all ratings
    relaxed and the per-branch maxima are rank-matched to the reference
    ratings.  Returns the new network and the list of shortfall branches.
    """
    from . import acopf, scenarios as sc

    gens = list(net.generators)
    # without a gas table the case's own gas curves are kept
    fuels = (Fuel.HYDRO, Fuel.GAS) if config.gas_costs else (Fuel.HYDRO,)
    sel = [k for k, g in enumerate(gens) if g.fuel in fuels]
    if sel:
        done = assign_cost_functions([gens[k] for k in sel], config.hydro_threshold_mw,
                                     config.gas_costs, net.base_mva)
        for k, g in zip(sel, done):
            gens[k] = g
    if config.reactive_fraction is not None:
        gens = estimate_reactive_limits(gens, config.reactive_fraction, config.reactive_overrides)
    out = net.with_generators(gens)
    for bus, delta in sorted(config.boosts.items()):
        out = boost_capacity(out, bus, delta)

    shortfall = np.zeros(0, dtype=int)
    if config.reference_limits_mva:
        if not scenarios:
            raise ValueError("branch-limit estimation needs load scenarios")
        relaxed = acopf.relax_branch_limits(out, config.relax_level_mva / out.base_mva)
        ds = sc.label(scenarios, relaxed, jobs=jobs)
        if not ds.solutions:
            raise RuntimeError("no relaxed-limit OPF run succeeded")
        flows = acopf.max_experienced_flows(relaxed, ds.solutions)
        est = estimate_branch_limits_by_quantile(
            flows, np.asarray(config.reference_limits_mva) / out.base_mva)
        out = out.with_branches(replace(b, s_max=float(s)) for b, s in zip(out.branches, est.limits))
        shortfall = est.shortfall
    return out, shortfall
