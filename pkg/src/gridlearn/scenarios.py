"""Load-distribution fitting, scenario synthesis and ground-truth labeling.

A scenario is the stacked vector ``p_load || q_load`` over the PQ buses of a
network, per-unit.  Three families are supported: independent uniform,
independent normal and a joint multivariate normal over all 2*|PQ|
coordinates.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .acopf import DispatchSolution, OpfOptions, OpfStatus, solve_opf_batch
from .netmodel import Network

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoadScenario:
    p_load: np.ndarray
    q_load: np.ndarray
    tag: Any = None

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.p_load, self.q_load])

    @classmethod
    def from_vector(cls, vec, tag=None) -> "LoadScenario":
        vec = np.asarray(vec, dtype=float)
        half = vec.shape[0] // 2
        return cls(vec[:half].copy(), vec[half:].copy(), tag)


def stack(scenarios: Sequence[LoadScenario]) -> tuple[np.ndarray, np.ndarray]:
    """(P, Q) arrays of shape (n, n_pq)."""
    return (np.stack([s.p_load for s in scenarios]), np.stack([s.q_load for s in scenarios]))


def as_matrix(scenarios: Sequence[LoadScenario]) -> np.ndarray:
    return np.stack([s.vector for s in scenarios])


class Family(str, enum.Enum):
    UNIFORM_INDEP = "UNIFORM_INDEP"
    NORMAL_INDEP = "NORMAL_INDEP"
    MVN = "MVN"


@dataclass(frozen=True)
class DistributionSpec:
    """Fitted load distribution.

    ``params`` holds ``lo``/``hi`` (uniform), ``mean``/``std`` (normal) or
    ``mean``/``cov``/``chol`` (MVN, ``chol`` lower triangular).
    """

    family: Family
    params: dict

    @property
    def dim(self) -> int:
        return len(next(iter(self.params.values())))

    def to_json(self) -> str:
        return json.dumps({"family": self.family.value,
                           "params": {k: np.asarray(v).tolist() for k, v in self.params.items()}},
                          indent=1)

    @classmethod
    def from_json(cls, text: str) -> "DistributionSpec":
        doc = json.loads(text)
        params = {k: np.asarray(v, dtype=float) for k, v in doc["params"].items()}
        spec = cls(Family(doc["family"]), params)
        if spec.family is Family.MVN and "chol" not in params:
            params["chol"] = regularized_cholesky(params["cov"])
        return spec


def regularized_cholesky(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``cov`` with escalating diagonal jitter.

    Starts at 1e-10 * trace/n and grows tenfold up to 1e-6 * trace/n.
    """
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0]
    scale = np.trace(cov) / n if n else 0.0
    if scale == 0.0:
        return np.zeros_like(cov)
    rel = 1e-10
    while True:
        try:
            return np.linalg.cholesky(cov + rel * scale * np.eye(n))
        except np.linalg.LinAlgError:
            if rel >= 1e-6:
                raise
            rel *= 10


def fit(family, historical: Sequence[LoadScenario]) -> DistributionSpec:
    family = Family(family)
    if len(historical) < 2:
        raise ValueError(f"fit needs at least 2 samples, got {len(historical)}")
    x = as_matrix(historical)
    if family is Family.UNIFORM_INDEP:
        return DistributionSpec(family, {"lo": x.min(axis=0), "hi": x.max(axis=0)})
    if family is Family.NORMAL_INDEP:
        return DistributionSpec(family, {"mean": x.mean(axis=0), "std": x.std(axis=0, ddof=1)})
    cov = np.cov(x, rowvar=False, ddof=1).reshape(x.shape[1], x.shape[1])
    cov = 0.5 * (cov + cov.T)
    return DistributionSpec(family, {"mean": x.mean(axis=0), "cov": cov,
                                     "chol": regularized_cholesky(cov)})


def mvn_spec(mean, cov) -> DistributionSpec:
    cov = np.asarray(cov, dtype=float)
    return DistributionSpec(Family.MVN, {"mean": np.asarray(mean, dtype=float), "cov": cov,
                                         "chol": regularized_cholesky(cov)})


def sample_matrix(spec: DistributionSpec, n: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    p = spec.params
    if spec.family is Family.UNIFORM_INDEP:
        lo, hi = np.asarray(p["lo"]), np.asarray(p["hi"])
        draws = lo + (hi - lo) * rng.random((n, lo.size))
        return np.clip(draws, lo, hi)
    if spec.family is Family.NORMAL_INDEP:
        mean, std = np.asarray(p["mean"]), np.asarray(p["std"])
        return mean + std * rng.standard_normal((n, mean.size))
    mean, chol = np.asarray(p["mean"]), np.asarray(p["chol"])
    return mean + rng.standard_normal((n, mean.size)) @ chol.T


def sample(spec: DistributionSpec, n: int, seed: int) -> list[LoadScenario]:
    """Draw ``n`` scenarios; identical (spec, n, seed) give identical draws."""
    return [LoadScenario.from_vector(row) for row in sample_matrix(spec, n, seed)]


def correlation(historical: Sequence[LoadScenario], bus_i: int, bus_j: int,
                pq_ids: Optional[Sequence[int]] = None, quantity: str = "p") -> float:
    """Pearson correlation of two buses' loads over time.

    ``bus_i``/``bus_j`` are positions in the PQ vector, or bus ids when
    ``pq_ids`` is given.
    """
    if len(historical) < 2:
        raise ValueError("correlation needs at least 2 samples")
    if pq_ids is not None:
        pos = {b: k for k, b in enumerate(pq_ids)}
        bus_i, bus_j = pos[bus_i], pos[bus_j]
    attr = "p_load" if quantity == "p" else "q_load"
    a = np.array([getattr(s, attr)[bus_i] for s in historical])
    b = np.array([getattr(s, attr)[bus_j] for s in historical])
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise ValueError("correlation undefined for a zero-variance series")
    a = a - a.mean()
    b = b - b.mean()
    r = float(a @ b / math.sqrt((a @ a) * (b @ b)))
    return max(-1.0, min(1.0, r))


# ---------------------------------------------------------------------------
# labeling

@dataclass
class LabeledDataset:
    scenarios: list[LoadScenario]
    solutions: list[DispatchSolution]
    indices: list[int] = field(default_factory=list)   # position in the input scenario list
    excluded: list[int] = field(default_factory=list)
    role: Optional[str] = None  # "train" / "test" once split

    def __post_init__(self):
        if not self.indices:
            self.indices = list(range(len(self.scenarios)))

    def __len__(self) -> int:
        return len(self.scenarios)

    def subset(self, positions: Sequence[int], role: Optional[str] = None) -> "LabeledDataset":
        return LabeledDataset([self.scenarios[k] for k in positions],
                              [self.solutions[k] for k in positions],
                              [self.indices[k] for k in positions], [], role)


def _label_chunk(args):
    net, p, q, warm, opts = args
    return solve_opf_batch(net, p, q, warm, opts)


def label(scenarios: Sequence[LoadScenario], net: Network, warm=None,
          opts: Optional[OpfOptions] = None, jobs: int = 1,
          batch_size: int = 256) -> LabeledDataset:
    """Pair each scenario with its OPF optimum; failures are excluded.

    ``warm`` is an optional (n, n_gen) array of generation starting points.
    Chunking depends only on ``batch_size``, so serial and parallel runs
    produce bit-identical labels.
    """
    n = len(scenarios)
    if n == 0:
        return LabeledDataset([], [], [], [])
    p, q = stack(scenarios)
    warm_arr = None if warm is None else np.broadcast_to(
        np.asarray(warm, dtype=float), (n, len(net.generators)))
    chunks = []
    for lo in range(0, n, batch_size):
        hi = min(n, lo + batch_size)
        chunks.append((net, p[lo:hi], q[lo:hi],
                       None if warm_arr is None else warm_arr[lo:hi], opts))
    if jobs > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_label_chunk, chunks))
    else:
        results = [_label_chunk(c) for c in chunks]
    sols = [s for chunk in results for s in chunk]

    keep = [k for k, s in enumerate(sols) if s.status is OpfStatus.OPTIMAL]
    excluded = [k for k, s in enumerate(sols) if s.status is not OpfStatus.OPTIMAL]
    if excluded:
        log.info("labeling excluded %d of %d scenarios", len(excluded), n)
    return LabeledDataset([scenarios[k] for k in keep], [_strip(sols[k]) for k in keep],
                          keep, excluded)


def _strip(sol: DispatchSolution) -> DispatchSolution:
    return DispatchSolution(sol.p_gen, sol.q_gen, sol.v_mag, sol.theta, sol.objective,
                            sol.status, sol.iterations, sol.kkt, None)


class SplitPolicy(str, enum.Enum):
    ALL = "ALL"
    FIRST_HALF_TRAIN = "FIRST_HALF_TRAIN"


def split(dataset: LabeledDataset, policy) -> tuple[LabeledDataset, LabeledDataset]:
    """Split into (train, test).

    ``ALL`` returns the full set as both; ``FIRST_HALF_TRAIN`` orders by tag
    and puts the first ceil(n/2) samples in train.
    """
    policy = SplitPolicy(policy)
    n = len(dataset)
    if policy is SplitPolicy.ALL:
        allpos = list(range(n))
        return dataset.subset(allpos, "train"), dataset.subset(allpos, "test")
    if any(s.tag is None for s in dataset.scenarios):
        raise ValueError("FIRST_HALF_TRAIN needs time-tagged scenarios")
    order = sorted(range(n), key=lambda k: dataset.scenarios[k].tag)
    cut = (n + 1) // 2
    return dataset.subset(order[:cut], "train"), dataset.subset(order[cut:], "test")


# ---------------------------------------------------------------------------
# file formats

def write_scenarios_csv(path, net: Network, scenarios: Iterable[LoadScenario]) -> None:
    ids = [net.buses[i].id for i in net.pq]
    base = net.base_mva
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["tag"] + [f"p_{b}" for b in ids] + [f"q_{b}" for b in ids])
        for s in scenarios:
            w.writerow([("" if s.tag is None else s.tag)]
                       + [repr(float(v) * base) for v in s.p_load]
                       + [repr(float(v) * base) for v in s.q_load])


def read_scenarios_csv(path, net: Network) -> list[LoadScenario]:
    """Read a scenario CSV in MW/MVAr; missing bus columns default to 0."""
    ids = [net.buses[i].id for i in net.pq]
    base = net.base_mva
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or [])
        unknown = [c for c in cols if c != "tag" and
                   not (c[:2] in ("p_", "q_") and c[2:].lstrip("-").isdigit()
                        and int(c[2:]) in ids)]
        if unknown:
            raise ValueError(f"{path}: columns not matching PQ buses: {sorted(unknown)}")
        for row in reader:
            p = np.array([float(row.get(f"p_{b}") or 0.0) / base for b in ids])
            q = np.array([float(row.get(f"q_{b}") or 0.0) / base for b in ids])
            tag = row.get("tag") or None
            out.append(LoadScenario(p, q, _parse_tag(tag)))
    return out


def _parse_tag(tag):
    if tag is None:
        return None
    try:
        return int(tag)
    except ValueError:
        return tag


def write_dataset_jsonl(path, dataset: LabeledDataset) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for idx, s, sol in zip(dataset.indices, dataset.scenarios, dataset.solutions):
            fh.write(json.dumps({"index": idx, "tag": s.tag, "p_load": s.p_load.tolist(),
                                 "q_load": s.q_load.tolist(), "solution": sol.to_dict()}) + "\n")


def read_dataset_jsonl(path) -> LabeledDataset:
    scen, sols, idx = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            scen.append(LoadScenario(np.asarray(d["p_load"], dtype=float),
                                     np.asarray(d["q_load"], dtype=float), d.get("tag")))
            sols.append(DispatchSolution.from_dict(d["solution"]))
            idx.append(int(d["index"]))
    return LabeledDataset(scen, sols, idx, [])
