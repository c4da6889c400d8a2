"""Feedforward dispatch predictor and its feasibility-aware training.

The network maps ``p_load || q_load`` on the PQ buses to sigmoid outputs in
(0, 1) that are unscaled into generator-bus voltage setpoints followed by
non-slack active generations.  A Newton power flow completes the operating
point.  Training minimises the scaled MSE to ground-truth setpoints and, from
``penalty_start_epoch`` on, a weighted constraint penalty whose gradient is
estimated by two-point random-direction finite differences.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .acopf import DispatchSolution, OpfStatus
from .netmodel import Network, branch_matrices, build_ybus
from .powerflow import (PfInit, PfOptions, bus_setpoint_limits, mean_init,
                        solve_pf_batch, split_to_generators)

MODEL_MAGIC = "gridlearn-mlp/1"


@dataclass
class MlpModel:
    weights: list        # W_i of shape (out, in)
    biases: list
    lo: np.ndarray       # per-output operating limits
    hi: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        self.lo.copy(), self.hi.copy(), json.loads(json.dumps(self.meta)))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr_start: float = 1e-4
    lr_end: float = 1e-9
    penalty_start_epoch: int = 101
    penalty_weight: float = 0.1
    zo_delta: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    hidden: tuple = (512, 256, 128)
    optimizer: str = "sgd"
    penalty_constant: float = 10.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.lr_end <= self.lr_start:
            raise ValueError("need 0 < lr_end <= lr_start")
        if self.penalty_start_epoch < 1:
            raise ValueError("penalty_start_epoch must be >= 1")
        if self.zo_delta <= 0:
            raise ValueError("zo_delta must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown training options: {sorted(extra)}")
        return cls(**d)


@dataclass
class TrainHistory:
    pred_loss: list = field(default_factory=list)
    penalty_loss: list = field(default_factory=list)   # nan before the penalty starts
    lr: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# model arithmetic

def sigmoid(z):
    # split form avoids overflow warnings for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_model(dims: Sequence[int], limits, seed: int) -> MlpModel:
    """Uniform(-sqrt(1/k), sqrt(1/k)) weights and biases, k = layer width."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"invalid layer dims {dims}")
    lo, hi = (np.asarray(a, dtype=float) for a in limits)
    if lo.shape != (dims[-1],) or hi.shape != (dims[-1],):
        raise ValueError("limits must match the output width")
    if not np.all(lo < hi):
        raise ValueError("scaling limits need lo < hi for every output")
    rng = np.random.Generator(np.random.PCG64(seed))
    ws, bs = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(1.0 / d_out)
        ws.append(rng.uniform(-bound, bound, size=(d_out, d_in)))
        bs.append(rng.uniform(-bound, bound, size=d_out))
    return MlpModel(ws, bs, lo, hi, {"seed": int(seed)})


def _forward(model: MlpModel, x: np.ndarray):
    acts = [x]
    pre = []
    a = x
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        pre.append(z)
        a = sigmoid(z) if k == last else np.maximum(z, 0.0)
        acts.append(a)
    return acts, pre


def forward(model: MlpModel, x) -> np.ndarray:
    """Sigmoid outputs in (0, 1); accepts one input vector or a (B, in) batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.layer_dims[0]:
        raise ValueError(f"input length {x.shape[-1]} does not match model input "
                         f"{model.layer_dims[0]}")
    acts, _ = _forward(model, np.atleast_2d(x))
    return acts[-1][0] if x.ndim == 1 else acts[-1]


def backward(model: MlpModel, acts, pre, d_out):
    """Parameter gradients given dLoss/d(sigmoid output) for a batch."""
    grads_w, grads_b = [], []
    out = acts[-1]
    dz = d_out * out * (1.0 - out)
    for k in range(len(model.weights) - 1, -1, -1):
        grads_w.append(dz.T @ acts[k])
        grads_b.append(dz.sum(axis=0))
        if k:
            da = dz @ model.weights[k]
            dz = da * (pre[k - 1] > 0)
    return grads_w[::-1], grads_b[::-1]


def unscale(raw, lo, hi):
    return np.asarray(lo) + np.asarray(raw) * (np.asarray(hi) - np.asarray(lo))


def scale(value, lo, hi):
    return (np.asarray(value) - np.asarray(lo)) / (np.asarray(hi) - np.asarray(lo))


def prediction_loss(model: MlpModel, x, y_true):
    """Scaled-space MSE averaged over outputs and over the batch.

    Returns ``(loss, (grads_w, grads_b))``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y_true = np.atleast_2d(np.asarray(y_true, dtype=float))
    acts, pre = _forward(model, x)
    diff = acts[-1] - y_true
    n, d = diff.shape
    loss = float((diff ** 2).sum() / (n * d))
    grads = backward(model, acts, pre, 2.0 * diff / (n * d))
    return loss, grads


def penalty_term(value, lo, hi):
    """Distance of ``value`` outside ``[lo, hi]`` (0 inside)."""
    value = np.asarray(value, dtype=float)
    return np.maximum(value - hi, 0.0) + np.maximum(lo - value, 0.0)


# ---------------------------------------------------------------------------
# power-flow-backed penalty

class PenaltyEvaluator:
    """Batched constraint penalty of power-flow completed setpoints."""

    def __init__(self, net: Network, init: Optional[PfInit] = None,
                 pf_opts: Optional[PfOptions] = None, failure_penalty: float = 10.0):
        self.net = net
        self.init = init or PfInit.flat(net)
        self.pf_opts = pf_opts or PfOptions()
        self.failure_penalty = failure_penalty
        self.ybus = build_ybus(net)
        self.mats = branch_matrices(net)
        self.v_lo, self.v_hi, self.p_lo, self.p_hi = bus_setpoint_limits(net)
        nb = net.n_bus
        pos = net.gen_bus_index
        self.q_lo = np.bincount(pos, weights=net.q_bounds[0], minlength=nb)[net.gen_buses]
        self.q_hi = np.bincount(pos, weights=net.q_bounds[1], minlength=nb)[net.gen_buses]
        p_lo_all = np.bincount(pos, weights=net.p_bounds[0], minlength=nb)
        p_hi_all = np.bincount(pos, weights=net.p_bounds[1], minlength=nb)
        self.slack_p = (p_lo_all[net.slack], p_hi_all[net.slack])
        self.slack_pos = int(np.flatnonzero(net.gen_buses == net.slack)[0])
        self.n_v = len(net.gen_buses)

    @property
    def limits(self):
        return (np.concatenate([self.v_lo, self.p_lo]), np.concatenate([self.v_hi, self.p_hi]))

    def split(self, setpoints):
        return setpoints[:, :self.n_v], setpoints[:, self.n_v:]

    def solve(self, p_load, q_load, setpoints):
        v_set, p_set = self.split(np.atleast_2d(setpoints))
        return solve_pf_batch(self.net, p_load, q_load, v_set, p_set,
                              self.init.v_mag0, self.init.theta0, self.pf_opts, self.ybus)

    def from_pf(self, pf):
        """Penalty per sample from a solved batch."""
        net = self.net
        yf, yt, cf, ct = self.mats
        v = pf.v_mag * np.exp(1j * pf.theta)
        sf = (v @ cf.T) * np.conj(v @ yf.T)
        st = (v @ ct.T) * np.conj(v @ yt.T)
        smax = net.s_max
        flow = np.maximum(np.abs(sf), np.abs(st))
        pen_s = np.where(smax > 0, np.maximum(flow - smax, 0.0), 0.0)
        v_lo, v_hi = net.v_bounds
        pq = net.pq
        pen_v = penalty_term(pf.v_mag[:, pq], v_lo[pq], v_hi[pq])
        pen_q = penalty_term(pf.q_gen, self.q_lo, self.q_hi)
        pen_p0 = penalty_term(pf.p_slack, *self.slack_p)
        pen_q0 = pen_q[:, self.slack_pos]
        total = (pen_s.sum(axis=1) / max(len(net.branches), 1)
                 + (pen_v.sum(axis=1) / len(pq) if len(pq) else 0.0)
                 + pen_q.sum(axis=1) / pen_q.shape[1]
                 + pen_p0 + pen_q0)
        return np.where(pf.converged, total, self.failure_penalty)

    def __call__(self, p_load, q_load, setpoints):
        pf = self.solve(p_load, q_load, setpoints)
        return self.from_pf(pf), pf.converged


def total_penalty(net: Network, scenario, setpoint, init: Optional[PfInit] = None,
                  evaluator: Optional[PenaltyEvaluator] = None) -> float:
    """Constraint penalty of one physical setpoint (voltages then P)."""
    ev = evaluator or PenaltyEvaluator(net, init)
    pen, _ = ev(scenario.p_load[None], scenario.q_load[None], np.asarray(setpoint)[None])
    return float(pen[0])


def unit_sphere(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def zero_order_gradient(loss: Callable, y_hat, delta: float, seed=None, direction=None):
    """Two-point random-direction estimate of the gradient of ``loss`` at ``y_hat``.

    ``seed`` may be an int or a Generator; ``direction`` overrides the draw.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    y_hat = np.atleast_1d(np.asarray(y_hat, dtype=float))
    d = y_hat.size
    if direction is None:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        direction = unit_sphere(rng, 1, d)[0]
    v = np.asarray(direction, dtype=float)
    return d / (2 * delta) * v * (loss(y_hat + v * delta) - loss(y_hat - v * delta))


# ---------------------------------------------------------------------------
# training

def setpoint_targets(net: Network, solutions: Sequence[DispatchSolution]) -> np.ndarray:
    """Ground-truth (voltages at generator buses || P at PV buses) per solution."""
    vm = np.stack([s.v_mag for s in solutions])[:, net.gen_buses]
    pg = np.stack([s.p_gen for s in solutions]) @ net.gen_incidence.T
    return np.concatenate([vm, pg[:, net.pv]], axis=1)


def lr_schedule(cfg: TrainConfig) -> np.ndarray:
    return np.logspace(math.log10(cfg.lr_start), math.log10(cfg.lr_end), cfg.epochs)


class _Adam:
    def __init__(self, params, b1=0.9, b2=0.999, eps=1e-8):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.b1, self.b2, self.eps, self.t = b1, b2, eps, 0

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _fold_input_scaling(model: MlpModel, mean, std):
    w = model.weights[0]
    model.biases[0] = model.biases[0] - w @ (mean / std)
    model.weights[0] = w / std


def train(dataset, net: Network, config: TrainConfig,
          pf_init: Optional[PfInit] = None, log: Optional[Callable] = None):
    """Fit a dispatch predictor to a labeled dataset.

    Inputs are standardised during optimisation and the affine map is folded
    back into the first layer afterwards, so the returned model consumes raw
    per-unit loads.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    from .scenarios import as_matrix, stack

    pf_init = pf_init or mean_init(dataset.solutions)
    evaluator = PenaltyEvaluator(net, pf_init, failure_penalty=config.penalty_constant)
    lo, hi = evaluator.limits
    x = as_matrix(dataset.scenarios)
    p_all, q_all = stack(dataset.scenarios)
    y = np.clip(scale(setpoint_targets(net, dataset.solutions), lo, hi), 0.0, 1.0)

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    xs = (x - mean) / std

    from .seeding import derive_seed, rng as make_rng
    dims = [x.shape[1], *config.hidden, y.shape[1]]
    model = init_model(dims, (lo, hi), derive_seed(config.seed, "init"))
    params = model.weights + model.biases
    adam = _Adam(params) if config.optimizer == "adam" else None
    lrs = lr_schedule(config)
    hist = TrainHistory()
    n, d = y.shape
    bs = max(1, min(config.batch_size, n))

    for epoch in range(1, config.epochs + 1):
        lr = float(lrs[epoch - 1])
        order = make_rng(config.seed, "shuffle", epoch).permutation(n)
        zo_rng = make_rng(config.seed, "zo", epoch)
        use_pen = epoch >= config.penalty_start_epoch
        pred_sum, pen_sum = 0.0, 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            acts, pre = _forward(model, xs[idx])
            out = acts[-1]
            diff = out - y[idx]
            m = len(idx)
            pred_sum += float((diff ** 2).sum() / d)
            d_out = 2.0 * diff / (m * d)
            if use_pen:
                g_pen, pen = _zo_penalty_batch(evaluator, p_all[idx], q_all[idx], out, lo, hi,
                                               config.zo_delta, zo_rng)
                pen_sum += float(pen.sum())
                d_out = d_out + config.penalty_weight * g_pen / m
            gw, gb = backward(model, acts, pre, d_out)
            grads = gw + gb
            if adam is None:
                for p, g in zip(params, grads):
                    p -= lr * g
            else:
                adam.step(params, grads, lr)
        hist.pred_loss.append(pred_sum / n)
        hist.penalty_loss.append(pen_sum / n if use_pen else float("nan"))
        hist.lr.append(lr)
        if log is not None:
            log(epoch, hist)

    _fold_input_scaling(model, mean, std)
    model.meta.update({
        "seed": int(config.seed),
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(config).items()},
        "pf_init": {"v_mag0": pf_init.v_mag0.tolist(), "theta0": pf_init.theta0.tolist()},
        "n_train": int(n),
    })
    return model, hist


def _zo_penalty_batch(evaluator: PenaltyEvaluator, p_load, q_load, out, lo, hi, delta, rng):
    """Per-sample zero-order penalty gradients w.r.t. the scaled outputs."""
    m, d = out.shape
    v = unit_sphere(rng, m, d)
    plus = unscale(out + delta * v, lo, hi)
    minus = unscale(out - delta * v, lo, hi)
    pen, ok = evaluator(np.concatenate([p_load, p_load]), np.concatenate([q_load, q_load]),
                        np.concatenate([plus, minus]))
    lp, lm = pen[:m], pen[m:]
    good = ok[:m] & ok[m:]
    g = np.where(good[:, None], d / (2 * delta) * v * (lp - lm)[:, None], 0.0)
    return g, 0.5 * (lp + lm)


# ---------------------------------------------------------------------------
# prediction

def model_pf_init(model: MlpModel, net: Network) -> PfInit:
    init = model.meta.get("pf_init")
    if init is None:
        return PfInit.flat(net)
    return PfInit(np.asarray(init["v_mag0"], dtype=float), np.asarray(init["theta0"], dtype=float))


def _assemble(net: Network, evaluator: PenaltyEvaluator, setpoints, pf):
    """Full per-generator dispatch from setpoints and solved power flows."""
    bsz = setpoints.shape[0]
    _, p_set = evaluator.split(setpoints)
    pos = {b: k for k, b in enumerate(net.gen_buses)}
    p_bus = np.zeros((bsz, len(net.gen_buses)))
    p_bus[:, [pos[b] for b in net.pv]] = p_set
    p_bus[:, evaluator.slack_pos] = pf.p_slack
    return split_to_generators(net, p_bus, pf.q_gen)


def predict_batch(model: MlpModel, net: Network, p_load, q_load,
                  pf_init: Optional[PfInit] = None, evaluator=None) -> list[DispatchSolution]:
    """Vectorised composite prediction for many scenarios."""
    ev = evaluator or PenaltyEvaluator(net, pf_init or model_pf_init(model, net))
    x = np.concatenate([p_load, q_load], axis=1)
    setpoints = unscale(forward(model, x), model.lo, model.hi)
    pf = ev.solve(p_load, q_load, setpoints)
    pg, qg = _assemble(net, ev, setpoints, pf)
    cost = net.generation_cost(pg)
    return [DispatchSolution(pg[k], qg[k], pf.v_mag[k], pf.theta[k], float(cost[k]),
                             OpfStatus.OPTIMAL if pf.converged[k] else OpfStatus.INFEASIBLE,
                             int(pf.iterations[k]))
            for k in range(len(cost))]


def predict_dispatch(model: MlpModel, net: Network, scenario,
                     pf_init: Optional[PfInit] = None, evaluator=None):
    """Forward pass, unscaling and power flow for one scenario.

    Returns ``(solution, seconds)``; a non-converged power flow is flagged
    with status INFEASIBLE.
    """
    ev = evaluator or PenaltyEvaluator(net, pf_init or model_pf_init(model, net))
    t0 = time.perf_counter()
    x = np.concatenate([scenario.p_load, scenario.q_load])[None]
    setpoints = unscale(forward(model, x), model.lo, model.hi)
    pf = ev.solve(scenario.p_load[None], scenario.q_load[None], setpoints)
    pg, qg = _assemble(net, ev, setpoints, pf)
    cost = float(net.generation_cost(pg[0]))
    elapsed = time.perf_counter() - t0
    sol = DispatchSolution(pg[0], qg[0], pf.v_mag[0], pf.theta[0], cost,
                           OpfStatus.OPTIMAL if pf.converged[0] else OpfStatus.INFEASIBLE,
                           int(pf.iterations[0]))
    return sol, elapsed


# ---------------------------------------------------------------------------
# persistence: JSON header line, then little-endian float64 weights

def save_model(path, model: MlpModel) -> None:
    header = {"format": MODEL_MAGIC, "dims": model.layer_dims,
              "lo": model.lo.tolist(), "hi": model.hi.tolist(), "meta": model.meta}
    flat = np.concatenate([np.concatenate([w.ravel(), b.ravel()])
                           for w, b in zip(model.weights, model.biases)])
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(flat.astype("<f8").tobytes())


def load_model(path) -> MlpModel:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        blob = fh.read()
    if header.get("format") != MODEL_MAGIC:
        raise ValueError(f"{path}: not a {MODEL_MAGIC} model file")
    flat = np.frombuffer(blob, dtype="<f8").astype(float)
    dims = header["dims"]
    ws, bs, at = [], [], 0
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        ws.append(flat[at:at + d_in * d_out].reshape(d_out, d_in).copy())
        at += d_in * d_out
        bs.append(flat[at:at + d_out].copy())
        at += d_out
    if at != flat.size:
        raise ValueError(f"{path}: weight blob has {flat.size} values, expected {at}")
    return MlpModel(ws, bs, np.asarray(header["lo"]), np.asarray(header["hi"]),
                    header.get("meta", {}))
