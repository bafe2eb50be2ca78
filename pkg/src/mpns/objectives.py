"""Loss terms for training the decomposition model with PNS objectives.

Two scalar losses are combined throughout:

* ``loss_p`` - binary cross entropy, small when the prediction matches ``y``;
* ``loss_c`` - ``1 / (theta + |y - y_hat|)``, small when the prediction is far
  from ``y``.

Per modality ``m`` the invariant terms score the auxiliary predictor
``aux_inv{m}`` on the feature representation (``inv_r``) and on the complement
representation (``inv_cr``); ``inv_constr`` is their per-sample product. The
specific terms mirror this with ``aux_spec{m}``, except that ``spec_constr``
applies ``loss_c`` between ``aux_spec{m}`` on ``R_S^m`` and the same predictor
on the *other* modality's complement ``C_S^{m'}``.

Every term is averaged over the minibatch. :func:`total_loss` returns the
breakdown together with dL/d(prediction) for every predictor output, and
:func:`backward` turns those into parameter gradients for all networks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import PROB_CLAMP, ContractError, ParamSet, TapeRecord, mlp_backward, mlp_forward
from .model import AUX_NETS, COMPLEMENT_NETS, DecompModel

MODES = ("net", "mpns_minus_c", "mpns")
TERM_NAMES = ("inv_r", "inv_cr", "inv_constr", "spec_r", "spec_cr", "spec_constr")


@dataclass(frozen=True)
class LossConfig:
    theta: float = 0.01
    w_r: float = 1.0
    w_cr: float = 1.0
    w_constr: float = 1.0
    mode: str = "mpns"

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if min(self.w_r, self.w_cr, self.w_constr) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def _check_prob(p: np.ndarray) -> None:
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ContractError("predicted probabilities must lie in [0, 1]")


def loss_p(y, y_hat):
    """Binary cross entropy on the clamped probability."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    _check_prob(y_hat)
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(y_hat, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def loss_p_grad(y, y_hat):
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(y_hat, PROB_CLAMP, 1.0 - PROB_CLAMP)
    inside = (y_hat > PROB_CLAMP) & (y_hat < 1.0 - PROB_CLAMP)
    return (-y / p + (1.0 - y) / (1.0 - p)) * inside


def loss_c(y, y_hat, theta: float = 0.01):
    if theta <= 0:
        raise ContractError(f"theta must be positive, got {theta}")
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(y_hat))):
        raise ContractError("loss_c inputs must be finite")
    return 1.0 / (theta + np.abs(y - y_hat))


def loss_c_grads(y, y_hat, theta: float = 0.01):
    """Partial derivatives of :func:`loss_c` w.r.t. ``y`` and ``y_hat``."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    diff = y_hat - y
    g = -np.sign(diff) / (theta + np.abs(diff)) ** 2
    return -g, g


@dataclass
class ForwardPass:
    """Every representation and prediction for one minibatch, with tapes.

    Batched networks see stacked inputs: ``enc_inv``/``comp_inv`` get
    ``[x1; x2]``, ``aux_inv{m}`` gets ``[R_I^m; C_I^m]`` and ``aux_spec{m}``
    gets ``[R_S^m; C_S^m; C_S^{m'}]``.
    """

    n: int
    reps: dict[str, np.ndarray]
    preds: dict[str, np.ndarray]
    tapes: dict[str, TapeRecord] = field(repr=False)


def forward_pass(model: DecompModel, x1, x2) -> ForwardPass:
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    x2 = np.atleast_2d(np.asarray(x2, dtype=np.float64))
    if x1.shape != x2.shape:
        raise ContractError(f"modality batches differ in shape: {x1.shape} vs {x2.shape}")
    if model.inference_only:
        raise ContractError("training forward needs the full model")
    n = x1.shape[0]
    nets = model.nets
    tapes = {}
    reps = {}

    def run(name, x):
        out, tapes[name] = mlp_forward(nets[name].spec, nets[name], x)
        return out

    both = np.concatenate([x1, x2])
    r_inv = run("enc_inv", both)
    c_inv = run("comp_inv", both)
    reps["r_inv1"], reps["r_inv2"] = r_inv[:n], r_inv[n:]
    reps["c_inv1"], reps["c_inv2"] = c_inv[:n], c_inv[n:]
    for m, x in ((1, x1), (2, x2)):
        reps[f"r_spec{m}"] = run(f"enc_spec{m}", x)
        reps[f"c_spec{m}"] = run(f"comp_spec{m}", x)

    preds = {}
    main_in = np.concatenate([reps["r_inv1"], reps["r_inv2"], reps["r_spec1"], reps["r_spec2"]],
                             axis=1)
    preds["main"] = run("pred_main", main_in)[:, 0]
    for m in (1, 2):
        other = 3 - m
        out = run(f"aux_inv{m}", np.concatenate([reps[f"r_inv{m}"], reps[f"c_inv{m}"]]))[:, 0]
        preds[f"inv_r{m}"], preds[f"inv_c{m}"] = out[:n], out[n:]
        out = run(f"aux_spec{m}", np.concatenate(
            [reps[f"r_spec{m}"], reps[f"c_spec{m}"], reps[f"c_spec{other}"]]))[:, 0]
        preds[f"spec_r{m}"], preds[f"spec_c{m}"], preds[f"spec_x{m}"] = (
            out[:n], out[n:2 * n], out[2 * n:])
    return ForwardPass(n, reps, preds, tapes)


@dataclass
class LossBreakdown:
    mode: str
    task: float
    terms: dict[int, dict[str, float]]
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    def contribution(self, m: int, name: str) -> float:
        """Weighted amount ``terms[m][name]`` adds to the total under this mode."""
        w_r, w_cr, w_constr = self.weights
        if self.mode == "net":
            return 0.0
        if name.endswith("_constr"):
            return w_constr * self.terms[m][name] if self.mode == "mpns" else 0.0
        return (w_r if name.endswith("_r") else w_cr) * self.terms[m][name]

    @property
    def total(self) -> float:
        return self.task + sum(self.contribution(m, k) for m in (1, 2) for k in TERM_NAMES)

    def constraint_sum(self) -> float:
        return sum(self.terms[m][k] for m in (1, 2) for k in ("inv_constr", "spec_constr"))

    def as_dict(self) -> dict[str, float | str]:
        out: dict[str, float | str] = {"mode": self.mode, "task": self.task}
        for m in (1, 2):
            for k in TERM_NAMES:
                out[f"{k}_{m}"] = self.terms[m][k]
        out["total"] = self.total
        return out

    def values(self) -> np.ndarray:
        return np.array([self.task] + [self.terms[m][k] for m in (1, 2) for k in TERM_NAMES])


def total_loss(mode: str, fwd: ForwardPass, y, cfg: LossConfig | None = None
               ) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Minibatch-mean losses and dL_total/d(prediction) for every prediction."""
    cfg = cfg or LossConfig(mode=mode)
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != fwd.n:
        raise ContractError(f"{y.shape[0]} labels for a forward pass over {fwd.n} samples")
    n = fwd.n
    P = fwd.preds
    th = cfg.theta
    grads = {k: np.zeros(n) for k in P}

    task = loss_p(y, P["main"])
    grads["main"] += loss_p_grad(y, P["main"]) / n

    terms = {}
    use_pns = mode != "net"
    use_constr = mode == "mpns"
    for m in (1, 2):
        t = {}
        for kind in ("inv", "spec"):
            pr, pc = P[f"{kind}_r{m}"], P[f"{kind}_c{m}"]
            lr = loss_p(y, pr)
            lc = loss_c(y, pc, th)
            t[f"{kind}_r"] = lr
            t[f"{kind}_cr"] = lc
            if use_pns:
                grads[f"{kind}_r{m}"] += cfg.w_r * loss_p_grad(y, pr) / n
                grads[f"{kind}_c{m}"] += cfg.w_cr * loss_c_grads(y, pc, th)[1] / n
        t["inv_constr"] = t["inv_r"] * t["inv_cr"]
        if use_constr:
            pr, pc = P[f"inv_r{m}"], P[f"inv_c{m}"]
            grads[f"inv_r{m}"] += cfg.w_constr * t["inv_cr"] * loss_p_grad(y, pr) / n
            grads[f"inv_c{m}"] += cfg.w_constr * t["inv_r"] * loss_c_grads(y, pc, th)[1] / n
        pr, px = P[f"spec_r{m}"], P[f"spec_x{m}"]
        t["spec_constr"] = loss_c(pr, px, th)
        if use_constr:
            g_r, g_x = loss_c_grads(pr, px, th)
            grads[f"spec_r{m}"] += cfg.w_constr * g_r / n
            grads[f"spec_x{m}"] += cfg.w_constr * g_x / n
        terms[m] = {k: float(np.mean(t[k])) for k in TERM_NAMES}

    bd = LossBreakdown(mode, float(np.mean(task)), terms, (cfg.w_r, cfg.w_cr, cfg.w_constr))
    return bd, grads


def backward(model: DecompModel, fwd: ForwardPass, pred_grads: dict[str, np.ndarray],
             mode: str = "mpns") -> dict[str, ParamSet]:
    """Parameter gradients of every network given dL/d(prediction).

    With ``mode="net"`` only the main predictor and feature encoders are
    visited; complement and auxiliary gradients stay exactly zero.
    """
    nets = model.nets
    n = fwd.n
    grads = {k: v.zeros_like() for k, v in nets.items()}
    rep_grads = {k: np.zeros_like(v) for k, v in fwd.reps.items()}

    def back(name, out_grad):
        if out_grad.ndim == 1:
            out_grad = out_grad[:, None]
        g, gin = mlp_backward(nets[name].spec, nets[name], fwd.tapes[name], out_grad)
        grads[name].flat += g.flat
        return gin

    gin = back("pred_main", pred_grads["main"])
    d_inv, d_spec = model.arch.d_inv, model.arch.d_spec
    cuts = np.cumsum([d_inv, d_inv, d_spec])
    g1, g2, g3, g4 = np.split(gin, cuts, axis=1)
    rep_grads["r_inv1"] += g1
    rep_grads["r_inv2"] += g2
    rep_grads["r_spec1"] += g3
    rep_grads["r_spec2"] += g4

    if mode != "net":
        for m in (1, 2):
            other = 3 - m
            gin = back(f"aux_inv{m}", np.concatenate(
                [pred_grads[f"inv_r{m}"], pred_grads[f"inv_c{m}"]]))
            rep_grads[f"r_inv{m}"] += gin[:n]
            rep_grads[f"c_inv{m}"] += gin[n:]
            gin = back(f"aux_spec{m}", np.concatenate(
                [pred_grads[f"spec_r{m}"], pred_grads[f"spec_c{m}"], pred_grads[f"spec_x{m}"]]))
            rep_grads[f"r_spec{m}"] += gin[:n]
            rep_grads[f"c_spec{m}"] += gin[n:2 * n]
            rep_grads[f"c_spec{other}"] += gin[2 * n:]

    back("enc_inv", np.concatenate([rep_grads["r_inv1"], rep_grads["r_inv2"]]))
    back("enc_spec1", rep_grads["r_spec1"])
    back("enc_spec2", rep_grads["r_spec2"])
    if mode != "net":
        back("comp_inv", np.concatenate([rep_grads["c_inv1"], rep_grads["c_inv2"]]))
        back("comp_spec1", rep_grads["c_spec1"])
        back("comp_spec2", rep_grads["c_spec2"])
    return grads


def loss_and_grads(model: DecompModel, x1, x2, y, cfg: LossConfig
                   ) -> tuple[LossBreakdown, dict[str, ParamSet]]:
    fwd = forward_pass(model, x1, x2)
    bd, pred_grads = total_loss(cfg.mode, fwd, y, cfg)
    return bd, backward(model, fwd, pred_grads, cfg.mode)


def invariant_pns_loss(model: DecompModel, m: int, y, r_inv, c_inv, cfg: LossConfig | None = None):
    """``(inv_r, inv_cr, inv_constr)`` averaged over the rows of ``r_inv``/``c_inv``."""
    cfg = cfg or LossConfig()
    name = f"aux_inv{m}"
    pr = mlp_forward(model.spec(name), model.nets[name], np.atleast_2d(r_inv))[0][:, 0]
    pc = mlp_forward(model.spec(name), model.nets[name], np.atleast_2d(c_inv))[0][:, 0]
    lr = loss_p(y, pr)
    lc = loss_c(y, pc, cfg.theta)
    return float(np.mean(lr)), float(np.mean(lc)), float(np.mean(lr * lc))


def specific_pns_loss(model: DecompModel, m: int, m_other: int, y, r_spec, c_spec, c_spec_other,
                      cfg: LossConfig | None = None):
    """``(spec_r, spec_cr, spec_constr)``; the constraint compares predictor
    ``aux_spec{m}`` on ``R_S^m`` against the same predictor on ``C_S^{m_other}``."""
    if m == m_other:
        raise ContractError("the constraint needs two different modalities")
    cfg = cfg or LossConfig()
    name = f"aux_spec{m}"

    def f(r):
        return mlp_forward(model.spec(name), model.nets[name], np.atleast_2d(r))[0][:, 0]

    pr, pc, px = f(r_spec), f(c_spec), f(c_spec_other)
    return (float(np.mean(loss_p(y, pr))), float(np.mean(loss_c(y, pc, cfg.theta))),
            float(np.mean(loss_c(pr, px, cfg.theta))))


def zero_grad_nets(mode: str) -> tuple[str, ...]:
    """Networks that receive no gradient under ``mode``."""
    return COMPLEMENT_NETS + AUX_NETS if mode == "net" else ()
