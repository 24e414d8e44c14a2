"""Registry of gradient checks over every differentiable operation.

Each check builds a scalar-valued function with hand-derived gradients and
runs it through the central-difference checker.  The CLI's gradcheck command
and the acceptance suite both consume ``gradient_report``; the threshold for
a pass is a max relative error below 1e-4.

Inputs are seeded and nudged away from documented singular sets (relu kinks,
SIoU center/shape ties), which the checker cannot handle by construction.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .adapter import AdapterLayerWeights, adapt_with_cache, adapter_backward
from .core import (
    attention_pair,
    grad_check,
    linear_pair,
    sigmoid_pair,
    softmax_pair,
)
from .ctp import BBox
from .losses import (
    EpochSchedule,
    l1_loss,
    l1_loss_grad,
    modality_loss,
    modality_loss_grad,
    siou_loss,
    siou_loss_grad,
    template_sim_loss,
    template_sim_loss_grad,
)
from .state_switch import TriState

GRAD_TOL = 1e-4


def _away_from(x: np.ndarray, kink: float = 0.0, margin: float = 1e-3) -> np.ndarray:
    """Push entries out of the +-margin band around a kink."""
    x = x.copy()
    close = np.abs(x - kink) < margin
    x[close] = kink + margin * np.where(x[close] >= kink, 1.0, -1.0) * 2.0
    return x


def check_linear(seed: int) -> float:
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal(4)

    def f(x, w, b):
        pair = linear_pair(x, w, b)
        dx, dw, db = pair.grad_fn(coef)
        return float(coef @ pair.value), [dx, dw, db]

    return grad_check(f, [rng.standard_normal(5), rng.standard_normal((4, 5)), rng.standard_normal(4)])


def check_sigmoid(seed: int) -> float:
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal(6)

    def f(x):
        pair = sigmoid_pair(x)
        (dx,) = pair.grad_fn(coef)
        return float(coef @ pair.value), [dx]

    return grad_check(f, [rng.standard_normal(6)])


def check_softmax(seed: int) -> float:
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal(7)

    def f(x):
        pair = softmax_pair(x)
        (dx,) = pair.grad_fn(coef)
        return float(coef @ pair.value), [dx]

    return grad_check(f, [rng.standard_normal(7)])


def check_attention(seed: int) -> float:
    rng = np.random.default_rng(seed)
    t_tok, s_tok, d = 3, 4, 5
    coef = rng.standard_normal((t_tok, d))

    def f(q, k, v):
        pair = attention_pair(q, k, v)
        dq, dk, dv = pair.grad_fn(coef)
        return float(np.sum(coef * pair.value)), [dq, dk, dv]

    return grad_check(
        f,
        [
            rng.standard_normal((t_tok, d)),
            rng.standard_normal((s_tok, d)),
            rng.standard_normal((s_tok, d)),
        ],
    )


def check_adapter(seed: int) -> float:
    """Full NIR-path adapter: inputs and every weight tensor."""
    rng = np.random.default_rng(seed)
    t_tok, s_tok, d = 4, 2, 8
    f_sr0 = rng.standard_normal((t_tok, d))
    f_dyn0 = rng.standard_normal((s_tok, d))
    gate_w1 = rng.standard_normal((2, d)) / np.sqrt(d)
    gate_b1 = 0.3 * rng.standard_normal(2)
    # keep the gate's relu pre-activations clear of the kink at this point
    h1 = gate_w1 @ f_sr0.mean(axis=0) + gate_b1
    gate_b1 = gate_b1 + (_away_from(h1) - h1)
    base = AdapterLayerWeights(
        q_w=rng.standard_normal((d, d)) / np.sqrt(d),
        k_w=rng.standard_normal((d, d)) / np.sqrt(d),
        v_w=rng.standard_normal((d, d)) / np.sqrt(d),
        gate_w1=gate_w1,
        gate_b1=gate_b1,
        gate_w2=rng.standard_normal((2, 2)),
        gate_b2=0.3 * rng.standard_normal(2),
    )
    m = 0.7
    coef = rng.standard_normal((t_tok, d))

    def f(f_sr, f_dyn, q_w, k_w, v_w, g_w1, g_b1, g_w2, g_b2):
        w = replace(
            base, q_w=q_w, k_w=k_w, v_w=v_w,
            gate_w1=g_w1, gate_b1=g_b1, gate_w2=g_w2, gate_b2=g_b2,
        )
        out, cache = adapt_with_cache(f_sr, f_dyn, m, TriState.NIR, w)
        grads = adapter_backward(coef, cache)
        return float(np.sum(coef * out)), [
            grads.f_sr, grads.f_dyn, grads.q_w, grads.k_w, grads.v_w,
            grads.gate_w1, grads.gate_b1, grads.gate_w2, grads.gate_b2,
        ]

    return grad_check(
        f,
        [
            f_sr0,
            f_dyn0,
            base.q_w, base.k_w, base.v_w,
            base.gate_w1, base.gate_b1, base.gate_w2, base.gate_b2,
        ],
    )


def check_l1(seed: int) -> float:
    rng = np.random.default_rng(seed)
    gt = BBox(cx=50.0, cy=40.0, w=20.0, h=16.0)

    def f(p):
        pred = BBox(cx=p[0], cy=p[1], w=p[2], h=p[3])
        return l1_loss(pred, gt), [l1_loss_grad(pred, gt)]

    # offset well away from the |.| kinks at coordinate equality
    p0 = gt.as_array() + _away_from(rng.uniform(-4, 4, 4), margin=0.5)
    return grad_check(f, [p0])


def check_siou(seed: int) -> float:
    rng = np.random.default_rng(seed)
    gt = BBox(cx=50.0, cy=50.0, w=20.0, h=18.0)

    def f(p):
        pred = BBox(cx=p[0], cy=p[1], w=p[2], h=p[3])
        return siou_loss(pred, gt), [siou_loss_grad(pred, gt)]

    # generic overlapping box: both center deltas nonzero, dims distinct,
    # no edge ties — away from every singular set documented on siou_loss
    p0 = np.array(
        [
            gt.cx + 3.0 + rng.uniform(0.5, 2.0),
            gt.cy - 4.0 - rng.uniform(0.5, 2.0),
            gt.w + 3.0 + rng.uniform(0.5, 1.5),
            gt.h - 3.0 - rng.uniform(0.5, 1.5),
        ]
    )
    return grad_check(f, [p0])


def check_bce(seed: int) -> float:
    rng = np.random.default_rng(seed)
    target = 0.3

    def f(p):
        return modality_loss(target, float(p[0])), [
            np.array([modality_loss_grad(target, float(p[0]))])
        ]

    return grad_check(f, [np.array([rng.uniform(0.1, 0.9)])])


def check_cosine_loss(seed: int) -> float:
    rng = np.random.default_rng(seed)
    sched = EpochSchedule(C=2, N=10)

    def f(a, b):
        da, db = template_sim_loss_grad(a, b, sched)
        return template_sim_loss(a, b, sched), [da, db]

    return grad_check(f, [rng.standard_normal(6), rng.standard_normal(6)])


GRADIENT_CHECKS = {
    "linear": check_linear,
    "sigmoid": check_sigmoid,
    "softmax": check_softmax,
    "attention": check_attention,
    "adapter": check_adapter,
    "l1": check_l1,
    "siou": check_siou,
    "bce": check_bce,
    "cosine_loss": check_cosine_loss,
}


def gradient_report(seed: int = 0, inject_bug: bool = False) -> dict[str, float]:
    """Max relative error per registered op.

    ``inject_bug`` corrupts the l1 gradient on purpose — a self-test proving
    the checker actually catches wrong analytic gradients.
    """
    report = {}
    for name, fn in GRADIENT_CHECKS.items():
        if inject_bug and name == "l1":
            gt = BBox(cx=50.0, cy=40.0, w=20.0, h=16.0)

            def broken(p):
                pred = BBox(cx=p[0], cy=p[1], w=p[2], h=p[3])
                return l1_loss(pred, gt), [l1_loss_grad(pred, gt) + 0.05]

            report[name] = grad_check(broken, [gt.as_array() + 2.0])
        else:
            report[name] = fn(seed)
    return report
