"""Shared test fixtures and builders."""

import numpy as np

from burstmamba.core import ops
from burstmamba.model import ModelConfig, classify_forward, init_params

TINY = dict(d_model=16, depth=1, seq_len=32, num_classes=3, headdim=8, d_mlp=16,
            classifier_hidden=16, d_state=4)


def tiny_config(**kw):
    return ModelConfig(**{**TINY, **kw})


def condition(params, seed=0):
    """Move a parameter dict in place to a random point where every gradient
    coordinate is well above finite-difference rounding noise.

    At initialisation the loss is nearly flat in many directions (small step
    sizes, small embeddings), which leaves coordinates with true gradients of
    1e-11 that no difference quotient can resolve to 1e-6 relative. Here
    embeddings are O(1), weight matrices are doubled, step sizes sit near
    0.05 and the state-matrix logs are randomised.
    """
    r = np.random.default_rng(seed)
    for k, t in params.items():
        base = k.rsplit(".", 1)[-1]
        if base in ("byte_table", "pos_table", "cls_vec"):
            t.data[:] = r.normal(size=t.shape)
        elif base in ("dt_bias", "dt_proj_b"):
            dt = 0.05 * np.exp(r.uniform(-0.5, 0.5, size=t.shape))
            t.data[:] = np.log(np.expm1(dt))
        elif base == "A_log":
            t.data[:] = r.normal(0.0, 0.5, size=t.shape)
        elif t.ndim >= 2:
            t.data *= 2.0
        else:
            t.data += 0.1 * r.normal(size=t.shape)
    return params


def conditioned_params(config, seed=0):
    return condition(init_params(config, seed), seed)


def model_loss(config, params, x, y):
    return lambda: ops.softmax_cross_entropy(classify_forward(x, params, config), y)[0]


def ssd_inputs(rng, nb=1, L=32, H=2, P=8, S=16, zero_decay=False):
    a = np.zeros((nb, L, H)) if zero_decay else np.exp(-rng.uniform(0.0, 2.0, size=(nb, L, H)))
    return (a, rng.normal(size=(nb, L, H, S)), rng.normal(size=(nb, L, S)),
            rng.normal(size=(nb, L, H, P)), rng.normal(size=H))


# -- numeric core primitives: builder and input shapes ------------------------

PRIMITIVES = {
    "add": (lambda a, b: ops.add(a, b), [(3, 4), (4,)]),
    "sub": (lambda a, b: ops.sub(a, b), [(3, 1), (3, 4)]),
    "mul": (lambda a, b: ops.mul(a, b), [(2, 3, 4), (3, 1)]),
    "matmul": (ops.matmul, [(2, 3, 4), (4, 5)]),
    "linear": (ops.linear, [(2, 3, 4), (4, 5), (5,)]),
    "reshape": (lambda a: ops.reshape(a, (6, 2)), [(3, 4)]),
    "transpose": (lambda a: ops.transpose(a, (2, 0, 1)), [(2, 3, 4)]),
    "narrow": (lambda a: ops.narrow(a, 1, 1, 3), [(2, 4, 3)]),
    "split": (lambda a: ops.mul(ops.split(a, [1, 3], axis=-1)[1], 2.0), [(2, 4)]),
    "select": (lambda a: ops.select(a, -1, axis=1), [(2, 5, 3)]),
    "concat": (lambda a, b: ops.concat([a, b], axis=1), [(2, 3, 2), (2, 1, 2)]),
    "sum": (lambda a: ops.mul(ops.sum(a, axis=1), ops.sum(a, axis=1)), [(3, 4)]),
    "mean": (lambda a: ops.mean(a, axis=0), [(3, 4)]),
    "exp": (ops.exp, [(5,)]),
    "silu": (ops.silu, [(6,)]),
    "gelu": (ops.gelu, [(6,)]),
    "softplus": (ops.softplus, [(6,)]),
    "layer_norm": (ops.layer_norm, [(2, 3, 6), (6,), (6,)]),
    "rms_norm": (ops.rms_norm, [(2, 3, 6), (6,)]),
    "conv1d": (ops.depthwise_causal_conv1d, [(2, 7, 3), (3, 4), (3,)]),
}


# -- metric oracle ------------------------------------------------------------

def brute_force(y_true, y_pred, C):
    """Per-class counting loops; zero denominators score 0."""
    P, R, F = [], [], []
    for c in range(C):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        pc = tp / (tp + fp) if tp + fp else 0.0
        rc = tp / (tp + fn) if tp + fn else 0.0
        P.append(pc)
        R.append(rc)
        F.append(2 * pc * rc / (pc + rc) if pc + rc else 0.0)
    acc = sum(1 for t, p in zip(y_true, y_pred) if t == p) / len(y_true)
    return acc, sum(P) / C, sum(R) / C, sum(F) / C


def random_confusion(rng):
    C = int(rng.integers(2, 7))
    cm = rng.integers(0, 6, size=(C, C))
    if rng.random() < 0.5:
        cm[int(rng.integers(C))] = 0          # class absent from the truth
    if rng.random() < 0.5:
        cm[:, int(rng.integers(C))] = 0       # class never predicted
    if cm.sum() == 0:
        cm[0, 0] = 1
    return cm


def pairs(cm):
    yt, yp = [], []
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            yt += [i] * int(cm[i, j])
            yp += [j] * int(cm[i, j])
    return np.array(yt), np.array(yp)
