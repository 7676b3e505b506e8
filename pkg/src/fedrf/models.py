"""Classifiers with exact manual gradients.

Two model kinds operate on stacked modality tensors of shape (L, 2, M):

* ``softmax_linear`` -- multinomial logistic regression on the flattened
  tensor. With a positive l2 coefficient its loss is strongly convex, which
  is what the convergence analysis needs.
* ``mini_resnet`` -- a small residual CNN: two residual blocks (three
  convolutions plus an additive skip each) separated by 2x1 max pooling
  along time, a trailing convolution, then two fully connected layers.
  Convolutions use odd-length kernels along the time axis with zero padding
  and stride 1; the 2-wide column axis is never convolved.

Everything is float64 and gradients are computed by hand so they can be
verified against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

KIND_SOFTMAX = "softmax_linear"
KIND_RESNET = "mini_resnet"


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    window_len: int
    num_modalities: int
    num_classes: int
    l2_coeff: float = 0.0
    block_channels: Tuple[int, int] = (8, 16)
    kernel_len: int = 3
    hidden: int = 32

    def __post_init__(self):
        if self.kind not in (KIND_SOFTMAX, KIND_RESNET):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.l2_coeff < 0:
            raise ValueError("l2_coeff must be >= 0")
        if self.num_modalities < 1 or self.window_len < 2:
            raise ValueError("invalid input shape")
        if self.kind == KIND_RESNET:
            if min(self.block_channels) < 1 or self.hidden < 1:
                raise ValueError("mini_resnet widths must be >= 1")
            if self.kernel_len < 1 or self.kernel_len % 2 == 0:
                raise ValueError("kernel_len must be odd and >= 1")
            if self.window_len % 4 != 0:
                raise ValueError("mini_resnet needs window_len divisible by 4")

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (self.window_len, 2, self.num_modalities)


def param_layout(spec: ModelSpec) -> List[Tuple[str, Tuple[int, ...]]]:
    """Ordered (name, shape) segments of the flat parameter vector."""
    if spec.kind == KIND_SOFTMAX:
        d = spec.window_len * 2 * spec.num_modalities
        return [("w", (d, spec.num_classes)), ("b", (spec.num_classes,))]
    k = spec.kernel_len
    c1, c2 = spec.block_channels
    m = spec.num_modalities
    flat_dim = (spec.window_len // 4) * 2 * c1
    layout: List[Tuple[str, Tuple[int, ...]]] = []
    for name, cin, cout in (
        ("block1.conv1", m, c1),
        ("block1.conv2", c1, c1),
        ("block1.conv3", c1, c1),
        ("block2.conv1", c1, c2),
        ("block2.conv2", c2, c2),
        ("block2.conv3", c2, c2),
        ("mid_conv", c2, c1),
    ):
        layout.append((f"{name}.w", (k, cin, cout)))
        layout.append((f"{name}.b", (cout,)))
    layout.append(("fc1.w", (flat_dim, spec.hidden)))
    layout.append(("fc1.b", (spec.hidden,)))
    layout.append(("fc2.w", (spec.hidden, spec.num_classes)))
    layout.append(("fc2.b", (spec.num_classes,)))
    return layout


def num_params(spec: ModelSpec) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_layout(spec))


def param_views(spec: ModelSpec, params: np.ndarray) -> Dict[str, np.ndarray]:
    """Named, reshaped views into the flat vector (shared memory)."""
    params = np.asarray(params)
    views: Dict[str, np.ndarray] = {}
    off = 0
    for name, shape in param_layout(spec):
        size = int(np.prod(shape))
        views[name] = params[off : off + size].reshape(shape)
        off += size
    if off != params.shape[0]:
        raise ValueError(
            f"parameter vector has length {params.shape[0]}, spec needs {off}"
        )
    return views


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Uniform fan-in scaled weights, zero biases; deterministic in (spec, seed)."""
    rng = np.random.default_rng(seed)
    chunks = []
    for name, shape in param_layout(spec):
        if name.endswith(".b") or name == "b":
            chunks.append(np.zeros(int(np.prod(shape))))
        else:
            fan_in = int(np.prod(shape[:-1]))
            lim = 1.0 / np.sqrt(fan_in)
            chunks.append(rng.uniform(-lim, lim, size=int(np.prod(shape))))
    return np.concatenate(chunks)


@dataclass
class Batch:
    """Stacked inputs (n, L, 2, M) with integer labels (n,)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 4:
            raise ValueError("inputs must be a 4-D (n, L, 2, M) array")
        if len(self.inputs) != len(self.labels) or len(self.labels) == 0:
            raise ValueError("batch needs >= 1 example and matching label count")

    def __len__(self) -> int:
        return len(self.labels)

    def select(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.labels[idx])

    @classmethod
    def from_modal_inputs(cls, inputs, labels) -> "Batch":
        return cls(np.stack([mi.tensor for mi in inputs]), np.asarray(labels))


# ---------------------------------------------------------------------------
# primitive ops

def conv_time(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Convolve along the time axis with zero padding; columns stay separate.

    x: (n, T, 2, Cin), w: (K, Cin, Cout), b: (Cout,). Returns (out, padded x).
    """
    n, t = x.shape[0], x.shape[1]
    k = w.shape[0]
    pad = k // 2
    xp = np.zeros((n, t + 2 * pad, x.shape[2], x.shape[3]))
    xp[:, pad : pad + t] = x
    out = np.broadcast_to(b, (n, t, x.shape[2], w.shape[2])).copy()
    for j in range(k):
        out += np.tensordot(xp[:, j : j + t], w[j], axes=([3], [0]))
    return out, xp


def conv_time_backward(xp: np.ndarray, w: np.ndarray, dy: np.ndarray):
    """Gradients of conv_time; returns (dx, dw, db)."""
    k = w.shape[0]
    pad = k // 2
    t = dy.shape[1]
    db = dy.sum(axis=(0, 1, 2))
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp)
    for j in range(k):
        dw[j] = np.tensordot(xp[:, j : j + t], dy, axes=([0, 1, 2], [0, 1, 2]))
        dxp[:, j : j + t] += np.tensordot(dy, w[j], axes=([3], [1]))
    return dxp[:, pad : pad + t], dw, db


def maxpool2_time(x: np.ndarray):
    """Non-overlapping 2x1 max pooling along time; ties take the earlier sample."""
    n, t, cols, c = x.shape
    xr = x.reshape(n, t // 2, 2, cols, c)
    idx = np.argmax(xr, axis=2)
    out = np.take_along_axis(xr, idx[:, :, None], axis=2)[:, :, 0]
    return out, idx


def maxpool2_time_backward(idx: np.ndarray, dy: np.ndarray, t: int) -> np.ndarray:
    n, th, cols, c = dy.shape
    dxr = np.zeros((n, th, 2, cols, c))
    np.put_along_axis(dxr, idx[:, :, None], dy[:, :, None], axis=2)
    return dxr.reshape(n, t, cols, c)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(lse - z[np.arange(len(labels)), labels]))


# ---------------------------------------------------------------------------
# forward / backward

def _check_input(spec: ModelSpec, x: np.ndarray) -> None:
    if x.shape[1:] != spec.input_shape:
        raise ValueError(
            f"input shape {x.shape[1:]} does not match spec {spec.input_shape}"
        )


def _resnet_forward(spec: ModelSpec, views, x: np.ndarray, keep: bool):
    """Returns (logits, cache). cache is None unless keep."""
    cache: Optional[dict] = {} if keep else None
    h = x
    masks = []
    for name in ("block1", "block2"):
        a1, xp1 = conv_time(h, views[f"{name}.conv1.w"], views[f"{name}.conv1.b"])
        z2, xp2 = conv_time(a1, views[f"{name}.conv2.w"], views[f"{name}.conv2.b"])
        m2 = z2 > 0
        a2 = np.where(m2, z2, 0.0)
        z3, xp3 = conv_time(a2, views[f"{name}.conv3.w"], views[f"{name}.conv3.b"])
        pre = z3 + a1
        mo = pre > 0
        out = np.where(mo, pre, 0.0)
        pooled, pidx = maxpool2_time(out)
        masks.extend([m2, mo, pidx])
        if keep:
            cache[name] = (xp1, xp2, xp3, m2, mo, pidx, out.shape[1])
        h = pooled
    zm, xpm = conv_time(h, views["mid_conv.w"], views["mid_conv.b"])
    mm = zm > 0
    am = np.where(mm, zm, 0.0)
    flat = am.reshape(am.shape[0], -1)
    z1 = flat @ views["fc1.w"] + views["fc1.b"]
    m1 = z1 > 0
    a1f = np.where(m1, z1, 0.0)
    logits = a1f @ views["fc2.w"] + views["fc2.b"]
    masks.extend([mm, m1])
    if keep:
        cache["head"] = (xpm, mm, am.shape, flat, m1, a1f)
        cache["masks"] = masks
    return logits, cache


def _logits(spec: ModelSpec, params: np.ndarray, x: np.ndarray, keep: bool = False):
    _check_input(spec, x)
    views = param_views(spec, params)
    if spec.kind == KIND_SOFTMAX:
        flat = x.reshape(x.shape[0], -1)
        return flat @ views["w"] + views["b"], {"flat": flat} if keep else None
    return _resnet_forward(spec, views, x, keep)


def forward_batch(spec: ModelSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Class probabilities, shape (n, num_classes)."""
    logits, _ = _logits(spec, params, np.asarray(x, dtype=np.float64))
    return _softmax(logits)


def forward(spec: ModelSpec, params: np.ndarray, inp) -> np.ndarray:
    """Class probabilities for a single input (ModalInput or (L, 2, M) array)."""
    tensor = inp.tensor if hasattr(inp, "tensor") else np.asarray(inp, dtype=np.float64)
    return forward_batch(spec, params, tensor[None])[0]


def predict(spec: ModelSpec, params: np.ndarray, inp) -> int:
    """Most probable class; ties resolve to the lowest label index."""
    return int(np.argmax(forward(spec, params, inp)))


def batch_loss(spec: ModelSpec, params: np.ndarray, batch: Batch) -> float:
    """Mean cross-entropy plus (l2/2)*||params||^2, without the gradient."""
    logits, _ = _logits(spec, params, batch.inputs)
    loss = _cross_entropy(logits, batch.labels)
    if spec.l2_coeff:
        loss += 0.5 * spec.l2_coeff * float(params @ params)
    return loss


def loss_and_grad(spec: ModelSpec, params: np.ndarray, batch: Batch):
    """Exact gradient of the batch loss with respect to the flat parameters."""
    params = np.asarray(params, dtype=np.float64)
    n = len(batch)
    logits, cache = _logits(spec, params, batch.inputs, keep=True)
    probs = _softmax(logits)
    loss = _cross_entropy(logits, batch.labels)
    dlogits = probs.copy()
    dlogits[np.arange(n), batch.labels] -= 1.0
    dlogits /= n

    grad = np.zeros_like(params)
    gviews = param_views(spec, grad)
    views = param_views(spec, params)

    if spec.kind == KIND_SOFTMAX:
        flat = cache["flat"]
        gviews["w"] += flat.T @ dlogits
        gviews["b"] += dlogits.sum(axis=0)
    else:
        xpm, mm, am_shape, flat, m1, a1f = cache["head"]
        gviews["fc2.w"] += a1f.T @ dlogits
        gviews["fc2.b"] += dlogits.sum(axis=0)
        da1f = dlogits @ views["fc2.w"].T
        dz1 = np.where(m1, da1f, 0.0)
        gviews["fc1.w"] += flat.T @ dz1
        gviews["fc1.b"] += dz1.sum(axis=0)
        dflat = dz1 @ views["fc1.w"].T
        dam = dflat.reshape(am_shape)
        dzm = np.where(mm, dam, 0.0)
        dh, dw, db = conv_time_backward(xpm, views["mid_conv.w"], dzm)
        gviews["mid_conv.w"] += dw
        gviews["mid_conv.b"] += db
        for name in ("block2", "block1"):
            xp1, xp2, xp3, m2, mo, pidx, t_out = cache[name]
            dout = maxpool2_time_backward(pidx, dh, t_out)
            dpre = np.where(mo, dout, 0.0)
            da2, dw3, db3 = conv_time_backward(xp3, views[f"{name}.conv3.w"], dpre)
            gviews[f"{name}.conv3.w"] += dw3
            gviews[f"{name}.conv3.b"] += db3
            dz2 = np.where(m2, da2, 0.0)
            da1, dw2, db2 = conv_time_backward(xp2, views[f"{name}.conv2.w"], dz2)
            gviews[f"{name}.conv2.w"] += dw2
            gviews[f"{name}.conv2.b"] += db2
            da1 += dpre  # additive skip from the block output
            dh, dw1, db1 = conv_time_backward(xp1, views[f"{name}.conv1.w"], da1)
            gviews[f"{name}.conv1.w"] += dw1
            gviews[f"{name}.conv1.b"] += db1

    if spec.l2_coeff:
        loss += 0.5 * spec.l2_coeff * float(params @ params)
        grad += spec.l2_coeff * params
    return loss, grad


def sgd_step(params: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
    """Plain gradient step params - eta * grad."""
    params = np.asarray(params)
    grad = np.asarray(grad)
    if params.shape != grad.shape:
        raise ValueError("parameter and gradient layouts differ")
    return params - eta * grad


# ---------------------------------------------------------------------------
# finite-difference verification

def _activation_signature(spec: ModelSpec, params: np.ndarray, batch: Batch):
    """Loss plus a fingerprint of every ReLU mask and pooling argmax."""
    logits, cache = _logits(spec, params, batch.inputs, keep=True)
    loss = _cross_entropy(logits, batch.labels)
    if spec.l2_coeff:
        loss += 0.5 * spec.l2_coeff * float(params @ params)
    if spec.kind == KIND_SOFTMAX:
        return loss, None
    return loss, [m.copy() for m in cache["masks"]]


def _same_signature(a, b) -> bool:
    if a is None and b is None:
        return True
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def central_diff_max_error(loss_fn, params: np.ndarray, grad: np.ndarray,
                           coords: Sequence[int], step: float) -> float:
    """Max relative error between grad and central differences of loss_fn."""
    scale = max(float(np.max(np.abs(grad))), 1e-12)
    worst = 0.0
    for i in coords:
        p = params.copy()
        p[i] = params[i] + step
        lp = loss_fn(p)
        p[i] = params[i] - step
        lm = loss_fn(p)
        fd = (lp - lm) / (2.0 * step)
        denom = max(abs(grad[i]), abs(fd), 1e-8 * (1.0 + scale))
        worst = max(worst, abs(fd - grad[i]) / denom)
    return worst


def finite_diff_check(
    spec: ModelSpec,
    params: np.ndarray,
    batch: Batch,
    step: float = 1e-5,
    num_coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Compare loss_and_grad against central differences.

    For mini_resnet a random subset of coordinates is checked; candidates
    whose perturbation flips a ReLU mask or a pooling argmax (i.e. the loss
    has a kink inside the difference stencil) are rejected and resampled.
    Returns the max relative error over the checked coordinates.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    err, _ = finite_diff_details(spec, params, batch, step, num_coords, seed)
    return err


def finite_diff_details(
    spec: ModelSpec,
    params: np.ndarray,
    batch: Batch,
    step: float = 1e-5,
    num_coords: Optional[int] = None,
    seed: int = 0,
) -> Tuple[float, int]:
    """finite_diff_check plus the number of coordinates actually compared."""
    params = np.asarray(params, dtype=np.float64)
    _, grad = loss_and_grad(spec, params, batch)
    dim = params.shape[0]
    rng = np.random.default_rng(seed)
    if num_coords is None or num_coords >= dim:
        candidates = np.arange(dim)
        target = dim
    else:
        candidates = rng.permutation(dim)
        target = num_coords

    _, sig0 = _activation_signature(spec, params, batch)
    scale = max(float(np.max(np.abs(grad))), 1e-12)
    worst = 0.0
    checked = 0
    for i in candidates:
        if checked >= target:
            break
        p = params.copy()
        p[i] = params[i] + step
        lp, sig_p = _activation_signature(spec, p, batch)
        p[i] = params[i] - step
        lm, sig_m = _activation_signature(spec, p, batch)
        if not (_same_signature(sig0, sig_p) and _same_signature(sig0, sig_m)):
            continue  # kink inside the stencil
        fd = (lp - lm) / (2.0 * step)
        denom = max(abs(grad[i]), abs(fd), 1e-8 * (1.0 + scale))
        worst = max(worst, abs(fd - grad[i]) / denom)
        checked += 1
    return worst, checked


def describe_layers(spec: ModelSpec) -> List[Tuple[str, Tuple[int, ...]]]:
    """Layer names and output shapes (single example), for structural checks."""
    t = spec.window_len
    if spec.kind == KIND_SOFTMAX:
        return [("linear", (spec.num_classes,))]
    c1, c2 = spec.block_channels
    layers = [
        ("block1", (t, 2, c1)),
        ("pool1", (t // 2, 2, c1)),
        ("block2", (t // 2, 2, c2)),
        ("pool2", (t // 4, 2, c2)),
        ("mid_conv", (t // 4, 2, c1)),
        ("fc1", (spec.hidden,)),
        ("fc2", (spec.num_classes,)),
    ]
    return layers
