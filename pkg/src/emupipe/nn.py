"""Dense-tensor network core: feed-forward and gated recurrent layers.

Hand-written forward and reverse passes over numpy arrays, nothing more.
Batches use the row convention (samples on axis 0), sequences are
(batch, time, features).  Recurrent state starts at zero for every window
and gradients flow through all time steps of the window.

The gated layer follows

    z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
    r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
    c_t = tanh(W_h x_t + U_h (r_t * h_{t-1}) + b_h)      ["standard"]
    c_t = tanh(W_h x_t + U_h h_{t-1} + b_h)              ["as_written"]
    h_t = (1 - z_t) * h_{t-1} + z_t * c_t

with the state update applied at every layer, the first included.  In
"as_written" mode the reset gate r_t is computed but feeds nothing, so its
parameters receive exactly zero gradient; the mode exists because both
candidate forms appear in practice and they are not interchangeable.

For speed, input projections W x_t are hoisted out of the time loop into one
matrix product over the whole sequence, and weight gradients are accumulated
after the backward carry loop from the stored per-step pre-activation
gradients, again as single flattened matrix products.  The per-step loop does
only elementwise work plus the small state-sized products that genuinely
depend on the carry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

from .errors import DimensionMismatch, MissingCache

ACTIVATIONS = ("relu", "identity")
CANDIDATE_MODES = ("standard", "as_written")
ARCHITECTURES = ("FFNN", "GRU-FFNN")


def _finite(name: str, array: np.ndarray):
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite values")


@dataclass
class DenseLayer:
    W: np.ndarray               # (width, input_dim)
    b: np.ndarray               # (width,)
    activation: str = "relu"

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W))
        self.b = np.asarray(self.b)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.b.shape != (self.W.shape[0],):
            raise DimensionMismatch(
                f"bias shape {self.b.shape} does not match weight rows {self.W.shape[0]}")
        _finite("W", self.W)
        _finite("b", self.b)

    @property
    def width(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]


@dataclass
class GruLayer:
    W_z: np.ndarray             # each W_*: (width, input_dim)
    U_z: np.ndarray             # each U_*: (width, width)
    b_z: np.ndarray             # each b_*: (width,)
    W_r: np.ndarray
    U_r: np.ndarray
    b_r: np.ndarray
    W_h: np.ndarray
    U_h: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        h, d = np.asarray(self.W_z).shape
        for name in ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h"):
            array = np.asarray(getattr(self, name))
            setattr(self, name, array)
            want = {"W": (h, d), "U": (h, h), "b": (h,)}[name[0]]
            if array.shape != want:
                raise DimensionMismatch(f"{name} has shape {array.shape}, expected {want}")
            _finite(name, array)

    @property
    def width(self) -> int:
        return self.W_z.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_z.shape[1]


def funnel_widths(start_width: int, n_layers: int, funnel: bool = True) -> tuple[int, ...]:
    """Hidden widths: each layer half the previous (floored, never below 1)."""
    if n_layers < 1:
        raise ValueError("need at least one feed-forward layer")
    if start_width < 1:
        raise ValueError("start width must be positive")
    if not funnel:
        return (start_width,) * n_layers
    return tuple(max(1, start_width >> k) for k in range(n_layers))


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description; everything needed to size the parameters."""

    architecture: str                   # "FFNN" or "GRU-FFNN"
    input_dim: int
    output_dim: int = 4
    recurrent_layers: int = 0           # J, 0 for a pure feed-forward net
    recurrent_width: int = 32
    ff_layers: int = 1                  # K, hidden layers before the linear head
    ff_start_width: int = 32
    funnel: bool = True
    candidate_reset_mode: str = "standard"

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.candidate_reset_mode not in CANDIDATE_MODES:
            raise ValueError(f"candidate_reset_mode must be one of {CANDIDATE_MODES}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")
        if self.ff_layers < 1 or self.ff_start_width < 1 or self.recurrent_width < 1:
            raise ValueError("layer counts and widths must be positive")
        if self.recurrent_layers < 0:
            raise ValueError("recurrent_layers must be >= 0")
        if self.architecture == "FFNN" and self.recurrent_layers != 0:
            raise ValueError("a feed-forward network cannot have recurrent layers")

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return funnel_widths(self.ff_start_width, self.ff_layers, self.funnel)

    @property
    def is_recurrent(self) -> bool:
        return self.recurrent_layers > 0

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "recurrent_layers": self.recurrent_layers,
            "recurrent_width": self.recurrent_width,
            "ff_layers": self.ff_layers,
            "ff_start_width": self.ff_start_width,
            "funnel": self.funnel,
            "candidate_reset_mode": self.candidate_reset_mode,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkSpec":
        return cls(**data)


class Network:
    """A parameterised network: recurrent stack (maybe empty) plus dense head.

    The dense head is ``ff_layers`` rectified funnel layers followed by a
    linear output layer of ``output_dim`` units (regression, no squashing).
    """

    def __init__(self, spec: NetworkSpec, gru_layers: list[GruLayer],
                 dense_layers: list[DenseLayer]):
        if len(gru_layers) != spec.recurrent_layers:
            raise DimensionMismatch(
                f"spec asks for {spec.recurrent_layers} recurrent layers, got {len(gru_layers)}")
        in_dim = spec.input_dim
        for j, layer in enumerate(gru_layers):
            if layer.input_dim != in_dim or layer.width != spec.recurrent_width:
                raise DimensionMismatch(
                    f"recurrent layer {j} is {layer.width}x{layer.input_dim}, "
                    f"expected {spec.recurrent_width}x{in_dim}")
            in_dim = layer.width
        widths = spec.hidden_widths + (spec.output_dim,)
        if len(dense_layers) != len(widths):
            raise DimensionMismatch(
                f"expected {len(widths)} dense layers (head included), got {len(dense_layers)}")
        for k, (layer, width) in enumerate(zip(dense_layers, widths)):
            if layer.input_dim != in_dim or layer.width != width:
                raise DimensionMismatch(
                    f"dense layer {k} is {layer.width}x{layer.input_dim}, "
                    f"expected {width}x{in_dim}")
            in_dim = width
        if dense_layers[-1].activation != "identity":
            raise ValueError("output layer must use the identity activation")
        self.spec = spec
        self.gru_layers = gru_layers
        self.dense_layers = dense_layers

    # -- parameter access ---------------------------------------------------

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """All parameter arrays in canonical (bundle) order."""
        out = []
        for j, layer in enumerate(self.gru_layers):
            for name in ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h"):
                out.append((f"gru{j}.{name}", getattr(layer, name)))
        for k, layer in enumerate(self.dense_layers):
            out.append((f"dense{k}.W", layer.W))
            out.append((f"dense{k}.b", layer.b))
        return out

    @property
    def n_parameters(self) -> int:
        return sum(array.size for _, array in self.parameters())

    @property
    def dtype(self):
        return self.dense_layers[-1].W.dtype

    def copy(self) -> "Network":
        return self.astype(self.dtype)

    def astype(self, dtype) -> "Network":
        grus = [GruLayer(**{name: getattr(layer, name).astype(dtype)
                            for name in ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r",
                                         "W_h", "U_h", "b_h")})
                for layer in self.gru_layers]
        denses = [DenseLayer(W=layer.W.astype(dtype), b=layer.b.astype(dtype),
                             activation=layer.activation)
                  for layer in self.dense_layers]
        return Network(self.spec, grus, denses)

    def set_parameters(self, arrays):
        """Overwrite parameters in canonical order (shapes must match)."""
        named = self.parameters()
        arrays = list(arrays)
        if len(arrays) != len(named):
            raise DimensionMismatch(f"expected {len(named)} arrays, got {len(arrays)}")
        for (name, current), new in zip(named, arrays):
            new = np.asarray(new, dtype=current.dtype)
            if new.shape != current.shape:
                raise DimensionMismatch(f"{name}: shape {new.shape} != {current.shape}")
            current[...] = new

    # -- forward / backward -------------------------------------------------

    def forward(self, x, want_cache: bool = True):
        """(predictions, cache). 2-d input runs the dense stack on rows;
        3-d input runs the recurrent stack over (batch, time, features)."""
        x = np.asarray(x, dtype=self.dtype)
        if self.spec.is_recurrent:
            if x.ndim != 3:
                raise DimensionMismatch(
                    f"recurrent network expects (batch, time, features), got {x.shape}")
            if x.shape[2] != self.spec.input_dim:
                raise DimensionMismatch(
                    f"input has {x.shape[2]} features, spec says {self.spec.input_dim}")
            seq = x
            gru_caches = []
            for layer in self.gru_layers:
                seq, cache = gru_forward_seq(seq, layer, self.spec.candidate_reset_mode,
                                             want_cache)
                gru_caches.append(cache)
            last = seq[:, -1, :]
        else:
            if x.ndim == 3:
                x = x[:, -1, :]
            if x.ndim != 2:
                raise DimensionMismatch(f"expected (batch, features), got {x.shape}")
            if x.shape[1] != self.dense_layers[0].input_dim:
                raise DimensionMismatch(
                    f"input has {x.shape[1]} features, dense stack expects "
                    f"{self.dense_layers[0].input_dim}")
            gru_caches = []
            last = x
        y, dense_cache = dense_forward(last, self.dense_layers, want_cache)
        cache = {"gru": gru_caches, "dense": dense_cache,
                 "seq_len": x.shape[1] if x.ndim == 3 else None} if want_cache else None
        return y, cache

    def predict(self, x) -> np.ndarray:
        y, _ = self.forward(x, want_cache=False)
        return y

    def backward(self, output_grad, cache) -> list[np.ndarray]:
        """Gradients w.r.t. every parameter, in parameters() order."""
        if cache is None or cache.get("dense") is None:
            raise MissingCache()
        output_grad = np.asarray(output_grad, dtype=self.dtype)
        dense_grads, d_last = dense_backward(output_grad, self.dense_layers,
                                             cache["dense"])
        gru_grads: list[list[np.ndarray]] = []
        if self.spec.is_recurrent:
            T = cache["seq_len"]
            d_seq = np.zeros(d_last.shape[:1] + (T, d_last.shape[1]), dtype=self.dtype)
            d_seq[:, -1, :] = d_last
            for j in range(len(self.gru_layers) - 1, -1, -1):
                grads, d_seq = gru_backward_seq(
                    d_seq, self.gru_layers[j], cache["gru"][j],
                    self.spec.candidate_reset_mode, need_input_grad=j > 0)
                gru_grads.insert(0, grads)
        flat: list[np.ndarray] = []
        for grads in gru_grads:
            flat.extend(grads)
        for dW, db in dense_grads:
            flat.extend((dW, db))
        return flat


def initialise(spec: NetworkSpec, seed: int, dtype=np.float64) -> Network:
    """Symmetric uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases."""
    rng = np.random.default_rng(seed)

    def matrix(rows, cols):
        limit = math.sqrt(6.0 / (rows + cols))
        return rng.uniform(-limit, limit, size=(rows, cols)).astype(dtype)

    grus = []
    in_dim = spec.input_dim
    for _ in range(spec.recurrent_layers):
        h = spec.recurrent_width
        grus.append(GruLayer(
            W_z=matrix(h, in_dim), U_z=matrix(h, h), b_z=np.zeros(h, dtype),
            W_r=matrix(h, in_dim), U_r=matrix(h, h), b_r=np.zeros(h, dtype),
            W_h=matrix(h, in_dim), U_h=matrix(h, h), b_h=np.zeros(h, dtype)))
        in_dim = h
    denses = []
    for width in spec.hidden_widths:
        denses.append(DenseLayer(W=matrix(width, in_dim),
                                 b=np.zeros(width, dtype), activation="relu"))
        in_dim = width
    denses.append(DenseLayer(W=matrix(spec.output_dim, in_dim),
                             b=np.zeros(spec.output_dim, dtype),
                             activation="identity"))
    return Network(spec, grus, denses)


def zeroed(spec: NetworkSpec, dtype=np.float64) -> Network:
    """All-zero parameters; useful as a fixed point in tests."""
    net = initialise(spec, seed=0, dtype=dtype)
    for _, array in net.parameters():
        array[...] = 0.0
    return net


# -- dense stack --------------------------------------------------------------


def dense_forward(x, layers, want_cache: bool = True):
    """Apply each layer's affine map and activation in order.

    Returns (output, cache); input may be a single vector or a batch of rows.
    """
    x = np.asarray(x)
    single = x.ndim == 1
    out = x[None, :] if single else x
    if out.ndim != 2:
        raise DimensionMismatch(f"expected vector or matrix input, got shape {x.shape}")
    cache = [] if want_cache else None
    for layer in layers:
        if out.shape[1] != layer.input_dim:
            raise DimensionMismatch(
                f"layer expects {layer.input_dim} inputs, got {out.shape[1]}")
        pre = out @ layer.W.T + layer.b
        if want_cache:
            cache.append((out, pre))
        out = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
    return (out[0] if single else out), cache


def ffnn_forward(x, layers):
    return dense_forward(x, layers, want_cache=True)


def dense_backward(d_out, layers, cache):
    """Reverse pass over the dense stack.

    d_out is the loss gradient at the stack output.  Returns per-layer
    (dW, db) plus the gradient w.r.t. the stack input.  The rectifier's
    subgradient at exactly zero is taken as zero.
    """
    if cache is None or len(cache) != len(layers):
        raise MissingCache()
    d = np.atleast_2d(np.asarray(d_out))
    grads = []
    for layer, (x_in, pre) in zip(reversed(layers), reversed(cache)):
        if layer.activation == "relu":
            d = d * (pre > 0.0)
        grads.append((d.T @ x_in, d.sum(axis=0)))
        d = d @ layer.W
    grads.reverse()
    return grads, d


# -- gated recurrent stack -----------------------------------------------------


def gru_step(x, h_prev, layer: GruLayer, mode: str = "standard"):
    """One state update; accepts single vectors or batches of rows."""
    if mode not in CANDIDATE_MODES:
        raise ValueError(f"mode must be one of {CANDIDATE_MODES}")
    x = np.asarray(x)
    h_prev = np.asarray(h_prev)
    single = x.ndim == 1
    X = x[None, :] if single else x
    H = h_prev[None, :] if single else h_prev
    if X.shape[1] != layer.input_dim:
        raise DimensionMismatch(f"input width {X.shape[1]} != layer input {layer.input_dim}")
    if H.shape != (X.shape[0], layer.width):
        raise DimensionMismatch(f"state shape {H.shape} != {(X.shape[0], layer.width)}")
    z = sigmoid(X @ layer.W_z.T + H @ layer.U_z.T + layer.b_z)
    r = sigmoid(X @ layer.W_r.T + H @ layer.U_r.T + layer.b_r)
    inner = (r * H) if mode == "standard" else H
    c = np.tanh(X @ layer.W_h.T + inner @ layer.U_h.T + layer.b_h)
    h = (1.0 - z) * H + z * c
    return h[0] if single else h


def gru_forward_seq(x_seq, layer: GruLayer, mode: str, want_cache: bool = True):
    """Run the layer across a (batch, time, features) sequence from zero state.

    The input projections for every step are computed in one matrix product
    up front; the time loop handles only the state-dependent terms.
    """
    x_seq = np.asarray(x_seq)
    if x_seq.ndim != 3:
        raise DimensionMismatch(f"expected (batch, time, features), got {x_seq.shape}")
    B, T, d_in = x_seq.shape
    if d_in != layer.input_dim:
        raise DimensionMismatch(f"input width {d_in} != layer input {layer.input_dim}")
    h = layer.width
    dtype = layer.W_z.dtype

    W_all = np.vstack((layer.W_z, layer.W_r, layer.W_h))
    b_all = np.concatenate((layer.b_z, layer.b_r, layer.b_h))
    proj = x_seq.reshape(B * T, d_in) @ W_all.T + b_all
    proj = proj.reshape(B, T, 3 * h)
    U_zr_T = np.vstack((layer.U_z, layer.U_r)).T       # (h, 2h)
    U_h_T = layer.U_h.T

    H = np.zeros((B, h), dtype=dtype)
    h_seq = np.empty((B, T, h), dtype=dtype)
    if want_cache:
        h_prev_seq = np.empty_like(h_seq)
        z_seq = np.empty_like(h_seq)
        r_seq = np.empty_like(h_seq)
        c_seq = np.empty_like(h_seq)
        inner_seq = np.empty_like(h_seq)
    for t in range(T):
        zr = sigmoid(proj[:, t, :2 * h] + H @ U_zr_T)
        z, r = zr[:, :h], zr[:, h:]
        inner = (r * H) if mode == "standard" else H
        c = np.tanh(proj[:, t, 2 * h:] + inner @ U_h_T)
        if want_cache:
            h_prev_seq[:, t] = H
            z_seq[:, t] = z
            r_seq[:, t] = r
            c_seq[:, t] = c
            inner_seq[:, t] = inner
        H = (1.0 - z) * H + z * c
        h_seq[:, t] = H
    cache = None
    if want_cache:
        cache = {"x_seq": x_seq, "h_prev": h_prev_seq, "z": z_seq, "r": r_seq,
                 "c": c_seq, "inner": inner_seq}
    return h_seq, cache


def gru_backward_seq(d_h_seq, layer: GruLayer, cache, mode: str,
                     need_input_grad: bool = True):
    """Reverse pass through time for one recurrent layer.

    d_h_seq holds the loss gradient w.r.t. the layer's hidden state at each
    step (zero where the step feeds nothing downstream).  Returns the nine
    parameter gradients in field order and, optionally, the gradient w.r.t.
    the input sequence.  Only the carry-dependent terms live inside the time
    loop; parameter gradients are assembled afterwards from the stored
    pre-activation gradients in single flattened products, summing over
    samples in index order.
    """
    if cache is None:
        raise MissingCache()
    x_seq = cache["x_seq"]
    B, T, d_in = x_seq.shape
    h = layer.width
    dtype = layer.W_z.dtype

    dz_pre = np.empty((B, T, h), dtype=dtype)
    dr_pre = np.empty((B, T, h), dtype=dtype)
    dc_pre = np.empty((B, T, h), dtype=dtype)
    U_zr = np.vstack((layer.U_z, layer.U_r))           # (2h, h)
    carry = np.zeros((B, h), dtype=dtype)
    standard = mode == "standard"

    for t in range(T - 1, -1, -1):
        dh = d_h_seq[:, t] + carry
        z = cache["z"][:, t]
        r = cache["r"][:, t]
        c = cache["c"][:, t]
        h_prev = cache["h_prev"][:, t]
        dz = dh * (c - h_prev)
        dc = dh * z
        d_prev = dh * (1.0 - z)
        dcp = dc * (1.0 - c * c)
        if standard:
            d_inner = dcp @ layer.U_h
            dr = d_inner * h_prev
            d_prev = d_prev + d_inner * r
            drp = dr * r * (1.0 - r)
        else:
            d_prev = d_prev + dcp @ layer.U_h
            drp = np.zeros_like(dcp)
        dzp = dz * z * (1.0 - z)
        d_prev = d_prev + np.concatenate((dzp, drp), axis=1) @ U_zr
        dz_pre[:, t] = dzp
        dr_pre[:, t] = drp
        dc_pre[:, t] = dcp
        carry = d_prev

    x_flat = x_seq.reshape(B * T, d_in)
    h_prev_flat = cache["h_prev"].reshape(B * T, h)
    inner_flat = cache["inner"].reshape(B * T, h)
    dz_flat = dz_pre.reshape(B * T, h)
    dr_flat = dr_pre.reshape(B * T, h)
    dc_flat = dc_pre.reshape(B * T, h)
    grads = [
        dz_flat.T @ x_flat, dz_flat.T @ h_prev_flat, dz_flat.sum(axis=0),
        dr_flat.T @ x_flat, dr_flat.T @ h_prev_flat, dr_flat.sum(axis=0),
        dc_flat.T @ x_flat, dc_flat.T @ inner_flat, dc_flat.sum(axis=0),
    ]
    d_x_seq = None
    if need_input_grad:
        W_all = np.vstack((layer.W_z, layer.W_r, layer.W_h))
        d_all = np.concatenate((dz_flat, dr_flat, dc_flat), axis=1)
        d_x_seq = (d_all @ W_all).reshape(B, T, d_in)
    return grads, d_x_seq


def gru_ffnn_forward(x_seq, net: Network) -> np.ndarray:
    """Prediction for the final day of each window in a sequence batch."""
    x_seq = np.asarray(x_seq)
    single = x_seq.ndim == 2
    if single:
        x_seq = x_seq[None, :, :]
    y = net.predict(x_seq)
    return y[0] if single else y
