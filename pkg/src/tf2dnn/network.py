"""Feed-forward autoencoder with tied-factor (TF2) layers.

A TF2 layer adds two injected terms to its pre-activation::

    a_l = W_l h_{l-1} + b_l + V1_l z1 + V2_l z2

where ``z1`` is the session factor and ``z2`` the speaker factor attached to
the frame. All functions operate on frame batches: rows are frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .numeric import Rng, softplus, softplus_grad

NONLINEARITIES = ("softplus", "linear")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    nonlinearity: str = "softplus"
    is_tf2: bool = False
    dropout_p: float = 0.0
    # output may be dropped at MC scoring time even if trained with p=0
    dropout_site: bool = False

    def __post_init__(self):
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dimensions must be positive")


def autoencoder_specs(
    input_dim: int = 60,
    encoder: tuple[int, ...] = (500, 500),
    bottleneck: int = 15,
    decoder: tuple[int, ...] = (500, 500),
    tf2_layers: tuple[int, ...] | None = None,
    dropout_p: float = 0.0,
    dropout_sites: tuple[int, ...] | None = None,
) -> tuple[LayerSpec, ...]:
    """Layer specs for an encoder/bottleneck/decoder stack with a linear output.

    Layer indices are 0-based. By default the factors enter the first decoder
    layer (the one consuming the bottleneck) and dropout sites sit on the last
    encoder hidden layer and the first decoder layer.
    """
    widths = [input_dim, *encoder, bottleneck, *decoder, input_dim]
    n_layers = len(widths) - 1
    first_decoder = len(encoder) + 1
    if tf2_layers is None:
        tf2_layers = (first_decoder,) if first_decoder < n_layers else ()
    if dropout_sites is None:
        dropout_sites = tuple(i for i in (len(encoder) - 1, first_decoder) if 0 <= i < n_layers - 1)
    for idx in (*tf2_layers, *dropout_sites):
        if not 0 <= idx < n_layers:
            raise ValueError(f"layer index {idx} out of range for {n_layers} layers")
    if n_layers - 1 in dropout_sites:
        raise ValueError("the output layer cannot carry dropout")
    specs = []
    for l in range(n_layers):
        site = l in dropout_sites
        specs.append(
            LayerSpec(
                in_dim=widths[l],
                out_dim=widths[l + 1],
                nonlinearity="linear" if l == n_layers - 1 else "softplus",
                is_tf2=l in tf2_layers,
                dropout_p=dropout_p if site else 0.0,
                dropout_site=site,
            )
        )
    return tuple(specs)


@dataclass
class NetworkParams:
    """Weights ``W{l}`` (out x in), biases ``b{l}`` and, on TF2 layers, the
    loading matrices ``V1_{l}`` (out x r1) and ``V2_{l}`` (out x r2)."""

    specs: tuple[LayerSpec, ...]
    r1: int
    r2: int
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.specs = tuple(self.specs)
        if not self.specs:
            raise ValueError("network needs at least one layer")
        for prev, cur in zip(self.specs, self.specs[1:]):
            if prev.out_dim != cur.in_dim:
                raise ValueError("layer dimensions do not chain")
        if self.specs[-1].nonlinearity != "linear":
            raise ValueError("the output layer must be linear")

    @property
    def n_layers(self) -> int:
        return len(self.specs)

    @property
    def input_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.specs[-1].out_dim

    @property
    def has_factors(self) -> bool:
        return any(s.is_tf2 for s in self.specs) and (self.r1 > 0 or self.r2 > 0)

    def W(self, l):
        return self.arrays[f"W{l}"]

    def b(self, l):
        return self.arrays[f"b{l}"]

    def V1(self, l):
        return self.arrays.get(f"V1_{l}")

    def V2(self, l):
        return self.arrays.get(f"V2_{l}")

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for l, s in enumerate(self.specs):
            shapes[f"W{l}"] = (s.out_dim, s.in_dim)
            shapes[f"b{l}"] = (s.out_dim,)
            if s.is_tf2:
                if self.r1:
                    shapes[f"V1_{l}"] = (s.out_dim, self.r1)
                if self.r2:
                    shapes[f"V2_{l}"] = (s.out_dim, self.r2)
        return shapes

    def validate(self) -> None:
        shapes = self.expected_shapes()
        if set(shapes) != set(self.arrays):
            raise ValueError(f"parameter names {sorted(self.arrays)} != {sorted(shapes)}")
        for name, shape in shapes.items():
            if self.arrays[name].shape != shape:
                raise ValueError(f"{name} has shape {self.arrays[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.arrays[name])):
                raise ValueError(f"{name} has non-finite entries")

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.specs, self.r1, self.r2, {k: v.copy() for k, v in self.arrays.items()})

    def with_dropout(self, p: float) -> "NetworkParams":
        """Same arrays, dropout probability ``p`` on every dropout site."""
        specs = tuple(replace(s, dropout_p=p if s.dropout_site else 0.0) for s in self.specs)
        return NetworkParams(specs, self.r1, self.r2, self.arrays)


def init_params(specs, r1: int, r2: int, stddev: float, rng: Rng) -> NetworkParams:
    """Gaussian weights and loadings with the given stddev; zero biases."""
    arrays = {}
    for l, s in enumerate(specs):
        arrays[f"W{l}"] = rng.gaussian((s.out_dim, s.in_dim), stddev)
        arrays[f"b{l}"] = np.zeros(s.out_dim)
        if s.is_tf2:
            if r1:
                arrays[f"V1_{l}"] = rng.gaussian((s.out_dim, r1), stddev)
            if r2:
                arrays[f"V2_{l}"] = rng.gaussian((s.out_dim, r2), stddev)
    params = NetworkParams(tuple(specs), r1, r2, arrays)
    params.validate()
    return params


def strip_factors(params: NetworkParams) -> NetworkParams:
    """The plain DNN: same W and b, factor loadings removed."""
    specs = tuple(replace(s, is_tf2=False) for s in params.specs)
    arrays = {k: v for k, v in params.arrays.items() if not k.startswith("V")}
    return NetworkParams(specs, 0, 0, arrays)


@dataclass
class Activations:
    inputs: np.ndarray
    z1: np.ndarray | None
    z2: np.ndarray | None
    pre: list[np.ndarray]
    outputs: list[np.ndarray]
    masks: dict[int, np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.outputs[-1]

    @property
    def penultimate(self) -> np.ndarray:
        """Input to the output layer (the regression regressors y_t)."""
        return self.outputs[-2] if len(self.outputs) > 1 else self.inputs


@dataclass
class GradientBundle:
    """Parameter gradients summed over the batch, plus per-frame factor gradients."""

    params: dict[str, np.ndarray]
    dz1: np.ndarray
    dz2: np.ndarray


def _as_batch(x, dim, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{what} must have {dim} columns, got shape {x.shape}")
    return x


def _factor(z, r, n_frames, what):
    if r == 0:
        return None
    if z is None:
        return np.zeros((n_frames, r))
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        if z.shape[0] != r:
            raise ValueError(f"{what} must have dimension {r}, got {z.shape[0]}")
        return np.broadcast_to(z, (n_frames, r))
    if z.shape != (n_frames, r):
        raise ValueError(f"{what} must have shape {(n_frames, r)}, got {z.shape}")
    return z


def sample_masks(params: NetworkParams, n_frames: int, rng: Rng, shared: bool = False) -> dict[int, np.ndarray]:
    """Inverted-dropout masks (entries 0 or 1/(1-p)) for layers with p > 0.

    With ``shared`` one mask row is drawn and reused for every frame.
    """
    masks = {}
    for l, s in enumerate(params.specs):
        if s.dropout_p <= 0.0:
            continue
        rows = 1 if shared else n_frames
        keep = rng.uniform((rows, s.out_dim)) >= s.dropout_p
        mask = keep / (1.0 - s.dropout_p)
        masks[l] = np.broadcast_to(mask, (n_frames, s.out_dim)) if shared else mask
    return masks


def forward(params: NetworkParams, x, z1=None, z2=None, masks=None) -> Activations:
    """Forward pass for a batch of frames.

    ``z1``/``z2`` are either per-frame rows or a single vector shared by all
    frames; ``None`` means the zero factor.
    """
    x = _as_batch(x, params.input_dim, "x")
    n = x.shape[0]
    z1 = _factor(z1, params.r1, n, "z1")
    z2 = _factor(z2, params.r2, n, "z2")
    masks = masks or {}
    pre, outs = [], []
    h = x
    for l, s in enumerate(params.specs):
        a = h @ params.W(l).T + params.b(l)
        if s.is_tf2:
            if z1 is not None:
                a = a + z1 @ params.V1(l).T
            if z2 is not None:
                a = a + z2 @ params.V2(l).T
        h = softplus(a) if s.nonlinearity == "softplus" else a
        if l in masks:
            m = masks[l]
            if m.shape != h.shape:
                raise ValueError(f"mask for layer {l} has shape {m.shape}, expected {h.shape}")
            h = h * m
        pre.append(a)
        outs.append(h)
    return Activations(x, z1, z2, pre, outs, dict(masks))


def backward(params: NetworkParams, acts: Activations, dJ_dout) -> GradientBundle:
    """Reverse-mode gradients of a cost whose output gradient is ``dJ_dout``.

    ``dJ_dout`` holds one row per frame; parameter gradients are summed over
    rows and factor gradients are returned per frame.
    """
    g = _as_batch(dJ_dout, params.output_dim, "dJ_dout")
    n = acts.inputs.shape[0]
    if g.shape[0] != n or len(acts.outputs) != params.n_layers:
        raise ValueError("activations do not match this gradient/network")
    grads = {}
    dz1 = np.zeros((n, params.r1))
    dz2 = np.zeros((n, params.r2))
    for l in range(params.n_layers - 1, -1, -1):
        s = params.specs[l]
        if acts.pre[l].shape[1] != s.out_dim:
            raise ValueError(f"stale activations at layer {l}")
        if l in acts.masks:
            g = g * acts.masks[l]
        if s.nonlinearity == "softplus":
            g = g * softplus_grad(acts.pre[l])
        h_prev = acts.outputs[l - 1] if l > 0 else acts.inputs
        grads[f"W{l}"] = g.T @ h_prev
        grads[f"b{l}"] = g.sum(axis=0)
        if s.is_tf2:
            if params.r1:
                grads[f"V1_{l}"] = g.T @ acts.z1
                dz1 += g @ params.V1(l)
            if params.r2:
                grads[f"V2_{l}"] = g.T @ acts.z2
                dz2 += g @ params.V2(l)
        if l > 0:
            g = g @ params.W(l)
    return GradientBundle(grads, dz1, dz2)


def mse_cost(output, target):
    """Mean over frames of ||output - target||^2 / D, and its output gradient."""
    output = np.asarray(output, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if output.shape != target.shape:
        raise ValueError(f"shape mismatch: {output.shape} vs {target.shape}")
    diff = output - target
    d = diff.shape[-1]
    if diff.ndim == 1:
        return float(diff @ diff) / d, 2.0 * diff / d
    n = diff.shape[0]
    cost = float(np.sum(diff * diff)) / (d * n)
    return cost, 2.0 * diff / (d * n)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(state: AdamState, params: NetworkParams, grads, lr: float | None = None):
    """One bias-corrected Adam step, in place. Returns ``(params, state)``.

    ``grads`` is a :class:`GradientBundle` or a name -> array mapping; names
    missing from it are left untouched.
    """
    lr = state.lr if lr is None else lr
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    grads = grads.params if isinstance(grads, GradientBundle) else grads
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        p = params.arrays[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= (lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
    return params, state
