"""Conditional noise-prediction network with hand-written reverse-mode gradients.

The network sees ``[x_noisy_full | cond_mask | time_embedding(t)]`` and
returns a predicted noise vector of the same width as ``x_noisy_full``.
Architecture: input projection, ``depth`` residual blocks

    u = h W1 + b1 + temb Wt + bt
    h <- h + act(u) W2 + b2

and an output projection applied to ``act(h)``.

All parameters live in one flat float64 buffer; the named tensors are views
into it, which keeps the optimizer and checkpoint code trivial.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, ShapeError, StateError

ACTIVATIONS = ("silu", "tanh")


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding ``[sin(t / 10000^(2i/dim)), cos(...)]``, sines first.

    ``t`` may be a scalar or a 1-D integer array; the result has shape
    ``(dim,)`` or ``(len(t), dim)`` respectively.
    """
    if dim < 2 or dim % 2:
        raise ParameterError(f"time embedding dim must be a positive even integer, got {dim}")
    t_arr = np.asarray(t)
    if np.any(t_arr < 1):
        raise ParameterError("timesteps must be >= 1")
    half = dim // 2
    freqs = 10000.0 ** (-2.0 * np.arange(half, dtype=np.float64) / dim)
    angles = t_arr.astype(np.float64)[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def _act(name: str, x: np.ndarray) -> np.ndarray:
    if name == "silu":
        # x * sigmoid(x) via tanh, in place on one buffer
        s = np.multiply(x, 0.5)
        np.tanh(s, out=s)
        s += 1.0
        s *= 0.5
        s *= x
        return s
    return np.tanh(x)


def _act_grad(name: str, x: np.ndarray) -> np.ndarray:
    if name == "silu":
        s = 0.5 * (1.0 + np.tanh(0.5 * x))
        return s * (1.0 + x * (1.0 - s))
    return 1.0 - np.tanh(x) ** 2


def layer_shapes(d_enc: int, depth: int, width: int, time_embed_dim: int) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in checkpoint order."""
    d_in = 2 * d_enc + time_embed_dim
    shapes = [("in.W", (d_in, width)), ("in.b", (width,))]
    for k in range(depth):
        shapes += [
            (f"block{k}.W1", (width, width)),
            (f"block{k}.b1", (width,)),
            (f"block{k}.Wt", (time_embed_dim, width)),
            (f"block{k}.bt", (width,)),
            (f"block{k}.W2", (width, width)),
            (f"block{k}.b2", (width,)),
        ]
    shapes += [("out.W", (width, d_enc)), ("out.b", (d_enc,))]
    return shapes


@dataclass
class ForwardCache:
    """Activations kept by :meth:`NoisePredictor.forward_train` for backprop."""

    version: int
    z0: np.ndarray
    temb: np.ndarray
    h_in: list
    u: list
    a: list
    h_last: np.ndarray
    g: np.ndarray


class NoisePredictor:
    """Residual MLP predicting the injected diffusion noise.

    Parameters
    ----------
    d_enc : int
        Encoded feature width (input and output width).
    depth : int
        Number of residual blocks.
    width : int
        Hidden width.
    time_embed_dim : int
        Width of the sinusoidal timestep embedding (even).
    activation : {"silu", "tanh"}
    params : ndarray, optional
        Flat parameter vector; zeros if omitted.
    """

    def __init__(self, d_enc: int, depth: int = 4, width: int = 128, time_embed_dim: int = 32,
                 activation: str = "silu", params: np.ndarray | None = None, seed: int | None = None):
        for name, v in (("d_enc", d_enc), ("depth", depth), ("width", width),
                        ("time_embed_dim", time_embed_dim)):
            if int(v) != v or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v}")
        if time_embed_dim % 2:
            raise ParameterError(f"time_embed_dim must be even, got {time_embed_dim}")
        if activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {activation!r}")
        self.d_enc = int(d_enc)
        self.depth = int(depth)
        self.width = int(width)
        self.time_embed_dim = int(time_embed_dim)
        self.activation = activation
        self.seed = seed
        self.shapes = layer_shapes(self.d_enc, self.depth, self.width, self.time_embed_dim)
        n = self.n_params
        if params is None:
            params = np.zeros(n, dtype=np.float64)
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (n,):
            raise ShapeError(f"expected {n} parameters, got shape {params.shape}")
        self.params = params.copy()
        self._layout = []
        offset = 0
        for name, shape in self.shapes:
            size = int(np.prod(shape))
            self._layout.append((name, offset, size, shape))
            offset += size
        self.tensors = self._views(self.params)
        self._version = 0

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.shapes)

    def _views(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        return {name: flat[o:o + size].reshape(shape) for name, o, size, shape in self._layout}

    def tensor_of(self, flat_index: int) -> str:
        """Name of the tensor owning position ``flat_index`` of the flat buffer."""
        offset = 0
        for name, shape in self.shapes:
            offset += int(np.prod(shape))
            if flat_index < offset:
                return name
        raise IndexError(flat_index)

    def mark_updated(self) -> None:
        """Invalidate outstanding forward caches after an in-place parameter update."""
        self._version += 1

    def architecture(self) -> dict:
        return {"d_enc": self.d_enc, "depth": self.depth, "width": self.width,
                "time_embed_dim": self.time_embed_dim, "activation": self.activation}

    def copy(self) -> "NoisePredictor":
        return NoisePredictor(params=self.params, seed=self.seed, **self.architecture())

    # -- evaluation -------------------------------------------------------

    def _assemble(self, x, cond_mask, t):
        x = np.asarray(x, dtype=np.float64)
        m = np.asarray(cond_mask, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x, m = x[None, :], m[None, :]
        if x.ndim != 2 or x.shape[1] != self.d_enc:
            raise ShapeError(f"input width {x.shape[-1]} does not match model width {self.d_enc}")
        if m.shape != x.shape:
            raise ShapeError(f"mask shape {m.shape} does not match input shape {x.shape}")
        t = np.broadcast_to(np.asarray(t, dtype=np.int64), (x.shape[0],))
        temb = time_embedding(t, self.time_embed_dim)
        return single, np.concatenate([x, m, temb], axis=1), temb

    def _run(self, z0, temb, keep):
        # overflow surfaces through _check with the layer index instead of a warning
        with np.errstate(all="ignore"):
            return self._layers(z0, temb, keep)

    def _layers(self, z0, temb, keep):
        P, act = self.tensors, self.activation
        h = z0 @ P["in.W"] + P["in.b"]
        self._check(h, 0)
        h_in, us, acts = [], [], []
        for k in range(self.depth):
            u = h @ P[f"block{k}.W1"] + P[f"block{k}.b1"] + temb @ P[f"block{k}.Wt"] + P[f"block{k}.bt"]
            a = _act(act, u)
            if keep:
                h_in.append(h)
                us.append(u)
                acts.append(a)
            h = h + a @ P[f"block{k}.W2"] + P[f"block{k}.b2"]
            self._check(h, k + 1)
        g = _act(act, h)
        out = g @ P["out.W"] + P["out.b"]
        self._check(out, self.depth + 1)
        cache = ForwardCache(self._version, z0, temb, h_in, us, acts, h, g) if keep else None
        return out, cache

    @staticmethod
    def _check(arr, layer):
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite activation at layer {layer}")

    def forward(self, x, cond_mask, t) -> np.ndarray:
        """Predicted noise for every position; rows are independent.

        ``x`` and ``cond_mask`` are ``(d_enc,)`` or ``(n, d_enc)``; ``t`` is
        a scalar or one timestep per row.
        """
        single, z0, temb = self._assemble(x, cond_mask, t)
        out, _ = self._run(z0, temb, keep=False)
        return out[0] if single else out

    __call__ = forward

    def forward_train(self, x, cond_mask, t) -> tuple[np.ndarray, ForwardCache]:
        """Like :meth:`forward` (2-D only) but also returns activations for :meth:`backward`."""
        single, z0, temb = self._assemble(x, cond_mask, t)
        if single:
            raise ShapeError("forward_train expects a 2-D batch")
        return self._run(z0, temb, keep=True)

    def backward(self, grad_out: np.ndarray, cache: ForwardCache | None) -> np.ndarray:
        """Gradient of a scalar loss w.r.t. the flat parameter vector.

        ``grad_out`` is dLoss/dOutput with the batch shape used in the
        matching :meth:`forward_train` call.
        """
        if cache is None:
            raise StateError("backward called without a matching forward_train")
        if cache.version != self._version:
            raise StateError("parameters changed since the forward pass; recompute it")
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.shape != (cache.z0.shape[0], self.d_enc):
            raise ShapeError(f"grad shape {grad_out.shape} does not match output "
                             f"{(cache.z0.shape[0], self.d_enc)}")
        P, act = self.tensors, self.activation
        flat = np.empty_like(self.params)
        G = self._views(flat)

        G["out.W"][...] = cache.g.T @ grad_out
        G["out.b"][...] = grad_out.sum(axis=0)
        dh = (grad_out @ P["out.W"].T) * _act_grad(act, cache.h_last)
        for k in reversed(range(self.depth)):
            a, u, h = cache.a[k], cache.u[k], cache.h_in[k]
            G[f"block{k}.W2"][...] = a.T @ dh
            G[f"block{k}.b2"][...] = dh.sum(axis=0)
            du = (dh @ P[f"block{k}.W2"].T) * _act_grad(act, u)
            G[f"block{k}.W1"][...] = h.T @ du
            G[f"block{k}.b1"][...] = du.sum(axis=0)
            G[f"block{k}.Wt"][...] = cache.temb.T @ du
            G[f"block{k}.bt"][...] = du.sum(axis=0)
            dh = dh + du @ P[f"block{k}.W1"].T
        G["in.W"][...] = cache.z0.T @ dh
        G["in.b"][...] = dh.sum(axis=0)
        return flat


def init_parameters(d_enc: int, depth: int = 4, width: int = 128, time_embed_dim: int = 32,
                    seed: int = 0, activation: str = "silu") -> NoisePredictor:
    """Fresh predictor: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    model = NoisePredictor(d_enc, depth, width, time_embed_dim, activation, seed=seed)
    rng = np.random.default_rng(seed)
    for name, shape in model.shapes:
        if len(shape) == 2:
            bound = 1.0 / np.sqrt(shape[0])
            model.tensors[name][...] = rng.uniform(-bound, bound, size=shape)
    return model
