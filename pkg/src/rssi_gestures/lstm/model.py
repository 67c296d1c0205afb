"""Stacked LSTM sequence classifier with a softmax output layer.

Each layer ``l`` owns ``layer{l}.W`` of shape ``(n_in + N, 4N)`` (input rows
first, then recurrent rows) and ``layer{l}.b`` of shape ``(4N,)``. Gate blocks
along the last axis are ordered input, forget, output, candidate. The dense
head ``out.W`` ``(N, K)`` and ``out.b`` ``(K,)`` maps the top layer's final
hidden state to logits.
"""

from __future__ import annotations

import itertools

import numpy as np

from rssi_gestures.labels import N_CLASSES

_versions = itertools.count(1)


class StaleCacheError(RuntimeError):
    pass


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class LstmModel:
    def __init__(self, tau: int, hidden: int, layers: int, params: dict[str, np.ndarray],
                 classes: int = N_CLASSES):
        self.tau = int(tau)
        self.hidden = int(hidden)
        self.n_layers = int(layers)
        self.classes = int(classes)
        self.params = params
        self._check_shapes()
        self.version = next(_versions)

    @classmethod
    def initialize(cls, tau: int, hidden: int = 200, layers: int = 2, rng=None,
                   init_range: float = 0.08, forget_bias: float = 1.0, classes: int = N_CLASSES):
        """Uniform ``[-init_range, init_range]`` init, plus ``forget_bias`` on forget gates."""
        rng = np.random.default_rng(rng)
        params = {}
        for layer in range(layers):
            n_in = 1 if layer == 0 else hidden
            params[f"layer{layer}.W"] = rng.uniform(-init_range, init_range, (n_in + hidden, 4 * hidden))
            b = rng.uniform(-init_range, init_range, 4 * hidden)
            b[hidden:2 * hidden] += forget_bias
            params[f"layer{layer}.b"] = b
        params["out.W"] = rng.uniform(-init_range, init_range, (hidden, classes))
        params["out.b"] = rng.uniform(-init_range, init_range, classes)
        return cls(tau, hidden, layers, params, classes)

    def _check_shapes(self):
        N = self.hidden
        expected = {}
        for layer in range(self.n_layers):
            n_in = 1 if layer == 0 else N
            expected[f"layer{layer}.W"] = (n_in + N, 4 * N)
            expected[f"layer{layer}.b"] = (4 * N,)
        expected["out.W"] = (N, self.classes)
        expected["out.b"] = (self.classes,)
        if set(expected) != set(self.params):
            raise ValueError(f"parameter names {sorted(self.params)} do not match {sorted(expected)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name} has shape {self.params[name].shape}, expected {shape}")

    def touch(self):
        """Mark parameters as modified; invalidates outstanding forward caches."""
        self.version = next(_versions)

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "LstmModel":
        return LstmModel(self.tau, self.hidden, self.n_layers,
                         {k: v.copy() for k, v in self.params.items()}, self.classes)

    def logits(self, X) -> np.ndarray:
        return forward(self, X)[0]

    def predict(self, X) -> np.ndarray:
        return self.logits(X).argmax(axis=1)

    def __eq__(self, other):
        if not isinstance(other, LstmModel):
            return NotImplemented
        return ((self.tau, self.hidden, self.n_layers, self.classes)
                == (other.tau, other.hidden, other.n_layers, other.classes)
                and self.params.keys() == other.params.keys()
                and all(np.array_equal(v, other.params[k]) for k, v in self.params.items()))


def dropout_masks(model: LstmModel, batch: int, drop: float, rng: np.random.Generator):
    """Inverted-dropout masks for each layer's output, drawn per time step."""
    if drop <= 0:
        return None
    keep = 1.0 - drop
    return [(rng.random((model.tau, batch, model.hidden)) < keep) / keep
            for _ in range(model.n_layers)]


def forward(model: LstmModel, X, masks=None, keep_cache: bool = False):
    """Run the network on ``X`` of shape ``(B, tau)`` (or a single ``(tau,)`` vector).

    ``masks`` is an optional list with one ``(tau, B, N)`` multiplier per layer
    applied to that layer's outputs. Returns ``(logits, cache)``; the cache
    is ``None`` unless ``keep_cache``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.tau:
        raise ValueError(f"model expects inputs of length tau={model.tau}, got shape {X.shape}")
    B, T = X.shape
    N = model.hidden
    x = X.T[:, :, None]
    layers = []
    for layer in range(model.n_layers):
        W = model.params[f"layer{layer}.W"]
        b = model.params[f"layer{layer}.b"]
        n_in = W.shape[0] - N
        Wx, Wh = W[:n_in], W[n_in:]
        pre_x = x @ Wx + b
        h = np.zeros((B, N))
        c = np.zeros((B, N))
        if keep_cache:
            gates = np.empty((T, B, 4 * N))
            cells = np.empty((T + 1, B, N))
            cells[0] = 0.0
            hs = np.empty((T + 1, B, N))
            hs[0] = 0.0
        out = np.empty((T, B, N))
        for t in range(T):
            z = pre_x[t] + h @ Wh
            ifo = sigmoid(z[:, :3 * N])
            g = np.tanh(z[:, 3 * N:])
            c = ifo[:, N:2 * N] * c + ifo[:, :N] * g
            h = ifo[:, 2 * N:] * np.tanh(c)
            out[t] = h
            if keep_cache:
                gates[t, :, :3 * N] = ifo
                gates[t, :, 3 * N:] = g
                cells[t + 1] = c
                hs[t + 1] = h
        if masks is not None:
            out = out * masks[layer]
        if keep_cache:
            layers.append({"x": x, "gates": gates, "cells": cells, "hs": hs})
        x = out
    top = x[-1]
    logits = top @ model.params["out.W"] + model.params["out.b"]
    cache = None
    if keep_cache:
        cache = {"layers": layers, "top": top, "masks": masks, "logits": logits,
                 "version": model.version, "model_id": id(model), "batch": B}
    return logits, cache


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(np.asarray(logits, dtype=float)))


def loss_nll(logits, labels) -> float:
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``)."""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    labels = np.asarray(labels, dtype=int).reshape(-1)
    return float(-log_softmax(logits)[np.arange(len(labels)), labels].mean())


def backward(model: LstmModel, cache, labels) -> dict[str, np.ndarray]:
    """Exact gradients of the mean NLL with respect to every parameter."""
    if cache is None:
        raise ValueError("backward needs a cache from forward(..., keep_cache=True)")
    if cache["model_id"] != id(model) or cache["version"] != model.version:
        raise StaleCacheError("cache was produced by a different model or before a parameter update")
    labels = np.asarray(labels, dtype=int).reshape(-1)
    B = cache["batch"]
    if len(labels) != B:
        raise ValueError(f"got {len(labels)} labels for a batch of {B}")
    N = model.hidden
    grads = {}

    dlogits = softmax(cache["logits"])
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B
    grads["out.W"] = cache["top"].T @ dlogits
    grads["out.b"] = dlogits.sum(axis=0)

    first = cache["layers"][0]
    T = first["x"].shape[0]
    d_out = np.zeros((T, B, N))
    d_out[-1] = dlogits @ model.params["out.W"].T
    masks = cache["masks"]

    for layer in reversed(range(model.n_layers)):
        lc = cache["layers"][layer]
        W = model.params[f"layer{layer}.W"]
        n_in = W.shape[0] - N
        Wx, Wh = W[:n_in], W[n_in:]
        dh_all = d_out * masks[layer] if masks is not None else d_out
        gates, cells = lc["gates"], lc["cells"]
        dz = np.empty((T, B, 4 * N))
        dh_next = np.zeros((B, N))
        dc_next = np.zeros((B, N))
        for t in reversed(range(T)):
            i = gates[t, :, :N]
            f = gates[t, :, N:2 * N]
            o = gates[t, :, 2 * N:3 * N]
            g = gates[t, :, 3 * N:]
            tc = np.tanh(cells[t + 1])
            dh = dh_all[t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz[t, :, :N] = dc * g * i * (1.0 - i)
            dz[t, :, N:2 * N] = dc * cells[t] * f * (1.0 - f)
            dz[t, :, 2 * N:3 * N] = dh * tc * o * (1.0 - o)
            dz[t, :, 3 * N:] = dc * i * (1.0 - g * g)
            dc_next = dc * f
            dh_next = dz[t] @ Wh.T
        flat_dz = dz.reshape(T * B, 4 * N)
        dWx = lc["x"].reshape(T * B, n_in).T @ flat_dz
        dWh = lc["hs"][:-1].reshape(T * B, N).T @ flat_dz
        grads[f"layer{layer}.W"] = np.concatenate([dWx, dWh], axis=0)
        grads[f"layer{layer}.b"] = flat_dz.sum(axis=0)
        if layer > 0:
            d_out = dz @ Wx.T
    return {k: grads[k] for k in model.params}
