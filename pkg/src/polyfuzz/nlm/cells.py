"""Elman, GRU and LSTM cells with hand-written backward passes.

Parameters for a cell with G gates live in three arrays: ``W`` (input x G*H),
``U`` (H x G*H) and ``b`` (G*H,). The GRU also keeps ``bhn``, the bias applied
to the recurrent part of its candidate before the reset gate. Gate order is
[r, z, n] for the GRU and [i, f, g, o] for the LSTM.

All functions work on batches: inputs are (B, input_size), hidden states are
(B, H). LSTM states are (h, c) tuples, the others a single array.
"""

from __future__ import annotations

import numpy as np

from .functional import sigmoid, uniform_init

CELL_KINDS = ("elman", "gru", "lstm")
_GATES = {"elman": 1, "gru": 3, "lstm": 4}


class ShapeError(ValueError):
    pass


class RecurrentCell:
    def __init__(self, kind: str, input_size: int, hidden_size: int = 128,
                 params: dict | None = None, rng=None, dtype=np.float32):
        if kind not in _GATES:
            raise ValueError(f"unknown cell kind {kind!r}; expected one of {CELL_KINDS}")
        if input_size < 1 or hidden_size < 1:
            raise ValueError("input_size and hidden_size must be positive")
        self.kind = kind
        self.input_size = input_size
        self.hidden_size = hidden_size
        if params is None:
            rng = np.random.default_rng() if rng is None else rng
            params = {k: uniform_init(rng, s, dtype) for k, s in self.param_shapes().items()}
        self.params = params
        self._check_params()

    def param_shapes(self) -> dict:
        G, H, I = _GATES[self.kind], self.hidden_size, self.input_size
        shapes = {"W": (I, G * H), "U": (H, G * H), "b": (G * H,)}
        if self.kind == "gru":
            shapes["bhn"] = (H,)
        return shapes

    def _check_params(self) -> None:
        for name, shape in self.param_shapes().items():
            if name not in self.params:
                raise ShapeError(f"{self.kind} cell missing parameter {name!r}")
            if self.params[name].shape != shape:
                raise ShapeError(f"{self.kind} parameter {name} has shape "
                                 f"{self.params[name].shape}, expected {shape}")

    @property
    def dtype(self):
        return self.params["W"].dtype

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def initial_state(self, batch: int):
        h = np.zeros((batch, self.hidden_size), dtype=self.dtype)
        return (h, h.copy()) if self.kind == "lstm" else h

    # -- single step -------------------------------------------------------

    def forward_step(self, x, state):
        """One batched step. Returns (new_state, cache)."""
        p, H = self.params, self.hidden_size
        if x.ndim != 2 or x.shape[1] != self.input_size:
            raise ShapeError(f"input has shape {x.shape}, expected (B, {self.input_size})")
        h = state[0] if self.kind == "lstm" else state
        if h.shape != (x.shape[0], H):
            raise ShapeError(f"hidden state has shape {h.shape}, expected ({x.shape[0]}, {H})")

        if self.kind == "elman":
            h_new = np.tanh(x @ p["W"] + h @ p["U"] + p["b"])
            return h_new, (x, h, h_new)

        if self.kind == "gru":
            ax = x @ p["W"] + p["b"]
            U = p["U"]
            ahr = h @ U[:, :2 * H]
            r = sigmoid(ax[:, :H] + ahr[:, :H])
            z = sigmoid(ax[:, H:2 * H] + ahr[:, H:])
            hn = h @ U[:, 2 * H:] + p["bhn"]
            n = np.tanh(ax[:, 2 * H:] + r * hn)
            h_new = (1 - z) * n + z * h
            return h_new, (x, h, r, z, n, hn)

        c = state[1]
        a = x @ p["W"] + h @ p["U"] + p["b"]
        i = sigmoid(a[:, :H])
        f = sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = sigmoid(a[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        return (h_new, c_new), (x, h, c, i, f, g, o, tc)

    def backward_step(self, d_state, cache, grads: dict):
        """Backpropagate one step. Accumulates into ``grads``; returns (dx, d_prev_state)."""
        p, H = self.params, self.hidden_size

        if self.kind == "elman":
            x, h, h_new = cache
            da = d_state * (1 - h_new * h_new)
            grads["W"] += x.T @ da
            grads["U"] += h.T @ da
            grads["b"] += da.sum(0)
            return da @ p["W"].T, da @ p["U"].T

        if self.kind == "gru":
            x, h, r, z, n, hn = cache
            dh = d_state
            dn = dh * (1 - z)
            dz = dh * (h - n)
            dh_prev = dh * z
            dan = dn * (1 - n * n)
            dr = dan * hn
            dhn = dan * r
            dar = dr * r * (1 - r)
            daz = dz * z * (1 - z)
            dax = np.concatenate([dar, daz, dan], axis=1)
            dah = np.concatenate([dar, daz, dhn], axis=1)
            grads["W"] += x.T @ dax
            grads["b"] += dax.sum(0)
            grads["U"] += h.T @ dah
            grads["bhn"] += dhn.sum(0)
            dx = dax @ p["W"].T
            dh_prev = dh_prev + dah @ p["U"].T
            return dx, dh_prev

        x, h, c, i, f, g, o, tc = cache
        dh, dc = d_state
        do = dh * tc
        dc = dc + dh * o * (1 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c
        dc_prev = dc * f
        da = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                             dg * (1 - g * g), do * o * (1 - o)], axis=1)
        grads["W"] += x.T @ da
        grads["U"] += h.T @ da
        grads["b"] += da.sum(0)
        return da @ p["W"].T, (da @ p["U"].T, dc_prev)

    # -- sequences ---------------------------------------------------------

    def run(self, X, mask=None, state=None):
        """Run over a (B, T, input) batch. Where ``mask[:, t]`` is False the
        state is carried through unchanged, so the final state is the state
        after each row's last valid step.

        Returns (hidden states (B, T, H), final state, caches).
        """
        B, T, _ = X.shape
        state = self.initial_state(B) if state is None else state
        hs = np.zeros((B, T, self.hidden_size), dtype=self.dtype)
        caches = []
        for t in range(T):
            new, cache = self.forward_step(X[:, t], state)
            if mask is not None:
                m = mask[:, t:t + 1]
                new = _select(m, new, state)
            state = new
            hs[:, t] = state[0] if self.kind == "lstm" else state
            caches.append(cache)
        return hs, state, caches

    def run_backward(self, dH, d_final, caches, mask=None, grads=None):
        """Backward through :meth:`run`. ``dH`` is the loss gradient w.r.t. the
        returned hidden states (or None), ``d_final`` w.r.t. the final state.

        Returns (dX, d_initial_state, grads).
        """
        grads = self.zero_grads() if grads is None else grads
        T = len(caches)
        B = caches[0][0].shape[0] if T else 0
        dX = np.zeros((B, T, self.input_size), dtype=self.dtype)
        if d_final is None:
            d_final = self.initial_state(B)
        d = _copy_state(d_final)
        for t in reversed(range(T)):
            if dH is not None:
                if self.kind == "lstm":
                    d = (d[0] + dH[:, t], d[1])
                else:
                    d = d + dH[:, t]
            if mask is not None:
                m = mask[:, t:t + 1]
                through = _scale(d, ~m)
                d_in = _scale(d, m)
            else:
                through, d_in = None, d
            dx, d_prev = self.backward_step(d_in, caches[t], grads)
            dX[:, t] = dx
            d = d_prev if through is None else _add(d_prev, through)
        return dX, d, grads


def _select(m, new, old):
    if isinstance(new, tuple):
        return tuple(np.where(m, a, b) for a, b in zip(new, old))
    return np.where(m, new, old)


def _scale(state, m):
    if isinstance(state, tuple):
        return tuple(s * m for s in state)
    return state * m


def _add(a, b):
    if isinstance(a, tuple):
        return tuple(x + y for x, y in zip(a, b))
    return a + b


def _copy_state(state):
    if isinstance(state, tuple):
        return tuple(np.array(s, copy=True) for s in state)
    return np.array(state, copy=True)


def step(cell: RecurrentCell, input_vector, hidden_state):
    """Unbatched single step: 1-D input and hidden vectors (``(h, c)`` for LSTM)."""
    x = np.asarray(input_vector, dtype=cell.dtype)
    if x.shape != (cell.input_size,):
        raise ShapeError(f"input vector has shape {x.shape}, expected ({cell.input_size},)")
    if cell.kind == "lstm":
        h, c = (np.asarray(s, dtype=cell.dtype) for s in hidden_state)
        if h.shape != (cell.hidden_size,) or c.shape != (cell.hidden_size,):
            raise ShapeError("lstm state vectors must have shape (hidden_size,)")
        (h2, c2), _ = cell.forward_step(x[None], (h[None], c[None]))
        return h2[0], c2[0]
    h = np.asarray(hidden_state, dtype=cell.dtype)
    if h.shape != (cell.hidden_size,):
        raise ShapeError(f"hidden state has shape {h.shape}, expected ({cell.hidden_size},)")
    h2, _ = cell.forward_step(x[None], h[None])
    return h2[0]
