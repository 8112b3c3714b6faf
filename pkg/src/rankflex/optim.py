"""AdamW with per-direction state surgery.

A hand-rolled optimizer is used instead of a framework import because rank
changes must reach into the moment buffers: pruning an adapter direction
deletes the matching slice of m and v, expansion appends zeros, and every
untouched direction keeps its accumulated state. Weight decay is decoupled
(applied directly to the parameter, not through the gradient) and skips any
name passed in ``no_decay``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ParameterError, ShapeError

__all__ = ["AdamW"]


class AdamW:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        if not (math.isfinite(lr) and lr > 0.0):
            raise ParameterError("lr must be positive and finite")
        for name, b in (("beta1", beta1), ("beta2", beta2)):
            if not 0.0 <= b < 1.0:
                raise ParameterError(f"{name} must lie in [0, 1)")
        if not eps > 0.0:
            raise ParameterError("eps must be positive")
        if not (math.isfinite(weight_decay) and weight_decay >= 0.0):
            raise ParameterError("weight_decay must be >= 0 and finite")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.state = {}

    def step(self, params, grads, no_decay=()):
        """One update, in place, over name-keyed parameter arrays.

        Moment buffers are created lazily per name; a shape mismatch between
        a parameter and its buffer means rank surgery was skipped and is an
        error rather than a silent reset.
        """
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name in sorted(params):
            if name not in grads:
                raise ParameterError(f"missing gradient for parameter {name!r}")
            p = params[name]
            g = np.asarray(grads[name], dtype=np.float64)
            if g.shape != p.shape:
                raise ShapeError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
            st = self.state.get(name)
            if st is None:
                st = {"m": np.zeros_like(p), "v": np.zeros_like(p)}
                self.state[name] = st
            m, v = st["m"], st["v"]
            if m.shape != p.shape:
                raise ShapeError(f"{name}: state shape {m.shape} != param shape {p.shape}")
            if self.weight_decay > 0.0 and name not in no_decay:
                p -= self.lr * self.weight_decay * p
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def prune_direction(self, name, index, axis):
        """Delete one slice of the moment buffers after a rank prune."""
        st = self.state.get(name)
        if st is None:
            return
        st["m"] = np.delete(st["m"], index, axis=axis)
        st["v"] = np.delete(st["v"], index, axis=axis)

    def expand_direction(self, name, axis):
        """Append a zero slice to the moment buffers after an expansion."""
        st = self.state.get(name)
        if st is None:
            return
        for key in ("m", "v"):
            shape = list(st[key].shape)
            shape[axis] = 1
            st[key] = np.concatenate([st[key], np.zeros(shape)], axis=axis)

    def sync_rank_change(self, event):
        """Apply one AllocationEvent to the three factor buffers."""
        base = event.adapter_id
        if event.action == "prune":
            self.prune_direction(f"{base}.p", event.index, axis=1)
            self.prune_direction(f"{base}.lam", event.index, axis=0)
            self.prune_direction(f"{base}.q", event.index, axis=0)
        else:
            self.expand_direction(f"{base}.p", axis=1)
            self.expand_direction(f"{base}.lam", axis=0)
            self.expand_direction(f"{base}.q", axis=0)
