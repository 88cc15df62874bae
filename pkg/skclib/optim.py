"""First-order optimizers over dicts of numpy arrays.

Parameters and gradients are flat dicts name -> array with matching shapes; complex arrays are
updated with the packed gradient (dl/dRe + i*dl/dIm), which is the same as updating the real
and imaginary parts separately.
"""

import numpy as np


def robbins_monro(lr0, t, T0=1000):
    """lr_t = lr0 / (1 + t/T0): sum of steps diverges, sum of squares converges."""
    return lr0 / (1.0 + t / float(T0))


class SGD(object):
    def __init__(self, lr, schedule="constant", T0=1000):
        self.lr = lr
        self.schedule = schedule
        self.T0 = T0
        self.t = 0

    def current_lr(self):
        if self.schedule == "robbins_monro":
            return robbins_monro(self.lr, self.t, self.T0)

        return self.lr

    def step(self, params, grads):
        lr = self.current_lr()
        for k, g in grads.items():
            params[k] = params[k] - lr * g

        self.t += 1
        return params


class Adam(object):
    """Adam; lr_scale maps parameter names to a multiplier on lr for that parameter only."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8, lr_scale=None):
        self.lr = lr
        self.lr_scale = dict(lr_scale or {})
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros(np.shape(g))

            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            # complex moments track Re and Im magnitudes separately
            sq = g.real ** 2 + 1j * g.imag ** 2 if np.iscomplexobj(g) else g ** 2
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * sq
            vhat = self.v[k] / b2t
            if np.iscomplexobj(vhat):
                denom = (np.sqrt(vhat.real) + self.eps) + 1j * (np.sqrt(vhat.imag) + self.eps)
                mhat = self.m[k] / b1t
                upd = mhat.real / denom.real + 1j * (mhat.imag / denom.imag)
            else:
                upd = (self.m[k] / b1t) / (np.sqrt(vhat) + self.eps)

            params[k] = params[k] - self.lr * self.lr_scale.get(k, 1.0) * upd

        return params

    def state_dict(self):
        return {"t": self.t, "m": {k: pack_array(v) for k, v in self.m.items()},
                "v": {k: pack_array(v) for k, v in self.v.items()}}

    def load_state_dict(self, d):
        self.t = int(d["t"])
        self.m = {k: unpack_array(v) for k, v in d["m"].items()}
        self.v = {k: unpack_array(v) for k, v in d["v"].items()}


def pack_array(a):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return {"shape": list(a.shape), "re": a.real.ravel().tolist(), "im": a.imag.ravel().tolist()}

    return {"shape": list(a.shape), "re": a.ravel().tolist()}


def unpack_array(d):
    a = np.asarray(d["re"], dtype=float)
    if "im" in d:
        a = a + 1j * np.asarray(d["im"], dtype=float)

    return a.reshape(d["shape"])
