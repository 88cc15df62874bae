"""Small tanh MLPs with explicit forward caches and hand-written backward passes."""

import numpy as np

from skclib.errors import SizeError
from skclib.optim import pack_array, unpack_array


def affine_backward(x, W, dout):
    return dout @ W.T, x.T @ dout, dout.sum(axis=0)


def tanh_backward(y, dout):
    # y is the tanh output
    return dout * (1.0 - y ** 2)


class TanhMLP(object):
    """Affine layers with tanh between them; the last layer is linear.

    Parameters live in self.params as W0, b0, W1, b1, ... so optimizers can step the dict directly.
    """

    def __init__(self, sizes, rng=None, out_scale=1.0):
        self.sizes = [int(s) for s in sizes]
        self.params = {}
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if rng is None:
                W = np.zeros((n_in, n_out))
            else:
                W = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))

            if i == len(self.sizes) - 2:
                W = W * out_scale

            self.params["W" + str(i)] = W
            self.params["b" + str(i)] = np.zeros(n_out)

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    def forward(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[-1] != self.sizes[0]:
            raise SizeError("network input has dimension " + str(x.shape[-1]) + ", expected " + str(self.sizes[0]))

        inputs = []
        h = x
        for i in range(self.n_layers):
            inputs.append(h)
            h = h @ self.params["W" + str(i)] + self.params["b" + str(i)]
            if i < self.n_layers - 1:
                h = np.tanh(h)

        return h, inputs

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, inputs, dout):
        """Returns (d input, {param name: grad})."""
        grads = {}
        d = np.atleast_2d(dout)
        for i in range(self.n_layers - 1, -1, -1):
            W = self.params["W" + str(i)]
            d, grads["W" + str(i)], grads["b" + str(i)] = affine_backward(inputs[i], W, d)
            if i > 0:
                d = tanh_backward(inputs[i], d)

        return d, grads

    def copy(self):
        other = TanhMLP(self.sizes)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def ema_from(self, source, tau):
        for k in self.params:
            self.params[k] = (1.0 - tau) * self.params[k] + tau * source.params[k]

    def distance(self, other):
        return float(np.sqrt(sum(np.sum((self.params[k] - other.params[k]) ** 2) for k in self.params)))

    def to_dict(self):
        return {"sizes": self.sizes, "params": {k: pack_array(v) for k, v in self.params.items()}}

    @classmethod
    def from_dict(cls, d):
        net = cls(d["sizes"])
        net.params = {k: unpack_array(v) for k, v in d["params"].items()}
        for i in range(net.n_layers):
            if net.params["W" + str(i)].shape != (net.sizes[i], net.sizes[i + 1]):
                raise SizeError("layer " + str(i) + " weight shape does not match declared sizes")

        return net
