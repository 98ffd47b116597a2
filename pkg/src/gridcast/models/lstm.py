"""Fully connected LSTM baseline.

Frames are flattened per timestep, so all spatial structure is lost. Three
stacked LSTM layers with peephole connections and ReLU between them, then an
affine head mapping the final hidden state to one logit per grid cell.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from .convlstm import _uniform_init


class LstmLayer:
    """Gate order along the fused axis is i, f, g, o (matches the conv cell)."""

    def __init__(self, d_in, d_hid, rng):
        self.d_hid = d_hid
        self.w_x = Tensor(_uniform_init(rng, (d_in, 4 * d_hid), d_in), requires_grad=True)
        self.w_h = Tensor(_uniform_init(rng, (d_hid, 4 * d_hid), d_hid), requires_grad=True)
        self.bias = Tensor(np.zeros(4 * d_hid), requires_grad=True)
        self.peep_i = Tensor(np.zeros(d_hid), requires_grad=True)
        self.peep_f = Tensor(np.zeros(d_hid), requires_grad=True)
        self.peep_o = Tensor(np.zeros(d_hid), requires_grad=True)

    def parameters(self, prefix=""):
        return {
            f"{prefix}w_x": self.w_x,
            f"{prefix}w_h": self.w_h,
            f"{prefix}bias": self.bias,
            f"{prefix}peep_i": self.peep_i,
            f"{prefix}peep_f": self.peep_f,
            f"{prefix}peep_o": self.peep_o,
        }

    def step(self, x, h_prev, c_prev):
        """x: (B, D_in) -> new (h, c), each (B, D_hid)."""
        z = ad.add(ad.add(ad.matmul(x, self.w_x), ad.matmul(h_prev, self.w_h)), self.bias)
        d = self.d_hid
        zi = ad.narrow(z, 1, 0, d)
        zf = ad.narrow(z, 1, d, d)
        zg = ad.narrow(z, 1, 2 * d, d)
        zo = ad.narrow(z, 1, 3 * d, d)
        i_gate = ad.sigmoid(ad.add(zi, ad.mul(self.peep_i, c_prev)))
        f_gate = ad.sigmoid(ad.add(zf, ad.mul(self.peep_f, c_prev)))
        g = ad.tanh(zg)
        c_new = ad.add(ad.mul(f_gate, c_prev), ad.mul(i_gate, g))
        o_gate = ad.sigmoid(ad.add(zo, ad.mul(self.peep_o, c_new)))
        h_new = ad.mul(o_gate, ad.tanh(c_new))
        return h_new, c_new


class LstmNet:
    """Stacked LSTM over flattened frames, affine head to a probability grid."""

    def __init__(self, d_in, d_hid=28, n_layers=3, spatial=(16, 16), seed=0):
        rng = np.random.default_rng(seed)
        self.spatial = tuple(spatial)
        self.layers = [LstmLayer(d_in if k == 0 else d_hid, d_hid, rng)
                       for k in range(n_layers)]
        n_out = self.spatial[0] * self.spatial[1]
        self.head_w = Tensor(_uniform_init(rng, (d_hid, n_out), d_hid), requires_grad=True)
        self.head_b = Tensor(np.zeros(n_out), requires_grad=True)

    def parameters(self):
        out = {}
        for k, layer in enumerate(self.layers):
            out.update(layer.parameters(prefix=f"layer{k}."))
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def buffers(self):
        return {}

    def load_buffers(self, arrays):
        pass

    def count_parameters(self):
        return sum(p.data.size for p in self.parameters().values())

    @staticmethod
    def prepare_inputs(x):
        """(B, T, H, W, C) channel-last batch -> flattened (B, T, H*W*C) steps."""
        x = np.asarray(x)
        return np.ascontiguousarray(x.reshape(x.shape[0], x.shape[1], -1))

    def forward(self, x, mode="infer", rng=None):
        """x: (B, T, D) array or Tensor -> (B, H, W) probabilities.

        mode and rng are accepted for interface parity with the conv net;
        this baseline has no dropout or batch norm.
        """
        if not isinstance(x, Tensor):
            x = Tensor(x)
        bsz, t_steps, _ = x.data.shape
        seq = [ad.reshape(ad.narrow(x, 1, t, 1), (bsz, x.data.shape[2]))
               for t in range(t_steps)]
        last_h = None
        for k, layer in enumerate(self.layers):
            h_state = Tensor(np.zeros((bsz, layer.d_hid)))
            c_state = Tensor(np.zeros((bsz, layer.d_hid)))
            outs = []
            for t in range(t_steps):
                h_state, c_state = layer.step(seq[t], h_state, c_state)
                outs.append(h_state)
            last_h = outs[-1]
            if k < len(self.layers) - 1:
                seq = [ad.relu(o) for o in outs]
        probs = ad.sigmoid(ad.add(ad.matmul(last_h, self.head_w), self.head_b))
        return ad.reshape(probs, (bsz,) + self.spatial)
