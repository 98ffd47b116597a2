"""Convolutional LSTM forecaster.

Each cell keeps spatial structure: gate pre-activations come from one fused
convolution over the channel-concatenated [input, hidden] pair, and the cell
state enters the gates through elementwise peephole weights. Three stacked
blocks feed a 3x3 conv head with dropout and a sigmoid, producing a per-cell
occurrence probability map.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ConvLstmCell:
    """One recurrent block. Gate order along the fused axis is i, f, g, o.

    `peephole` is "channel" (one weight per hidden channel, broadcast over
    space) or "full" (a weight per channel and cell, sized by `spatial`).
    """

    def __init__(self, c_in, c_hid, kernel=3, peephole="channel", spatial=None, rng=None):
        if peephole not in ("channel", "full"):
            raise ValueError(f"peephole must be 'channel' or 'full', got {peephole!r}")
        if peephole == "full" and spatial is None:
            raise ValueError("full peepholes need the spatial extent up front")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_in = c_in
        self.c_hid = c_hid
        k = kernel
        self.x_kernels = Tensor(_uniform_init(rng, (4 * c_hid, c_in, k, k), c_in * k * k),
                                requires_grad=True)
        self.h_kernels = Tensor(_uniform_init(rng, (4 * c_hid, c_hid, k, k), c_hid * k * k),
                                requires_grad=True)
        self.bias = Tensor(np.zeros(4 * c_hid), requires_grad=True)
        peep_shape = (c_hid, 1, 1) if peephole == "channel" else (c_hid,) + tuple(spatial)
        self.peep_i = Tensor(np.zeros(peep_shape), requires_grad=True)
        self.peep_f = Tensor(np.zeros(peep_shape), requires_grad=True)
        self.peep_o = Tensor(np.zeros(peep_shape), requires_grad=True)

    def parameters(self, prefix=""):
        return {
            f"{prefix}x_kernels": self.x_kernels,
            f"{prefix}h_kernels": self.h_kernels,
            f"{prefix}bias": self.bias,
            f"{prefix}peep_i": self.peep_i,
            f"{prefix}peep_f": self.peep_f,
            f"{prefix}peep_o": self.peep_o,
        }

    def step(self, x, h_prev, c_prev):
        """One timestep: (B, C_in, H, W) x states -> new (h, c)."""
        joint = ad.concat([x, h_prev], axis=1)
        kernels = ad.concat([self.x_kernels, self.h_kernels], axis=1)
        z = ad.conv2d(joint, kernels, self.bias)  # (B, 4*C_hid, H, W)
        c = self.c_hid
        zi = ad.narrow(z, 1, 0, c)
        zf = ad.narrow(z, 1, c, c)
        zg = ad.narrow(z, 1, 2 * c, c)
        zo = ad.narrow(z, 1, 3 * c, c)
        i_gate = ad.sigmoid(ad.add(zi, ad.mul(self.peep_i, c_prev)))
        f_gate = ad.sigmoid(ad.add(zf, ad.mul(self.peep_f, c_prev)))
        g = ad.tanh(zg)
        c_new = ad.add(ad.mul(f_gate, c_prev), ad.mul(i_gate, g))
        o_gate = ad.sigmoid(ad.add(zo, ad.mul(self.peep_o, c_new)))
        h_new = ad.mul(o_gate, ad.tanh(c_new))
        return h_new, c_new


class ConvLstmNet:
    """Stacked ConvLSTM blocks -> ReLU -> batch norm, then conv head.

    Block k consumes block k-1's full hidden sequence. The head takes the
    final hidden state through a 3x3 conv to one channel, drops out logits,
    and applies the sigmoid.
    """

    def __init__(self, c_in, c_hid=28, n_blocks=3, kernel=3, spatial=(16, 16),
                 p_drop=0.8, peephole="channel", seed=0):
        rng = np.random.default_rng(seed)
        self.spatial = tuple(spatial)
        self.p_drop = p_drop
        self.blocks = []
        self.norms = []
        for b in range(n_blocks):
            self.blocks.append(ConvLstmCell(
                c_in if b == 0 else c_hid, c_hid, kernel=kernel,
                peephole=peephole, spatial=self.spatial, rng=rng))
            self.norms.append(ad.BatchNorm2d(c_hid))
        self.head_kernels = Tensor(
            _uniform_init(rng, (1, c_hid, kernel, kernel), c_hid * kernel * kernel),
            requires_grad=True)
        self.head_bias = Tensor(np.zeros(1), requires_grad=True)

    def parameters(self):
        out = {}
        for b, (cell, bn) in enumerate(zip(self.blocks, self.norms)):
            out.update(cell.parameters(prefix=f"block{b}."))
            out[f"bn{b}.gamma"] = bn.gamma
            out[f"bn{b}.beta"] = bn.beta
        out["head.kernels"] = self.head_kernels
        out["head.bias"] = self.head_bias
        return out

    def buffers(self):
        out = {}
        for b, bn in enumerate(self.norms):
            for name, arr in bn.state_arrays().items():
                out[f"bn{b}.{name}"] = arr
        return out

    def load_buffers(self, arrays):
        for b, bn in enumerate(self.norms):
            bn.load_state_arrays(arrays, prefix=f"bn{b}.")

    def count_parameters(self):
        return sum(p.data.size for p in self.parameters().values())

    @staticmethod
    def prepare_inputs(x):
        """(B, T, H, W, C) channel-last batch -> the (B, T, C, H, W) this net eats."""
        return np.ascontiguousarray(np.moveaxis(np.asarray(x), -1, 2))

    def forward(self, x, mode, rng=None):
        """x: (B, T, C, H, W) array or Tensor -> (B, H, W) probabilities."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        bsz, t_steps = x.data.shape[:2]
        h, w = x.data.shape[3], x.data.shape[4]
        step_shape = (bsz,) + x.data.shape[2:]
        seq = [ad.reshape(ad.narrow(x, 1, t, 1), step_shape) for t in range(t_steps)]
        for cell, bn in zip(self.blocks, self.norms):
            h_state = Tensor(np.zeros((bsz, cell.c_hid, h, w)))
            c_state = Tensor(np.zeros((bsz, cell.c_hid, h, w)))
            hs = []
            for t in range(t_steps):
                h_state, c_state = cell.step(seq[t], h_state, c_state)
                hs.append(h_state)
            stacked = ad.concat(hs, axis=0) if t_steps > 1 else hs[0]
            normed = bn(ad.relu(stacked), mode)
            seq = [ad.narrow(normed, 0, t * bsz, bsz) for t in range(t_steps)]
        logits = ad.conv2d(seq[-1], self.head_kernels, self.head_bias)
        logits = ad.dropout(logits, self.p_drop, mode, rng)
        probs = ad.sigmoid(logits)
        return ad.reshape(probs, (bsz, h, w))
