"""Reduced-kernel 3D U-Net: 3 resolution levels, two convs per level,
sigmoid head, channel counts starting at 16 (half of the 32-channel base)."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import FormatError, ShapeError
from ..volgrid import LabelVolume, Volume3
from . import ops
from .tensor import Param

CHECKPOINT_MAGIC = b"UN3D"


@dataclass(frozen=True)
class UNet3dSpec:
    levels: int = 3
    base_channels: int = 16
    in_channels: int = 1
    input_dhw: tuple[int, int, int] = (16, 64, 64)
    param_seed: int = 0

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("need at least 2 levels")
        d, h, w = self.input_dhw
        for pd, ph, pw in self.pool_schedule():
            if d % pd or h % ph or w % pw:
                raise ValueError(
                    f"input dims {self.input_dhw} not divisible by pooling")
            d, h, w = d // pd, h // ph, w // pw

    def channel_counts(self) -> list[int]:
        return [self.base_channels * (2 ** i) for i in range(self.levels)]

    def pool_schedule(self) -> list[tuple[int, int, int]]:
        """2x2x2 pools, dropping to 2x2x1 where depth would fall below 4."""
        d = self.input_dhw[0]
        pools = []
        for _ in range(self.levels - 1):
            pz = 2 if d // 2 >= 4 else 1
            pools.append((pz, 2, 2))
            d //= pz
        return pools


class UNet3d:
    """Parameter container plus explicit forward/backward passes."""

    def __init__(self, spec: UNet3dSpec):
        self.spec = spec
        self.params: list[Param] = []
        rng = np.random.default_rng(spec.param_seed)
        ch = spec.channel_counts()

        def conv_param(name, cout, cin, k):
            fan_in = cin * k ** 3
            limit = np.sqrt(3.0 / fan_in)
            shape = (cout, cin, k, k, k) if k == 3 else (cout, cin)
            w = Param(f"{name}.w", rng.uniform(-limit, limit, shape))
            b = Param(f"{name}.b", np.zeros(cout))
            self.params += [w, b]
            return w, b

        self.enc = []
        prev = spec.in_channels
        for i, c in enumerate(ch):
            a = conv_param(f"enc{i}a", c, prev, 3)
            b = conv_param(f"enc{i}b", c, c, 3)
            self.enc.append((a, b))
            prev = c
        self.dec = []
        for i in range(spec.levels - 2, -1, -1):
            up = conv_param(f"up{i}", ch[i], ch[i + 1], 1)
            a = conv_param(f"dec{i}a", ch[i], 2 * ch[i], 3)
            b = conv_param(f"dec{i}b", ch[i], ch[i], 3)
            self.dec.append((up, a, b))
        self.head = conv_param("head", 1, ch[0], 1)

    # -- plumbing ----------------------------------------------------------

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.params)

    def zero_grads(self):
        for p in self.params:
            p.zero_grad()

    def _check_input(self, x):
        n, c, d, h, w = x.shape
        if c != self.spec.in_channels or (d, h, w) != self.spec.input_dhw:
            raise ShapeError(
                f"unet forward: input {x.shape} does not match spec "
                f"in_channels={self.spec.in_channels}, dims={self.spec.input_dhw}")

    # -- passes ------------------------------------------------------------

    def forward(self, x: np.ndarray):
        """Returns (sigmoid output, cache for backward)."""
        self._check_input(x)
        pools = self.spec.pool_schedule()
        cache = {"enc": [], "pool": [], "dec": [], "skips": []}
        # float64 passes through untouched so numeric checks keep full precision
        dtype = np.float64 if x.dtype == np.float64 else np.float32
        t = np.ascontiguousarray(x, dtype=dtype)
        for i, ((wa, ba), (wb, bb)) in enumerate(self.enc):
            t, c1 = ops.conv3d_forward(t, wa.value, ba.value)
            t, r1 = ops.relu_forward(t)
            t, c2 = ops.conv3d_forward(t, wb.value, bb.value)
            t, r2 = ops.relu_forward(t)
            cache["enc"].append((c1, r1, c2, r2))
            if i < len(self.enc) - 1:
                cache["skips"].append(t)
                t, pc = ops.maxpool3d_forward(t, pools[i])
                cache["pool"].append(pc)
        for j, ((wu, bu), (wa, ba), (wb, bb)) in enumerate(self.dec):
            level = self.spec.levels - 2 - j
            t, uc = ops.upsample3d_forward(t, pools[level])
            t, c0 = ops.conv1x1_forward(t, wu.value, bu.value)
            skip = cache["skips"][level]
            t, cc = ops.concat_skip_forward(t, skip)
            t, c1 = ops.conv3d_forward(t, wa.value, ba.value)
            t, r1 = ops.relu_forward(t)
            t, c2 = ops.conv3d_forward(t, wb.value, bb.value)
            t, r2 = ops.relu_forward(t)
            cache["dec"].append((uc, c0, cc, c1, r1, c2, r2))
        wh, bh = self.head
        t, ch_cache = ops.conv1x1_forward(t, wh.value, bh.value)
        y, sc = ops.sigmoid_forward(t)
        cache["head"] = (ch_cache, sc)
        return y, cache

    def backward(self, gy: np.ndarray, cache):
        """Accumulates parameter gradients; returns gradient w.r.t. the input."""
        ch_cache, sc = cache["head"]
        g = ops.sigmoid_backward(gy, sc)
        wh, bh = self.head
        g, gw, gb = ops.conv1x1_backward(g, ch_cache)
        wh.grad += gw
        bh.grad += gb

        skip_grads = {}
        for j in range(len(self.dec) - 1, -1, -1):
            (wu, bu), (wa, ba), (wb, bb) = self.dec[j]
            uc, c0, cc, c1, r1, c2, r2 = cache["dec"][j]
            level = self.spec.levels - 2 - j
            g = ops.relu_backward(g, r2)
            g, gw, gb = ops.conv3d_backward(g, c2)
            wb.grad += gw
            bb.grad += gb
            g = ops.relu_backward(g, r1)
            g, gw, gb = ops.conv3d_backward(g, c1)
            wa.grad += gw
            ba.grad += gb
            g, gskip = ops.concat_skip_backward(g, cc)
            skip_grads[level] = gskip
            g, gw, gb = ops.conv1x1_backward(g, c0)
            wu.grad += gw
            bu.grad += gb
            g = ops.upsample3d_backward(g, uc)

        for i in range(len(self.enc) - 1, -1, -1):
            (wa, ba), (wb, bb) = self.enc[i]
            if i < len(self.enc) - 1:
                g = ops.maxpool3d_backward(g, cache["pool"][i])
                g = g + skip_grads[i]
            c1, r1, c2, r2 = cache["enc"][i]
            g = ops.relu_backward(g, r2)
            g, gw, gb = ops.conv3d_backward(g, c2)
            wb.grad += gw
            bb.grad += gb
            g = ops.relu_backward(g, r1)
            g, gw, gb = ops.conv3d_backward(g, c1)
            wa.grad += gw
            ba.grad += gb
        return g


def build_unet(spec: UNet3dSpec) -> UNet3d:
    return UNet3d(spec)


# ---------------------------------------------------------------------------
# Volume-level prediction
# ---------------------------------------------------------------------------

def _vol_to_batch(vol: Volume3) -> np.ndarray:
    # Volume3 is (x, y, z); the network wants (N, C, D=z, H=y, W=x).
    return np.ascontiguousarray(vol.data.transpose(2, 1, 0))[None, None]


def predict(net: UNet3d, vol: Volume3) -> Volume3:
    """Soft kidney-probability volume in [0, 1] on the same grid."""
    x = _vol_to_batch(vol)
    y, _ = net.forward(x)
    return Volume3(np.ascontiguousarray(y[0, 0].transpose(2, 1, 0)), vol.spacing)


def binarize(soft: Volume3, threshold: float = 0.5) -> LabelVolume:
    return LabelVolume((soft.data >= threshold).astype(np.uint8), 2, soft.spacing)


# ---------------------------------------------------------------------------
# Checkpoints: magic, spec fields, then parameter blobs in declaration order
# ---------------------------------------------------------------------------

def save_checkpoint(net: UNet3d, path) -> None:
    s = net.spec
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IIIIIIQ", s.levels, s.base_channels, s.in_channels,
                            *s.input_dhw, s.param_seed))
        for p in net.params:
            f.write(p.value.astype("<f4").tobytes())


def load_checkpoint(path) -> UNet3d:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic in {path!r}", 0)
    if len(raw) < 36:
        raise FormatError(f"truncated checkpoint header in {path!r}", len(raw))
    levels, base, cin, d, h, w, seed = struct.unpack_from("<IIIIIIQ", raw, 4)
    net = UNet3d(UNet3dSpec(levels, base, cin, (d, h, w), seed))
    offset = 36
    for p in net.params:
        nbytes = p.value.size * 4
        if offset + nbytes > len(raw):
            raise FormatError(f"truncated parameter blob in {path!r}", len(raw))
        p.value[...] = np.frombuffer(raw, dtype="<f4", count=p.value.size,
                                     offset=offset).reshape(p.value.shape)
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"trailing bytes in {path!r}", offset)
    return net
