"""Builds unet_weights.aplw and unet_golden.aplw with PyTorch.

A small three-block network with random weights and non-trivial norm
parameters, run in float64 on one fixed input.
"""
import struct
import zlib
from pathlib import Path

import torch
import torch.nn.functional as F

CHANNELS = [3, 4, 5]
KERNEL = (5, 7)
PAD = (2, 3)
SLOPE = 0.01
EPS = 1e-5
ROWS, COLS = 32, 16


def write_aplw(path, tensors):
    out = bytearray(b"APLW")
    out += struct.pack("<II", 1, len(tensors))
    for name, t in tensors:
        raw = name.encode()
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", t.dim())
        out += struct.pack(f"<{t.dim()}I", *t.shape)
        out += t.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    Path(path).write_bytes(bytes(out))


def main():
    g = torch.Generator().manual_seed(11)
    rnd = lambda *s: torch.randn(*s, generator=g, dtype=torch.float64)
    # round through float32 so both sides see identical parameters
    q = lambda t: t.to(torch.float32).to(torch.float64)
    params = []
    cin = 1
    for i, c in enumerate(CHANNELS):
        params += [
            (f"enc.{i}.conv.weight", q(rnd(c, cin, *KERNEL) * 0.3)),
            (f"enc.{i}.conv.bias", q(rnd(c) * 0.1)),
            (f"enc.{i}.norm.weight", q(1 + 0.2 * rnd(c))),
            (f"enc.{i}.norm.bias", q(0.1 * rnd(c))),
        ]
        cin = c
    b = len(CHANNELS)
    for i in range(b):
        din = CHANNELS[-1] if i == 0 else 2 * CHANNELS[b - 1 - i]
        dout = 1 if i == b - 1 else CHANNELS[b - 2 - i]
        params += [
            (f"dec.{i}.deconv.weight", q(rnd(din, dout, *KERNEL) * 0.3)),
            (f"dec.{i}.deconv.bias", q(rnd(dout) * 0.1)),
        ]
        if i < b - 1:
            params += [
                (f"dec.{i}.norm.weight", q(1 + 0.2 * rnd(dout))),
                (f"dec.{i}.norm.bias", q(0.1 * rnd(dout))),
            ]
    p = dict(params)

    def block(x, prefix, norm):
        if norm:
            x = F.layer_norm(x, x.shape[1:], eps=EPS)
            x = x * p[f"{prefix}.norm.weight"][None, :, None, None] + p[f"{prefix}.norm.bias"][None, :, None, None]
            x = F.leaky_relu(x, SLOPE)
        return x

    x = q(rnd(1, 1, ROWS, COLS).abs())
    acts = []
    h = x
    for i in range(b):
        h = F.conv2d(h, p[f"enc.{i}.conv.weight"], p[f"enc.{i}.conv.bias"], stride=2, padding=PAD)
        h = block(h, f"enc.{i}", True)
        acts.append(h)
    for i in range(b):
        inp = acts[b - 1] if i == 0 else torch.cat([acts[-1], acts[b - 1 - i]], dim=1)
        h = F.conv_transpose2d(
            inp, p[f"dec.{i}.deconv.weight"], p[f"dec.{i}.deconv.bias"], stride=2, padding=PAD, output_padding=1
        )
        h = block(h, f"dec.{i}", i < b - 1)
        acts.append(h)
    out = acts[-1].clamp(min=0)

    here = Path(__file__).parent
    write_aplw(here / "unet_weights.aplw", params)
    golden = [("test.input", x[0, 0])]
    golden += [(f"test.layer.{k}", a[0]) for k, a in enumerate(acts)]
    golden.append(("test.output", out[0, 0]))
    write_aplw(here / "unet_golden.aplw", golden)


if __name__ == "__main__":
    main()
