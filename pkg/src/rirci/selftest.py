"""Built-in oracle/property checks runnable from the CLI without pytest."""

from __future__ import annotations

import numpy as np
import torch

from . import losses, metrics, synthesis
from .blocks import SCSEBlock

__all__ = ["run_selftest"]


def _check(name: str, ok: bool, detail: str = "") -> bool:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))
    return ok


def _compositing_identity(rng: np.random.Generator) -> bool:
    ok = True
    for _ in range(50):
        h = w = 16
        I = rng.random((h, w, 3)).astype(np.float32)
        Wp = rng.random((h, w, 3)).astype(np.float32)
        A = rng.random((h, w, 1)).astype(np.float32)
        s = synthesis.composite(I, Wp, A)
        ok &= np.abs(s.J - (A * Wp + (1 - A) * I)).max() <= 1e-6
        ok &= np.array_equal(s.C_w + s.C_b, s.J)
        ok &= np.array_equal(s.M, (A > 0).astype(np.float32))
    return ok


def _loss_oracle(rng: np.random.Generator) -> bool:
    ok = True
    for _ in range(10):
        x = torch.tensor(rng.random((1, 3, 2, 2)))
        y = torch.tensor(rng.random((1, 3, 2, 2)))
        m = torch.tensor(rng.random((1, 1, 2, 2)))
        ref_l1 = np.mean(np.abs(x.numpy() - y.numpy()))
        ref_msk = np.mean(np.abs(m.numpy() * (x.numpy() - y.numpy())))
        ok &= abs(float(losses.l1(x, y)) - ref_l1) < 1e-9
        ok &= abs(float(losses.masked_l1(x, y, m)) - ref_msk) < 1e-9
    flat = torch.full((1, 1, 2, 2), 0.5)
    ok &= abs(float(losses.mask_bce(flat, torch.zeros_like(flat))) - np.log(2)) < 1e-6
    return ok


def _metric_oracle(rng: np.random.Generator) -> bool:
    ok = True
    x = rng.random((16, 16, 3))
    y = rng.random((16, 16, 3))
    mse = np.mean((x * 255 - y * 255) ** 2)
    ok &= abs(metrics.psnr(x, y) - 10 * np.log10(255 ** 2 / mse)) < 1e-9
    ok &= metrics.psnr(x, x) == metrics.PSNR_CAP_DB
    m = (rng.random((16, 16, 1)) > 0.5).astype(np.float32)
    if m.any():
        inside = m[..., 0] > 0.5
        ref = np.sqrt(np.mean((x[inside] * 255 - y[inside] * 255) ** 2))
        ok &= abs(metrics.rmse_w(x, y, m) - ref) < 1e-9
    f1, iou = metrics.mask_f1_iou(rng.random((8, 8, 1)), m[:8, :8])
    ok &= abs(f1 - 2 * iou / (1 + iou)) < 1e-12
    return ok


def _gradient_spot_check() -> bool:
    block = SCSEBlock(4).double()
    x = torch.randn(1, 4, 8, 8, dtype=torch.float64, requires_grad=True)
    return torch.autograd.gradcheck(lambda t: block(t).sum(), (x,), eps=1e-6,
                                    atol=1e-4)


def run_selftest(seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    results = [
        _check("compositing identities (J = C_w + C_b, M = A>0)",
               _compositing_identity(rng)),
        _check("loss terms match scalar oracles", _loss_oracle(rng)),
        _check("metrics match scalar oracles", _metric_oracle(rng)),
        _check("analytic gradients match finite differences",
               _gradient_spot_check()),
    ]
    return all(results)
