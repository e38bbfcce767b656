"""End-to-end self checks: gradient oracle, positional table, attention and
padding properties. Backs the ``verify`` subcommand."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .gradcheck import check_gradients
from .model import (HelpfulnessModel, ModelConfig, MultiHeadAttention, glorot, positional_encoding,
                    self_attention)
from .tensor import Tensor, rng_stream
from .text import PAD

VERIFY_VOCAB = 40


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{status}  {self.name}: {self.value:.3e} (tolerance {self.tolerance:.0e}){extra}"


def check_model_gradients(config: ModelConfig, seed: int = 0, length: int = 12, samples: int = 100,
                          eps: float = 1e-4, tolerance: float = 1e-3,
                          corrupt: Optional[str] = None) -> CheckResult:
    """Finite-difference check of every parameter of a random model on one
    review, with dropout active under a fixed mask."""
    rng = rng_stream(seed)
    model = HelpfulnessModel.initialize(config, rng)
    ids = rng.integers(2, config.vocab_size, size=(1, length))
    lengths = np.array([length])
    target = np.array([0.7])

    def loss_fn() -> Tensor:
        return T.mse_loss(model.forward(ids, lengths, training=True, rng=rng_stream(seed + 1)), target)

    def tamper(p: Tensor) -> None:
        if p.name == corrupt and p.grad is not None:
            p.grad = p.grad + 1.0

    res = check_gradients(loss_fn, model.parameters(), eps=eps, samples=samples, seed=seed,
                          grad_hook=tamper if corrupt else None)
    name = f"gradient check ({config.variant}, scale_dim={config.scale_dim})"
    return CheckResult(name, res.max_rel_error < tolerance, res.max_rel_error, tolerance,
                       f"worst parameter {res.worst_parameter}")


def _pe_direct(n: int, dim: int, j: float) -> np.ndarray:
    out = np.empty((n, dim))
    for s in range(n):
        for i in range(dim // 2):
            angle = s / j ** (2 * i / dim)
            out[s, 2 * i] = math.sin(angle)
            out[s, 2 * i + 1] = math.cos(angle)
    return out


def check_positional_encoding(dim: int = 100, j: float = 1000.0, n: int = 50,
                              tolerance: float = 1e-9) -> CheckResult:
    table = positional_encoding(n, dim, j)
    err = float(np.max(np.abs(table - _pe_direct(n, dim, j))))
    row0 = np.tile([0.0, 1.0], dim // 2)
    exact = bool(np.array_equal(table[0], row0))
    return CheckResult("positional encoding vs direct evaluation", err < tolerance and exact, err,
                       tolerance, "" if exact else "position-0 row is not alternating 0/1")


def check_softmax_rows(seed: int = 0, trials: int = 50, tolerance: float = 1e-9) -> CheckResult:
    rng = rng_stream(seed)
    worst = 0.0
    for _ in range(trials):
        m, n = rng.integers(1, 12, size=2)
        x = Tensor(rng.normal(scale=5.0, size=(m, n)))
        mask = rng.random((m, n)) < 0.6
        mask[np.arange(m), rng.integers(n, size=m)] = True
        y = T.softmax_rows(x, mask).data
        worst = max(worst, float(np.max(np.abs(y.sum(axis=1) - 1.0))))
        if np.any(y < 0) or np.any(y[~mask] != 0.0):
            return CheckResult("softmax rows", False, worst, tolerance, "negative or leaked masked weight")
    return CheckResult("softmax rows sum to 1 under random masks", worst < tolerance, worst, tolerance)


def random_attention(rng, dim: int = 100, heads: int = 2, scale_dim: str = "d_k") -> MultiHeadAttention:
    dk = dim // heads
    proj = [[glorot(rng, (dim, dk), dim, dk, f"{r}{h}") for h in range(heads)] for r in "qkv"]
    return MultiHeadAttention(*proj, glorot(rng, (dim, dim), dim, dim, "o"), scale_dim)


def check_attention_equivariance(dim: int = 100, heads: int = 2, n: int = 8, perms: int = 20,
                                 seed: int = 0, tolerance: float = 1e-9) -> CheckResult:
    rng = rng_stream(seed)
    attn = random_attention(rng, dim, heads)
    x = rng.normal(size=(n, dim))
    base = self_attention(Tensor(x), attn).data
    worst = 0.0
    for _ in range(perms):
        p = rng.permutation(n)
        out = self_attention(Tensor(x[p]), attn).data
        worst = max(worst, float(np.max(np.abs(out - base[p]))))
    return CheckResult("self-attention permutation equivariance", worst < tolerance, worst, tolerance)


def check_padding_invariance(config: ModelConfig, trials: int = 20, max_pad: int = 50, seed: int = 0,
                             tolerance: float = 1e-9) -> CheckResult:
    rng = rng_stream(seed)
    worst = 0.0
    for t in range(trials):
        model = HelpfulnessModel.initialize(config, rng_stream(seed * 1000 + t))
        length = int(rng.integers(7, 30))
        ids = rng.integers(2, config.vocab_size, size=length)
        pad = int(rng.integers(1, max_pad + 1))
        plain = model.forward(ids[None, :], np.array([length])).data[0]
        padded_ids = np.concatenate([ids, np.full(pad, PAD)])[None, :]
        padded = model.forward(padded_ids, np.array([length])).data[0]
        worst = max(worst, abs(float(plain - padded)))
    return CheckResult(f"padding invariance ({config.variant})", worst < tolerance, worst, tolerance)


def run_verification(base: ModelConfig, seed: int = 0, corrupt: Optional[str] = None,
                     report: Optional[Callable[[CheckResult], None]] = None) -> list[CheckResult]:
    """Run every check on small-vocabulary models shaped like ``base``."""
    base = replace(base, vocab_size=VERIFY_VOCAB)
    checks: list[Callable[[], CheckResult]] = []
    for scale_dim in ("d_k", "l"):
        checks.append(lambda s=scale_dim: check_model_gradients(
            replace(base, variant="full_max", scale_dim=s), seed, corrupt=corrupt))
    for variant in ("s_avg", "s_attn"):
        checks.append(lambda v=variant: check_model_gradients(replace(base, variant=v), seed, corrupt=corrupt))
    checks.append(lambda: check_positional_encoding(base.dim, base.j))
    checks.append(lambda: check_softmax_rows(seed))
    checks.append(lambda: check_attention_equivariance(base.dim, base.heads, seed=seed))
    for variant in ("full_max", "s_avg", "s_attn"):
        checks.append(lambda v=variant: check_padding_invariance(replace(base, variant=v), seed=seed))
    results = []
    for check in checks:
        res = check()
        if report is not None:
            report(res)
        results.append(res)
    return results
