"""Shared test helpers: tiny model configs and gradient-check plumbing."""

from __future__ import annotations

import dataclasses

from bigatid.model import BlockSpec, VariantSpec, backward, build, forward
from bigatid.numerics import RngStream, finite_diff_grad, grad_mismatch

GRAD_TOL = 1e-4


def tiny_bigat_spec(dropout: float = 0.0) -> VariantSpec:
    """Desk-size dual-branch config: T=6, units 4/4, 2 heads, key dim 3, c=3."""
    return VariantSpec(
        seq_len=6,
        n_classes=3,
        branches=(
            (BlockSpec("bigru", units=4), BlockSpec("layer_norm"),
             BlockSpec("mha", heads=2, key_dim=3), BlockSpec("dropout", rate=dropout)),
            (BlockSpec("lstm", units=4), BlockSpec("dropout", rate=dropout)),
        ),
        head=(8, 4),
    )


def shrink_variant(spec: VariantSpec) -> VariantSpec:
    """Map a production-size variant to a finite-difference-friendly size,
    preserving its block structure exactly. Dropout rates go to 0 so the
    train-mode forward is deterministic under the difference oracle."""
    units_map = {64: 4, 32: 3, 128: 5, 256: 6}

    def shrink_block(b: BlockSpec) -> BlockSpec:
        if b.kind in ("bigru", "lstm", "lstm_seq", "proj"):
            return dataclasses.replace(b, units=units_map.get(b.units, 4))
        if b.kind == "mha":
            return dataclasses.replace(b, heads=2, key_dim=3)
        if b.kind == "dropout":
            return dataclasses.replace(b, rate=0.0)
        return b

    return VariantSpec(
        seq_len=5,
        n_classes=3,
        branches=tuple(tuple(shrink_block(b) for b in br) for br in spec.branches),
        head=(6, 4),
        ln_eps=spec.ln_eps,
    )


def check_layer_grads(p, forward_fn, backward_fn, x, rng, fields=None, tol=GRAD_TOL):
    """Finite-difference check of one layer: input gradient plus every
    parameter field. forward_fn(p, x) -> (y, cache); backward_fn(p, cache, dy)
    -> (dx, grads). Returns the worst mismatch."""
    y, cache = forward_fn(p, x)
    dy = rng.normal(size=y.shape)
    dx, grads = backward_fn(p, cache, dy)

    def scalar_for(pp, xx):
        out, _ = forward_fn(pp, xx)
        return float((out * dy).sum())

    worst = grad_mismatch(dx, finite_diff_grad(lambda v: scalar_for(p, v), x))
    for fld in (fields or [name for name, _ in p.tensors()]):
        def f(t, fld=fld):
            return scalar_for(dataclasses.replace(p, **{fld.split(".")[-1]: t}), x)
        worst = max(worst, grad_mismatch(
            getattr(grads, fld), finite_diff_grad(f, getattr(p, fld))))
    assert worst < tol, f"gradient mismatch {worst:.3e} >= {tol}"
    return worst


def check_model_grads(spec: VariantSpec, seed: int, tol=GRAD_TOL, batch: int = 2):
    """Finite-difference check of the full model: d(sum(dy * probs))/dparams
    for every parameter tensor and the input."""
    rng = RngStream(seed)
    params = build(spec, rng.spawn(0))
    x = rng.normal(size=(batch, spec.seq_len, 1))
    probs, caches = forward(params, spec, x, mode="train", rng=rng.spawn(1))
    dy = rng.normal(size=probs.shape)
    grads = backward(params, spec, caches, dy)

    worst = 0.0
    for name in params:
        def f(t, name=name):
            saved = params[name]
            params[name] = t
            out, _ = forward(params, spec, x, mode="train", rng=None)
            params[name] = saved
            return float((out * dy).sum())
        fd = finite_diff_grad(f, params[name])
        err = grad_mismatch(grads[name], fd)
        assert err < tol, f"{name}: gradient mismatch {err:.3e} >= {tol}"
        worst = max(worst, err)
    return worst
