"""Central finite-difference verification of every primitive and block.

Each case builds a scalar objective over a set of leaf tensors, runs one
analytic backward, then compares sampled gradient entries against central
differences.  Relative error uses max(1, |fd|, |analytic|) in the
denominator.  All cases run in double precision.
"""

from __future__ import annotations

import numpy as np

from . import blocks, ssm
from . import tensor as T
from .model import NetworkConfig, TwoStageNet
from .tensor import Tensor, backward, no_grad


def fd_check(build, rng, eps=1e-4, samples=3):
    """Max relative error between analytic and central-difference gradients.

    ``build(rng)`` returns (fn, leaves) where ``fn`` rebuilds the scalar
    objective from the leaf tensors on every call.
    """
    fn, leaves = build(rng)
    for p in leaves.values():
        p.grad = None
    out = fn()
    backward(out)
    worst = 0.0
    for p in leaves.values():
        flat = p.data.reshape(-1)
        grad = np.zeros_like(flat) if p.grad is None else p.grad.reshape(-1)
        k = min(samples, flat.size)
        idxs = rng.choice(flat.size, size=k, replace=False)
        for i in idxs:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                fp = fn().item()
                flat[i] = orig - eps
                fm = fn().item()
                flat[i] = orig
            fd = (fp - fm) / (2.0 * eps)
            an = float(grad[i])
            rel = abs(fd - an) / max(1.0, abs(fd), abs(an))
            worst = max(worst, rel)
    return worst


def _leaf(rng, shape, min_abs=0.0):
    data = rng.standard_normal(shape)
    if min_abs:
        data = np.where(np.abs(data) < min_abs, data + np.sign(data + 0.5) * min_abs, data)
    return Tensor(data, requires_grad=True)


def _mean_sq(t):
    return T.mean(T.mul(t, t))


def primitive_cases():
    """(name, builder) pairs covering every primitive on small random shapes."""

    def case(name, make):
        return name, make

    def unary(op, shape=(3, 4), min_abs=0.0):
        def make(rng):
            x = _leaf(rng, shape, min_abs)
            return (lambda: _mean_sq(op(x))), {"x": x}

        return make

    def binary(op, shape_a, shape_b):
        def make(rng):
            a, b = _leaf(rng, shape_a), _leaf(rng, shape_b)
            return (lambda: _mean_sq(op(a, b))), {"a": a, "b": b}

        return make

    cases = [
        case("add", binary(T.add, (3, 4), (1, 4))),
        case("sub", binary(T.sub, (3, 4), (3, 1))),
        case("mul", binary(T.mul, (3, 4), (4,))),
        case("neg", unary(T.neg)),
        case("scale", unary(lambda x: T.scale(x, 2.5))),
        case("exp", unary(T.exp)),
        case("absolute", unary(T.absolute, min_abs=0.05)),
        case("relu", unary(T.relu, min_abs=0.05)),
        case("sigmoid", unary(T.sigmoid)),
        case("silu", unary(T.silu)),
        case("gelu", unary(T.gelu)),
        case("softplus", unary(T.softplus)),
        case("mean", unary(T.mean)),
        case("sum_all", unary(T.sum_all)),
        case("mean_over_channels", unary(T.mean_over_channels, shape=(4, 3, 3))),
        case("global_avg_pool", unary(T.global_avg_pool, shape=(4, 3, 3))),
        case("reshape", unary(lambda x: T.reshape(x, (4, 3)))),
        case("transpose", unary(lambda x: T.transpose(x, (1, 0)))),
        case("strided_downsample", unary(lambda x: T.strided_downsample(x, 2), shape=(2, 4, 4))),
        case("pixel_shuffle", unary(lambda x: T.pixel_shuffle(x, 2), shape=(8, 2, 2))),
        case("narrow_channels", unary(lambda x: T.narrow_channels(x, 1, 2), shape=(4, 3))),
    ]

    def concat_case(rng):
        a, b = _leaf(rng, (2, 3, 3)), _leaf(rng, (3, 3, 3))
        return (lambda: _mean_sq(T.concat_channels([a, b]))), {"a": a, "b": b}

    def sum_list_case(rng):
        ts = [_leaf(rng, (2, 3)) for _ in range(5)]
        return (lambda: _mean_sq(T.sum_list(ts))), {f"t{i}": t for i, t in enumerate(ts)}

    def scale_by_channel_case(rng):
        x, s = _leaf(rng, (3, 2, 2)), _leaf(rng, (3,))
        return (lambda: _mean_sq(T.scale_by_channel(x, s))), {"x": x, "s": s}

    def matmul_case(rng):
        a, b = _leaf(rng, (2, 3, 4)), _leaf(rng, (4, 2))
        return (lambda: _mean_sq(T.matmul(a, b))), {"a": a, "b": b}

    def layer_norm_case(rng):
        x = _leaf(rng, (4, 3, 3))
        g, b = _leaf(rng, (4,)), _leaf(rng, (4,))
        return (lambda: _mean_sq(T.layer_norm(x, g, b))), {"x": x, "gamma": g, "beta": b}

    def conv_case(stride):
        def make(rng):
            x = _leaf(rng, (2, 4, 4))
            w = _leaf(rng, (3, 2, 3, 3))
            b = _leaf(rng, (3,))
            return (lambda: _mean_sq(T.conv2d(x, w, b, stride=stride, padding=1))), {"x": x, "w": w, "b": b}

        return make

    def conv_transpose_case(rng):
        x = _leaf(rng, (3, 3, 3))
        w = _leaf(rng, (3, 2, 2, 2))
        b = _leaf(rng, (2,))
        return (lambda: _mean_sq(T.conv_transpose2d(x, w, b, stride=2, padding=0))), {"x": x, "w": w, "b": b}

    def gather_case(rng):
        from .scan import build_order, ScanDirection

        order = build_order(ScanDirection("diag_tlbr"), 3, 3)
        x = _leaf(rng, (2, 9))
        return (lambda: _mean_sq(T.gather_permute(x, order.order, order.inverse))), {"x": x}

    def scatter_case(rng):
        from .scan import build_order, ScanDirection

        order = build_order(ScanDirection("vertical", reversed=True), 3, 3)
        x = _leaf(rng, (2, 9))
        return (lambda: _mean_sq(T.scatter_inverse(x, order.order, order.inverse))), {"x": x}

    def multi_gather_case(rng):
        from .scan import stacked_orders

        orders, invs = stacked_orders(3, 3)
        x = _leaf(rng, (2, 9))
        return (lambda: _mean_sq(T.multi_gather(x, orders, invs))), {"x": x}

    def multi_scatter_case(rng):
        from .scan import stacked_orders

        orders, invs = stacked_orders(2, 3)
        x = _leaf(rng, (8, 2, 6))
        return (lambda: _mean_sq(T.multi_scatter(x, orders, invs))), {"x": x}

    def discretize_case(rng):
        a = Tensor(-np.exp(rng.standard_normal((2, 1, 3))), requires_grad=True)
        b = _leaf(rng, (2, 4, 3))
        delta = Tensor(np.exp(rng.uniform(-3, 0, (2, 4, 1))), requires_grad=True)

        def fn():
            abar, bbar = ssm.discretize(a, b, delta)
            return T.add(_mean_sq(abar), _mean_sq(bbar))

        return fn, {"a": a, "b": b, "delta": delta}

    def selective_scan_case(rng):
        x = _leaf(rng, (2, 5))
        abar = Tensor(rng.uniform(0.1, 0.9, (2, 5, 3)), requires_grad=True)
        bbar = _leaf(rng, (2, 5, 3))
        cs = _leaf(rng, (1, 5, 3))
        d = _leaf(rng, (2,))

        def fn():
            return _mean_sq(ssm.selective_scan(x, abar, bbar, cs, d))

        return fn, {"x": x, "abar": abar, "bbar": bbar, "c": cs, "d": d}

    cases += [
        case("concat_channels", concat_case),
        case("sum_list", sum_list_case),
        case("scale_by_channel", scale_by_channel_case),
        case("matmul", matmul_case),
        case("layer_norm", layer_norm_case),
        case("conv2d_s1", conv_case(1)),
        case("conv2d_s2", conv_case(2)),
        case("conv_transpose2d", conv_transpose_case),
        case("gather_permute", gather_case),
        case("scatter_inverse", scatter_case),
        case("multi_gather", multi_gather_case),
        case("multi_scatter", multi_scatter_case),
        case("discretize", discretize_case),
        case("selective_scan", selective_scan_case),
    ]
    return cases


def block_cases():
    """Composite blocks, each through a smooth scalar objective over all params."""

    def module_case(make_module, in_shape, call=None):
        def builder(rng):
            mod = make_module(rng)
            x = _leaf(rng, in_shape)
            run = call or (lambda m, t: m(t))
            leaves = {"x": x}
            leaves.update({name: p for name, p in mod.named_params()})
            return (lambda: _mean_sq(run(mod, x))), leaves

        return builder

    dirs4 = (0, 1, 2, 3)
    cases = [
        ("channel_attention", module_case(
            lambda rng: blocks.ChannelAttention(4, 2, rng=rng, dtype=np.float64), (4, 3, 3))),
        ("directional_scan", module_case(
            lambda rng: blocks.DirectionalScan2d(2, 2, dirs4, rng=rng, dtype=np.float64), (2, 3, 3))),
        ("gated_scan_block", module_case(
            lambda rng: blocks.GatedScanBlock(2, 2, dirs4, rng=rng, dtype=np.float64), (2, 3, 3))),
        ("scan_residual_block", module_case(
            lambda rng: blocks.ScanResidualBlock(4, 2, dirs4, 2, rng=rng, dtype=np.float64), (4, 3, 3))),
        ("retinex_decomposition", module_case(
            lambda rng: blocks.RetinexDecomposition(3, 4, rng=rng, dtype=np.float64), (3, 4, 4),
            call=lambda m, t: m(t)[2])),
        ("adaptive_fusion", module_case(
            lambda rng: blocks.AdaptiveFusion(4, 2, rng=rng, dtype=np.float64), (8, 3, 3),
            call=lambda m, t: m(T.narrow_channels(t, 0, 4), T.narrow_channels(t, 4, 4)))),
        ("concat_fusion", module_case(
            lambda rng: blocks.ConcatFusion(4, rng=rng, dtype=np.float64), (8, 3, 3),
            call=lambda m, t: m(T.narrow_channels(t, 0, 4), T.narrow_channels(t, 4, 4)))),
        ("residual_conv_block", module_case(
            lambda rng: blocks.ResidualConvBlock(3, rng=rng, dtype=np.float64), (3, 4, 4))),
    ]

    def full_net_case(rng):
        cfg = NetworkConfig(base_width=4, depth=2, blocks_per_level=1, state_dim=4)
        net = TwoStageNet(cfg, seed=int(rng.integers(0, 2**31)), dtype=np.float64)
        x = Tensor(rng.uniform(0.0, 1.0, (4, 8, 8)), requires_grad=True)
        leaves = {"x": x}
        leaves.update({name: p for name, p in net.named_params()})

        def fn():
            o1, o2 = net(x)
            return T.add(_mean_sq(o1), _mean_sq(o2))

        return fn, leaves

    cases.append(("two_stage_net", full_net_case))
    return cases


def run_gradcheck(eps=1e-5, tol=1e-3, seed=0, samples=3):
    """Run every case; returns (rows, all_passed)."""
    rows = []
    ok = True
    for name, build in primitive_cases() + block_cases():
        rng = np.random.default_rng(seed)
        err = fd_check(build, rng, eps=eps, samples=samples)
        passed = err <= tol
        ok = ok and passed
        rows.append({"op": name, "max_rel_err": err, "pass": passed})
    return rows, ok
