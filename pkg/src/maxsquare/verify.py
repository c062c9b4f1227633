"""Self-check suite: every structural identity the package is built on.

Each check returns (ok, detail); failures name the violating input so they
can be reproduced.  ``run_all`` prints one line per property and is what the
``verify`` CLI command executes.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import losses
from .guidance import MultiLevelOutput, self_guidance
from .models import SegNetSpec, init_params, seg_forward


def _random_probmap(rng, n=None, c=None):
    n = int(rng.integers(1, 17)) if n is None else n
    c = int(rng.integers(2, 9)) if c is None else c
    logits = rng.normal(size=(n, c))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def check_op_gradients(trials=100, seed=0):
    """finite_diff_check <= 1e-6 for every op in the catalog."""

    def build_cases(rng):
        x2 = ad.parameter(rng.normal(size=(3, 4)))
        w = ad.parameter(rng.normal(size=(4, 2)))
        b = ad.parameter(rng.normal(size=4))
        img = ad.parameter(rng.normal(size=(1, 2, 4, 4)))
        kern = ad.parameter(rng.normal(size=(2, 2, 3, 3)) * 0.5)
        cb = ad.parameter(rng.normal(size=2))
        # keep log inputs away from tiny probabilities, where the central
        # difference itself loses accuracy to curvature
        u = rng.uniform(0.05, 1.0, size=(3, 4))
        probs = ad.parameter(u / u.sum(axis=1, keepdims=True))
        return {
            "add": ({"a": x2, "b": ad.parameter(rng.normal(size=(3, 4)))},
                    lambda p: ad.sum_all(ad.add(p["a"], p["b"]))),
            "mul": ({"a": x2, "b": ad.parameter(rng.normal(size=(3, 4)))},
                    lambda p: ad.sum_all(ad.mul(p["a"], p["b"]))),
            "scale": ({"x": x2}, lambda p: ad.sum_all(ad.scale(p["x"], -1.7))),
            "matmul": ({"x": x2, "w": w},
                       lambda p: ad.sum_all(ad.matmul(p["x"], p["w"]))),
            "relu": ({"x": x2}, lambda p: ad.mean_all(ad.relu(p["x"]))),
            "log": ({"x": probs}, lambda p: ad.sum_all(ad.log(p["x"])), 1e-6),
            "row_softmax": ({"x": x2},
                            lambda p: ad.sum_all(ad.mul(ad.row_softmax(p["x"]),
                                                        ad.row_softmax(p["x"])))),
            "sum": ({"x": x2}, lambda p: ad.sum_all(p["x"])),
            "mean": ({"x": x2}, lambda p: ad.mean_all(p["x"])),
            "reshape": ({"x": x2},
                        lambda p: ad.sum_all(ad.mul(ad.reshape(p["x"], (4, 3)),
                                                    ad.reshape(p["x"], (4, 3))))),
            "permute": ({"x": img},
                        lambda p: ad.sum_all(ad.mul(ad.permute(p["x"], (0, 2, 3, 1)),
                                                    ad.permute(p["x"], (0, 2, 3, 1))))),
            "add_row_bias": ({"x": x2, "b": b},
                             lambda p: ad.sum_all(ad.mul(ad.add_row_bias(p["x"], p["b"]),
                                                         ad.add_row_bias(p["x"], p["b"])))),
            "conv3x3": ({"x": img, "k": kern},
                        lambda p: ad.mean_all(ad.relu(ad.conv3x3(p["x"], p["k"])))),
            "add_channel_bias": ({"x": img, "b": cb},
                                 lambda p: ad.sum_all(ad.mul(
                                     ad.add_channel_bias(p["x"], p["b"]),
                                     ad.add_channel_bias(p["x"], p["b"])))),
        }

    for t in range(trials):
        rng = np.random.default_rng((seed, t))
        for name, case in build_cases(rng).items():
            params, fn = case[0], case[1]
            epsilon = case[2] if len(case) > 2 else 1e-5
            err = ad.finite_diff_check(fn, params, epsilon)
            if err > 1e-6:
                return False, f"op {name!r} trial {t}: relative error {err:.3e}"
    return True, f"{trials} trials per op, all <= 1e-6"


def check_loss_gradients(trials=100, seed=1):
    """Autodiff loss gradients through softmax match finite differences."""
    builders = {
        "cross_entropy": lambda p, y, cfg: losses.cross_entropy_graph(p, y),
        "entropy": lambda p, y, cfg: losses.entropy_graph(p),
        "scaled": lambda p, y, cfg: losses.scaled_entropy_graph(p, cfg["gamma"]),
        "maxsquare": lambda p, y, cfg: losses.max_squares_graph(p),
        "maxsquare_iw": lambda p, y, cfg: losses.iw_max_squares_graph(p, cfg["alpha"]),
    }
    for t in range(trials):
        rng = np.random.default_rng((seed, t))
        n = int(rng.integers(1, 17))
        c = int(rng.integers(2, 9))
        logits = ad.parameter(rng.normal(size=(n, c)))
        y = rng.integers(0, c, size=n)
        cfg = {"gamma": 0.1, "alpha": 0.2}
        for name, build in builders.items():
            fn = lambda p: build(ad.row_softmax(p["logits"]), y, cfg)
            err = ad.finite_diff_check(fn, {"logits": logits})
            if err > 1e-6:
                return False, f"loss {name!r} trial {t}: relative error {err:.3e}"
    return True, f"{trials} random (N, C) inputs per loss, all <= 1e-6"


def check_chi2_identity(trials=100, seed=2):
    """max_squares(p) == -(mean chi^2 divergence + 1) / (2C) within 1e-12."""
    for t in range(trials):
        rng = np.random.default_rng((seed, t))
        p = _random_probmap(rng)
        lhs = losses.max_squares_loss(p).value
        d = losses.pearson_chi2_uniform(p)
        rhs = -(d.mean() + 1.0) / (2.0 * p.shape[1])
        if abs(lhs - rhs) > 1e-12:
            return False, f"trial {t}: |{lhs} - {rhs}| = {abs(lhs - rhs):.3e}"
    return True, f"{trials} random maps, identity within 1e-12"


def check_dominance(step=0.005):
    """Entropy gradient dominates the linear one on (0.5, 1), increasingly so."""
    grid = 0.5 + step * np.arange(1, int(round(0.5 / step)))
    ent = losses.binary_entropy_grad(grid)
    msq = losses.binary_maxsquare_grad(grid)
    if not np.all(ent >= msq):
        i = int(np.argmin(ent - msq))
        return False, f"dominance fails at p={grid[i]:.4f}"
    ratio = ent / msq
    if not np.all(np.diff(ratio) > 0):
        i = int(np.argmin(np.diff(ratio)))
        return False, f"ratio not increasing at p={grid[i]:.4f}"
    return True, f"{grid.size}-point grid, dominance and monotone ratio hold"


def check_iw_alpha_zero(trials=100, seed=3):
    """Image-wise weighting at alpha=0 reproduces plain maximum squares bitwise."""
    for t in range(trials):
        rng = np.random.default_rng((seed, t))
        p = _random_probmap(rng)
        a = losses.iw_max_squares_loss(p, 0.0)
        b = losses.max_squares_loss(p)
        if a.value != b.value or not np.array_equal(a.grad_wrt_probs, b.grad_wrt_probs):
            return False, f"trial {t}: {a.value!r} != {b.value!r}"
    return True, f"{trials} random maps, bitwise equal"


def check_scaled_bound(gamma=0.1, points=10_000):
    """Empirical sup of the scaled binary gradient stays under its bound."""
    grid = np.linspace(0.0, 1.0, points)
    sup = losses.binary_scaled_entropy_grad(grid, gamma).max()
    bound = (1.0 - 2.0 * gamma) * np.log((1.0 - gamma) / gamma)
    if sup > bound + 1e-9:
        return False, f"sup {sup!r} exceeds bound {bound!r} at gamma={gamma}"
    return True, f"sup {sup:.6f} <= bound {bound:.6f} on a {points}-point grid"


def check_guidance_properties(trials=1000, seed=4):
    """Raising delta only removes assignments; heads are interchangeable."""
    for t in range(trials):
        rng = np.random.default_rng((seed, t))
        n, c = int(rng.integers(1, 9)), int(rng.integers(2, 6))
        m = MultiLevelOutput(_random_probmap(rng, n, c), _random_probmap(rng, n, c))
        lo, hi = sorted(rng.uniform(0.05, 0.95, size=2))
        g_lo = self_guidance(m, float(lo))
        g_hi = self_guidance(m, float(hi))
        newly_assigned = (g_lo == losses.ABSTAIN) & (g_hi != losses.ABSTAIN)
        if newly_assigned.any():
            return False, f"trial {t}: assignment grew from delta={lo:.3f} to {hi:.3f}"
        swapped = MultiLevelOutput(m.low, m.final)
        if not np.array_equal(g_lo, self_guidance(swapped, float(lo))):
            return False, f"trial {t}: head swap changed the mask at delta={lo:.3f}"
    return True, f"{trials} random head pairs, monotone and symmetric"


def check_softmax_rows(trials=200, seed=5):
    """Softmax rows sum to 1 within 1e-12 and stay strictly positive."""
    for t in range(trials):
        rng = np.random.default_rng((seed, t))
        logits = rng.normal(scale=5.0, size=(int(rng.integers(1, 9)), int(rng.integers(2, 9))))
        p = ad.row_softmax(ad.constant(logits)).array
        if np.abs(p.sum(axis=1) - 1.0).max() > 1e-12 or p.min() <= 0:
            return False, f"trial {t}: row sums or positivity violated"
    return True, f"{trials} random logit matrices"


def check_seg_end_to_end(seed=6):
    """Composite network + loss gradients agree with finite differences."""
    spec = SegNetSpec(in_channels=2, trunk_channels=3, trunk_depth=2,
                      num_classes=3, tap_depth=1, init_seed=seed)
    params = init_params(spec)
    x = np.random.default_rng(seed).normal(size=(1, 2, 4, 4))

    def fn(p):
        m = seg_forward(spec, p, x)
        return ad.add(losses.max_squares_graph(m.final),
                      losses.entropy_graph(m.low))

    err = ad.finite_diff_check(fn, params)
    if err > 1e-6:
        return False, f"relative error {err:.3e} on 4x4 image"
    return True, f"relative error {err:.3e} on 4x4 image, 3 classes"


ALL_CHECKS = (
    ("op_gradients", check_op_gradients),
    ("loss_gradients", check_loss_gradients),
    ("softmax_rows", check_softmax_rows),
    ("chi2_identity", check_chi2_identity),
    ("gradient_dominance", check_dominance),
    ("iw_alpha_zero_equivalence", check_iw_alpha_zero),
    ("scaled_entropy_bound", check_scaled_bound),
    ("guidance_properties", check_guidance_properties),
    ("segnet_end_to_end_gradients", check_seg_end_to_end),
)


def run_all(out=print) -> int:
    """Run every check, print one pass/fail line each; 0 iff all pass."""
    failures = 0
    for name, check in ALL_CHECKS:
        ok, detail = check()
        out(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        failures += 0 if ok else 1
    return 0 if failures == 0 else 1
