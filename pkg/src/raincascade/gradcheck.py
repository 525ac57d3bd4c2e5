"""64-bit finite-difference verification of every differentiable operation.

Each case builds a scalar loss from random 64-bit inputs, backpropagates,
and compares against central differences. Losses are quadratic in any
single coordinate away from ReLU kinks, so central differences are exact up
to round-off there.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensorcore as tc
from .derainnet import BranchConfig, ResidualBlockParams, init_model, model_forward, residual_block_forward
from .tensorcore import Tensor

TOLERANCE = 1e-4
STEP = 1e-5
DEFAULT_SEEDS = tuple(range(10))
GRADCHECK_RAIN = BranchConfig(hidden_channels=8, num_blocks=1, shuffle_factor=2, input_channels=3)
GRADCHECK_NOISE = BranchConfig(hidden_channels=8, num_blocks=1, shuffle_factor=2, input_channels=6)


@dataclass
class CheckResult:
    op: str
    max_rel_error: float
    checked: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _leaf(rng, shape, *, away_from_zero=False) -> Tensor:
    data = rng.standard_normal(shape)
    if away_from_zero:
        data = np.where(np.abs(data) < 0.05, np.sign(data) * 0.05 + data, data)
    return Tensor(data, requires_grad=True)


def _target_loss(out: Tensor, rng) -> tuple[Tensor, Callable[[Tensor], Tensor]]:
    target = Tensor(rng.standard_normal(out.shape))
    return target, lambda o: tc.mean_squared(o, target)


def _check_leaves(build: Callable[[dict], Tensor], leaves: dict, rng, max_coords=None,
                  always_full=()) -> tuple[float, int]:
    """Compare backward against central differences for every leaf in ``leaves``.

    ``build`` maps a name->Tensor dict to a scalar loss. When ``max_coords``
    is set, at most that many coordinates per leaf are sampled, except for
    leaves named in ``always_full``.
    """
    for t in leaves.values():
        t.grad = None
    loss = build(leaves)
    tc.backward(loss)
    worst, checked = 0.0, 0
    for name, leaf in leaves.items():
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)

        def f(t, name=name):
            return build({**leaves, name: t})

        size = leaf.data.size
        if max_coords is None or size <= max_coords or name in always_full:
            idx = np.arange(size)
        else:
            idx = np.sort(rng.choice(size, size=max_coords, replace=False))
        numeric = tc.finite_diff_partials(f, leaf, idx, h=STEP)
        worst = max(worst, tc.max_relative_error(analytic.reshape(-1)[idx], numeric))
        checked += idx.size
    return worst, checked


def _case_conv2d(rng):
    cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    k = int(rng.choice([1, 3]))
    pad = int(rng.integers(0, 2))
    leaves = {
        "input": _leaf(rng, (2, cin, 5, 6)),
        "kernel": _leaf(rng, (cout, cin, k, k)),
        "bias": _leaf(rng, (1, cout, 1, 1)),
    }
    probe = tc.conv2d(leaves["input"], leaves["kernel"], leaves["bias"], pad)
    _, loss = _target_loss(probe, rng)
    return lambda L: loss(tc.conv2d(L["input"], L["kernel"], L["bias"], pad)), leaves


def _case_relu(rng):
    leaves = {"input": _leaf(rng, (2, 3, 4, 4), away_from_zero=True)}
    _, loss = _target_loss(leaves["input"], rng)
    return lambda L: loss(tc.relu(L["input"])), leaves


def _case_add(rng):
    leaves = {"a": _leaf(rng, (1, 2, 3, 4)), "b": _leaf(rng, (1, 2, 3, 4))}
    _, loss = _target_loss(leaves["a"], rng)
    return lambda L: loss(tc.add(L["a"], L["b"])), leaves


def _case_sub(rng):
    leaves = {"a": _leaf(rng, (1, 2, 3, 4)), "b": _leaf(rng, (1, 2, 3, 4))}
    _, loss = _target_loss(leaves["a"], rng)
    return lambda L: loss(tc.sub(L["a"], L["b"])), leaves


def _case_concat(rng):
    leaves = {"a": _leaf(rng, (2, 2, 3, 3)), "b": _leaf(rng, (2, 3, 3, 3))}
    probe = tc.concat_channels(leaves["a"], leaves["b"])
    _, loss = _target_loss(probe, rng)
    return lambda L: loss(tc.concat_channels(L["a"], L["b"])), leaves


def _case_unshuffle(rng):
    r = int(rng.integers(1, 4))
    leaves = {"input": _leaf(rng, (1, 2, 2 * r, 3 * r))}
    probe = tc.pixel_unshuffle(leaves["input"], r)
    _, loss = _target_loss(probe, rng)
    return lambda L: loss(tc.pixel_unshuffle(L["input"], r)), leaves


def _case_shuffle(rng):
    r = int(rng.integers(1, 4))
    leaves = {"input": _leaf(rng, (1, 2 * r * r, 2, 3))}
    probe = tc.pixel_shuffle(leaves["input"], r)
    _, loss = _target_loss(probe, rng)
    return lambda L: loss(tc.pixel_shuffle(L["input"], r)), leaves


def _case_mean_squared(rng):
    leaves = {"a": _leaf(rng, (2, 3, 2, 2)), "b": _leaf(rng, (2, 3, 2, 2))}
    return lambda L: tc.mean_squared(L["a"], L["b"]), leaves


def _case_residual_block(rng):
    c = 4
    s = np.sqrt(1.0 / (c * 9))
    leaves = {
        "x": _leaf(rng, (1, c, 6, 6)),
        "k1": Tensor(rng.uniform(-s, s, (c, c, 3, 3)), requires_grad=True),
        "b1": Tensor(0.1 * rng.standard_normal((1, c, 1, 1)), requires_grad=True),
        "k2": Tensor(rng.uniform(-s, s, (c, c, 3, 3)), requires_grad=True),
        "b2": Tensor(0.1 * rng.standard_normal((1, c, 1, 1)), requires_grad=True),
    }

    def build(L):
        out = residual_block_forward(L["x"], ResidualBlockParams(L["k1"], L["b1"], L["k2"], L["b2"]))
        return tc.tensor_sum(out)

    return build, leaves


def _case_model(rng, seed):
    model = init_model(GRADCHECK_RAIN, GRADCHECK_NOISE, seed=seed, dtype=np.float64)
    for _, p in model.named_parameters():
        if p.data.shape[0] == 1:  # biases start at zero; perturb them so their path is exercised
            p.data[...] = 0.05 * rng.standard_normal(p.data.shape)
    y = Tensor(rng.random((1, 3, 8, 8)), requires_grad=True)
    x = Tensor(rng.random((1, 3, 8, 8)))
    names = [n for n, _ in model.named_parameters()]
    leaves = {"y": y, **dict(model.named_parameters())}

    def build(L):
        swapped = model_from_leaves(model, {n: L[n] for n in names})
        _, _, x_hat = model_forward(swapped, L["y"])
        return tc.mean_squared(x_hat, x)

    return build, leaves


def model_from_leaves(model, tensors: dict):
    """Shallow copy of ``model`` whose parameters are the given Tensor objects."""
    from .derainnet import BranchParams, DerainModel

    def branch(prefix, params: BranchParams) -> BranchParams:
        blocks = [
            ResidualBlockParams(
                tensors[f"{prefix}.block{i}.conv1.kernel"], tensors[f"{prefix}.block{i}.conv1.bias"],
                tensors[f"{prefix}.block{i}.conv2.kernel"], tensors[f"{prefix}.block{i}.conv2.bias"],
            )
            for i in range(len(params.blocks))
        ]
        return BranchParams(tensors[f"{prefix}.head.kernel"], tensors[f"{prefix}.head.bias"], blocks,
                            tensors[f"{prefix}.tail.kernel"], tensors[f"{prefix}.tail.bias"])

    return DerainModel(branch("rain", model.rain_branch), branch("noise", model.noise_branch),
                       model.rain_config, model.noise_config, model.seed, model.train_seed)


CASES: dict[str, Callable] = {
    "conv2d": _case_conv2d,
    "relu": _case_relu,
    "add": _case_add,
    "sub": _case_sub,
    "concat_channels": _case_concat,
    "pixel_unshuffle": _case_unshuffle,
    "pixel_shuffle": _case_shuffle,
    "mean_squared": _case_mean_squared,
    "residual_block": _case_residual_block,
}

MODEL_PARAM_SAMPLES = 24


def run_gradcheck(seeds=DEFAULT_SEEDS) -> list[CheckResult]:
    results = []
    for op, case in CASES.items():
        start = time.perf_counter()
        worst, checked = 0.0, 0
        for seed in seeds:
            rng = np.random.default_rng(seed)
            build, leaves = case(rng)
            err, n = _check_leaves(build, leaves, rng)
            worst, checked = max(worst, err), checked + n
        results.append(CheckResult(op, worst, checked, time.perf_counter() - start))

    start = time.perf_counter()
    worst, checked = 0.0, 0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        build, leaves = _case_model(rng, seed)
        err, n = _check_leaves(build, leaves, rng, max_coords=MODEL_PARAM_SAMPLES, always_full=("y",))
        worst, checked = max(worst, err), checked + n
    results.append(CheckResult("derain_model", worst, checked, time.perf_counter() - start))
    return results
