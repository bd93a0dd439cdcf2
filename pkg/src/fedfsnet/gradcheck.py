"""Central finite-difference checks for the three hand-derived losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn

STEP = 1e-5
REL_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    loss_name: str
    nets: int
    coords_checked: int
    max_rel_error: float


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


def check_coords(loss_fn: Callable[[nn.ModelParams], float], params: nn.ModelParams,
                 analytic: nn.ModelParams, coords: int, rng: np.random.Generator,
                 kink_fn: Callable[[nn.ModelParams], list] | None = None,
                 h: float = STEP) -> tuple[int, float]:
    """Compare ``analytic`` against central differences at random coordinates.

    Coordinates whose +/-h perturbation flips a ReLU mask are skipped and
    redrawn, since the loss is not differentiable across the kink.
    """
    base = params.flat()
    grad = analytic.flat()
    worst, checked, tries = 0.0, 0, 0
    while checked < coords and tries < 20 * coords:
        tries += 1
        i = int(rng.integers(base.size))
        plus, minus = base.copy(), base.copy()
        plus[i] += h
        minus[i] -= h
        p_plus = nn.ModelParams.from_flat(params.spec, plus)
        p_minus = nn.ModelParams.from_flat(params.spec, minus)
        if kink_fn is not None:
            if any((a != b).any() for a, b in zip(kink_fn(p_plus), kink_fn(p_minus))):
                continue
        numeric = (loss_fn(p_plus) - loss_fn(p_minus)) / (2 * h)
        worst = max(worst, relative_error(grad[i], numeric))
        checked += 1
    return checked, worst


def _random_spec(rng: np.random.Generator, output: str = "identity") -> nn.ModelSpec:
    depth = int(rng.integers(1, 3))
    sizes = [int(rng.integers(2, 7)) for _ in range(depth + 2)]
    return nn.ModelSpec(tuple(sizes), output=output)


def check_ce(rng: np.random.Generator, nets: int, coords: int) -> GradCheckResult:
    worst, total = 0.0, 0
    for _ in range(nets):
        spec = _random_spec(rng)
        params = nn.init_params(spec, rng.integers(2**32))
        x = rng.normal(size=(7, spec.input_dim))
        y = rng.integers(spec.output_dim, size=7)
        lg = nn.ce_loss_grad(params, x, y)
        n, w = check_coords(lambda p: nn.ce_loss_grad(p, x, y).loss, params, lg.grads,
                            coords, rng, lambda p: nn.relu_masks(p, x))
        total += n
        worst = max(worst, w)
    return GradCheckResult("cross_entropy", nets, total, float(worst))


def check_kl(rng: np.random.Generator, nets: int, coords: int) -> GradCheckResult:
    worst, total = 0.0, 0
    for _ in range(nets):
        spec = _random_spec(rng)
        params = nn.init_params(spec, rng.integers(2**32))
        x = rng.normal(size=(6, spec.input_dim))
        lg = nn.kl_uniform_loss_grad(params, x)
        n, w = check_coords(lambda p: nn.kl_uniform_loss_grad(p, x).loss, params, lg.grads,
                            coords, rng, lambda p: nn.relu_masks(p, x))
        total += n
        worst = max(worst, w)
    return GradCheckResult("kl_uniform", nets, total, float(worst))


def check_l2(rng: np.random.Generator, nets: int, coords: int) -> GradCheckResult:
    worst, total = 0.0, 0
    for _ in range(nets):
        gspec = _random_spec(rng)
        hspec = nn.ModelSpec(
            (gspec.output_dim, int(rng.integers(2, 7)), gspec.input_dim), output="sigmoid"
        )
        glob = nn.init_params(gspec, rng.integers(2**32))
        hidden = nn.init_params(hspec, rng.integers(2**32))
        z = rng.uniform(size=(5, gspec.input_dim))
        probs = nn.softmax(nn.forward(glob, z))
        lg = nn.l2_recon_loss_grad(hidden, glob, z)
        n, w = check_coords(lambda p: nn.l2_recon_loss_grad(p, glob, z).loss, hidden,
                            lg.grads, coords, rng, lambda p: nn.relu_masks(p, probs))
        total += n
        worst = max(worst, w)
    return GradCheckResult("l2_reconstruction", nets, total, float(worst))


def run_suite(seed: int = 0, nets: int = 20, coords: int = 100) -> list[GradCheckResult]:
    """Check every loss on ``nets`` random networks, ``coords`` coordinates each."""
    rng = np.random.default_rng(seed)
    return [check_ce(rng, nets, coords), check_kl(rng, nets, coords), check_l2(rng, nets, coords)]
