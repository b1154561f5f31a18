"""Numerical self-checks: whole-model gradient verification and scan-form equivalence."""
from __future__ import annotations

import time
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder import EncoderConfig
from .head import SemanticSpace
from .model import ZslModel, batch_loss
from .rng import XorShift64Star
from .ssm import discretize_zoh, ssm_conv_apply, ssm_conv_kernel, ssm_recurrence

GRADCHECK_TOL = 1e-4
SCAN_TOL = 1e-10

# K=4 attributes, d_s=3, d_v=8 on a 2x2 final grid
GRADCHECK_ENCODER = EncoderConfig(image_size=8, patch_size=2, stage_dims=(4, 8), stage_depths=(1, 1),
                                  state_dim=2, mlp_ratio=2, dt_min=0.1, dt_max=1.0)


@dataclass
class GradcheckReport:
    errors: "OrderedDict[str, float]" = field(default_factory=OrderedDict)
    tolerance: float = GRADCHECK_TOL

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def to_json(self) -> dict:
        return {"tolerance": self.tolerance, "max_error": self.max_error,
                "passed": self.passed, "errors": dict(self.errors)}


def gradcheck(cfg: EncoderConfig | None = None, seed: int = 0, n_attr: int = 4, embed_dim: int = 3,
              n_classes: int = 3, batch: int = 2, lambda_sc: float = 1.0, temperature: float = 1.0,
              h: float = 1e-5) -> GradcheckReport:
    """Central-difference check of the full training loss in float64, per parameter tensor."""
    cfg = cfg or GRADCHECK_ENCODER
    gen = XorShift64Star(seed).numpy()
    protos = gen.integers(0, 2, (n_attr, n_classes)).astype(np.float64)
    protos[0] = 1.0  # no all-zero prototype column
    sem = SemanticSpace(protos, gen.normal(size=(n_attr, embed_dim)))
    images = gen.normal(size=(batch, cfg.in_channels, cfg.image_size, cfg.image_size))
    labels = gen.integers(0, n_classes, batch)
    model = ZslModel(cfg, n_attr, embed_dim, seed=seed, precision="float64")
    # zero-initialized biases make a non-generic point: a relu layer can go fully dead and
    # put the unit-normalized local term exactly on its kink at the origin
    for p in model.parameters():
        if not p.data.any():
            p.data = 0.1 * gen.standard_normal(p.shape)
    classes = list(range(n_classes))

    def loss():
        return batch_loss(model, images, labels, sem, classes, lambda_sc, temperature).total

    names, params = zip(*model.named_parameters())
    errs = T.gradient_errors(loss, list(params), h)
    return GradcheckReport(OrderedDict(zip(names, errs)))


@dataclass
class ScanEquivReport:
    trials: int
    max_len: int
    max_deviation: float
    seconds: float
    tolerance: float = SCAN_TOL

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance

    def to_json(self) -> dict:
        return {"trials": self.trials, "max_len": self.max_len, "max_deviation": self.max_deviation,
                "seconds": self.seconds, "tolerance": self.tolerance, "passed": self.passed}


def random_lti(gen: np.random.Generator, n_state: int):
    """Random stable diagonal SSM, discretized by zero-order hold."""
    a = -np.exp(gen.uniform(-2, 1.5, n_state))
    b = gen.normal(size=n_state)
    c = gen.normal(size=n_state)
    delta = np.exp(gen.uniform(np.log(1e-3), np.log(1.0)))
    a_bar, b_bar = discretize_zoh(a, b, delta)
    return a_bar, b_bar, c


def scan_equiv(trials: int = 1000, max_len: int = 64, seed: int = 0, max_state: int = 8) -> ScanEquivReport:
    """Compare recurrent and convolutional evaluation of random time-invariant SSMs."""
    gen = XorShift64Star(seed).numpy()
    worst = 0.0
    start = time.perf_counter()
    for _ in range(trials):
        n = int(gen.integers(1, max_state + 1))
        L = int(gen.integers(1, max_len + 1))
        a_bar, b_bar, c = random_lti(gen, n)
        x = gen.normal(size=L)
        y_rec = ssm_recurrence(a_bar, b_bar, c, x)
        y_conv = ssm_conv_apply(ssm_conv_kernel(a_bar, b_bar, c, L), x)
        worst = max(worst, float(np.abs(y_rec - y_conv).max()))
    return ScanEquivReport(trials, max_len, worst, time.perf_counter() - start)
