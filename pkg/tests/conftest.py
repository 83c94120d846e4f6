import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from morpho.synth import ClassEffect, ConfounderEffect, SynthSpec, generate, imbalance_spec

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

CONFOUNDERS = ("age", "bsa", "sex", "bmi")


def balanced_spec(n=80, seed=0, noise_ratio=0.1, direction="dilate_ventricles", **overrides):
    """Two classes with identical confounder distributions and one class effect.

    Anatomical variation and confounder effects are small next to the class
    effect, so the within-class covariance is close to isotropic and the
    whitened pattern should line up with the generating direction.
    """
    params = dict(
        n_controls=n,
        n_cases=n,
        resolution=4,
        class_effect=ClassEffect(direction=direction, magnitude=1.0),
        confounder_effects=[ConfounderEffect("bmi", "thicken_lv", 0.2), ConfounderEffect("bsa", "scale", 0.2)],
        confounder_distributions={
            "age": {"mean": 40.0, "sd": 8.0},
            "bsa": {"mean": 1.8, "sd": 0.2},
            "sex": {"p": 0.5},
            "bmi": {"mean": 24.0, "sd": 3.0},
        },
        noise_sd=noise_ratio * 1.0,
        variation_modes=10,
        variation_sd=0.1,
        seed=seed,
    )
    params.update(overrides)
    return SynthSpec(**params)


@pytest.fixture(scope="session")
def balanced():
    return generate(balanced_spec())


@pytest.fixture(scope="session")
def imbalanced():
    return generate(imbalance_spec(0))


@pytest.fixture(scope="session")
def small_cohort():
    return generate(balanced_spec(n=20, resolution=3, variation_modes=5))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
