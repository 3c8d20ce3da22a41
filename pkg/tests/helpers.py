"""Random admissible columns for sweeps and property tests."""

import numpy as np

from moistcol.rearrange import ColumnState
from moistcol.saturation import SaturationModel, compute_bounds, DomainBox, max_timestep

LINEAR_EXAMPLE = dict(qstar=1.0, a=0.5, b=1.0, c=0.2)


def example_model():
    return SaturationModel.linear(**LINEAR_EXAMPLE)


def random_model(rng):
    return SaturationModel.linear(
        qstar=rng.uniform(0.5, 2.0), a=rng.uniform(0.1, 2.0), b=rng.uniform(0.5, 2.0), c=rng.uniform(0.0, 0.5))


def random_column(rng, model, n, saturated_fraction=0.6):
    """Nondecreasing theta with a random mix of saturated and dry parcels at t = 0."""
    z = np.arange(1, n + 1) / n
    theta = np.sort(rng.uniform(0.0, 1.0, n)) * rng.uniform(0.05, 1.5)
    qsat = model(theta, z, 0.0)
    deficit = np.where(rng.random(n) < saturated_fraction, 0.0, rng.uniform(0.0, 0.5, n))
    return ColumnState.initial(theta, qsat - deficit)


def random_case(rng, n_range=(4, 64), steps_range=(8, 32)):
    """``(model, state, horizon, dt)`` with ``dt`` at or below the admissible step."""
    model = random_model(rng)
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    state = random_column(rng, model, n)
    bounds = compute_bounds(model, DomainBox(4.0, 1.0))
    steps = int(rng.integers(steps_range[0], steps_range[1] + 1))
    if bounds.cfl > 0:
        dt = max_timestep(bounds, n) * rng.uniform(0.5, 1.0)
    else:
        dt = 0.05
    return model, state, steps * dt, dt
