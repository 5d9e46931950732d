import numpy as np
import pytest

from cfcdim.grid import RoadLink, build_manhattan_grid, central_zoi, make_grid, set_zoi
from cfcdim.mobility import (
    ConstantSpeed,
    Contact,
    MobilityConfig,
    inject_trace,
    stationary_samples,
)


@pytest.fixture
def line_grid():
    """One 600 m border link."""
    return make_grid([RoadLink(0, ((0.0, 0.0), (600.0, 0.0)), is_border=True)])


@pytest.fixture
def pair_grid():
    """Two collinear 300 m border links sharing an endpoint."""
    return make_grid(
        [
            RoadLink(0, ((0.0, 0.0), (300.0, 0.0)), is_border=True),
            RoadLink(1, ((300.0, 0.0), (600.0, 0.0)), is_border=True),
        ]
    )


@pytest.fixture
def desk_grid():
    return central_zoi(build_manhattan_grid(3, 4, 150.0), 3)


def stationary_trace(positions, duration=10.0, tx_radius=100.0, dt=1.0, contacts=None):
    """Trace of motionless nodes; contacts detected from geometry if not given."""
    from cfcdim.mobility import detect_contacts

    times = [i * dt for i in range(int(duration / dt) + 1)]
    samples = stationary_samples(positions, times)
    if contacts is None:
        contacts = detect_contacts(samples, tx_radius)
    cfg = MobilityConfig(
        arrival_rate=0.0,
        speed_model=ConstantSpeed(0.0),
        tx_radius=tx_radius,
        duration=duration,
        sample_dt=dt,
        rng_seed=0,
    )
    entries = [(n, positions[n][2], 0.0) for n in sorted(positions)]
    return inject_trace(samples, contacts, entries, cfg)


@pytest.fixture
def pair_contact_trace(pair_grid):
    """Two nodes on link 0, permanently in range."""
    return stationary_trace({0: (10.0, 0.0, 0), 1: (60.0, 0.0, 0)}, duration=10.0)


def make_mobility_cfg(**kw):
    base = dict(
        arrival_rate=0.05,
        speed_model=ConstantSpeed(60.0),
        tx_radius=100.0,
        duration=150.0,
        sample_dt=1.0,
        rng_seed=0,
    )
    base.update(kw)
    return MobilityConfig(**base)
