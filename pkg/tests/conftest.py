import numpy as np
import pytest

from mbcast.planner import DelayBudget, ServiceConfig, UnicastLink
from mbcast.simulator import Scenario, UserSpec


@pytest.fixture
def lossless_scenario():
    svc = ServiceConfig(t_seg=2.0, r_embms=1.3e6, media_bitrate=1.0e6, code_rate=0.78)
    return Scenario(
        svc=svc,
        budget=DelayBudget(d_se=2.0, d_fe=0.1, d_fd=0.1, d_pvs=0.5),
        link=UnicastLink(rtt=0.1, d_t=3.0),
        users=(UserSpec(user_id=1, p_loss=0.0),),
        n_segments=50,
        buffer_seconds=4.0,
        master_seed=3,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
