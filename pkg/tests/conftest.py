import numpy as np
import pytest

import relaytrack as rt


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def snr15():
    noise = rt.NoiseConfig.from_snr_db(15.0)
    relay = rt.RelayFunction.power_normalized(noise)
    return noise, relay


@pytest.fixture
def small_frame(snr15):
    """One simulated frame at 15 dB, T=40, L=1, truth alpha=beta=0.95."""
    noise, relay = snr15
    truth = rt.StaticParams(alpha=[0.95], beta=[0.95])
    frame = rt.simulate_frame(
        truth, rt.FrameConfig.with_unit_pilots(40, 1, 15.0), noise, relay, np.random.default_rng(77)
    )
    return frame, noise, relay
