import numpy as np
import pytest
import torch

from u2traj.schedule import NoiseSchedule, make_schedule

# keep torch single-threaded so every test run is reproducible
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def default_schedule() -> NoiseSchedule:
    return make_schedule(50, 1e-4, 0.5, 10, 30)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def exact_noise_denoiser(x0: np.ndarray, schedule: NoiseSchedule, eps_std: float = 0.1):
    """Oracle: infer the forward noise that explains x_s given the true x0.

    Any latent x_s = sqrt(ah_s) x0 + a_s eps implies eps = (x_s - sqrt(ah_s) x0) / a_s;
    feeding that back makes every reverse jump exact.
    """

    def fn(x_s, s, x_obs, mask):
        ah, a = schedule.alpha_hat[s], schedule.a[s]
        eps = (x_s - np.sqrt(ah) * x0) / a
        return eps, np.full_like(eps, eps_std)

    return fn


def zero_denoiser(eps_std: float = 0.0):
    def fn(x_s, s, x_obs, mask):
        return np.zeros_like(x_s), np.full_like(x_s, eps_std)

    return fn
