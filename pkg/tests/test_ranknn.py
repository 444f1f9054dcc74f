"""Rank network, soft ranks, and the correlation objective."""

import numpy as np
import pytest
import torch

from u2traj.errors import (
    ConfigError,
    DegenerateCorrelationError,
    DimensionError,
    ParameterError,
)
from u2traj.metrics import spearman
from u2traj.ranknn import (
    RankConfig,
    RankNN,
    avg_ucty,
    build_rank_input,
    soft_rank,
    spearman_soft,
    train_ranknn,
)
from u2traj.sampling import ModeSet, PosteriorField

from gradcheck import fd_gradcheck


def tiny_rank_config(**overrides):
    base = dict(width=8, heads=2, ffn=12, tau=0.1, lr=1e-3, batch=4, epochs=1, K=4)
    base.update(overrides)
    return RankConfig(**base)


def random_modeset(rng, K=4, T=3, N=2):
    fields = [
        PosteriorField(
            mean=rng.normal(size=(T, N, 2)), var=rng.uniform(0.0, 0.4, size=(T, N, 2))
        )
        for _ in range(K)
    ]
    return ModeSet(fields=fields)


class TestAvgUcty:
    def test_zero_variance(self):
        field = PosteriorField(mean=np.zeros((3, 2, 2)), var=np.zeros((3, 2, 2)))
        assert avg_ucty(field) == 0.0

    def test_constant_variance(self):
        field = PosteriorField(mean=np.zeros((3, 2, 2)), var=np.full((3, 2, 2), 0.04))
        assert avg_ucty(field) == pytest.approx(0.2, abs=1e-12)

    def test_matches_elementwise_mean(self, rng):
        var = rng.uniform(0.0, 1.0, size=(4, 3, 2))
        field = PosteriorField(mean=np.zeros((4, 3, 2)), var=var)
        assert avg_ucty(field) == pytest.approx(np.sqrt(var).mean(), abs=1e-12)

    def test_unobserved_only_flag(self, rng):
        var = rng.uniform(0.0, 1.0, size=(4, 3, 2))
        field = PosteriorField(mean=np.zeros((4, 3, 2)), var=var)
        mask = np.ones((4, 3))
        mask[1:, 0] = 0.0
        expected = np.sqrt(var)[mask == 0.0].mean()
        assert avg_ucty(field, mask, unobserved_only=True) == pytest.approx(expected)


class TestBuildRankInput:
    def test_channel_layout(self, rng):
        modes = random_modeset(rng, K=3)
        mask = (rng.random((3, 2)) > 0.5).astype(float)
        tensor = build_rank_input(modes, mask)
        assert tensor.shape == (3, 3, 2, 5)
        for k in range(3):
            np.testing.assert_array_equal(tensor[k, ..., :2], modes.fields[k].mean)
            np.testing.assert_array_equal(tensor[k, ..., 2:4], modes.fields[k].var)
            np.testing.assert_array_equal(tensor[k, ..., 4], mask)

    def test_k1_slice(self, rng):
        modes = random_modeset(rng, K=1)
        mask = np.zeros((3, 2))
        tensor = build_rank_input(modes, mask)
        np.testing.assert_array_equal(tensor[0, ..., :2], modes.fields[0].mean)

    def test_geometry_mismatch(self, rng):
        modes = random_modeset(rng, K=2)
        modes.fields[1] = PosteriorField(
            mean=np.zeros((4, 2, 2)), var=np.zeros((4, 2, 2))
        )
        with pytest.raises(DimensionError):
            build_rank_input(modes, np.zeros((3, 2)))


class TestRankForward:
    def test_output_is_probability_vector(self, rng):
        torch.manual_seed(1)
        net = RankNN(tiny_rank_config())
        with torch.no_grad():
            e = net(build_rank_input(random_modeset(rng), np.zeros((3, 2))))
        assert torch.all(e > 0)
        assert float(e.sum()) == pytest.approx(1.0, abs=1e-6)

    def test_mode_permutation_equivariance(self, rng):
        torch.manual_seed(2)
        net = RankNN(tiny_rank_config()).double()
        tensor = build_rank_input(random_modeset(rng, K=5), np.zeros((3, 2)))
        e = net(tensor).detach().numpy()
        for trial in range(5):
            perm = np.random.default_rng(trial).permutation(5)
            e_perm = net(tensor[perm]).detach().numpy()
            np.testing.assert_allclose(e_perm, e[perm], atol=1e-9)

    def test_variable_k_t_n_without_reconfiguration(self, rng):
        torch.manual_seed(3)
        net = RankNN(tiny_rank_config())
        for K, T, N in ((2, 3, 2), (10, 5, 4), (20, 4, 3)):
            e = net(build_rank_input(random_modeset(rng, K=K, T=T, N=N), np.zeros((T, N))))
            assert e.shape == (K,)

    def test_k_below_two_rejected(self, rng):
        torch.manual_seed(4)
        net = RankNN(tiny_rank_config())
        with pytest.raises(ParameterError):
            net(build_rank_input(random_modeset(rng, K=1), np.zeros((3, 2))))

    def test_gradcheck(self, rng):
        torch.manual_seed(5)
        net = RankNN(tiny_rank_config()).double()
        tensor = torch.tensor(
            build_rank_input(random_modeset(rng, K=3), np.zeros((3, 2))),
            requires_grad=True,
        )
        w = torch.randn(3, dtype=torch.float64)
        fd_gradcheck(lambda: (net(tensor) * w).sum(), [tensor] + list(net.parameters()))


class TestSoftRank:
    def test_limit_matches_hard_ranks(self, rng):
        from scipy.stats import rankdata

        for _ in range(50):
            v = rng.normal(size=8)
            soft = soft_rank(torch.tensor(v), tau=1e-4).numpy()
            hard = rankdata(v, method="average")
            np.testing.assert_allclose(soft, hard, atol=1e-3)

    def test_two_equal_values_average_rank(self):
        r = soft_rank(torch.tensor([0.3, 0.3]), tau=1.0)
        torch.testing.assert_close(r, torch.tensor([1.5, 1.5]))

    def test_hand_value(self):
        r = soft_rank(torch.tensor([0.0, 1.0]), tau=1.0)
        np.testing.assert_allclose(r.numpy(), [1.26894, 1.73106], atol=1e-5)

    def test_nonpositive_tau_rejected(self):
        with pytest.raises(ParameterError):
            soft_rank(torch.tensor([1.0, 2.0]), tau=0.0)

    def test_permutation_equivariance(self, rng):
        v = rng.normal(size=6)
        perm = rng.permutation(6)
        a = soft_rank(torch.tensor(v), tau=0.2).numpy()
        b = soft_rank(torch.tensor(v[perm]), tau=0.2).numpy()
        np.testing.assert_allclose(b, a[perm], atol=1e-12)

    def test_gradcheck(self, rng):
        v = torch.tensor(rng.normal(size=24), requires_grad=True)
        w = torch.randn(24, dtype=torch.float64)
        fd_gradcheck(lambda: (soft_rank(v, tau=0.5) * w).sum(), [v])


class TestSpearmanSoft:
    def test_monotone_agreement_limit(self, rng):
        sade = np.sort(rng.normal(size=10))
        e = np.linspace(0.0, 1.0, 10)  # strictly increasing with sade
        rho = float(spearman_soft(torch.tensor(e), torch.tensor(sade), tau=1e-4))
        assert rho == pytest.approx(1.0, abs=1e-3)

    def test_monotone_reversal_limit(self, rng):
        sade = np.sort(rng.normal(size=10))
        e = np.linspace(1.0, 0.0, 10)
        rho = float(spearman_soft(torch.tensor(e), torch.tensor(sade), tau=1e-4))
        assert rho == pytest.approx(-1.0, abs=1e-3)

    def test_matches_hard_spearman_at_small_tau(self, rng):
        for _ in range(10):
            a = rng.normal(size=20)
            b = rng.normal(size=20)
            soft = float(spearman_soft(torch.tensor(a), torch.tensor(b), tau=1e-4))
            assert soft == pytest.approx(spearman(a, b), abs=1e-3)

    def test_degenerate_signals(self):
        with pytest.raises(DegenerateCorrelationError):
            spearman_soft(torch.ones(5), torch.arange(5.0), tau=0.1)

    def test_epsilon_guard_keeps_gradient_alive(self):
        e = torch.zeros(5, dtype=torch.float64, requires_grad=True)
        sade = torch.arange(5.0, dtype=torch.float64)
        rho = spearman_soft(e, sade, tau=0.1, eps=1e-8)
        rho.backward()
        assert torch.isfinite(e.grad).all()
        assert float(e.grad.abs().max()) > 0

    def test_gradcheck_composite(self, rng):
        e = torch.tensor(rng.normal(size=8), requires_grad=True)
        sade = torch.tensor(rng.normal(size=8))
        fd_gradcheck(
            lambda: spearman_soft(e, sade, tau=0.3), [e], rtol=1e-3, n_probes=8
        )


class TestTrainRankNN:
    def _scenes_and_denoiser(self):
        # synthetic setup where per-mode quality is recoverable from the input
        from u2traj.data import Bounds, Scene

        rng = np.random.default_rng(0)
        scenes = []
        for _ in range(12):
            x = rng.uniform(-0.8, 0.8, size=(4, 2, 2))
            mask = np.ones((4, 2))
            mask[2:] = 0.0
            scenes.append(
                Scene(x=x, mask=mask, bounds=Bounds(-1, 1, -1, 1), meta={})
            )
        return scenes

    def test_training_runs_and_improves_loss(self):
        from u2traj.denoiser import Denoiser
        from u2traj.schedule import make_schedule
        from test_denoiser import tiny_config

        scenes = self._scenes_and_denoiser()
        sched = make_schedule(4, 1e-3, 0.4, 1, 4)
        torch.manual_seed(0)
        den = Denoiser(tiny_config())
        cfg = tiny_rank_config(K=6, epochs=3, batch=4, lr=5e-3)
        result = train_ranknn(den, scenes, sched, cfg, seed=0)
        assert len(result.losses) == 3
        assert all(np.isfinite(v) for v in result.losses)

    def test_missing_denoiser_rejected(self):
        from u2traj.schedule import make_schedule

        with pytest.raises(ConfigError):
            train_ranknn(
                None, self._scenes_and_denoiser(), make_schedule(4, 1e-3, 0.4, 1, 4),
                tiny_rank_config(), seed=0,
            )

    def test_constant_start_escapes_within_one_epoch(self):
        # zero the head: the output is exactly uniform and the correlation
        # degenerate; one epoch of the epsilon-guarded objective must move it
        from u2traj.denoiser import Denoiser
        from u2traj.schedule import make_schedule
        from test_denoiser import tiny_config

        scenes = self._scenes_and_denoiser()
        sched = make_schedule(4, 1e-3, 0.4, 1, 4)
        torch.manual_seed(0)
        den = Denoiser(tiny_config())
        cfg = tiny_rank_config(K=6, epochs=1, batch=4, lr=5e-3)

        torch.manual_seed(1)
        probe = RankNN(cfg)
        with torch.no_grad():
            probe.head_out.weight.zero_()
            probe.head_out.bias.zero_()
        tensor = build_rank_input(
            random_modeset(np.random.default_rng(1), K=6), np.zeros((3, 2))
        )
        uniform = probe(tensor)
        torch.testing.assert_close(uniform, torch.full((6,), 1 / 6))
        with pytest.raises(DegenerateCorrelationError):
            spearman_soft(uniform, torch.arange(6.0), tau=0.1)

        result = train_ranknn(den, scenes, sched, cfg, seed=1)
        moved = result.model(torch.tensor(tensor, dtype=torch.float32))
        assert float((moved - moved.mean()).abs().max()) > 1e-6
