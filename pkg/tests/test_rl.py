import math

import numpy as np
import pytest
import torch

from cryoplan.environment import reset
from cryoplan.rl.checkpoint import (CheckpointError, load_checkpoint,
                                    save_checkpoint)
from cryoplan.rl.features import FEATURE_CHANNELS, FeatureError, featurize
from cryoplan.rl.policy import (PolicyNet, PolicyPlanner, entropy_of,
                                log_prob_of, policy_sample, squash)
from cryoplan.rl.ppo import (Batch, PpoAbort, TrainConfig, discounted_returns,
                             ppo_loss, ppo_update, _advantages)
from cryoplan.rl.training import evaluate_policy_dice, train

from conftest import quiet_env

torch.set_num_threads(1)

TINY = dict(grid=(4, 4, 4), conv_channels=(2, 2), hidden=4)


def tiny_net(probes=1, seed=0, **kw):
    args = dict(TINY)
    args.update(kw)
    return PolicyNet(probes_per_visit=probes, seed=seed, **args)


def synthetic_batch(net, n=8, seed=0, returns=None):
    """Transitions drawn from the net itself, as the collector would."""
    r = np.random.default_rng(seed)
    channels = torch.from_numpy(r.random((n, net.conv1.in_channels) + net.grid))
    t_frac = torch.from_numpy(r.random(n))
    with torch.no_grad():
        mean, value = net(channels, t_frac)
        eps = torch.from_numpy(r.standard_normal((n, net.action_dim)))
        u = mean + net.clamped_log_std().exp() * eps
        logp = log_prob_of(net, mean, u)
    if returns is None:
        returns = torch.from_numpy(r.random(n))
    else:
        returns = torch.as_tensor(returns, dtype=torch.float64)
    return Batch(channels=channels, t_frac=t_frac, u=u, log_prob_old=logp,
                 value_old=value, returns=returns)


# ------------------------------------------------------------------ features


class TestFeaturize:
    def test_per_cell_oracle(self, small_case):
        config = quiet_env()
        state = reset(small_case, config)
        state.t = 2
        grid = (4, 4, 4)
        feat = featurize(state, grid)
        dims = small_case.meta.dims
        base = [dims[a] // grid[a] for a in range(3)]
        for name, chan, mask in (("tumour", 0, state.remaining_tumour.values),
                                 ("ablated", 1, state.ablated.values),
                                 ("gland", 2, small_case.gland.values)):
            for gi in range(4):
                for gj in range(4):
                    for gk in range(4):
                        sl = []
                        for a, g in ((0, gi), (1, gj), (2, gk)):
                            stop = (g + 1) * base[a] if g < grid[a] - 1 else dims[a]
                            sl.append(slice(g * base[a], stop))
                        cell = mask[tuple(sl)]
                        want = cell.sum() / cell.size
                        assert feat.channels[chan, gi, gj, gk] == pytest.approx(want, abs=1e-15), name

    def test_remainder_goes_to_last_cell(self):
        from cryoplan.volume import BinaryMask, Case, GridMeta, ScalarVolume

        meta = GridMeta(dims=(5, 4, 6), spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0))
        tumour = np.zeros(meta.dims, bool)
        tumour[4, :, :] = True  # the remainder x-slab
        case = Case("r", ScalarVolume(meta, np.zeros(meta.dims, np.float32)),
                    BinaryMask(meta, tumour), BinaryMask(meta, np.ones(meta.dims, bool)))
        state = reset(case, quiet_env())
        feat = featurize(state, (2, 2, 2))
        # x cells have sizes (2, 3); the slab fills a third of the last cell
        assert np.allclose(feat.channels[0, 0], 0.0)
        assert np.allclose(feat.channels[0, 1], 1.0 / 3.0)

    def test_metadata(self, small_case):
        config = quiet_env(probes_per_visit=4, visits=3, d_min=8.0, d_max=12.0)
        state = reset(small_case, config)
        state.t = 2
        feat = featurize(state, (8, 8, 8))
        assert feat.t_frac == pytest.approx(2.0 / 3.0)
        assert feat.d_bounds == (8.0, 12.0)
        assert feat.probes_per_visit == 4
        meta = small_case.meta
        idx = np.argwhere(small_case.tumour.values)
        lo = np.maximum(np.asarray(meta.origin) + idx.min(axis=0) * np.asarray(meta.spacing) - 6.0,
                        meta.world_min)
        hi = np.minimum(np.asarray(meta.origin) + idx.max(axis=0) * np.asarray(meta.spacing) + 6.0,
                        meta.world_max)
        assert np.allclose(feat.world_min, lo)
        assert np.allclose(feat.world_max, hi)

    def test_action_frame_tracks_remaining_tumour(self):
        from cryoplan.volume import BinaryMask, Case, GridMeta, ScalarVolume

        meta = GridMeta(dims=(40, 40, 40), spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0))
        tumour = np.zeros(meta.dims, bool)
        tumour[10:13, 18:21, 30:33] = True
        tumour[30, 5, 5] = True
        case = Case("frame", ScalarVolume(meta, np.zeros(meta.dims, np.float32)),
                    BinaryMask(meta, tumour), BinaryMask(meta, np.ones(meta.dims, bool)))
        state = reset(case, quiet_env(d_min=4.0, d_max=8.0))  # pad = 4mm

        feat = featurize(state, (8, 8, 8))
        assert np.allclose(feat.world_min, [6.0, 1.0, 1.0])
        assert np.allclose(feat.world_max, [34.0, 24.0, 36.0])

        # losing the lone far voxel tightens the frame to the main lobe
        state.remaining_tumour.values[30, 5, 5] = False
        feat = featurize(state, (8, 8, 8))
        assert np.allclose(feat.world_min, [6.0, 14.0, 26.0])
        assert np.allclose(feat.world_max, [16.0, 24.0, 36.0])

        # nothing remaining falls back to the whole case box
        state.remaining_tumour.values[:] = False
        feat = featurize(state, (8, 8, 8))
        assert np.allclose(feat.world_min, meta.world_min)
        assert np.allclose(feat.world_max, meta.world_max)

    def test_action_frame_clamps_to_case_box(self):
        from cryoplan.volume import BinaryMask, Case, GridMeta, ScalarVolume

        meta = GridMeta(dims=(16, 16, 16), spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0))
        tumour = np.zeros(meta.dims, bool)
        tumour[0:2, 0:2, 0:2] = True
        case = Case("edge", ScalarVolume(meta, np.zeros(meta.dims, np.float32)),
                    BinaryMask(meta, tumour), BinaryMask(meta, np.ones(meta.dims, bool)))
        state = reset(case, quiet_env(d_min=4.0, d_max=8.0))
        feat = featurize(state, (8, 8, 8))
        assert np.allclose(feat.world_min, meta.world_min)  # pad would cross the edge
        assert np.allclose(feat.world_max, [5.0, 5.0, 5.0])

    def test_grid_must_fit(self, small_case):
        state = reset(small_case, quiet_env())
        with pytest.raises(FeatureError):
            featurize(state, (64, 16, 16))
        with pytest.raises(FeatureError):
            featurize(state, (0, 16, 16))

    def test_channels_bounded(self, small_case):
        state = reset(small_case, quiet_env())
        feat = featurize(state, (16, 16, 16))
        assert feat.channels.shape == (FEATURE_CHANNELS, 16, 16, 16)
        assert feat.channels.min() >= 0.0 and feat.channels.max() <= 1.0

    def test_frame_channel_oracle(self):
        from cryoplan.volume import BinaryMask, Case, GridMeta, ScalarVolume

        meta = GridMeta(dims=(32, 32, 32), spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0))
        tumour = np.zeros(meta.dims, bool)
        tumour[12:16, 12:16, 12:16] = True
        case = Case("fc", ScalarVolume(meta, np.zeros(meta.dims, np.float32)),
                    BinaryMask(meta, tumour), BinaryMask(meta, np.ones(meta.dims, bool)))
        # pad = 2mm -> frame [10, 17], an 8-voxel window split into 2-voxel cells
        state = reset(case, quiet_env(d_min=3.0, d_max=4.0))
        feat = featurize(state, (4, 4, 4))

        window = tumour[10:18, 10:18, 10:18]
        want = window.reshape(4, 2, 4, 2, 4, 2).mean(axis=(1, 3, 5))
        assert np.allclose(feat.channels[3], want)
        assert np.allclose(feat.channels[4], 0.0)   # nothing ablated
        assert np.allclose(feat.channels[5], 1.0)   # gland fills the frame

        # the case-grid channel is untouched by the frame: 32/4 = 8-voxel
        # cells, the block covers half of cell 1 along each axis
        expect0 = np.zeros((4, 4, 4))
        expect0[1, 1, 1] = 0.5 ** 3
        assert np.allclose(feat.channels[0], expect0)

    def test_frame_channel_narrow_window_samples(self):
        from cryoplan.volume import BinaryMask, Case, GridMeta, ScalarVolume

        meta = GridMeta(dims=(16, 16, 16), spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0))
        tumour = np.zeros(meta.dims, bool)
        tumour[12, 12, 12] = True
        case = Case("nw", ScalarVolume(meta, np.zeros(meta.dims, np.float32)),
                    BinaryMask(meta, tumour), BinaryMask(meta, np.ones(meta.dims, bool)))
        # pad = 1mm -> frame [11, 13]: only 3 voxels across but a 4-wide grid,
        # so cells sample their nearest voxel instead of partitioning
        state = reset(case, quiet_env(d_min=1.0, d_max=2.0))
        feat = featurize(state, (4, 4, 4))

        # cell centres at window fractions 1/8, 3/8, 5/8, 7/8 of 3 voxels
        # land on voxels 11, 12, 12, 13; the tumour voxel is 12
        axis_hits = np.array([0.0, 1.0, 1.0, 0.0])
        want = (axis_hits[:, None, None] * axis_hits[None, :, None]
                * axis_hits[None, None, :])
        assert np.allclose(feat.channels[3], want)
        assert np.allclose(feat.channels[5], 1.0)


# ------------------------------------------------------------------ policy


class TestPolicyNet:
    def test_deterministic_init(self):
        a, b = tiny_net(seed=7), tiny_net(seed=7)
        for (n1, p1), (_, p2) in zip(a.named_parameters(), b.named_parameters()):
            assert torch.equal(p1, p2), n1
        c = tiny_net(seed=8)
        assert not torch.equal(a.fc.weight, c.fc.weight)

    def test_float64_everywhere(self):
        net = tiny_net()
        assert all(p.dtype == torch.float64 for p in net.parameters())

    def test_zero_weights_emit_frame_centre_mid_diameter(self, small_case):
        config = quiet_env(probes_per_visit=2, d_min=8.0, d_max=12.0)
        net = tiny_net(probes=2)
        with torch.no_grad():
            net.mean_head.weight.zero_()
            net.mean_head.bias.zero_()
        state = reset(small_case, config)
        feat = featurize(state, net.grid)
        sample = policy_sample(net, feat, deterministic=True)
        mid = 0.5 * (np.asarray(feat.world_min) + np.asarray(feat.world_max))
        for probe in sample.action.probes:
            assert np.allclose(probe.centre, mid)
            assert probe.diameter == pytest.approx(10.0)

    def test_fresh_net_spreads_probe_slots(self, small_case):
        config = quiet_env(probes_per_visit=5, d_min=8.0, d_max=10.0)
        net = tiny_net(probes=5)
        bias = net.mean_head.bias.detach().numpy().reshape(5, 4)
        assert np.all(bias[:, 3] == 0.0)  # mid diameter anchor
        anchors = 0.5 * (1.0 + np.tanh(bias[:, :3]))
        assert np.all((anchors >= 0.15) & (anchors <= 0.85))
        for i in range(5):
            for j in range(i + 1, 5):
                assert np.linalg.norm(anchors[i] - anchors[j]) > 0.2

        state = reset(small_case, config)
        sample = policy_sample(net, featurize(state, net.grid), deterministic=True)
        centres = np.array([p.centre_array for p in sample.action.probes])
        gaps = [np.linalg.norm(centres[i] - centres[j])
                for i in range(5) for j in range(i + 1, 5)]
        assert min(gaps) > 1.0  # mm: slots must not collapse onto one point

    def test_sampled_actions_always_in_bounds(self, small_case, rng):
        config = quiet_env(probes_per_visit=3, d_min=8.0, d_max=12.0)
        net = tiny_net(probes=3, init_log_std=1.0)  # deliberately wide
        state = reset(small_case, config)
        feat = featurize(state, net.grid)
        lo, hi = small_case.meta.world_min, small_case.meta.world_max
        for _ in range(200):
            sample = policy_sample(net, feat, rng)
            for p in sample.action.probes:
                assert np.all(p.centre_array >= lo) and np.all(p.centre_array <= hi)
                assert 8.0 <= p.diameter <= 12.0

    def test_probe_count_mismatch_rejected(self, small_case, rng):
        net = tiny_net(probes=2)
        state = reset(small_case, quiet_env(probes_per_visit=3))
        with pytest.raises(ValueError):
            policy_sample(net, featurize(state, net.grid), rng)

    def test_sampling_needs_rng(self, small_case):
        net = tiny_net(probes=3)
        state = reset(small_case, quiet_env())
        with pytest.raises(ValueError):
            policy_sample(net, featurize(state, net.grid))

    def test_planner_adapter_is_deterministic(self, small_case):
        config = quiet_env(probes_per_visit=3)
        net = tiny_net(probes=3)
        state = reset(small_case, config)
        planner = PolicyPlanner(net)
        assert planner.plan_visit(state, config) == planner.plan_visit(state, config)


class TestDensity:
    def test_log_prob_matches_scipy_recompute(self, rng):
        from scipy.stats import norm

        net = tiny_net(probes=2)
        with torch.no_grad():
            net.log_std.copy_(torch.from_numpy(rng.uniform(-1.5, 0.5, net.action_dim)))
        mean = torch.from_numpy(rng.standard_normal((5, net.action_dim)))
        u = torch.from_numpy(rng.standard_normal((5, net.action_dim)) * 2.0)
        got = log_prob_of(net, mean, u).detach().numpy()
        sigma = net.clamped_log_std().exp().detach().numpy()
        base = norm.logpdf(u.numpy(), loc=mean.numpy(), scale=sigma).sum(axis=1)
        dadu = 0.5 * (1.0 - np.tanh(u.numpy()) ** 2)
        want = base - np.log(dadu).sum(axis=1)
        assert np.allclose(got, want, rtol=0, atol=1e-9)

    def test_density_integrates_to_one_per_dim(self):
        # scipy-only construction of the squashed density, then quadrature
        from scipy.integrate import quad
        from scipy.stats import norm

        for m, s in [(0.0, 0.5), (0.8, 0.3), (-1.2, 1.0)]:
            def pdf(a):
                u = np.arctanh(2.0 * a - 1.0)
                return norm.pdf(u, loc=m, scale=s) / (2.0 * a * (1.0 - a))

            total = quad(pdf, 1e-12, 1 - 1e-12, limit=200)[0]
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_squashed_samples_match_analytic_cdf(self, rng):
        from scipy.stats import norm

        m, s = 0.4, 0.7
        u = rng.standard_normal(100_000) * s + m
        a = 0.5 * (1.0 + np.tanh(u))
        grid = np.linspace(0.05, 0.95, 19)
        emp = np.searchsorted(np.sort(a), grid) / a.size
        want = norm.cdf(np.arctanh(2 * grid - 1), loc=m, scale=s)
        assert np.max(np.abs(emp - want)) < 0.01

    def test_squash_bounds_and_monotone(self):
        u = torch.linspace(-20, 20, 401, dtype=torch.float64)
        a = squash(u)
        assert float(a.min()) >= 0.0 and float(a.max()) <= 1.0
        assert torch.all(a[1:] >= a[:-1])

    def test_entropy_closed_form_and_clamp(self):
        net = tiny_net(probes=1)
        with torch.no_grad():
            net.log_std.fill_(-9.0)  # below the clamp floor of -4
        want = net.action_dim * (-4.0 + 0.5 * (1.0 + math.log(2 * math.pi)))
        assert float(entropy_of(net).detach()) == pytest.approx(want, rel=1e-12)


# ------------------------------------------------------------------ returns


class TestReturns:
    def test_oracle_forward_sum(self, rng):
        rewards = rng.standard_normal(7)
        gamma = 0.9
        got = discounted_returns(rewards, gamma)
        for t in range(7):
            want = sum(gamma ** k * rewards[t + k] for k in range(7 - t))
            assert got[t] == pytest.approx(want, rel=1e-12)

    def test_exact_for_dyadic_gammas(self):
        rewards = [3.0, -1.0, 4.0, 1.0]
        assert np.array_equal(discounted_returns(rewards, 0.0), rewards)
        assert np.array_equal(discounted_returns(rewards, 1.0), [7.0, 4.0, 5.0, 1.0])
        assert np.array_equal(discounted_returns(rewards, 0.5),
                              [3.0 - 0.5 + 1.0 + 0.125, -1.0 + 2.0 + 0.25, 4.5, 1.0])

    def test_gamma_validated(self):
        with pytest.raises(ValueError):
            discounted_returns([1.0], 1.5)

    def test_empty(self):
        assert discounted_returns([], 0.9).size == 0


class TestAdvantages:
    def test_normalized_population_moments(self):
        net = tiny_net()
        batch = synthetic_batch(net, n=16, seed=3)
        adv = _advantages(batch)
        assert float(adv.mean()) == pytest.approx(0.0, abs=1e-12)
        assert float(adv.pow(2).mean().sqrt()) == pytest.approx(1.0, rel=1e-12)

    def test_constant_advantages_stay_unscaled(self):
        net = tiny_net()
        batch = synthetic_batch(net, n=4, seed=3)
        batch = Batch(batch.channels, batch.t_frac, batch.u, batch.log_prob_old,
                      batch.value_old, batch.value_old + 2.5)
        adv = _advantages(batch)
        assert torch.allclose(adv, torch.zeros_like(adv), atol=1e-12)


# ------------------------------------------------------------------ ppo core


class TestPpoUpdate:
    def test_ratio_is_one_before_any_update(self):
        from cryoplan.rl.ppo import _loss_terms

        net = tiny_net(probes=2)
        batch = synthetic_batch(net, n=12, seed=5)
        _, stats = _loss_terms(net, batch, _advantages(batch).detach(), TrainConfig())
        assert stats["mean_ratio"] == pytest.approx(1.0, abs=1e-9)

    def test_zero_learning_rate_is_a_no_op(self):
        net = tiny_net(probes=1)
        before = {k: v.clone() for k, v in net.state_dict().items()}
        opt = torch.optim.Adam(net.parameters(), lr=0.0)
        ppo_update(net, opt, synthetic_batch(net, n=8), TrainConfig(learning_rate=0.0))
        for k, v in net.state_dict().items():
            assert torch.equal(v, before[k]), k

    def test_update_moves_toward_advantaged_actions(self):
        net = tiny_net(probes=1)
        # two transitions: the first strongly advantaged, the second punished
        batch = synthetic_batch(net, n=2, seed=0, returns=[5.0, -5.0])
        with torch.no_grad():
            mean, _ = net(batch.channels, batch.t_frac)
            logp_before = log_prob_of(net, mean, batch.u)
        opt = torch.optim.Adam(net.parameters(), lr=1e-3)
        ppo_update(net, opt, batch, TrainConfig(entropy_weight=0.0, value_coef=0.0))
        with torch.no_grad():
            mean, _ = net(batch.channels, batch.t_frac)
            logp_after = log_prob_of(net, mean, batch.u)
        assert float(logp_after[0]) > float(logp_before[0])
        assert float(logp_after[1]) < float(logp_before[1])

    def test_abort_on_nonfinite_before_mutation(self):
        net = tiny_net(probes=1)
        before = {k: v.clone() for k, v in net.state_dict().items()}
        batch = synthetic_batch(net, n=4)
        bad = Batch(batch.channels, batch.t_frac, batch.u,
                    batch.log_prob_old * float("nan"), batch.value_old, batch.returns)
        opt = torch.optim.Adam(net.parameters(), lr=1e-3)
        with pytest.raises(PpoAbort) as info:
            ppo_update(net, opt, bad, TrainConfig(), batch_index=17)
        assert info.value.batch_index == 17
        for k, v in net.state_dict().items():
            assert torch.equal(v, before[k]), k

    def test_empty_batch_rejected(self):
        net = tiny_net()
        batch = synthetic_batch(net, n=1)
        empty = Batch(batch.channels[:0], batch.t_frac[:0], batch.u[:0],
                      batch.log_prob_old[:0], batch.value_old[:0], batch.returns[:0])
        with pytest.raises(ValueError):
            ppo_update(net, torch.optim.Adam(net.parameters()), empty, TrainConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(gamma=-0.1)
        with pytest.raises(ValueError):
            TrainConfig(clip_epsilon=0.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


class TestGradients:
    def test_analytic_gradients_match_finite_differences(self):
        # small net, exact float64 arithmetic: central differences at 1e-6
        net = tiny_net(probes=1)
        n_params = sum(p.numel() for p in net.parameters())
        assert n_params <= 200
        config = TrainConfig()
        worst = 0.0
        for b in range(5):
            batch = synthetic_batch(net, n=6, seed=300 + b)
            net.zero_grad()
            loss = ppo_loss(net, batch, config)
            loss.backward()
            for p in net.parameters():
                grad = p.grad.detach().clone().reshape(-1)
                flat = p.data.reshape(-1)
                for i in range(flat.numel()):
                    h = 1e-6 * max(1.0, abs(float(flat[i])))
                    orig = float(flat[i])
                    flat[i] = orig + h
                    up = float(ppo_loss(net, batch, config).detach())
                    flat[i] = orig - h
                    dn = float(ppo_loss(net, batch, config).detach())
                    flat[i] = orig
                    numeric = (up - dn) / (2 * h)
                    denom = max(abs(float(grad[i])), abs(numeric), 1e-8)
                    rel = abs(float(grad[i]) - numeric) / denom
                    worst = max(worst, rel)
        assert worst < 1e-4, f"worst relative gradient error {worst:.3e}"


# ------------------------------------------------------------------ training


def tiny_train_config(**kw):
    args = dict(
        total_steps=64, batch_size=16, eval_every=16, eval_cases=1,
        hidden=8, conv_channels=(2, 4), feature_grid=(8, 8, 8),
        learning_rate=1e-3, seed=0,
    )
    args.update(kw)
    return TrainConfig(**args)


class TestTrainLoop:
    def test_curve_rows_at_eval_multiples(self, small_cases):
        config = tiny_train_config()
        net, curve = train(small_cases, quiet_env(), config)
        assert [row[0] for row in curve] == [16, 32, 48, 64]
        for _, mean_reward, eval_dice in curve:
            assert np.isfinite(mean_reward) and 0.0 <= eval_dice <= 1.0

    def test_zero_steps_returns_initial_params(self, small_cases, tmp_path):
        config = tiny_train_config(total_steps=0)
        fresh = PolicyNet(probes_per_visit=3, grid=config.feature_grid,
                          conv_channels=config.conv_channels, hidden=config.hidden,
                          init_log_std=config.init_log_std,
                          log_std_range=(config.log_std_min, config.log_std_max),
                          seed=config.seed)
        net, curve = train(small_cases, quiet_env(), config, out_dir=tmp_path)
        assert curve == []
        for (k1, p1), (k2, p2) in zip(fresh.named_parameters(), net.named_parameters()):
            assert k1 == k2 and torch.equal(p1, p2)
        assert (tmp_path / "policy.ckpt").exists()

    def test_deterministic_given_seed(self, small_cases):
        config = tiny_train_config(total_steps=32)
        net_a, curve_a = train(small_cases, quiet_env(), config)
        net_b, curve_b = train(small_cases, quiet_env(), config)
        assert curve_a == curve_b
        for (_, p1), (_, p2) in zip(net_a.named_parameters(), net_b.named_parameters()):
            assert torch.equal(p1, p2)

    def test_resume_is_bit_exact(self, small_cases, tmp_path):
        env = quiet_env()
        full_dir = tmp_path / "full"
        part_dir = tmp_path / "part"
        net_full, curve_full = train(small_cases, env, tiny_train_config(total_steps=64),
                                     out_dir=full_dir)
        train(small_cases, env, tiny_train_config(total_steps=32), out_dir=part_dir)
        net_res, curve_res = train(
            small_cases, env, tiny_train_config(total_steps=64), out_dir=part_dir,
            resume_from=part_dir / "policy.ckpt.state.pt",
        )
        assert curve_res == curve_full
        for (_, p1), (_, p2) in zip(net_full.named_parameters(), net_res.named_parameters()):
            assert torch.equal(p1, p2)

    def test_resume_rejects_config_change(self, small_cases, tmp_path):
        env = quiet_env()
        train(small_cases, env, tiny_train_config(total_steps=32), out_dir=tmp_path)
        with pytest.raises(ValueError):
            train(small_cases, env, tiny_train_config(total_steps=32, learning_rate=5e-4),
                  out_dir=tmp_path, resume_from=tmp_path / "policy.ckpt.state.pt")

    def test_empty_case_list_rejected(self):
        with pytest.raises(ValueError):
            train([], quiet_env(), tiny_train_config())

    def test_training_improves_mean_reward(self, small_cases):
        # same-case overfit: the policy should beat its own starting reward
        config = tiny_train_config(total_steps=512, batch_size=32, eval_every=128,
                                   learning_rate=3e-3, entropy_weight=0.0)
        env = quiet_env(probes_per_visit=3, visits=2, d_min=8.0, d_max=12.0)
        net, curve = train(small_cases[:2], env, config)
        assert curve[-1][1] > curve[0][1]

    def test_evaluate_policy_dice_deterministic(self, small_cases):
        net = tiny_net(probes=3, grid=(8, 8, 8))
        env = quiet_env()
        a = evaluate_policy_dice(net, small_cases[:2], env, seed=4)
        b = evaluate_policy_dice(net, small_cases[:2], env, seed=4)
        assert a == b and 0.0 <= a <= 1.0


# ------------------------------------------------------------------ checkpoint


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = tiny_net(probes=2, seed=3)
        with torch.no_grad():
            for p in net.parameters():
                p.add_(torch.randn_like(p) * 0.1)
        config = tiny_train_config()
        path = tmp_path / "p.ckpt"
        save_checkpoint(path, net, config, seed=11)
        loaded, cfg2, seed2 = load_checkpoint(path)
        assert seed2 == 11 and cfg2 == config
        for (k1, p1), (k2, p2) in zip(net.named_parameters(), loaded.named_parameters()):
            assert k1 == k2 and torch.equal(p1, p2)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nope.ckpt")

    def test_bad_format_line(self, tmp_path):
        net = tiny_net()
        path = tmp_path / "p.ckpt"
        save_checkpoint(path, net, tiny_train_config(), seed=0)
        raw = path.read_bytes()
        path.write_bytes(b"not-a-checkpoint" + raw[len(b"cryoplan-policy v1"):])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        net = tiny_net()
        path = tmp_path / "p.ckpt"
        save_checkpoint(path, net, tiny_train_config(), seed=0)
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_loaded_policy_plans_identically(self, small_case, tmp_path):
        config = quiet_env(probes_per_visit=3)
        net = tiny_net(probes=3, grid=(8, 8, 8), seed=5)
        path = tmp_path / "p.ckpt"
        save_checkpoint(path, net, tiny_train_config(), seed=5)
        loaded, _, _ = load_checkpoint(path)
        state = reset(small_case, config)
        assert (PolicyPlanner(net).plan_visit(state, config)
                == PolicyPlanner(loaded).plan_visit(state, config))
