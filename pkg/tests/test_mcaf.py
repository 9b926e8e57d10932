import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from trinity_detector import mcaf, spectral
from trinity_detector.data import load_manifest, samples_from_manifest
from trinity_detector.errors import ConfigError, ValidationError
from trinity_detector.mcaf import (
    MCAFConfig,
    MultiSpectralAttention,
    apply_channel_attention,
    select_frequencies,
    two_step_search,
    zigzag_order,
)


def finite_difference_jacobian(fn, x0, step=1e-6):
    """Central-difference Jacobian of fn: R^n -> R^m around x0 (numpy)."""
    x0 = np.asarray(x0, dtype=np.float64)
    y0 = np.asarray(fn(x0))
    jac = np.zeros((y0.size, x0.size))
    flat = x0.ravel()
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = step
        up = np.asarray(fn((flat + bump).reshape(x0.shape)))
        dn = np.asarray(fn((flat - bump).reshape(x0.shape)))
        jac[:, i] = (up - dn).ravel() / (2 * step)
    return jac


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-30)


class TestZigzag:
    def test_first_three_on_7x7(self):
        assert zigzag_order(7, 7)[:3] == [(0, 0), (0, 1), (1, 0)]

    def test_2x2(self):
        assert zigzag_order(2, 2) == [(0, 0), (0, 1), (1, 0), (1, 1)]

    @settings(max_examples=30, deadline=None)
    @given(h=st.integers(1, 9), w=st.integers(1, 9))
    def test_is_permutation_of_grid(self, h, w):
        order = zigzag_order(h, w)
        assert sorted(order) == [(u, v) for u in range(h) for v in range(w)]


class TestSelectFrequencies:
    def test_lf_first_four(self):
        cfg = MCAFConfig(channels=4, n_parts=4, criterion=mcaf.LOW_FREQUENCY)
        idx = select_frequencies(cfg)
        assert idx.assignments == ((0, 0), (0, 1), (1, 0), (0, 2))
        assert idx.criterion == mcaf.LOW_FREQUENCY

    def test_lf_deterministic(self):
        cfg = MCAFConfig(channels=8, n_parts=8, criterion=mcaf.LOW_FREQUENCY)
        assert select_frequencies(cfg) == select_frequencies(cfg)

    def test_ts_starts_at_dc(self):
        cfg = MCAFConfig(channels=1, n_parts=1, criterion=mcaf.TWO_STEP)
        assert select_frequencies(cfg).assignments == ((0, 0),)

    def test_ts_table_is_dc_first_and_in_range(self):
        assert mcaf.TWO_STEP_TABLE[0] == (0, 0)
        assert all(0 <= u < 7 and 0 <= v < 7 for u, v in mcaf.TWO_STEP_TABLE)
        assert len(set(mcaf.TWO_STEP_TABLE)) == len(mcaf.TWO_STEP_TABLE)

    def test_nas_carries_candidates(self):
        cands = tuple(zigzag_order(4, 4))
        cfg = MCAFConfig(channels=2, n_parts=2, criterion=mcaf.NAS, nas_candidates=cands, dct_plane=(4, 4))
        idx = select_frequencies(cfg)
        assert idx.criterion == mcaf.NAS
        assert idx.candidates == cands

    def test_too_many_parts_rejected(self):
        with pytest.raises(ConfigError):
            select_frequencies(MCAFConfig(channels=64, n_parts=64, criterion=mcaf.TWO_STEP))

    def test_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            MCAFConfig(channels=10, n_parts=4)

    def test_default_n_parts(self):
        assert MCAFConfig(channels=32).n_parts == 16
        assert MCAFConfig(channels=8).n_parts == 8


class TestTwoStepSearch:
    def test_toy_dataset_ranks_dc_first(self, toy_manifest):
        # the shipped table's top entry, validated by the offline search on
        # pooled toy-image planes
        entries = load_manifest(toy_manifest)
        samples = samples_from_manifest(entries, toy_manifest)
        gray = torch.from_numpy(
            np.stack([s.image.data.mean(axis=0) for s in samples])
        ).unsqueeze(1)
        pooled = torch.nn.functional.adaptive_avg_pool2d(gray, (7, 7))[:, 0].numpy()
        ranked = two_step_search(pooled, (7, 7), top_k=4)
        assert ranked[0] == (0, 0) == mcaf.TWO_STEP_TABLE[0]

    def test_planted_component_dominates(self):
        rng = np.random.default_rng(0)
        basis = spectral.dct_basis(7, 7, 2, 3)
        planes = np.stack([rng.standard_normal() * 50 * basis + 0.01 * rng.standard_normal((7, 7)) for _ in range(64)])
        assert two_step_search(planes, (7, 7), top_k=1) == [(2, 3)]


class TestFreqVector:
    def test_constant_input_dc_everywhere(self):
        cfg = MCAFConfig(channels=4, n_parts=4, dct_plane=(4, 4), criterion=mcaf.LOW_FREQUENCY,
                         convention=spectral.UNNORMALIZED)
        unit = MultiSpectralAttention(cfg).double()
        # force every part onto the DC component
        unit.basis = mcaf._basis_stack([(0, 0)] * 4, 4, 4, spectral.UNNORMALIZED)
        x = torch.full((4, 4, 4), 2.0, dtype=torch.float64)
        freq = unit.freq_vector(x)
        np.testing.assert_allclose(freq.numpy(), np.full(4, 32.0), atol=1e-12)

    def test_matches_full_dct_oracle(self):
        cfg = MCAFConfig(channels=16, n_parts=4, dct_plane=(8, 8), criterion=mcaf.LOW_FREQUENCY)
        unit = MultiSpectralAttention(cfg).double()
        x = np.random.default_rng(1).standard_normal((16, 8, 8))
        freq = unit.freq_vector(torch.from_numpy(x)).numpy()
        assignments = unit.index_set.assignments
        want = np.empty(16)
        for c in range(16):
            u, v = assignments[c // 4]
            want[c] = spectral.dct2(x[c]).data[u, v]
        np.testing.assert_allclose(freq, want, atol=1e-9)

    def test_nas_equal_alphas_is_uniform_mean(self):
        cands = tuple(zigzag_order(4, 4))
        cfg = MCAFConfig(channels=3, n_parts=3, dct_plane=(4, 4), criterion=mcaf.NAS,
                         nas_candidates=cands)
        unit = MultiSpectralAttention(cfg).double()
        x = np.random.default_rng(2).standard_normal((3, 4, 4))
        freq = unit.freq_vector(torch.from_numpy(x)).detach().numpy()
        per_comp = np.stack([spectral.freq_component(x, c) for c in cands])
        np.testing.assert_allclose(freq, per_comp.mean(axis=0), atol=1e-12)

    def test_linear_in_input(self):
        cfg = MCAFConfig(channels=8, n_parts=8)
        unit = MultiSpectralAttention(cfg).double()
        x = torch.randn(8, 14, 14, dtype=torch.float64)
        f1 = unit.freq_vector(x)
        np.testing.assert_allclose(unit.freq_vector(2.5 * x).numpy(), 2.5 * f1.numpy(), atol=1e-10)

    def test_part_permutation_equivariance(self):
        cfg = MCAFConfig(channels=8, n_parts=4, dct_plane=(5, 5), criterion=mcaf.LOW_FREQUENCY)
        unit = MultiSpectralAttention(cfg).double()
        x = torch.randn(8, 5, 5, dtype=torch.float64)
        base = unit.freq_vector(x).numpy().reshape(4, 2)
        perm = [2, 0, 3, 1]
        unit.basis = unit.basis[perm]
        x_perm = x.reshape(4, 2, 5, 5)[perm].reshape(8, 5, 5)
        permuted = unit.freq_vector(x_perm).numpy().reshape(4, 2)
        np.testing.assert_allclose(permuted, base[perm], atol=1e-12)

    def test_channel_mismatch_raises(self):
        unit = MultiSpectralAttention(MCAFConfig(channels=8, n_parts=8))
        with pytest.raises(ValidationError):
            unit.freq_vector(torch.randn(6, 7, 7))


class TestAttention:
    def test_zero_fc_gives_half(self):
        unit = MultiSpectralAttention(MCAFConfig(channels=8, n_parts=8))
        for p in unit.parameters():
            torch.nn.init.zeros_(p)
        out = unit(torch.randn(8, 9, 9))
        np.testing.assert_allclose(out.detach().numpy(), np.full(8, 0.5), atol=1e-7)

    def test_range_open_interval(self):
        torch.manual_seed(0)
        unit = MultiSpectralAttention(MCAFConfig(channels=16, n_parts=16))
        for _ in range(50):
            out = unit(torch.randn(16, 10, 10)).detach().numpy()
            assert np.all(out > 0.0) and np.all(out < 1.0)

    def test_single_layer_option(self):
        unit = MultiSpectralAttention(MCAFConfig(channels=4, n_parts=4, fc_layers=1))
        assert hasattr(unit, "fc") and not hasattr(unit, "fc1")
        out = unit(torch.randn(4, 7, 7))
        assert out.shape == (4,)

    def test_nas_softmax_sums_to_one(self):
        cfg = MCAFConfig(channels=4, n_parts=4, criterion=mcaf.NAS)
        unit = MultiSpectralAttention(cfg)
        with torch.no_grad():
            unit.nas_alphas.copy_(torch.randn(49) * 5)
        assert abs(unit.nas_weights().sum().item() - 1.0) < 1e-6

    def test_wrong_freq_length_raises(self):
        unit = MultiSpectralAttention(MCAFConfig(channels=8, n_parts=8))
        with pytest.raises(ValidationError):
            unit.attention(torch.randn(5))


class TestGradients:
    def test_attention_jacobian_wrt_input_matches_fd(self):
        torch.manual_seed(3)
        cfg = MCAFConfig(channels=8, n_parts=4, dct_plane=(5, 5), criterion=mcaf.LOW_FREQUENCY)
        unit = MultiSpectralAttention(cfg).double()
        x0 = np.random.default_rng(4).standard_normal((8, 5, 5))

        def forward(x):
            with torch.no_grad():
                return unit(torch.from_numpy(x)).numpy()

        jac_fd = finite_difference_jacobian(forward, x0, step=1e-5)
        jac_ad = (
            torch.autograd.functional.jacobian(unit, torch.from_numpy(x0))
            .reshape(8, -1)
            .numpy()
        )
        assert rel_err(jac_ad, jac_fd) < 1e-4

    def test_attention_jacobian_wrt_fc_params_matches_fd(self):
        torch.manual_seed(5)
        unit = MultiSpectralAttention(MCAFConfig(channels=8, n_parts=8)).double()
        freq0 = torch.randn(8, dtype=torch.float64)
        for name, param in unit.named_parameters():
            p0 = param.detach().numpy().copy()

            def forward(values, param=param):
                with torch.no_grad():
                    param.copy_(torch.from_numpy(values))
                    out = unit.attention(freq0).numpy()
                    param.copy_(torch.from_numpy(p0))
                    return out

            jac_fd = finite_difference_jacobian(forward, p0, step=1e-6)
            out = unit.attention(freq0)
            jac_ad = np.stack(
                [
                    torch.autograd.grad(out[i], param, retain_graph=True)[0].numpy().ravel()
                    for i in range(8)
                ]
            )
            assert rel_err(jac_ad, jac_fd) < 1e-4, name

    def test_attention_jacobian_wrt_nas_alphas_matches_fd(self):
        torch.manual_seed(6)
        cfg = MCAFConfig(channels=4, n_parts=4, dct_plane=(4, 4), criterion=mcaf.NAS)
        unit = MultiSpectralAttention(cfg).double()
        with torch.no_grad():
            unit.nas_alphas.copy_(torch.randn(16, dtype=torch.float64))
        x = torch.randn(4, 4, 4, dtype=torch.float64)
        a0 = unit.nas_alphas.detach().numpy().copy()

        def forward(alphas):
            with torch.no_grad():
                unit.nas_alphas.copy_(torch.from_numpy(alphas))
                out = unit(x).numpy()
                unit.nas_alphas.copy_(torch.from_numpy(a0))
                return out

        jac_fd = finite_difference_jacobian(forward, a0, step=1e-6)
        out = unit(x)
        jac_ad = np.stack(
            [torch.autograd.grad(out[i], unit.nas_alphas, retain_graph=True)[0].numpy() for i in range(4)]
        )
        assert rel_err(jac_ad, jac_fd) < 1e-4


class TestApply:
    def test_unit_gates_identity(self):
        x = torch.randn(4, 6, 6)
        out = apply_channel_attention(x, torch.ones(4))
        np.testing.assert_array_equal(out.numpy(), x.numpy())

    def test_half_gates_halve(self):
        x = torch.randn(3, 5, 5)
        out = apply_channel_attention(x, torch.full((3,), 0.5))
        np.testing.assert_allclose(out.numpy(), 0.5 * x.numpy(), atol=1e-7)

    def test_constant_gates_preserve_channel_argmax(self):
        x = torch.randn(6, 8, 8)
        out = apply_channel_attention(x, torch.full((6,), 0.3))
        norms = lambda t: t.reshape(6, -1).norm(dim=1)
        assert norms(x).argmax() == norms(out).argmax()

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValidationError):
            apply_channel_attention(torch.randn(4, 5, 5), torch.ones(3))

    def test_batched(self):
        x = torch.randn(2, 4, 5, 5)
        w = torch.rand(2, 4)
        out = apply_channel_attention(x, w)
        np.testing.assert_allclose(out.numpy(), (x * w[:, :, None, None]).numpy())
