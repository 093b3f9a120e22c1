import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.distance import pdist

from cogs.core import NumericalFailure
from cogs.distributions import GeneratorConfig, sample_batch
from cogs.vae import (
    SequenceVAE,
    VaeConfig,
    VaeTrainConfig,
    canonicalize_batch,
    canonicalize_sequence,
    decode_latents,
    gaussian_kl,
    kl_schedule,
    latent_pca_projection,
    load_vae,
    pca_2d,
    sample_instances,
    sample_points,
    save_vae,
    train_vae,
    vae_elbo_loss,
    vae_from_bytes,
    vae_to_bytes,
)

TINY = VaeConfig(n_points=6, latent_dim=3, hidden=5)


class TestCanonical:
    def test_sorts_by_x(self):
        np.testing.assert_array_equal(canonicalize_sequence([[0.9, 0.1], [0.1, 0.9]]), [[0.1, 0.9], [0.9, 0.1]])

    def test_sorted_unchanged(self):
        pts = np.array([[0.1, 0.5], [0.2, 0.1], [0.7, 0.7]])
        np.testing.assert_array_equal(canonicalize_sequence(pts), pts)

    def test_tie_on_x(self):
        np.testing.assert_array_equal(canonicalize_sequence([[0.5, 0.8], [0.5, 0.2]]), [[0.5, 0.2], [0.5, 0.8]])

    @settings(max_examples=60)
    @given(st.integers(2, 30).flatmap(lambda n: arrays(np.float64, (n, 2), elements=st.sampled_from([0.0, 0.25, 0.5, 1.0]) | st.floats(0, 1))))
    def test_idempotent_permutation(self, pts):
        once = canonicalize_sequence(pts)
        np.testing.assert_array_equal(canonicalize_sequence(once), once)
        key = lambda a: sorted(map(tuple, a.tolist()))
        assert key(once) == key(pts)
        assert np.all(np.diff(once[:, 0]) >= 0)


class TestKl:
    def test_prior_match(self):
        assert torch.all(gaussian_kl(torch.zeros(4), torch.zeros(4)) == 0)

    def test_unit_mean(self):
        torch.testing.assert_close(gaussian_kl(torch.ones(5), torch.zeros(5)), torch.full((5,), 0.5))

    @settings(max_examples=100)
    @given(st.floats(-10, 10), st.floats(-10, 10))
    def test_nonnegative(self, mu, logvar):
        assert gaussian_kl(torch.tensor([mu], dtype=torch.float64), torch.tensor([logvar], dtype=torch.float64)).item() >= -1e-12

    def test_schedule(self):
        assert kl_schedule(0, 10, 1.0, 0.2) == 0.0
        assert kl_schedule(1, 10, 1.0, 0.2) == 0.5
        assert kl_schedule(2, 10, 1.0, 0.2) == 1.0
        assert kl_schedule(9, 10, 1e-4, 0.2) == 1e-4


class TestElbo:
    def test_identity_decoder(self, monkeypatch):
        m = SequenceVAE(TINY, seed=0)
        monkeypatch.setattr(m, "reconstruct", lambda x, z, *a, **k: x)
        x = canonicalize_batch(np.random.default_rng(0).random((3, 6, 2)))
        terms = vae_elbo_loss(m, x, kl_weight=0.0, generator=torch.Generator().manual_seed(0))
        assert terms.loss.item() == 0.0 and terms.reconstruction.item() == 0.0

    def test_nonfinite(self):
        m = SequenceVAE(TINY, seed=0)
        x = np.full((2, 6, 2), np.nan)
        with pytest.raises(NumericalFailure):
            vae_elbo_loss(m, x, 1.0, torch.Generator().manual_seed(0))

    @pytest.mark.parametrize("dropout", [0.0, 0.5])
    def test_finite_differences(self, dropout):
        m = SequenceVAE(TINY, seed=1, dtype=torch.float64)
        x = torch.as_tensor(canonicalize_batch(np.random.default_rng(2).random((4, 6, 2))), dtype=torch.float64)

        def loss():
            return vae_elbo_loss(m, x, 0.3, torch.Generator().manual_seed(5), dropout).loss

        m.zero_grad()
        loss().backward()
        params = list(m.parameters())
        rng = np.random.default_rng(0)
        sizes = np.array([p.numel() for p in params])
        eps = 1e-6
        for _ in range(20):
            k = rng.choice(len(params), p=sizes / sizes.sum())
            j = int(rng.integers(params[k].numel()))
            flat = params[k].data.view(-1)
            orig = flat[j].item()
            with torch.no_grad():
                flat[j] = orig + eps
                up = loss().item()
                flat[j] = orig - eps
                down = loss().item()
                flat[j] = orig
            fd = (up - down) / (2 * eps)
            a = params[k].grad.view(-1)[j].item()
            assert abs(a - fd) <= 1e-3 * max(abs(a), abs(fd)) + 1e-9, (k, j, a, fd)


class TestDecodeRange:
    def test_extreme_latents(self):
        m = SequenceVAE(VaeConfig(n_points=10, latent_dim=8, hidden=16), seed=0)
        rng = np.random.default_rng(0)
        z = rng.normal(size=(500, 8))
        z *= rng.uniform(0, 100, size=(500, 1)) / np.linalg.norm(z, axis=1, keepdims=True)
        out = decode_latents(m, z)
        assert out.shape == (500, 10, 2)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_sample_instances(self):
        m = SequenceVAE(VaeConfig(n_points=12, latent_dim=4, hidden=8), seed=0)
        insts = sample_instances(m, 64, seed=3)
        assert len(insts) == 64 and all(i.n == 12 for i in insts)
        assert np.array_equal(sample_points(m, 64, 3), sample_points(m, 64, 3))

    def test_zero_latent_deterministic(self):
        m = SequenceVAE(VaeConfig(n_points=12, latent_dim=4, hidden=8), seed=0)
        z = np.zeros((2, 4))
        a = decode_latents(m, z)
        assert np.array_equal(a[0], a[1])
        assert np.array_equal(a, decode_latents(m, z))


class TestTraining:
    def test_zero_epochs(self):
        m = SequenceVAE(TINY, seed=0)
        before = vae_to_bytes(m)
        _, hist = train_vae(m, GeneratorConfig(kind="clustered_uniform", n=6), 0, 10, 0)
        assert hist == [] and vae_to_bytes(m) == before

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            train_vae(SequenceVAE(TINY), GeneratorConfig(kind="clustered_uniform", n=7), 1, 10, 0)

    def test_deterministic_history(self):
        tc = VaeTrainConfig(samples_per_epoch=60)
        runs = []
        for _ in range(2):
            m = SequenceVAE(TINY, seed=0)
            _, hist = train_vae(m, GeneratorConfig(kind="clustered_uniform", n=6), 3, 20, 11, tc)
            runs.append((hist, vae_to_bytes(m)))
        assert runs[0] == runs[1]

    def test_reconstruction_improves(self):
        m = SequenceVAE(VaeConfig(n_points=20, latent_dim=32, hidden=32), seed=0)
        _, hist = train_vae(m, GeneratorConfig(kind="clustered_uniform", n=20), 30, 100, 0, VaeTrainConfig(samples_per_epoch=2000))
        rec = np.array([h["reconstruction"] for h in hist])
        assert np.mean(rec[-5:]) < rec[0]
        assert all(h["kl"] >= 0 for h in hist)


class TestPca:
    def test_two_dimensional_identity(self):
        X = np.random.default_rng(0).normal(size=(40, 2)) * [3, 1]
        coords, ratios = pca_2d(X)
        np.testing.assert_allclose(pdist(coords), pdist(X), atol=1e-6)
        assert ratios.sum() == pytest.approx(1.0)

    def test_ratios_descending(self):
        _, ratios = pca_2d(np.random.default_rng(1).normal(size=(100, 32)) * np.linspace(3, 0.1, 32))
        assert ratios[0] >= ratios[1] and ratios.sum() <= 1.0

    def test_too_few(self):
        with pytest.raises(ValueError):
            pca_2d(np.zeros((2, 4)))

    def test_projection_labels(self):
        m = SequenceVAE(VaeConfig(n_points=10, latent_dim=4, hidden=8), seed=0)
        gen = GeneratorConfig(kind="clustered_uniform", n=10)
        proj = latent_pca_projection(m, {"a": sample_batch(gen, 5, 0), "b": sample_points(m, 7, 1)})
        assert proj.coords["a"].shape == (5, 2) and proj.coords["b"].shape == (7, 2)
        assert proj.explained_variance_ratio[0] >= proj.explained_variance_ratio[1]
        with pytest.raises(ValueError):
            latent_pca_projection(m, {"a": sample_batch(gen, 1, 0), "b": sample_batch(gen, 1, 1)})


class TestCheckpoint:
    def test_byte_stable(self, tmp_path):
        m = SequenceVAE(TINY, seed=4)
        save_vae(tmp_path / "a.ckpt", m, {"seed": 4})
        m2, header = load_vae(tmp_path / "a.ckpt")
        save_vae(tmp_path / "b.ckpt", m2, header["meta"])
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        z = np.random.default_rng(0).normal(size=(3, 3))
        assert np.array_equal(decode_latents(m, z), decode_latents(m2, z))

    def test_wrong_kind(self):
        from cogs.policy import AttentionPolicy, PolicyConfig, policy_to_bytes

        with pytest.raises(ValueError):
            vae_from_bytes(policy_to_bytes(AttentionPolicy(PolicyConfig.tiny())))
