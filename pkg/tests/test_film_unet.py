"""FiLM adapter + epsilon network contracts: identity at init, parameter
partition, modulation math, shape preservation, gradient routing."""

import numpy as np
import pytest

from spotdiff import autodiff as ad
from spotdiff.errors import DimensionError, IntegrityError
from spotdiff.film import (
    AdapterConfig,
    FiLMAdapter,
    GeneProfile,
    film_modulate,
    parameter_count,
    partition_parameters,
)
from spotdiff.unet import EpsNet, EpsNetConfig, MlpEpsConfig, MlpEpsNet


@pytest.fixture(scope="module")
def net():
    """Backbone with non-degenerate weights, as after some pretraining.

    Construction zero-inits the second conv of each block and the output
    head; identity-at-init concerns the adapter only, so the backbone here
    gets small random weights to make every pathway live.
    """
    net = EpsNet(EpsNetConfig(), np.random.default_rng(0))
    rng = np.random.default_rng(100)
    for name, p in net.parameters().items():
        if name.endswith("conv2.w") or name == "head.w":
            p.data[...] = (rng.standard_normal(p.shape) * 0.05).astype(p.dtype)
    return net


@pytest.fixture()
def adapter(net):
    cfg = AdapterConfig(gene_dim=32, embed_dim=16, blocks=net.film_spec())
    return FiLMAdapter(cfg, np.random.default_rng(1))


def random_batch(n=2, seed=3):
    rng = np.random.default_rng(seed)
    x = ad.Tensor(rng.uniform(-1, 1, size=(n, 3, 16, 16)).astype(np.float32))
    t = rng.integers(1, 201, size=n)
    genes = rng.standard_normal((n, 32)).astype(np.float32)
    return x, t, genes


class TestFilmModulate:
    def test_identity(self):
        rng = np.random.default_rng(0)
        h = ad.Tensor(rng.standard_normal((2, 4, 3, 3)).astype(np.float32))
        out = film_modulate(h, ad.Tensor(np.ones(4, np.float32)), ad.Tensor(np.zeros(4, np.float32)))
        np.testing.assert_array_equal(out.data, h.data)

    def test_constant_fill(self):
        h = ad.Tensor(np.random.default_rng(1).standard_normal((1, 2, 2, 2)).astype(np.float32))
        out = film_modulate(h, ad.Tensor(np.zeros(2, np.float32)), ad.Tensor(np.array([3.0, -1.0], np.float32)))
        np.testing.assert_allclose(out.data[0, 0], 3.0)
        np.testing.assert_allclose(out.data[0, 1], -1.0)

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(2)
        h = rng.standard_normal((2, 3, 4, 4))
        gamma = rng.standard_normal((2, 3))
        beta = rng.standard_normal((2, 3))
        out = film_modulate(ad.Tensor(h, dtype=np.float64), ad.Tensor(gamma, dtype=np.float64),
                            ad.Tensor(beta, dtype=np.float64))
        want = np.empty_like(h)
        for n in range(2):
            for c in range(3):
                for i in range(4):
                    for j in range(4):
                        want[n, c, i, j] = gamma[n, c] * h[n, c, i, j] + beta[n, c]
        np.testing.assert_allclose(out.data, want, atol=1e-6)

    def test_width_mismatch(self):
        h = ad.Tensor(np.zeros((1, 4, 2, 2), np.float32))
        with pytest.raises(DimensionError):
            film_modulate(h, ad.Tensor(np.ones(3, np.float32)), ad.Tensor(np.zeros(3, np.float32)))


class TestIdentityAtInit:
    def test_conditional_equals_unconditional_bitwise(self, net, adapter):
        x, t, genes = random_batch()
        cond = net.forward(x, t, film=adapter.film_for(genes, n=2))
        null = net.forward(x, t, film=adapter.film_for(None, n=2))
        bare = net.forward(x, t, film=None)
        np.testing.assert_array_equal(cond.data, null.data)
        np.testing.assert_array_equal(cond.data, bare.data)

    def test_determinism_of_null_path(self, net, adapter):
        x, t, _ = random_batch(seed=7)
        a = net.forward(x, t, film=adapter.film_for(None, n=2))
        b = net.forward(x, t, film=adapter.film_for(None, n=2))
        np.testing.assert_array_equal(a.data, b.data)

    def test_perturbed_gamma_head_breaks_identity(self, net, adapter):
        x, t, genes = random_batch(seed=11)
        name = adapter.cfg.blocks[0][0]
        adapter.params[f"head.{name}.gamma.w"].data[0, 0] = 0.5
        cond = net.forward(x, t, film=adapter.film_for(genes, n=2))
        null = net.forward(x, t, film=adapter.film_for(None, n=2))
        assert not np.array_equal(cond.data, null.data)


class TestShapesAndGradients:
    def test_output_shape_matches_input(self, net):
        for n in (1, 3):
            x, t, _ = random_batch(n=n, seed=n)
            out = net.forward(x, t)
            assert out.shape == x.shape

    def test_gene_length_mismatch(self, net, adapter):
        x, t, _ = random_batch()
        bad = np.zeros((2, 31), np.float32)
        with pytest.raises(DimensionError):
            adapter.film_for(bad, n=2)

    def test_adapter_gets_gradients_backbone_does_not(self, net, adapter):
        x, t, genes = random_batch(seed=5)
        # freeze backbone exactly as the adaptation loop does
        for p in net.parameters().values():
            p.requires_grad = False
        try:
            out = net.forward(x, t, film=adapter.film_for(genes, n=2))
            ad.mean_all(ad.square(out)).backward()
            for name, p in adapter.parameters().items():
                assert p.grad is not None, f"adapter param {name} missing grad"
            for name, p in net.parameters().items():
                assert p.grad is None, f"backbone param {name} unexpectedly has grad"
        finally:
            for p in net.parameters().values():
                p.requires_grad = True

    def test_film_spec_covers_two_coarsest_levels(self, net):
        spec = dict(net.film_spec())
        assert set(spec) == {"enc1.0", "enc2.0", "mid", "dec2.0", "dec1.0"}
        assert spec["mid"] == 64 and spec["enc1.0"] == 32


class TestPartition:
    def test_disjoint_and_exhaustive(self, net, adapter):
        backbone, adapt = partition_parameters(net, adapter)
        assert set(backbone) & set(adapt) == set()
        assert len(backbone) + len(adapt) == len(net.parameters()) + len(adapter.parameters())

    def test_untagged_parameter_rejected(self, net, adapter):
        bad = ad.param(np.zeros(1, np.float32), tag="adapter")
        bad.tag = None
        adapter.params["rogue"] = bad
        with pytest.raises(IntegrityError):
            partition_parameters(net, adapter)

    def test_adapter_parameter_count_closed_form(self, net, adapter):
        cfg = adapter.cfg
        want = cfg.gene_dim * cfg.embed_dim + cfg.embed_dim  # projection
        for _name, width in cfg.blocks:
            want += 2 * (cfg.embed_dim * width + width)  # gamma and beta heads
        assert parameter_count(adapter.parameters()) == want

    def test_backbone_parameter_count_closed_form(self):
        cfg = EpsNetConfig(base_channels=8, channel_mults=(1, 2), groups=4)
        net = EpsNet(cfg, np.random.default_rng(0))

        def res_block(cin, cout, temb):
            n = 2 * cin + 2 * cout            # two norms
            n += cout * cin * 9 + cout        # conv1
            n += temb * cout + cout           # temb proj
            n += cout * cout * 9 + cout       # conv2
            if cin != cout:
                n += cout * cin               # 1x1 skip
            return n

        want = cfg.temb_dim * cfg.temb_dim + cfg.temb_dim
        want *= 2                              # two temb layers
        want += 8 * 3 * 9 + 8                  # stem
        want += res_block(8, 8, cfg.temb_dim)      # enc0
        want += 8 * 8 * 9 + 8                  # down0
        want += res_block(8, 16, cfg.temb_dim)     # enc1
        want += res_block(16, 16, cfg.temb_dim)    # mid
        want += res_block(32, 16, cfg.temb_dim)    # dec1 (16 + skip 16)
        want += res_block(24, 8, cfg.temb_dim)     # dec0 (16 + skip 8)
        want += 2 * 8                          # head norm
        want += 3 * 8 * 9 + 3                  # head conv
        assert parameter_count(net.parameters()) == want


class TestGeneProfile:
    def test_rejects_nonfinite(self):
        with pytest.raises(DimensionError):
            GeneProfile(np.array([1.0, np.nan]))

    def test_d(self):
        assert GeneProfile(np.zeros(5)).d == 5


def test_mlp_eps_net_shapes():
    net = MlpEpsNet(MlpEpsConfig(dim=1), np.random.default_rng(0))
    x = ad.Tensor(np.zeros((4, 1), np.float32))
    out = net.forward(x, [1, 2, 3, 4])
    assert out.shape == (4, 1)
    # zero-init head: output starts at zero
    np.testing.assert_array_equal(out.data, 0.0)
