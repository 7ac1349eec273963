import numpy as np
import pytest
from hypothesis import given, strategies as st

from bsnas.cost import (
    block_cost,
    conv_params,
    depthwise_params,
    flops,
    flops_bounds,
    max_architecture,
    min_architecture,
    params,
)
from bsnas.errors import ValidationError
from bsnas.space import Architecture, build_default_space, random_architecture

# golden endpoint values produced by this cost model on the default space;
# they sit within 5% of the published 209M / 812M figures
GOLDEN_MIN_MACS = 199_964_416
GOLDEN_MAX_MACS = 773_403_968


@pytest.fixture(scope="module")
def space():
    return build_default_space()


def oracle_conv_macs(resolution, c_in, c_out, kernel, stride, depthwise=False):
    """Position-iteration MAC counter: slide the kernel over the padded
    input, accumulating taps per output position. Independent of the closed
    forms in bsnas.cost."""
    pad = kernel // 2
    padded = resolution + 2 * pad
    macs = 0
    oy = 0
    while oy + kernel <= padded:
        ox = 0
        while ox + kernel <= padded:
            taps = 0
            for _ky in range(kernel):
                for _kx in range(kernel):
                    taps += 1
            if depthwise:
                macs += taps * c_in  # one filter per channel
            else:
                macs += taps * c_in * c_out
            ox += stride
        oy += stride
    return macs


def oracle_block_macs(resolution, c_in, c_out, kernel, expansion, stride):
    hidden = expansion * c_in
    macs = 0
    if hidden != c_in:
        macs += oracle_conv_macs(resolution, c_in, hidden, 1, 1)
    macs += oracle_conv_macs(resolution, hidden, hidden, kernel, stride, depthwise=True)
    out_res = 0
    pad = kernel // 2
    pos = 0
    while pos + kernel <= resolution + 2 * pad:
        out_res += 1
        pos += stride
    macs += oracle_conv_macs(out_res, hidden, c_out, 1, 1)
    return macs


class TestSingleLayers:
    def test_stem_conv(self, space):
        arch = min_architecture(space)
        breakdown = flops(space, arch)
        assert breakdown.per_layer[0].label.startswith("stem[0]")
        assert breakdown.per_layer[0].macs == 10_838_016
        assert breakdown.per_layer[0].macs == oracle_conv_macs(224, 3, 32, 3, 2)

    def test_mid_block_example(self, space):
        # layer 2 (cluster 1 spring) released at width 40: 56^2 x 40 input,
        # k=3, t=3, stride 1, output 40
        genes = [(3, 6)] * 19
        genes[1] = (3, 3)
        arch = Architecture(tuple(genes), (40, 40, 64, 96, 160, 240), mode="released")
        entry = flops(space, arch).per_layer[3]  # stem, stem, block1, block2
        assert entry.label.startswith("block[2]")
        assert entry.macs == 33_492_480
        assert entry.macs == 15_052_800 + 3_386_880 + 15_052_800

    def test_block_components(self):
        macs, _ = block_cost(56, 40, 40, 3, 3, 1)
        assert macs == 33_492_480

    def test_pointwise_params(self):
        assert conv_params(320, 1280, 1) == 409_600

    def test_depthwise_params(self):
        assert depthwise_params(120, 3) == 1_080


class TestOracleAgreement:
    @pytest.mark.parametrize(
        "resolution,c_in,c_out,kernel,stride,depthwise",
        [
            (224, 3, 32, 3, 2, False),   # stem conv
            (112, 32, 32, 3, 1, True),   # stem separable depthwise part
            (112, 32, 16, 1, 1, False),  # stem separable pointwise part
            (7, 320, 1280, 1, 1, False), # tail conv
            (1, 1280, 1000, 1, 1, False),# classifier
        ],
    )
    def test_fixed_convs(self, resolution, c_in, c_out, kernel, stride, depthwise):
        from bsnas.cost import conv_macs, conv_output_size, depthwise_macs

        out_res = conv_output_size(resolution, kernel, stride)
        if depthwise:
            got = depthwise_macs(out_res, c_in, kernel)
        else:
            got = conv_macs(out_res, c_in, c_out, kernel)
        assert got == oracle_conv_macs(resolution, c_in, c_out, kernel, stride, depthwise)

    @pytest.mark.parametrize(
        "resolution,c_in,c_out,kernel,expansion,stride",
        [
            (112, 16, 24, 3, 3, 2),  # cluster 1 head, minimal genes
            (56, 40, 40, 3, 3, 1),
            (56, 40, 56, 5, 6, 2),   # k5 strided
            (14, 96, 96, 7, 6, 1),   # k7
            (7, 240, 240, 7, 6, 1),
        ],
    )
    def test_blocks(self, resolution, c_in, c_out, kernel, expansion, stride):
        got, _ = block_cost(resolution, c_in, c_out, kernel, expansion, stride)
        assert got == oracle_block_macs(resolution, c_in, c_out, kernel, expansion, stride)


class TestBounds:
    def test_published_range(self, space):
        lo, hi = flops_bounds(space)
        assert lo == GOLDEN_MIN_MACS
        assert hi == GOLDEN_MAX_MACS
        assert abs(lo - 209e6) / 209e6 < 0.05
        assert abs(hi - 812e6) / 812e6 < 0.05

    def test_single_arch_space_bounds(self, twelve_arch_space):
        # force a one-architecture space by collapsing choices
        from bsnas.space import ChoiceSets, ClusterSpec, FixedLayer, SearchSpaceSpec

        cluster = ClusterSpec(1, 1, ChoiceSets((3,), (3,), (8,)), 16)
        stem = (FixedLayer("conv2d", 3, 3, 8, 2),)
        tail = (
            FixedLayer("conv2d", 1, 8, 32, 1),
            FixedLayer("avgpool", 16, 32, 32, 1),
            FixedLayer("conv2d", 1, 32, 10, 1),
        )
        one = SearchSpaceSpec(stem=stem, clusters=(cluster,), tail=tail, input_size=32, n_class=10)
        lo, hi = flops_bounds(one)
        assert lo == hi

    def test_bounds_dominate_samples(self, space):
        lo, hi = flops_bounds(space)
        rng = np.random.default_rng(7)
        for _ in range(300):
            arch = random_architecture(space, rng)
            released = Architecture(arch.layer_genes, arch.cluster_genes, mode="released")
            total = flops(space, released).total_macs
            assert lo <= total <= hi


class TestModeAndMonotonicity:
    def test_released_not_above_supernet(self, space):
        rng = np.random.default_rng(3)
        for _ in range(50):
            arch = random_architecture(space, rng)
            released = Architecture(arch.layer_genes, arch.cluster_genes, mode="released")
            assert flops(space, released).total_macs <= flops(space, arch).total_macs

    def test_equality_iff_all_max(self, space):
        top = max_architecture(space, mode="supernet")
        released = max_architecture(space, mode="released")
        assert flops(space, top).total_macs == flops(space, released).total_macs
        low = min_architecture(space, mode="supernet")
        low_released = min_architecture(space, mode="released")
        assert flops(space, low_released).total_macs < flops(space, low).total_macs

    @given(seed=st.integers(0, 10_000))
    def test_single_gene_bump_never_decreases(self, seed):
        space = build_default_space()
        rng = np.random.default_rng(seed)
        arch = random_architecture(space, rng)
        released = Architecture(arch.layer_genes, arch.cluster_genes, mode="released")
        base = flops(space, released).total_macs
        layer = int(rng.integers(space.n_layers))
        cs = space.layer_choices(layer)
        k, t = released.layer_genes[layer]
        bumped = list(released.layer_genes)
        if k != cs.kernel_sizes[-1]:
            bumped[layer] = (cs.kernel_sizes[cs.kernel_sizes.index(k) + 1], t)
        else:
            bumped[layer] = (k, cs.expansion_ratios[-1])
        higher = Architecture(tuple(bumped), released.cluster_genes, mode="released")
        assert flops(space, higher).total_macs >= base

    def test_channel_bump_never_decreases(self, space):
        rng = np.random.default_rng(11)
        for _ in range(30):
            arch = random_architecture(space, rng)
            released = Architecture(arch.layer_genes, arch.cluster_genes, mode="released")
            base = flops(space, released).total_macs
            ci = int(rng.integers(space.n_clusters))
            choices = space.clusters[ci].channel_choices
            idx = choices.index(released.cluster_genes[ci])
            if idx == len(choices) - 1:
                continue
            channels = list(released.cluster_genes)
            channels[ci] = choices[idx + 1]
            wider = Architecture(released.layer_genes, tuple(channels), mode="released")
            assert flops(space, wider).total_macs >= base


class TestParams:
    def test_max_released_under_8m(self, space):
        assert params(space, max_architecture(space)) <= 8_000_000

    def test_invalid_arch_raises(self, space):
        bad = Architecture(((4, 6),) * 19, (24, 40, 64, 96, 160, 240))
        with pytest.raises(ValidationError):
            flops(space, bad)

    def test_breakdown_totals(self, space):
        breakdown = flops(space, min_architecture(space))
        assert breakdown.total_macs == sum(e.macs for e in breakdown.per_layer)
        assert breakdown.total_params == sum(e.params for e in breakdown.per_layer)
        assert all(e.macs >= 0 and e.params >= 0 for e in breakdown.per_layer)
