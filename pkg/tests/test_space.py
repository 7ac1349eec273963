import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bsnas.errors import ConfigError, InfeasibleError
from bsnas.graph import OperationGraph, full_graph
from bsnas.space import (
    Architecture,
    ChoiceSets,
    arch_from_string,
    build_default_space,
    cardinality,
    load_space,
    random_architecture,
    release_spring_blocks,
    space_from_json_dict,
    space_to_json_dict,
    validate,
)


@pytest.fixture(scope="module")
def default_space():
    return build_default_space()


class TestDefaultSpace:
    def test_layer_count(self, default_space):
        assert default_space.n_layers == 19
        assert default_space.n_clusters == 6
        assert [c.block_count for c in default_space.clusters] == [2, 4, 4, 4, 4, 1]

    def test_cluster_channel_choices(self, default_space):
        assert default_space.clusters[4].channel_choices == (160, 192, 224)
        assert default_space.clusters[0].channel_choices == (24, 32, 40)
        assert default_space.clusters[5].channel_choices == (240, 280, 320)

    def test_cluster_head_inputs(self, default_space):
        # cluster 1 head consumes the stem separable output
        assert default_space.cluster_input_channels(0) == 16
        # later heads consume previous spring outputs (cluster maxima)
        assert default_space.cluster_input_channels(1) == 40
        assert default_space.cluster_input_channels(5) == 224

    def test_resolutions(self, default_space):
        assert [c.input_resolution for c in default_space.clusters] == [112, 56, 28, 14, 14, 7]

    def test_strides(self, default_space):
        assert [c.stride for c in default_space.clusters] == [2, 2, 2, 1, 2, 1]

    def test_spring_layers(self, default_space):
        springs = [l for l in range(19) if default_space.is_spring(l)]
        assert springs == [1, 5, 9, 13, 17, 18]
        heads = [l for l in range(19) if default_space.is_cluster_head(l)]
        assert heads == [0, 2, 6, 10, 14, 18]


class TestCardinality:
    def test_default_exact(self, default_space):
        assert cardinality(default_space) == 444_223_250_467_651_584
        assert cardinality(default_space) == 3**6 * 6**19

    def test_single_choice_space(self):
        space = load_space(
            {
                "input_size": 32,
                "n_class": 10,
                "rows": [
                    {"operator": "conv2d", "k": 3, "c": 8, "s": 2},
                    {"operator": "bottleneck", "blocks": 1, "k": [3], "t": [3], "c": [8], "s": 1},
                    {"operator": "conv2d", "k": 1, "c": 32, "s": 1},
                    {"operator": "avgpool", "k": 16},
                    {"operator": "conv2d", "k": 1, "c": "n_class", "s": 1},
                ],
            }
        )
        assert cardinality(space) == 1

    def test_twelve(self, twelve_arch_space):
        assert cardinality(twelve_arch_space) == 12


class TestChoiceSets:
    def test_rejects_unordered(self):
        with pytest.raises(ConfigError):
            ChoiceSets((5, 3), (3, 6), (8, 16))

    def test_rejects_duplicates(self):
        with pytest.raises(ConfigError):
            ChoiceSets((3, 3), (3, 6), (8, 16))

    def test_rejects_even_kernels(self):
        with pytest.raises(ConfigError):
            ChoiceSets((4,), (3,), (8,))

    def test_channel_quantum(self):
        with pytest.raises(ConfigError):
            ChoiceSets((3,), (3,), (12,))  # 12 % 8 != 0
        ChoiceSets((3,), (3,), (12,), channel_quantum=4)

    def test_pairs_canonical_order(self):
        cs = ChoiceSets((3, 5), (3, 6), (8,))
        assert cs.pairs() == ((3, 3), (3, 6), (5, 3), (5, 6))


class TestValidate:
    def test_valid_arch(self, default_space):
        arch = Architecture(((3, 6),) * 19, (24, 40, 64, 96, 160, 240))
        assert validate(default_space, arch) == []

    def test_kernel_out_of_set(self, default_space):
        genes = [(3, 6)] * 19
        genes[3] = (4, 6)
        arch = Architecture(tuple(genes), (24, 40, 64, 96, 160, 240))
        violations = validate(default_space, arch)
        assert any("kernel 4" in v and "layer 3" in v for v in violations)

    def test_length_mismatch(self, default_space):
        arch = Architecture(((3, 6),) * 18, (24, 40, 64, 96, 160, 240))
        assert any("length mismatch" in v for v in validate(default_space, arch))

    def test_bad_channel(self, default_space):
        arch = Architecture(((3, 6),) * 19, (25, 40, 64, 96, 160, 240))
        assert any("channel 25" in v for v in validate(default_space, arch))

    def test_random_archs_valid(self, default_space):
        rng = np.random.default_rng(0)
        for _ in range(50):
            assert validate(default_space, random_architecture(default_space, rng)) == []


class TestRandomArchitecture:
    def test_seeded_determinism(self, default_space):
        a = random_architecture(default_space, np.random.default_rng(42))
        b = random_architecture(default_space, np.random.default_rng(42))
        assert a == b

    def test_single_alive_op_is_forced(self, small_space):
        graph = full_graph(small_space)
        alive = np.zeros_like(graph.alive)
        for layer in range(small_space.n_layers):
            alive[layer, small_space.op_index(layer, 3, 6, 16)] = True
        graph = OperationGraph(small_space, alive=alive)
        rng = np.random.default_rng(5)
        for _ in range(10):
            arch = random_architecture(small_space, rng, alive=graph)
            assert arch.cluster_genes == (16, 16)
            assert all(g == (3, 6) for g in arch.layer_genes)

    def test_infeasible_graph_rejected(self, small_space):
        graph = full_graph(small_space)
        graph.alive[0, :] = False
        with pytest.raises(InfeasibleError):
            random_architecture(small_space, np.random.default_rng(0), alive=graph)

    def test_uniform_over_twelve_archs(self, twelve_arch_space):
        # frequency of each architecture within 4 sigma of uniform
        rng = np.random.default_rng(123)
        n = 10_000
        counts = {}
        for _ in range(n):
            arch = random_architecture(twelve_arch_space, rng)
            counts[arch.canonical] = counts.get(arch.canonical, 0) + 1
        assert len(counts) == 12
        p = 1 / 12
        sigma = (n * p * (1 - p)) ** 0.5
        for count in counts.values():
            assert abs(count - n * p) < 4 * sigma

    def test_never_emits_dead_op(self, small_space):
        rng = np.random.default_rng(9)
        graph = full_graph(small_space)
        # kill a few ops but keep the graph feasible
        graph.alive[0, small_space.op_index(0, 3, 3, 8)] = False
        graph.alive[2, small_space.op_index(2, 5, 6, 24)] = False
        assert graph.check_invariants() == []
        graph = OperationGraph(small_space, alive=graph.alive)
        for _ in range(2000):
            arch = random_architecture(small_space, rng, alive=graph)
            for layer, (k, t) in enumerate(arch.layer_genes):
                channel = arch.cluster_genes[small_space.cluster_of_layer(layer)]
                assert graph.is_alive(layer, k, t, channel)


class TestRelease:
    def test_release_changes_spring_output(self, default_space):
        arch = Architecture(((3, 6),) * 19, (24, 40, 64, 96, 160, 240))
        released = release_spring_blocks(default_space, arch)
        assert released.mode == "released"
        assert released.layer_genes == arch.layer_genes
        assert released.cluster_genes == arch.cluster_genes
        from bsnas.space import layer_io_channels

        assert layer_io_channels(default_space, arch, 1)[1] == 40  # supernet spring
        assert layer_io_channels(default_space, released, 1)[1] == 24

    def test_idempotent(self, default_space):
        arch = Architecture(((5, 3),) * 19, (32, 48, 72, 112, 192, 280))
        once = release_spring_blocks(default_space, arch)
        assert release_spring_blocks(default_space, once) == once

    def test_max_channels_identical_io(self, default_space):
        arch = Architecture(((3, 6),) * 19, (40, 56, 80, 128, 224, 320))
        released = release_spring_blocks(default_space, arch)
        from bsnas.space import layer_io_channels

        for layer in range(19):
            assert layer_io_channels(default_space, arch, layer) == layer_io_channels(
                default_space, released, layer
            )


arch_strategy = st.builds(
    Architecture,
    layer_genes=st.lists(
        st.tuples(st.sampled_from([3, 5, 7]), st.sampled_from([3, 6])),
        min_size=19,
        max_size=19,
    ).map(tuple),
    cluster_genes=st.tuples(
        st.sampled_from([24, 32, 40]),
        st.sampled_from([40, 48, 56]),
        st.sampled_from([64, 72, 80]),
        st.sampled_from([96, 112, 128]),
        st.sampled_from([160, 192, 224]),
        st.sampled_from([240, 280, 320]),
    ),
)


class TestSerialization:
    @given(arch=arch_strategy)
    def test_string_round_trip(self, arch):
        assert arch_from_string(arch.canonical) == arch

    @given(arch=arch_strategy)
    def test_json_round_trip(self, arch):
        assert Architecture.from_json_dict(json.loads(json.dumps(arch.to_json_dict()))) == arch

    def test_canonical_format(self):
        arch = Architecture(((3, 6), (5, 3)), (24,))
        assert arch.canonical == "k3t6|k5t3#c24"

    def test_bad_string(self):
        with pytest.raises(ConfigError):
            arch_from_string("k3t6|nonsense#c24")

    def test_space_json_round_trip(self, default_space):
        data = space_to_json_dict(default_space)
        rebuilt = space_from_json_dict(json.loads(json.dumps(data)))
        assert rebuilt == default_space

    def test_space_table_columns(self, default_space):
        rows = space_to_json_dict(default_space)["rows"]
        assert rows[0] == {"input": [224, 3], "operator": "conv2d", "k": 3, "c": 32, "s": 2}
        bottlenecks = [r for r in rows if r["operator"] == "bottleneck"]
        assert len(bottlenecks) == 6
        assert bottlenecks[0]["input"] == [112, 16]
        assert bottlenecks[0]["c"] == [24, 32, 40]

    def test_load_space_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_space(str(tmp_path / "nope.json"))

    def test_load_space_bad_resolution(self):
        with pytest.raises(ConfigError):
            space_from_json_dict(
                {
                    "input_size": 32,
                    "rows": [
                        {"operator": "conv2d", "k": 3, "c": 8, "s": 2},
                        {"operator": "frobnicate", "k": 3, "c": 8, "s": 1},
                    ],
                }
            )
