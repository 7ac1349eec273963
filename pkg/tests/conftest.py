import pytest
from hypothesis import HealthCheck, settings

from bsnas.space import ChoiceSets, ClusterSpec, FixedLayer, SearchSpaceSpec

settings.register_profile(
    "ci",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


def two_cluster_space(blocks=(2, 2), kernels=(3, 5), expansions=(3, 6)) -> SearchSpaceSpec:
    """Small valid space: 32x32 input, two clusters, widths (8,16) / (16,24)."""
    clusters = (
        ClusterSpec(blocks[0], 1, ChoiceSets(kernels, expansions, (8, 16)), 16),
        ClusterSpec(blocks[1], 2, ChoiceSets(kernels, expansions, (16, 24)), 16),
    )
    stem = (FixedLayer("conv2d", 3, 3, 16, 2),)
    tail = (
        FixedLayer("conv2d", 1, 24, 64, 1),
        FixedLayer("avgpool", 8, 64, 64, 1),
        FixedLayer("conv2d", 1, 64, 10, 1),
    )
    return SearchSpaceSpec(stem=stem, clusters=clusters, tail=tail, input_size=32, n_class=10)


@pytest.fixture(scope="session")
def small_space():
    """1024 architectures: 4 searchable layers x 4 pairs, 2x2 widths."""
    return two_cluster_space()


@pytest.fixture(scope="session")
def evo_space():
    """256 architectures; small enough to brute-force quickly."""
    return two_cluster_space(blocks=(2, 1))


@pytest.fixture(scope="session")
def twelve_arch_space():
    """Exactly 12 architectures with equal-size choice sets everywhere,
    so factorized sampling is globally uniform."""
    cluster = ClusterSpec(2, 2, ChoiceSets((3,), (3, 6), (8, 16, 24)), 16)
    stem = (FixedLayer("conv2d", 3, 3, 8, 2),)
    tail = (
        FixedLayer("conv2d", 1, 24, 32, 1),
        FixedLayer("avgpool", 8, 32, 32, 1),
        FixedLayer("conv2d", 1, 32, 10, 1),
    )
    return SearchSpaceSpec(stem=stem, clusters=(cluster,), tail=tail, input_size=32, n_class=10)
