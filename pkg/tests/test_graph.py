import json

import numpy as np
import pytest

from bsnas.errors import ConfigError
from bsnas.graph import OperationGraph, full_graph


def test_fresh_graph_all_alive(small_space):
    graph = full_graph(small_space)
    for layer in range(small_space.n_layers):
        assert graph.alive_count(layer) == small_space.op_count(layer) == 8
    assert graph.retention_bound == 8
    assert graph.check_invariants() == []


def test_feasible_channels_require_every_layer(small_space):
    graph = full_graph(small_space)
    # kill width 8 at one layer of cluster 0 only -> width 8 infeasible
    for k, t in small_space.layer_choices(0).pairs():
        graph.alive[0, small_space.op_index(0, k, t, 8)] = False
    graph = OperationGraph(small_space, alive=graph.alive)
    assert graph.feasible_channels(0) == (16,)
    assert graph.feasible_channels(1) == (16, 24)


def test_cardinality_counts_alive_combinations(small_space):
    graph = full_graph(small_space)
    assert graph.cardinality() == 1024
    # kill one (k,t) pair under one width at one layer
    graph.alive[0, small_space.op_index(0, 3, 3, 8)] = False
    graph = OperationGraph(small_space, alive=graph.alive)
    # cluster 0 combos: width 8 -> 3*4, width 16 -> 4*4; cluster 1 unchanged
    assert graph.cardinality() == (3 * 4 + 4 * 4) * (4 * 4 + 4 * 4)


def test_usage_recording(small_space):
    graph = full_graph(small_space)
    rows = np.zeros((3, small_space.n_layers), dtype=np.int64)
    rows[1, 0] = 2
    graph.record_usage(rows)
    assert graph.usage[0, 0] == 2
    assert graph.usage[0, 2] == 1
    assert graph.usage[1, 0] == 3


def test_json_round_trip(small_space):
    graph = full_graph(small_space)
    graph.alive[1, small_space.op_index(1, 5, 6, 16)] = False
    graph.usage[2, 3] = 17
    graph.step_index = 2
    graph.retention_bound = 5
    data = json.loads(json.dumps(graph.to_json_dict()))
    rebuilt = OperationGraph.from_json_dict(small_space, data)
    assert np.array_equal(rebuilt.alive, graph.alive)
    assert np.array_equal(rebuilt.usage, graph.usage)
    assert rebuilt.step_index == 2
    assert rebuilt.retention_bound == 5


def test_json_layer_mismatch(small_space, twelve_arch_space):
    data = full_graph(twelve_arch_space).to_json_dict()
    with pytest.raises(ConfigError):
        OperationGraph.from_json_dict(small_space, data)


def test_invariant_reporting(small_space):
    graph = full_graph(small_space)
    graph.alive[3, :] = False
    graph = OperationGraph.__new__(OperationGraph)  # bypass ctor revalidation
    graph.space = small_space
    graph.alive = np.zeros((small_space.n_layers, small_space.max_op_count), bool)
    graph.usage = np.zeros_like(graph.alive, dtype=np.int64)
    graph.step_index = 0
    graph.retention_bound = 0
    graph._pair_cache = {}
    problems = graph.check_invariants()
    assert any("layer 0" in p for p in problems)
    assert any("cluster 0" in p for p in problems)
