"""Event-driven simulator: build checks, timing, gating, golden agreement."""

import numpy as np
import pytest

import gen
from factormesh import apps, golden, machine as machine_mod
from factormesh.graph import (TABLE, FactorGraph, FactorNode, VariableNode,
                              expand_all, with_evidence)
from factormesh.image import Capacities, dumps
from factormesh.machine import Machine, MachineError, load_image
from factormesh.mapper import Placement, cluster, compile_graph, emit_image, lower, place

TOL_CELL = 2.0 ** -7
TOL_MESH = 2.0 ** -6


def compiled(graph, mode, grid=(2, 2), seed=0, thresh=None,
             caps=Capacities(), **machine_kw):
    """Compile and reload through the text form so every run covers it."""
    image, report = compile_graph(graph, mode, grid=grid, seed=seed,
                                  thresh=thresh, capacities=caps, epochs=5)
    m = Machine(dumps(image), capacities=caps, **machine_kw)
    return m, report


def unary_graph(p0=0.3, p1=0.7):
    return FactorGraph([VariableNode(0, 2)],
                       [FactorNode(0, (0,), TABLE, (p0, p1))])


def pair_graph():
    # joint [[1, 2], [3, 4]]
    return FactorGraph([VariableNode(0, 2), VariableNode(1, 2)],
                       [FactorNode(0, (0, 1), TABLE, (1.0, 2.0, 3.0, 4.0))])


def belief_err(machine, graph):
    beliefs, _ = machine.read_beliefs()
    state = golden.sum_product(graph, max_iters=gen.flooding_rounds(graph),
                               tol=0.0)
    return max(float(np.max(np.abs(np.asarray(beliefs[v.id]) - state.beliefs[v.id])))
               for v in graph.variables)


# -- small quiescent runs ----------------------------------------------------

def test_fresh_machine_holds_uniform_beliefs():
    m, _ = compiled(pair_graph(), "SUMPROD", grid=(1, 1))
    assert m.var_owner[0].belief == (65535, 65535)
    beliefs, _ = m.read_beliefs()
    assert beliefs[0] == [0.5, 0.5] and beliefs[1] == [0.5, 0.5]


def test_single_unary_converges_fast_and_close():
    m, report = compiled(unary_graph(), "SUMPROD", grid=(1, 1))
    assert report["clusters"] == 1
    stats, quiescent = machine_mod.run_until_quiescent(m)
    assert quiescent and stats.cycles < 100
    beliefs, _ = m.read_beliefs()
    assert max(abs(beliefs[0][0] - 0.3), abs(beliefs[0][1] - 0.7)) < TOL_CELL


def test_single_cell_tracks_golden_sum_product():
    hits = 0
    for seed in range(40):
        graph = gen.random_tree_graph(seed, n_lo=2, n_hi=4)
        m, report = compiled(graph, "SUMPROD")
        if report["clusters"] != 1:
            continue
        _, quiescent = m.run_until_quiescent()
        assert quiescent
        assert belief_err(m, graph) < TOL_CELL, "seed %d" % seed
        hits += 1
        if hits == 3:
            break
    assert hits == 3


def multi_cell_tree():
    for seed in range(40):
        graph = gen.random_tree_graph(seed)
        if len(graph.variables) >= 7:
            return graph
    raise AssertionError("no tree seed large enough")


def test_mesh_run_tracks_golden_and_verifies():
    graph = multi_cell_tree()
    caps = Capacities(var_slots=2)
    m, report = compiled(graph, "SUMPROD", grid=(4, 4), thresh=1, caps=caps)
    assert report["clusters"] >= 2
    stats, quiescent = m.run_until_quiescent(50000)
    assert quiescent
    assert belief_err(m, graph) < TOL_MESH
    drift = m.verify_quiescent()
    assert drift["local"] == 0 and drift["remote"] == 0
    assert stats.packets >= report["clusters"] - 1
    assert stats.hops >= stats.packets


def test_evidence_clamps_and_conditions():
    graph = with_evidence(pair_graph(), {1: 0})
    m, _ = compiled(graph, "SUMPROD", grid=(1, 1), trace=True)
    m.run_until_quiescent()
    beliefs, assignment = m.read_beliefs()
    assert beliefs[1] == [1.0, 0.0]
    # P(v0 | v1=0) = [1, 3] / 4
    assert abs(beliefs[0][0] - 0.25) < TOL_CELL
    assert assignment[0] == 1 and assignment[1] == 0
    assert any(",CLAMP," in row for row in m.trace)


def test_inject_evidence_reconditions_a_finished_run():
    m, _ = compiled(pair_graph(), "SUMPROD", grid=(1, 1))
    m.run_until_quiescent()
    m.inject_evidence(1, 0, at_time=m.time + 1)
    _, quiescent = m.run_until_quiescent()
    assert quiescent
    beliefs, _ = m.read_beliefs()
    want = golden.exact_marginals(with_evidence(pair_graph(), {1: 0}))
    assert abs(beliefs[0][0] - want[0][0]) < TOL_CELL
    assert beliefs[1] == [1.0, 0.0]
    with pytest.raises(MachineError):
        m.inject_evidence(9, 0)
    with pytest.raises(MachineError):
        m.inject_evidence(0, 5)


def test_minsum_machine_recovers_map_assignment():
    variables = [VariableNode(i, 2) for i in range(3)]
    factors = [FactorNode(0, (0, 1), TABLE, (0.9, 0.1, 0.1, 0.9)),
               FactorNode(1, (1, 2), TABLE, (0.9, 0.1, 0.1, 0.9)),
               FactorNode(2, (0,), TABLE, (0.7, 0.3)),
               FactorNode(3, (2,), TABLE, (0.25, 0.75))]
    graph = FactorGraph(variables, factors)
    m, _ = compiled(graph, "MINSUM", grid=(1, 1))
    _, quiescent = m.run_until_quiescent()
    assert quiescent
    _, assignment = m.read_beliefs()
    want = golden.map_bruteforce(graph)
    assert [assignment[i] for i in range(3)] == want


# -- routing -----------------------------------------------------------------

ROUTE_IMG = """\
FMIMG 1
GRID 3 4
MODE SUMPROD
CELL 0 0
VAR 0 0 2
CELL 2 3
VAR 0 1 2
"""


def test_route_charges_one_cycle_per_link():
    m = load_image(ROUTE_IMG)
    # 3 column hops then 2 row hops
    assert m._route(m.cells[(0, 0)], m.cells[(2, 3)], 0) == 5
    assert m._route(m.cells[(2, 3)], m.cells[(0, 0)], 0) == 5


def test_route_local_port_costs_one_cycle():
    m = load_image(ROUTE_IMG)
    assert m._route(m.cells[(0, 0)], m.cells[(0, 0)], 0) == 1


def test_route_contention_stalls_second_packet():
    m = load_image(ROUTE_IMG)
    first = m._route(m.cells[(0, 0)], m.cells[(2, 3)], 0)
    second = m._route(m.cells[(0, 0)], m.cells[(2, 3)], 0)
    assert (first, second) == (5, 6)
    assert m.stats.peak_link_occupancy == 2


# -- packet gating -----------------------------------------------------------

def test_threshold_gates_packets_monotonically():
    graph = multi_cell_tree()
    caps = Capacities(var_slots=2)
    runs = {}
    for thresh in (0, 256, 65535):
        m, report = compiled(graph, "SUMPROD", grid=(4, 4), thresh=thresh,
                             caps=caps)
        assert report["clusters"] >= 2
        stats, quiescent = m.run_until_quiescent(50000)
        assert quiescent, "thresh %d" % thresh
        runs[thresh] = stats
    assert runs[256].packets <= runs[0].packets
    # full-scale threshold: only the startup flush crosses the mesh
    assert runs[65535].packets == runs[65535].flush_packets
    assert runs[0].flush_packets <= runs[0].packets


# -- determinism -------------------------------------------------------------

def run_traced(graph, mode, **kw):
    m, _ = compiled(graph, mode, trace=True, **kw)
    stats, _ = m.run_until_quiescent(50000)
    beliefs, _ = m.read_beliefs()
    return stats.text(), m.trace_text(), beliefs


def test_reruns_are_byte_identical():
    graph = multi_cell_tree()
    caps = Capacities(var_slots=2)
    a = run_traced(graph, "SUMPROD", grid=(4, 4), thresh=1, caps=caps)
    b = run_traced(graph, "SUMPROD", grid=(4, 4), thresh=1, caps=caps)
    assert a[0] == b[0] and a[1] == b[1] and a[2] == b[2]


def test_trace_surface():
    graph = multi_cell_tree()
    m, _ = compiled(graph, "SUMPROD", grid=(4, 4), thresh=1,
                    caps=Capacities(var_slots=2), trace=True)
    m.run_until_quiescent(50000)
    text = m.trace_text()
    rows = text.splitlines()
    assert rows[0] == "cycle,cell_row,cell_col,event,var_id,detail"
    events = {row.split(",")[3] for row in rows[1:]}
    assert {"UPDATE", "SEND", "DELIVER"} <= events
    assert events <= {"UPDATE", "SEND", "DELIVER", "CLAMP", "SAMPLE"}
    plain, _ = compiled(graph, "SUMPROD", grid=(4, 4),
                        caps=Capacities(var_slots=2))
    with pytest.raises(MachineError):
        plain.trace_text()


# -- sampling mode -----------------------------------------------------------

def test_gibbs_machine_never_quiesces():
    bench = apps.build_coloring(apps.TRIANGLE_EDGES, 3)
    m, _ = compiled(bench.graph, "GIBBS")
    stats, quiescent = m.run_until_quiescent(2000)
    assert not quiescent
    assert stats.cycles == 2000
    with pytest.raises(MachineError):
        m2, _ = compiled(pair_graph(), "SUMPROD", grid=(1, 1))
        m2.run_ticks(5)


def test_gibbs_single_site_frequencies_match_unary():
    m, _ = compiled(unary_graph(), "GIBBS", grid=(1, 1), seed=11)
    m.run_ticks(30000)
    beliefs, _ = m.read_beliefs()
    assert abs(beliefs[0][0] - 0.3) < 0.02
    trace_m, _ = compiled(unary_graph(), "GIBBS", grid=(1, 1), trace=True)
    trace_m.run_ticks(3)
    events = {row.split(",")[3] for row in trace_m.trace}
    assert "SAMPLE" in events


def test_gibbs_samples_do_not_depend_on_placement():
    bench = apps.build_ising_chain(4, 0.5, 0.2)
    lowered = lower(bench.graph, epsilon=0.0, mode="GIBBS")
    clusters = cluster(lowered, mode="GIBBS")
    assert len(clusters) >= 2
    base = place(clusters, lowered, (2, 2), seed=0, mode="GIBBS")
    swapped = Placement((2, 2), list(reversed(base.coords)),
                        base.cost_initial, base.cost_final)
    runs = []
    for placement in (base, swapped):
        image = emit_image(placement, clusters, lowered, "GIBBS", seed=5)
        m = Machine(dumps(image))
        m.run_ticks(200)
        beliefs, _ = m.read_beliefs()
        runs.append((m.read_state(), beliefs))
    assert runs[0] == runs[1]


# -- output noise ------------------------------------------------------------

def test_output_noise_random_rounding():
    graph = pair_graph()
    clean, _ = compiled(graph, "SUMPROD", grid=(1, 1))
    noisy, _ = compiled(graph, "SUMPROD", grid=(1, 1), noise_lsbs=2)
    for m in (clean, noisy):
        _, quiescent = m.run_until_quiescent()
        assert quiescent
    assert belief_err(noisy, graph) < TOL_CELL
    raw = lambda m: [m.var_owner[v].belief for v in (0, 1)]
    assert raw(clean) != raw(noisy)


# -- end to end on a real workload --------------------------------------------

def test_machine_decodes_a_clean_codeword():
    word = apps.hamming_encode((1, 0, 1, 1))
    bench = apps.build_parity_code(word)
    m, _ = compiled(bench.graph, "SUMPROD", grid=(4, 4), seed=1, thresh=256)
    decoded = apps.decode_by_candidates(
        apps.machine_hamming_trajectory(m, budget=3000), word)
    assert decoded == word


# -- build diagnostics --------------------------------------------------------

BUILD_ERRORS = [
    ("""FMIMG 1\nGRID 1 1\nMODE SUMPROD\nCELL 0 0
VAR 0 0 2\nVAR 1 1 2\nVAR 2 2 2\nVAR 3 3 2\nVAR 4 4 2\n""",
     "too many variable slots"),
    ("FMIMG 1\nGRID 1 1\nMODE SUMPROD\nCELL 0 0\nVAR 0 0 2\nVAR 0 1 2\n",
     "duplicate variable slot"),
    ("FMIMG 1\nGRID 1 2\nMODE SUMPROD\nCELL 0 0\nVAR 0 0 2\nCELL 0 1\nVAR 0 0 2\n",
     "owned by two cells"),
    ("FMIMG 1\nGRID 1 1\nMODE SUMPROD\nCELL 0 0\nVAR 0 0 17\n",
     "cardinality above limit"),
    ("FMIMG 1\nGRID 1 1\nMODE SUMPROD\nCELL 0 0\nVAR 0 0 2\n"
     "REL 0 0 2 V9\n1 1\nPROG 0\n",
     "dangling variable slot V9"),
    ("FMIMG 1\nGRID 1 1\nMODE SUMPROD\nCELL 0 0\nVAR 0 0 2\n"
     "REL 0 0 2 H3\n1 1\nPROG 0\n",
     "dangling shadow slot H3"),
    ("FMIMG 1\nGRID 1 1\nMODE SUMPROD\nCELL 0 0\nVAR 0 0 2\n"
     "REL 0 0 3 V0\n1 1 1\nPROG 0\n",
     "table has 3 words, scope needs 2"),
    ("FMIMG 1\nGRID 1 2\nMODE SUMPROD\nCELL 0 0\nVAR 0 0 2\n"
     "SHADOW 0 1 2 0 1 VALUE\nCELL 0 1\nVAR 0 1 2\n",
     "has no producer"),
    ("FMIMG 1\nGRID 1 2\nMODE SUMPROD\nCELL 0 0\nVAR 0 0 2\nCELL 0 1\nVAR 0 1 2\n"
     "WIRE 0 0 0 0 1 3\n",
     "destination slot 3 is not a shadow"),
    ("FMIMG 1\nGRID 1 3\nMODE SUMPROD\nCELL 0 0\nVAR 0 0 2\n"
     "SHADOW 0 1 2 0 1 VTOF 0\nCELL 0 1\nVAR 0 9 2\nCELL 0 2\nVAR 0 1 2\n"
     "WIRE 1 0 1 0 0 0\n",
     "wire source does not own variable 1"),
    ("FMIMG 1\nGRID 1 1\nMODE GIBBS\nCELL 0 0\nVAR 0 0 2\n",
     "no resample period"),
    ("FMIMG 1\nGRID 1 1\nMODE SUMPROD\nCELL 0 0\nVAR 0 0 2\n"
     "REL 0 0 2 V0\n1 1\nPROG 1\nMUL 0 IN5\n",
     "operand out of range"),
]


def test_build_error_catalog():
    for text, needle in BUILD_ERRORS:
        with pytest.raises(MachineError) as err:
            Machine(text)
        assert needle in str(err.value), "wanted %r in %r" % (needle, str(err.value))


def test_program_must_reduce_before_normalize():
    text = ("FMIMG 1\nGRID 1 1\nMODE SUMPROD\nCELL 0 0\n"
            "VAR 0 0 2\nVAR 1 1 2\n"
            "REL 0 0 4 V0 V1\n1 1 1 1\nPROG 2\nLOAD_TABLE_SLICE\nNORMALIZE OUT0\n")
    m = Machine(text)
    with pytest.raises(MachineError) as err:
        m.run_until_quiescent()
    assert "before reducing other axes" in str(err.value)


def test_stats_text_matches_energy_proxy():
    graph = multi_cell_tree()
    m, _ = compiled(graph, "SUMPROD", grid=(4, 4), thresh=1,
                    caps=Capacities(var_slots=2))
    stats, _ = m.run_until_quiescent(50000)
    text = stats.text()
    assert "activations=%d" % stats.activations in text
    assert "quiescent=true" in text
    assert abs(stats.energy_proxy() - (stats.activations + 0.1 * stats.hops)) < 1e-12
