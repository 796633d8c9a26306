import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridloop.errors import NetworkError, SingularNetworkError
from gridloop.grid import Bus, Line, Network, dc_power_flow, lindistflow_solve


def _transmission(n, lines):
    buses = [Bus(i, "slack" if i == 0 else "pq") for i in range(n)]
    return Network(buses, [Line(f, t, susceptance=b) for f, t, b in lines])


def _feeder(edges, v0=1.0):
    buses = [Bus(0, "slack", voltage_sq=v0)] + [Bus(i) for i in range(1, len(edges) + 1)]
    return Network(buses, [Line(f, t, r=r, x=x) for f, t, r, x in edges], "radial_distribution")


def test_two_bus_flow():
    net = _transmission(2, [(0, 1, 10.0)])
    res = dc_power_flow(net, [1.0, -1.0])
    assert res.angles[0] - res.angles[1] == pytest.approx(0.1, abs=1e-12)
    assert res.flows[0] == pytest.approx(1.0, abs=1e-12)


def test_zero_injections_give_zero_state():
    net = _transmission(3, [(0, 1, 10.0), (1, 2, 10.0), (0, 2, 5.0)])
    res = dc_power_flow(net, [0.0, 0.0, 0.0])
    assert np.all(res.angles == 0) and np.all(res.flows == 0)


def test_triangle_matches_pseudoinverse_oracle():
    lines = [(0, 1, 10.0), (1, 2, 10.0), (0, 2, 5.0)]
    P = np.array([1.0, -0.4, -0.6])
    res = dc_power_flow(_transmission(3, lines), P)

    # oracle: minimum-norm solution of the full singular Laplacian, then
    # shifted so the slack angle is zero
    L = np.zeros((3, 3))
    for f, t, b in lines:
        L[[f, t], [f, t]] += b
        L[f, t] -= b
        L[t, f] -= b
    theta = np.linalg.pinv(L) @ P
    theta -= theta[0]
    flows = [b * (theta[f] - theta[t]) for f, t, b in lines]
    assert np.allclose(res.angles, theta, atol=1e-9)
    assert np.allclose(res.flows, flows, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-2, 2), min_size=4, max_size=4),
    st.lists(st.floats(0.5, 20), min_size=5, max_size=5),
)
def test_flow_conservation(inj, sus):
    lines = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]
    net = _transmission(4, [(f, t, b) for (f, t), b in zip(lines, sus)])
    P = np.array(inj)
    P[0] = -P[1:].sum()
    res = dc_power_flow(net, P)
    balance = P.copy()
    for (f, t), flow in zip(lines, res.flows):
        balance[f] -= flow
        balance[t] += flow
    assert np.max(np.abs(balance)) < 1e-9


def test_disconnected_network_is_singular():
    buses = [Bus(0, "slack"), Bus(1), Bus(2), Bus(3)]
    net = Network(buses, [Line(0, 1, susceptance=1.0), Line(2, 3, susceptance=1.0)])
    with pytest.raises(SingularNetworkError) as err:
        dc_power_flow(net, [0.0, 0.0, 0.0, 0.0])
    assert err.value.islanded_buses == (2, 3)


def test_network_invariants():
    with pytest.raises(NetworkError):
        Network([Bus(0), Bus(1)], [Line(0, 1, susceptance=1.0)])
    with pytest.raises(NetworkError):
        Network([Bus(0, "slack"), Bus(1)], [Line(0, 1, susceptance=0.0)])
    with pytest.raises(NetworkError):
        Bus(0, voltage_sq=0.0)
    with pytest.raises(NetworkError):
        Line(0, 1, r=-0.1)


def test_single_line_feeder():
    res = lindistflow_solve(_feeder([(0, 1, 0.01, 0.02)]), [0.0, 0.1], [0.0, 0.05])
    assert res.voltage_sq[1] == pytest.approx(0.996, abs=1e-15)


def test_zero_load_feeder():
    net = _feeder([(0, 1, 0.01, 0.02), (1, 2, 0.01, 0.02)])
    res = lindistflow_solve(net, np.zeros(3), np.zeros(3))
    assert np.all(res.voltage_sq == 1.0)


def _path_oracle(edges, p, q):
    """Voltages from explicit root paths: each line carries the load of its subtree."""
    children = {}
    for f, t, r, x in edges:
        children.setdefault(f, []).append(t)

    def subtree(node):
        out = [node]
        for c in children.get(node, []):
            out += subtree(c)
        return out

    parent = {t: (f, r, x) for f, t, r, x in edges}
    v = {}
    for node in range(len(edges) + 1):
        drop, cur = 0.0, node
        while cur in parent:
            f, r, x = parent[cur]
            below = subtree(cur)
            drop += 2 * (r * sum(p[i] for i in below) + x * sum(q[i] for i in below))
            cur = f
        v[node] = 1.0 - drop
    return np.array([v[i] for i in range(len(edges) + 1)])


def test_four_node_feeder_matches_path_oracle():
    edges = [(0, 1, 0.01, 0.03), (1, 2, 0.02, 0.01), (1, 3, 0.015, 0.02)]
    p = [0.0, 0.05, 0.12, -0.03]
    q = [0.0, 0.02, 0.04, 0.01]
    res = lindistflow_solve(_feeder(edges), p, q)
    assert np.max(np.abs(res.voltage_sq - _path_oracle(edges, p, q))) < 1e-12
    assert res.p_flow[0] == pytest.approx(0.14, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 0.2), min_size=6, max_size=6), st.lists(st.floats(0, 0.1), min_size=6, max_size=6))
def test_voltage_non_increasing_downstream(p, q):
    edges = [(0, 1, 0.01, 0.02), (1, 2, 0.02, 0.02), (2, 3, 0.01, 0.01), (1, 4, 0.03, 0.01), (4, 5, 0.01, 0.01)]
    res = lindistflow_solve(_feeder(edges), [0.0] + p[1:], [0.0] + q[1:])
    for f, t, _, _ in edges:
        assert res.voltage_sq[t] <= res.voltage_sq[f]


def test_mesh_rejected_by_lindistflow():
    buses = [Bus(0, "slack"), Bus(1), Bus(2)]
    lines = [Line(0, 1, r=0.01, x=0.01), Line(1, 2, r=0.01, x=0.01), Line(0, 2, r=0.01, x=0.01)]
    net = Network(buses, lines, "radial_distribution")
    with pytest.raises(NetworkError):
        lindistflow_solve(net, np.zeros(3), np.zeros(3))


def test_solvers_bit_identical_on_repeat():
    net = _transmission(3, [(0, 1, 10.0), (1, 2, 7.0), (0, 2, 5.0)])
    a = dc_power_flow(net, [0.3, -0.1, -0.2])
    b = dc_power_flow(net, [0.3, -0.1, -0.2])
    assert a.flows.tobytes() == b.flows.tobytes()
