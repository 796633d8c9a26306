"""Static network model and the two linearized power-flow solvers.

Transmission networks use DC power flow; radial distribution feeders use
LinDistFlow (branch flow with the loss terms dropped). Quantities are per
unit on the scenario's power base.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import NetworkError, SingularNetworkError


class BusKind(str, Enum):
    SLACK = "slack"
    PQ = "pq"
    PV = "pv"


class Topology(str, Enum):
    MESHED_TRANSMISSION = "meshed_transmission"
    RADIAL_DISTRIBUTION = "radial_distribution"


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind = BusKind.PQ
    voltage_sq: float = 1.0
    angle: float = 0.0
    p_inject: float = 0.0
    q_inject: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", BusKind(self.kind))
        if not self.voltage_sq > 0:
            raise NetworkError(f"bus {self.id}: voltage_sq must be positive")


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    susceptance: float | None = None
    r: float = 0.0
    x: float = 0.0
    flow_limit: float = math.inf
    current_limit: float = math.inf

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise NetworkError(f"line {self.from_bus}-{self.to_bus} is a self loop")
        if self.r < 0 or self.x < 0:
            raise NetworkError(f"line {self.from_bus}-{self.to_bus}: r and x must be >= 0")
        if not (self.flow_limit > 0 and self.current_limit > 0):
            raise NetworkError(f"line {self.from_bus}-{self.to_bus}: limits must be positive")

    def apparent_flow_ok(self, p: float, q: float, tol: float = 1e-12) -> bool:
        """Linear current-limit proxy ``|P| + |Q| <= sqrt(2) * I_max``.

        The box sits inside the circle ``P^2 + Q^2 <= I_max^2`` scaled by
        ``sqrt(2)`` at unit voltage, so it is conservative only along the
        axes; documented as the artifact's chosen linearization.
        """
        return abs(p) + abs(q) <= math.sqrt(2.0) * self.current_limit + tol


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    topology: Topology = Topology.MESHED_TRANSMISSION
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "topology", Topology(self.topology))
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise NetworkError("bus ids must be unique")
        object.__setattr__(self, "_index", {bid: i for i, bid in enumerate(ids)})
        slacks = [b.id for b in self.buses if b.kind is BusKind.SLACK]
        if len(slacks) != 1:
            raise NetworkError(f"exactly one slack bus required, found {len(slacks)}")
        for ln in self.lines:
            for end in (ln.from_bus, ln.to_bus):
                if end not in self._index:
                    raise NetworkError(f"line references unknown bus {end}")
            if self.topology is Topology.MESHED_TRANSMISSION:
                if ln.susceptance is None or not ln.susceptance > 0:
                    raise NetworkError(
                        f"line {ln.from_bus}-{ln.to_bus}: transmission susceptance must be > 0"
                    )

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def slack_index(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.kind is BusKind.SLACK)

    @property
    def slack_id(self) -> int:
        return self.buses[self.slack_index].id

    def index(self, bus_id: int) -> int:
        try:
            return self._index[bus_id]
        except KeyError:
            raise NetworkError(f"unknown bus {bus_id}") from None

    def components(self) -> list[set[int]]:
        """Connected components as sets of bus indices."""
        adj = [[] for _ in self.buses]
        for ln in self.lines:
            i, j = self.index(ln.from_bus), self.index(ln.to_bus)
            adj[i].append(j)
            adj[j].append(i)
        seen, comps = set(), []
        for s in range(self.n_bus):
            if s in seen:
                continue
            comp, queue = {s}, deque([s])
            while queue:
                u = queue.popleft()
                for v in adj[u]:
                    if v not in comp:
                        comp.add(v)
                        queue.append(v)
            seen |= comp
            comps.append(comp)
        return comps

    def susceptance_matrix(self) -> np.ndarray:
        n = self.n_bus
        B = np.zeros((n, n))
        for ln in self.lines:
            i, j = self.index(ln.from_bus), self.index(ln.to_bus)
            b = ln.susceptance
            B[i, i] += b
            B[j, j] += b
            B[i, j] -= b
            B[j, i] -= b
        return B

    def incidence(self) -> np.ndarray:
        """Line-by-bus incidence: +1 at the from bus, -1 at the to bus."""
        A = np.zeros((len(self.lines), self.n_bus))
        for k, ln in enumerate(self.lines):
            A[k, self.index(ln.from_bus)] = 1.0
            A[k, self.index(ln.to_bus)] = -1.0
        return A

    def ptdf(self) -> np.ndarray:
        """Line flows per unit injection at each bus, withdrawn at the slack."""
        self._require_connected()
        n, s = self.n_bus, self.slack_index
        keep = [i for i in range(n) if i != s]
        B = self.susceptance_matrix()
        X = np.zeros((n, n))
        if keep:
            X[np.ix_(keep, keep)] = np.linalg.inv(B[np.ix_(keep, keep)])
        bl = np.array([ln.susceptance for ln in self.lines])
        return (bl[:, None] * self.incidence()) @ X

    def _require_connected(self):
        comps = self.components()
        if len(comps) > 1:
            s = self.slack_index
            islanded = tuple(
                sorted(self.buses[i].id for c in comps if s not in c for i in c)
            )
            raise SingularNetworkError(
                f"susceptance matrix is singular: buses {list(islanded)} are not connected to the slack",
                islanded,
            )

    def tree_order(self) -> tuple[list[int], list[int], list[int]]:
        """BFS order from the slack with each bus's parent and parent line.

        Raises NetworkError unless the network is a tree.
        """
        n = self.n_bus
        if len(self.lines) != n - 1 or len(self.components()) != 1:
            raise NetworkError("network is not radial: expected a connected tree rooted at the slack")
        adj = [[] for _ in range(n)]
        for k, ln in enumerate(self.lines):
            i, j = self.index(ln.from_bus), self.index(ln.to_bus)
            adj[i].append((j, k))
            adj[j].append((i, k))
        root = self.slack_index
        parent, pline, order = [-1] * n, [-1] * n, [root]
        queue = deque([root])
        visited = {root}
        while queue:
            u = queue.popleft()
            for v, k in adj[u]:
                if v not in visited:
                    visited.add(v)
                    parent[v], pline[v] = u, k
                    order.append(v)
                    queue.append(v)
        return order, parent, pline


@dataclass(frozen=True)
class DcFlowResult:
    angles: np.ndarray
    """Bus voltage angles in radians, slack at zero."""
    flows: np.ndarray
    """Line flows from ``from_bus`` to ``to_bus`` in per unit."""
    slack_injection: float


def dc_power_flow(net: Network, injections) -> DcFlowResult:
    """Solve ``B theta = P`` with the slack angle fixed at zero.

    ``injections`` is indexed like ``net.buses``. Any imbalance is absorbed
    by the slack bus and reported as ``slack_injection``.
    """
    if net.topology is not Topology.MESHED_TRANSMISSION:
        raise NetworkError("dc_power_flow requires a meshed_transmission network")
    P = np.asarray(injections, dtype=float)
    if P.shape != (net.n_bus,):
        raise ValueError(f"expected {net.n_bus} injections, got shape {P.shape}")
    net._require_connected()
    s = net.slack_index
    keep = [i for i in range(net.n_bus) if i != s]
    B = net.susceptance_matrix()
    theta = np.zeros(net.n_bus)
    if keep:
        try:
            theta[keep] = np.linalg.solve(B[np.ix_(keep, keep)], P[keep])
        except np.linalg.LinAlgError:
            raise SingularNetworkError("susceptance matrix is singular") from None
    bl = np.array([ln.susceptance for ln in net.lines])
    flows = bl * (net.incidence() @ theta)
    return DcFlowResult(angles=theta, flows=flows, slack_injection=float(-np.sum(P[keep])))


@dataclass(frozen=True)
class DistFlowResult:
    voltage_sq: np.ndarray
    """Squared voltage magnitude per bus."""
    p_flow: np.ndarray
    """Real power per line in the line's from->to orientation."""
    q_flow: np.ndarray

    def voltage(self) -> np.ndarray:
        return np.sqrt(self.voltage_sq)


def lindistflow_solve(net: Network, p_load, q_load) -> DistFlowResult:
    """LinDistFlow on a radial feeder.

    Flows on each line equal the total load downstream of it and
    ``v_child = v_parent - 2 (r P + x Q)``. Loads are consumption-positive
    per unit, indexed like ``net.buses``; the slack bus load is ignored.
    """
    if net.topology is not Topology.RADIAL_DISTRIBUTION:
        raise NetworkError("lindistflow_solve requires a radial_distribution network")
    p = np.asarray(p_load, dtype=float)
    q = np.asarray(q_load, dtype=float)
    if p.shape != (net.n_bus,) or q.shape != (net.n_bus,):
        raise ValueError(f"expected {net.n_bus} loads per bus")
    order, parent, pline = net.tree_order()
    n = net.n_bus
    sub_p, sub_q = p.copy(), q.copy()
    for v in reversed(order[1:]):
        sub_p[parent[v]] += sub_p[v]
        sub_q[parent[v]] += sub_q[v]
    v_sq = np.empty(n)
    root = order[0]
    v_sq[root] = net.buses[root].voltage_sq
    p_flow = np.zeros(len(net.lines))
    q_flow = np.zeros(len(net.lines))
    for v in order[1:]:
        ln = net.lines[pline[v]]
        u = parent[v]
        v_sq[v] = v_sq[u] - 2.0 * (ln.r * sub_p[v] + ln.x * sub_q[v])
        forward = net.index(ln.from_bus) == u
        p_flow[pline[v]] = sub_p[v] if forward else -sub_p[v]
        q_flow[pline[v]] = sub_q[v] if forward else -sub_q[v]
    return DistFlowResult(voltage_sq=v_sq, p_flow=p_flow, q_flow=q_flow)
