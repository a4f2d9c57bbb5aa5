"""Piecewise-linear finite elements on metric graphs.

Vertex nodes are shared by every incident edge, so the discrete space is
continuous across vertices and the Kirchhoff condition holds in weak form
without being coded. The heat kernel comes from the spectral expansion of
the generalized problem ``K v = λ M v``, or on large meshes from a Lanczos
process in the mass inner product that never forms the spectrum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from numpy.typing import NDArray
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh, splu

from ..config import get_settings
from ..exceptions import (
    EigensolverError,
    InsufficientEigenpairsError,
    InvalidInputError,
    KrylovConvergenceError,
    WindowTooSmallError,
)
from ..exports import export_to_csv
from ..geometry.pointset import Window
from ..graphs import EdgePoint, EdgeSegment, MetricGraph
from ..logging import get_logger
from ..utils import monitor_long_running, track_performance

logger = get_logger(__name__)

NO_VERTEX = -1

# below this many free nodes the dense solver is cheaper than ARPACK even for a few pairs
SMALL_PROBLEM = 400


class MetricMethod(Enum):
    """Solver for the metric heat kernel.

    ``auto`` expands in eigenpairs up to ``Settings.metric_dense_threshold``
    free nodes and runs the mass-weighted Lanczos process beyond.
    """

    AUTO = "auto"
    SPECTRAL = "spectral"
    KRYLOV = "krylov"


@dataclass(frozen=True, eq=False)
class GraphMesh:
    """Mesh nodes and 1-D elements of a metric graph (or of some of its segments).

    Every node has an edge-point address; vertex nodes also record their vertex
    id in ``node_vertex`` (``-1`` elsewhere). ``clamped`` nodes carry Dirichlet
    conditions.
    """

    mgraph: MetricGraph
    delta_max: float
    node_edge: NDArray[np.int64]
    node_offset: NDArray[np.float64]
    node_vertex: NDArray[np.int64]
    positions: NDArray[np.float64]
    elements: NDArray[np.int64]
    element_lengths: NDArray[np.float64]
    element_edge: NDArray[np.int64]
    clamped: NDArray[np.bool_]

    @property
    def n_nodes(self) -> int:
        return len(self.node_edge)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @cached_property
    def vertex_nodes(self) -> dict[int, int]:
        return {int(v): k for k, v in enumerate(self.node_vertex) if v != NO_VERTEX}

    def node_of_vertex(self, x: int) -> int:
        try:
            return self.vertex_nodes[int(x)]
        except KeyError:
            raise InvalidInputError(f"vertex {x} is not a node of the mesh")

    def node_at(self, loc: EdgePoint | int) -> int:
        """Mesh node nearest to an edge point (exact for vertices and mesh nodes)."""
        if not isinstance(loc, EdgePoint):
            return self.node_of_vertex(loc)
        u, v = self.mgraph.edges[loc.edge]
        candidates = [int(k) for k in np.flatnonzero(self.node_edge == loc.edge)]
        candidates += [self.vertex_nodes[w] for w in (u, v) if w in self.vertex_nodes]
        if not candidates:
            raise InvalidInputError(f"edge {loc.edge} is not meshed")
        return int(min(candidates, key=lambda k: abs(self._offset_on(k, loc.edge) - loc.offset)))

    def _offset_on(self, node: int, edge: int) -> float:
        if self.node_edge[node] == edge:
            return float(self.node_offset[node])
        u, _ = self.mgraph.edges[edge]
        return 0.0 if self.node_vertex[node] == u else float(self.mgraph.lengths[edge])

    def node_rows(self) -> list[dict[str, Any]]:
        dim = self.positions.shape[1]
        names = ["x", "y"] if dim == 2 else [f"x{d}" for d in range(dim)]
        return [
            {
                "node_id": k,
                "edge_id": int(self.node_edge[k]),
                "offset": float(self.node_offset[k]),
                **{name: float(c) for name, c in zip(names, self.positions[k], strict=True)},
            }
            for k in range(self.n_nodes)
        ]


def _address(mg: MetricGraph, vertex: int) -> tuple[int, float]:
    for w in mg.relation.neighbors(vertex):
        e = mg.edge_id(vertex, w)
        return e, 0.0 if mg.edges[e][0] == vertex else float(mg.lengths[e])
    return NO_VERTEX, 0.0


@track_performance
def mesh(
    mgraph: MetricGraph,
    delta_max: float,
    segments: list[EdgeSegment] | None = None,
    clamp: set[int] | frozenset[int] = frozenset(),
) -> GraphMesh:
    """Split every segment (default: every whole edge) into ``ceil(len / delta_max)`` equal elements.

    Segment ends at offset 0 or at the edge length are the shared vertex nodes;
    other ends become degree-one cut nodes. Vertices in ``clamp`` are Dirichlet nodes.
    """
    if not delta_max > 0:
        raise InvalidInputError(f"delta_max must be positive, got {delta_max}")
    segs = segments if segments is not None else [EdgeSegment(e, 0.0, float(l)) for e, l in enumerate(mgraph.lengths)]
    segs = sorted((s for s in segs if s.length > 0), key=lambda s: (s.edge, s.start))
    if not segs:
        raise WindowTooSmallError("nothing to mesh: no edge segments of positive length")
    tol = get_settings().length_tolerance * mgraph.relation.pointset.scale
    ps = mgraph.relation.pointset
    node_edge: list[int] = []
    node_offset: list[float] = []
    node_vertex: list[int] = []
    positions: list[NDArray[np.float64]] = []
    vertex_node: dict[int, int] = {}

    def add_node(edge: int, offset: float, vertex: int, pos: NDArray[np.float64]) -> int:
        node_edge.append(edge)
        node_offset.append(offset)
        node_vertex.append(vertex)
        positions.append(pos)
        return len(node_edge) - 1

    ends: set[int] = set()
    for s in segs:
        u, v = mgraph.edges[s.edge]
        if s.start <= tol:
            ends.add(u)
        if s.end >= mgraph.lengths[s.edge] - tol:
            ends.add(v)
    for x in sorted(ends):
        e, off = _address(mgraph, x)
        vertex_node[x] = add_node(e, off, x, ps.point(x))

    elements: list[tuple[int, int]] = []
    element_lengths: list[float] = []
    element_edge: list[int] = []
    for s in segs:
        u, v = mgraph.edges[s.edge]
        length = float(mgraph.lengths[s.edge])
        pu, pv = ps.point(u), ps.point(v)
        k = max(1, math.ceil(s.length / delta_max - 1e-9))
        offsets = np.linspace(s.start, s.end, k + 1)
        chain: list[int] = []
        for i, off in enumerate(offsets):
            if i == 0 and s.start <= tol:
                chain.append(vertex_node[u])
            elif i == k and s.end >= length - tol:
                chain.append(vertex_node[v])
            else:
                chain.append(add_node(s.edge, float(off), NO_VERTEX, pu + (pv - pu) * (off / length)))
        for i in range(k):
            elements.append((chain[i], chain[i + 1]))
            element_lengths.append(float(offsets[i + 1] - offsets[i]))
            element_edge.append(s.edge)

    clamped = np.zeros(len(node_edge), dtype=bool)
    for x in clamp:
        if x in vertex_node:
            clamped[vertex_node[x]] = True
    result = GraphMesh(
        mgraph=mgraph,
        delta_max=delta_max,
        node_edge=np.array(node_edge, dtype=np.int64),
        node_offset=np.array(node_offset, dtype=np.float64),
        node_vertex=np.array(node_vertex, dtype=np.int64),
        positions=np.array(positions, dtype=np.float64).reshape(len(node_edge), ps.dim),
        elements=np.array(elements, dtype=np.int64).reshape(-1, 2),
        element_lengths=np.array(element_lengths, dtype=np.float64),
        element_edge=np.array(element_edge, dtype=np.int64),
        clamped=clamped,
    )
    logger.debug("meshed metric graph", nodes=result.n_nodes, elements=result.n_elements, delta_max=delta_max)
    return result


@dataclass(frozen=True, eq=False)
class FemPair:
    """Stiffness ``K`` (from ``∫u'v'``) and consistent mass ``M`` (from ``∫uv``)."""

    mesh: GraphMesh
    K: sp.csr_matrix
    M: sp.csr_matrix

    @property
    def free(self) -> NDArray[np.int64]:
        return np.flatnonzero(~self.mesh.clamped)


def assemble_fem(gmesh: GraphMesh) -> FemPair:
    """Sum the element matrices ``[[1, -1], [-1, 1]] / len`` and ``len [[2, 1], [1, 2]] / 6``."""
    a, b = gmesh.elements[:, 0], gmesh.elements[:, 1]
    lens = gmesh.element_lengths
    rho = np.array([gmesh.mgraph.edge_density(int(e)) for e in gmesh.element_edge])
    rows = np.concatenate([a, b, a, b])
    cols = np.concatenate([a, b, b, a])
    k_vals = np.concatenate([1.0 / lens, 1.0 / lens, -1.0 / lens, -1.0 / lens])
    m_vals = np.concatenate([2.0 * rho * lens, 2.0 * rho * lens, rho * lens, rho * lens]) / 6.0
    n = gmesh.n_nodes
    K = sp.csr_matrix(sp.coo_matrix((k_vals, (rows, cols)), shape=(n, n)))
    M = sp.csr_matrix(sp.coo_matrix((m_vals, (rows, cols)), shape=(n, n)))
    return FemPair(mesh=gmesh, K=K, M=M)


@dataclass(slots=True)
class Spectrum:
    """Ascending eigenvalues and ``M``-orthonormal eigenvectors (zero on clamped nodes)."""

    values: NDArray[np.float64]
    vectors: NDArray[np.float64]
    complete: bool


def eigenpairs(fem: FemPair, k: int) -> Spectrum:
    """First ``k`` eigenpairs of ``K v = λ M v`` on the free nodes.

    Raises:
        InvalidInputError: ``k`` outside ``[1, free node count]``
        EigensolverError: the sparse eigensolver failed

    """
    free = fem.free
    n = len(free)
    if not 1 <= k <= n:
        raise InvalidInputError(f"requested {k} eigenpairs of a problem with {n} free nodes")
    K = fem.K[free][:, free]
    M = fem.M[free][:, free]
    try:
        dense = k >= n - 1 or n <= SMALL_PROBLEM or (n <= get_settings().metric_dense_threshold and 4 * k >= n)
        if dense:
            evals, evecs = scipy.linalg.eigh(K.toarray(), M.toarray(), subset_by_index=[0, k - 1])
        else:
            evals, evecs = eigsh(K.tocsc(), k=k, M=M.tocsc(), sigma=-1.0, which="LM")
            order = np.argsort(evals)
            evals, evecs = evals[order], evecs[:, order]
            evecs = evecs / np.sqrt(np.einsum("ij,ij->j", evecs, M @ evecs))
    except (ArpackNoConvergence, ArpackError, np.linalg.LinAlgError) as e:
        raise EigensolverError(f"generalized eigensolve for {k} pairs on {n} nodes failed: {e}")
    full = np.zeros((fem.mesh.n_nodes, k))
    full[free] = evecs
    return Spectrum(values=np.maximum(np.asarray(evals), 0.0), vectors=full, complete=k == n)


def spectral_expansion(fem: FemPair, t_min: float, tol: float = 1e-6, k0: int = 64) -> Spectrum:
    """Enough eigenpairs that ``exp(-λ_K t_min) * nodes <= tol``, doubling ``k`` as needed.

    Small problems are solved completely.

    Raises:
        InsufficientEigenpairsError: ``Settings.metric_max_eigenpairs`` reached first

    """
    n = len(fem.free)
    settings = get_settings()
    if n <= settings.metric_dense_threshold:
        return eigenpairs(fem, n)
    k = min(k0, n)
    while True:
        spec = eigenpairs(fem, k)
        bound = math.exp(-float(spec.values[-1]) * t_min) * n
        if spec.complete or bound <= tol:
            logger.debug("spectral expansion", pairs=k, tail_bound=bound)
            return spec
        if k >= min(n, settings.metric_max_eigenpairs):
            raise InsufficientEigenpairsError(
                f"{k} eigenpairs reach tail bound {bound:.3e} > {tol} at t={t_min}",
                achieved_bound=bound,
            )
        k = min(2 * k, n, settings.metric_max_eigenpairs)


def _mass_lanczos_exp(
    fem: FemPair,
    source: int,
    times: NDArray[np.float64],
    tol: float,
    max_iter: int,
) -> NDArray[np.float64]:
    """``exp(-t M⁻¹K) M⁻¹ e_source`` on every mesh node, for every ``t``.

    Lanczos on ``M⁻¹K``, which is self-adjoint in the ``M`` inner product,
    with full reorthogonalization. Clamped nodes stay zero.
    """
    free = fem.free
    out = np.zeros((len(times), fem.mesh.n_nodes))
    position = np.searchsorted(free, source)
    if position == len(free) or free[position] != source:
        return out
    K = sp.csr_matrix(fem.K[free][:, free])
    M = sp.csr_matrix(fem.M[free][:, free])
    lu = splu(M.tocsc())
    n = len(free)
    e_s = np.zeros(n)
    e_s[position] = 1.0
    start = lu.solve(e_s)
    norm = math.sqrt(float(start[position]))
    m_cap = min(max_iter, n)
    Q = np.zeros((n, m_cap + 1))
    MQ = np.zeros((n, m_cap + 1))
    alphas: list[float] = []
    betas: list[float] = []
    Q[:, 0] = start / norm
    MQ[:, 0] = e_s / norm
    residual = math.inf
    for j in range(m_cap):
        Kq = K @ Q[:, j]
        alpha = float(Q[:, j] @ Kq)
        w = lu.solve(Kq) - alpha * Q[:, j] - (betas[-1] * Q[:, j - 1] if j > 0 else 0.0)
        w -= Q[:, : j + 1] @ (MQ[:, : j + 1].T @ w)
        Mw = M @ w
        beta = math.sqrt(max(float(w @ Mw), 0.0))
        alphas.append(alpha)
        done = beta <= 1e-12 * max(1.0, max(alphas)) or j + 1 == n
        # the tridiagonal solve dominates late iterations; check every few steps
        if done or j % 8 == 7 or j + 1 == m_cap:
            theta, U = scipy.linalg.eigh_tridiagonal(np.array(alphas), np.array(betas))
            coeffs = U @ (np.exp(-np.outer(times, theta)) * U[0]).T  # (m, len(times))
            residual = float(np.max(beta * np.abs(coeffs[-1]))) if beta > 0 else 0.0
            if done or residual <= tol:
                out[:, free] = norm * (Q[:, : j + 1] @ coeffs).T
                logger.debug("mass lanczos", iterations=j + 1, residual=residual, nodes=n)
                return out
        betas.append(beta)
        Q[:, j + 1] = w / beta
        MQ[:, j + 1] = Mw / beta
    raise KrylovConvergenceError(
        f"metric Lanczos did not reach tolerance {tol} within {m_cap} iterations (estimated error {residual:.3e})",
        residual=residual,
    )


def resolve_metric_method(fem: FemPair, method: MetricMethod | str) -> MetricMethod:
    """Concrete method for ``fem``; ``auto`` picks by free node count."""
    method = MetricMethod(method)
    if method is MetricMethod.AUTO:
        return MetricMethod.SPECTRAL if len(fem.free) <= get_settings().metric_dense_threshold else MetricMethod.KRYLOV
    return method


@dataclass(slots=True)
class MetricKernelSamples:
    """Metric heat kernel ``p_t(x_i, x_j)`` between mesh nodes; ``values[i, j]`` is time ``i``, target ``j``."""

    source: int
    targets: list[int]
    times: list[float]
    values: NDArray[np.float64]
    boundary: str
    eigenpairs: int
    complete: bool
    method: MetricMethod = MetricMethod.SPECTRAL
    negative: int = 0
    certificate: float | None = None
    delta_max: float = 0.0
    flags: list[str] = field(default_factory=list)

    def value(self, target: int, t: float) -> float:
        return float(self.values[self.times.index(t), self.targets.index(target)])

    def rows(self) -> list[dict[str, Any]]:
        cert = "" if self.certificate is None else self.certificate
        return [
            {"x_id": self.source, "y_id": y, "t": t, "p": float(self.values[i, j]), "mode": self.boundary, "certificate": cert}
            for i, t in enumerate(self.times)
            for j, y in enumerate(self.targets)
        ]


@monitor_long_running(threshold_seconds=60.0)
def metric_heat_kernel(
    fem: FemPair,
    source: int,
    targets: list[int],
    times: list[float],
    tol: float = 1e-6,
    spectrum: Spectrum | None = None,
    method: MetricMethod | str = MetricMethod.AUTO,
) -> MetricKernelSamples:
    """``p_t(x_i, x_j) = Σ_k exp(-λ_k t) φ_k(x_i) φ_k(x_j)`` for mesh nodes.

    A given ``spectrum`` forces the spectral method. The Krylov method
    evaluates the same quantity as ``exp(-t M⁻¹K) M⁻¹ e_i``. Values below zero
    (possible for ``t < delta_max**2``) are counted and flagged, never clipped.
    """
    t_arr = np.asarray(times, dtype=np.float64)
    if len(t_arr) == 0 or not np.all(t_arr > 0):
        raise InvalidInputError(f"times must be positive, got {times!r}")
    n = fem.mesh.n_nodes
    for node in (source, *targets):
        if not 0 <= node < n:
            raise InvalidInputError(f"node {node} outside mesh of {n} nodes")
    resolved = MetricMethod.SPECTRAL if spectrum is not None else resolve_metric_method(fem, method)
    target_idx = np.asarray(targets, dtype=np.int64)
    if resolved is MetricMethod.KRYLOV:
        values = _mass_lanczos_exp(fem, int(source), t_arr, tol, get_settings().metric_krylov_max_iter)[:, target_idx]
        pairs, complete = 0, False
    else:
        spec = spectrum if spectrum is not None else spectral_expansion(fem, float(t_arr.min()), tol)
        phi_x = spec.vectors[source]
        values = (np.exp(-np.outer(t_arr, spec.values)) * phi_x) @ spec.vectors[target_idx].T
        pairs, complete = len(spec.values), spec.complete
    negative = int((values < 0).sum())
    flags = []
    if negative:
        flags.append("negative values")
        logger.warning("negative metric kernel values", count=negative, t_min=float(t_arr.min()), delta_max=fem.mesh.delta_max)
    return MetricKernelSamples(
        source=int(source),
        targets=[int(y) for y in targets],
        times=[float(t) for t in t_arr],
        values=np.asarray(values),
        boundary="dirichlet" if fem.mesh.clamped.any() else "neumann",
        eigenpairs=pairs,
        complete=complete,
        method=resolved,
        negative=negative,
        delta_max=fem.mesh.delta_max,
        flags=flags,
    )


def window_segments(mgraph: MetricGraph, window: Window, dirichlet: bool) -> tuple[list[EdgeSegment], set[int]]:
    """Edges kept by a window truncation and the vertices clamped by it.

    Free truncation keeps edges with both ends inside. The Dirichlet variant also
    keeps edges leaving the window and clamps their outside ends.
    """
    ps = mgraph.relation.pointset
    inside = {int(i) for i in ps.ids[window.contains(ps.coords)]}
    segs: list[EdgeSegment] = []
    clamp: set[int] = set()
    for e, (u, v) in enumerate(mgraph.edges):
        n_in = (u in inside) + (v in inside)
        if n_in == 2 or (dirichlet and n_in == 1):
            segs.append(EdgeSegment(e, 0.0, float(mgraph.lengths[e])))
            clamp.update(w for w in (u, v) if w not in inside)
    return segs, clamp


def metric_truncation_certificate(
    mgraph: MetricGraph,
    window: Window,
    delta_max: float,
    source: int,
    targets: list[int],
    times: list[float],
    tol: float = 1e-6,
) -> float:
    """Largest relative gap between clamped and free truncations at vertex nodes."""
    kernels = []
    for dirichlet in (True, False):
        segs, clamp = window_segments(mgraph, window, dirichlet)
        fem = assemble_fem(mesh(mgraph, delta_max, segs, clamp))
        gm = fem.mesh
        kernels.append(
            metric_heat_kernel(fem, gm.node_of_vertex(source), [gm.node_of_vertex(y) for y in targets], times, tol).values,
        )
    pd, pn = kernels
    value = float(np.max(np.abs(pd - pn) / np.abs(pn)))
    logger.info("metric truncation certificate", source=source, value=value, certified=value < tol)
    return value


def write_mesh(gmesh: GraphMesh, path: Path) -> None:
    rows = gmesh.node_rows()
    export_to_csv(rows, path, fieldnames=list(rows[0]))
