"""Discrete Laplacians on windowed vertex sets and their heat kernels.

The operator ``L u(x) = (1 / h(x)) Σ_{y ~ x} b(x, y) (u(x) - u(y))`` is stored
through its form matrix ``A = D_b - B`` and the vertex measure ``h``. All
solvers work with the symmetric matrix ``H^{-1/2} A H^{-1/2}``; the kernel is
normalized so that ``e^{-tL} u(x) = Σ_y p_t(x, y) u(y) h(y)``.
"""

from __future__ import annotations

import asyncio
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, Protocol

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from numpy.typing import NDArray
from scipy.sparse.linalg import expm_multiply

from ..config import get_settings
from ..exceptions import InvalidInputError, InvalidWeightError, KrylovConvergenceError, WindowTooSmallError
from ..exports import export_to_csv
from ..geometry.neighbors import NeighborRelation, Pair
from ..geometry.pointset import Window
from ..logging import get_logger
from ..utils import monitor_long_running, track_performance

logger = get_logger(__name__)

KERNEL_NORMALIZATION = "e^{-tL}u(x) = sum_y p_t(x,y) u(y) h(y)"


class BoundaryMode(Enum):
    """Treatment of edges leaving the window."""

    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


class KernelMethod(Enum):
    """Solver for ``e^{-tL}``.

    ``auto`` picks ``dense_eig`` up to ``Settings.dense_threshold`` vertices and
    ``krylov`` beyond. ``expm_multiply`` applies the exponential of the shifted,
    entrywise nonnegative matrix and keeps tiny kernel values relatively accurate.
    """

    AUTO = "auto"
    DENSE_EIG = "dense_eig"
    KRYLOV = "krylov"
    EXPM_MULTIPLY = "expm_multiply"


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Laplacian restricted to the vertices of ``window``."""

    ids: NDArray[np.int64]
    form: sp.csr_matrix
    h: NDArray[np.float64]
    boundary: BoundaryMode
    window: Window
    weighted: bool = False

    @property
    def n(self) -> int:
        return len(self.ids)

    @cached_property
    def index(self) -> dict[int, int]:
        return {int(i): k for k, i in enumerate(self.ids)}

    def row(self, point_id: int) -> int:
        try:
            return self.index[int(point_id)]
        except KeyError:
            raise InvalidInputError(f"vertex {point_id} is not in the operator window")

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """``L = H^{-1} A``."""
        return sp.csr_matrix(sp.diags(1.0 / self.h) @ self.form)

    @cached_property
    def symmetric(self) -> sp.csr_matrix:
        s = sp.diags(1.0 / np.sqrt(self.h))
        return sp.csr_matrix(s @ self.form @ s)

    @cached_property
    def spectrum(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Eigenvalues and orthonormal eigenvectors of the symmetric form."""
        if self.n > get_settings().dense_threshold:
            logger.warning("dense eigendecomposition above threshold", n=self.n, threshold=get_settings().dense_threshold)
        evals, evecs = scipy.linalg.eigh(self.symmetric.toarray())
        return np.asarray(evals), np.asarray(evecs)

    def coo_rows(self) -> list[dict[str, Any]]:
        """Upper triangle of ``L`` as ``(i, j, value)`` with point ids."""
        coo = sp.triu(self.matrix).tocoo()
        return [
            {"i": int(self.ids[i]), "j": int(self.ids[j]), "value": float(v)}
            for i, j, v in sorted(zip(coo.row, coo.col, coo.data, strict=True))
        ]


def _edge_weight(b: dict[Pair, float] | None, a: int, c: int) -> float:
    if b is None:
        return 1.0
    key = (min(a, c), max(a, c))
    try:
        w = float(b[key])
    except KeyError:
        raise InvalidWeightError(f"no edge weight for pair {key}")
    if not (math.isfinite(w) and w > 0):
        raise InvalidWeightError(f"edge weight for {key} must be positive, got {w}")
    return w


@track_performance
def assemble(
    rel: NeighborRelation,
    window: Window | None = None,
    boundary: BoundaryMode | str = BoundaryMode.NEUMANN,
    h: dict[int, float] | None = None,
    b: dict[Pair, float] | None = None,
) -> DiscreteOperator:
    """Assemble the Laplacian on the vertices of ``window`` (default: the relation domain).

    Neumann mode drops edges leaving the window. Dirichlet mode keeps their
    weight on the diagonal (the full-graph degree), which kills heat at the cut.

    Raises:
        WindowTooSmallError: no vertex in the window
        InvalidWeightError: missing, nonpositive or non-finite weight

    """
    mode = BoundaryMode(boundary)
    ps = rel.pointset
    win = window if window is not None else rel.domain
    ids = ps.ids[win.contains(ps.coords)]
    if len(ids) == 0:
        raise WindowTooSmallError("operator window contains no vertices")
    index = {int(i): k for k, i in enumerate(ids)}
    hv = np.ones(len(ids))
    if h is not None:
        for k, i in enumerate(ids):
            if int(i) not in h:
                raise InvalidWeightError(f"no vertex measure for vertex {int(i)}")
            hv[k] = float(h[int(i)])
        if not np.all(np.isfinite(hv) & (hv > 0)):
            raise InvalidWeightError("vertex measure h must be positive and finite")
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    diag = np.zeros(len(ids))
    for a, c in sorted(rel.pairs):
        ia, ic = index.get(a), index.get(c)
        if ia is None and ic is None:
            continue
        w = _edge_weight(b, a, c)
        if ia is not None and ic is not None:
            rows += [ia, ic]
            cols += [ic, ia]
            vals += [-w, -w]
            diag[ia] += w
            diag[ic] += w
        elif mode is BoundaryMode.DIRICHLET:
            diag[ia if ia is not None else ic] += w  # type: ignore[index]
    n = len(ids)
    form = sp.csr_matrix((vals, (rows, cols)), shape=(n, n)) + sp.diags(diag)
    logger.debug("assembled discrete operator", n=n, nnz=form.nnz, boundary=mode.value, weighted=h is not None or b is not None)
    return DiscreteOperator(
        ids=np.array(ids, dtype=np.int64),
        form=sp.csr_matrix(form),
        h=hv,
        boundary=mode,
        window=win,
        weighted=h is not None or b is not None,
    )


def _resolve(op: DiscreteOperator, method: KernelMethod | str) -> KernelMethod:
    m = KernelMethod(method)
    if m is KernelMethod.AUTO:
        return KernelMethod.DENSE_EIG if op.n <= get_settings().dense_threshold else KernelMethod.KRYLOV
    return m


def _lanczos_exp(
    S: sp.csr_matrix,
    start: NDArray[np.float64],
    times: NDArray[np.float64],
    tol: float,
    max_iter: int,
) -> NDArray[np.float64]:
    """``exp(-t S) start`` for every ``t`` from one Krylov space (full reorthogonalization)."""
    norm = float(np.linalg.norm(start))
    n = len(start)
    if norm == 0:
        return np.zeros((len(times), n))
    m_cap = min(max_iter, n)
    Q = np.zeros((n, m_cap + 1))
    alphas: list[float] = []
    betas: list[float] = []
    Q[:, 0] = start / norm
    residual = math.inf
    for j in range(m_cap):
        w = S @ Q[:, j]
        alpha = float(Q[:, j] @ w)
        w = w - alpha * Q[:, j] - (betas[-1] * Q[:, j - 1] if j > 0 else 0.0)
        w -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
        beta = float(np.linalg.norm(w))
        alphas.append(alpha)
        theta, U = scipy.linalg.eigh_tridiagonal(np.array(alphas), np.array(betas))
        coeffs = U @ (np.exp(-np.outer(times, theta)) * U[0]).T  # (m, len(times))
        residual = float(np.max(beta * np.abs(coeffs[-1]))) if beta > 0 else 0.0
        if residual <= tol or beta <= 1e-14 * norm or j + 1 == n:
            return np.asarray(norm * (Q[:, : j + 1] @ coeffs).T)
        betas.append(beta)
        Q[:, j + 1] = w / beta
    raise KrylovConvergenceError(
        f"Lanczos did not reach tolerance {tol} within {m_cap} iterations (estimated error {residual:.3e})",
        residual=residual,
    )


def _expm_symmetric(
    op: DiscreteOperator,
    start: NDArray[np.float64],
    times: NDArray[np.float64],
    method: KernelMethod,
    tol: float,
) -> NDArray[np.float64]:
    """``exp(-t S) start`` as an array of shape (len(times), n)."""
    if method is KernelMethod.DENSE_EIG:
        evals, evecs = op.spectrum
        coeff = evecs.T @ start
        return np.asarray((np.exp(-np.outer(times, evals)) * coeff) @ evecs.T)
    if method is KernelMethod.KRYLOV:
        return _lanczos_exp(op.symmetric, start, times, tol, get_settings().krylov_max_iter)
    shift = float(op.symmetric.diagonal().max())
    positive = sp.csr_matrix(shift * sp.identity(op.n) - op.symmetric)
    return np.array([math.exp(-t * shift) * expm_multiply(t * positive, start) for t in times])


def propagate(
    op: DiscreteOperator,
    u: NDArray[np.float64],
    t: float,
    method: KernelMethod | str = KernelMethod.AUTO,
    tol: float = 1e-12,
) -> NDArray[np.float64]:
    """Semigroup action ``e^{-tL} u``."""
    if t < 0:
        raise InvalidInputError(f"time must be nonnegative, got {t}")
    vec = np.asarray(u, dtype=np.float64)
    if vec.shape != (op.n,):
        raise InvalidInputError(f"vector has shape {vec.shape}, operator has {op.n} vertices")
    root = np.sqrt(op.h)
    out = _expm_symmetric(op, root * vec, np.array([float(t)]), _resolve(op, method), tol)[0]
    return np.asarray(out / root)


@dataclass(slots=True)
class KernelSamples:
    """Heat kernel ``p_t(x, y)`` for one source; ``values[i, j]`` is time ``i``, target ``j``."""

    source: int
    targets: list[int]
    times: list[float]
    values: NDArray[np.float64]
    boundary: BoundaryMode
    method: KernelMethod
    h_source: float = 1.0
    h_targets: list[float] = field(default_factory=list)
    certificate: float | None = None
    normalization: str = KERNEL_NORMALIZATION

    def value(self, target: int, t: float) -> float:
        return float(self.values[self.times.index(t), self.targets.index(target)])

    def rows(self) -> list[dict[str, Any]]:
        cert = "" if self.certificate is None else self.certificate
        return [
            {
                "x_id": self.source,
                "y_id": y,
                "t": t,
                "p": float(self.values[i, j]),
                "mode": self.boundary.value,
                "certificate": cert,
            }
            for i, t in enumerate(self.times)
            for j, y in enumerate(self.targets)
        ]


def _check_times(times: list[float]) -> NDArray[np.float64]:
    arr = np.asarray(times, dtype=np.float64)
    if arr.ndim != 1 or len(arr) == 0 or not np.all(np.isfinite(arr) & (arr > 0)):
        raise InvalidInputError(f"times must be a nonempty list of positive reals, got {times!r}")
    return arr


@track_performance
@monitor_long_running(threshold_seconds=30.0)
def heat_kernel(
    op: DiscreteOperator,
    x: int,
    targets: list[int],
    times: list[float],
    method: KernelMethod | str = KernelMethod.AUTO,
    tol: float = 1e-12,
) -> KernelSamples:
    """Kernel values ``p_t(x, y)`` for every target and time.

    Raises:
        InvalidInputError: nonpositive time or vertex outside the window
        KrylovConvergenceError: Lanczos missed ``tol`` within the iteration cap

    """
    t_arr = _check_times(times)
    resolved = _resolve(op, method)
    ix = op.row(x)
    cols = np.array([op.row(y) for y in targets], dtype=np.int64)
    start = np.zeros(op.n)
    start[ix] = 1.0
    evolved = _expm_symmetric(op, start, t_arr, resolved, tol)
    values = evolved[:, cols] / np.sqrt(op.h[ix] * op.h[cols])
    logger.debug("computed heat kernel", source=x, targets=len(cols), times=len(t_arr), method=resolved.value)
    return KernelSamples(
        source=int(x),
        targets=[int(y) for y in targets],
        times=[float(t) for t in t_arr],
        values=np.asarray(values),
        boundary=op.boundary,
        method=resolved,
        h_source=float(op.h[ix]),
        h_targets=[float(v) for v in op.h[cols]],
    )


def truncation_discrepancy(
    rel: NeighborRelation,
    x: int,
    targets: list[int],
    times: list[float],
    window: Window | None = None,
    h: dict[int, float] | None = None,
    b: dict[Pair, float] | None = None,
    method: KernelMethod | str = KernelMethod.AUTO,
) -> NDArray[np.float64]:
    """Relative gap ``|p^D - p^N| / p^N`` per time (rows) and target (columns)."""
    kernels = {
        mode: heat_kernel(assemble(rel, window, mode, h, b), x, targets, times, method)
        for mode in (BoundaryMode.DIRICHLET, BoundaryMode.NEUMANN)
    }
    pd, pn = kernels[BoundaryMode.DIRICHLET].values, kernels[BoundaryMode.NEUMANN].values
    return np.asarray(np.abs(pd - pn) / pn)


def truncation_certificate(
    rel: NeighborRelation,
    x: int,
    targets: list[int],
    times: list[float],
    tol: float = 1e-6,
    window: Window | None = None,
    h: dict[int, float] | None = None,
    b: dict[Pair, float] | None = None,
    method: KernelMethod | str = KernelMethod.AUTO,
) -> float:
    """Largest relative gap ``|p^D - p^N| / p^N`` between the two window truncations.

    Values below ``tol`` certify that the window boundary does not affect the
    reported kernel.
    """
    value = float(np.max(truncation_discrepancy(rel, x, targets, times, window, h, b, method)))
    logger.info("truncation certificate", source=x, value=value, certified=value < tol)
    return value


async def heat_kernels_concurrently(
    op: DiscreteOperator,
    sources: list[int],
    targets: dict[int, list[int]],
    times: list[float],
    method: KernelMethod | str = KernelMethod.AUTO,
    tol: float = 1e-12,
    max_workers: int | None = None,
) -> list[KernelSamples]:
    """Kernels for several sources, at most ``max_workers`` in flight; sorted by source."""
    if op.n <= get_settings().dense_threshold and _resolve(op, method) is KernelMethod.DENSE_EIG:
        _ = op.spectrum
    semaphore = asyncio.Semaphore(max_workers or get_settings().max_workers)

    async def one(source: int) -> KernelSamples:
        async with semaphore:
            return await asyncio.to_thread(heat_kernel, op, source, targets[source], times, method, tol)

    async with asyncio.TaskGroup() as tg:
        tasks = [tg.create_task(one(s)) for s in sources]
    return sorted((t.result() for t in tasks), key=lambda k: k.source)


class KernelRows(Protocol):
    def rows(self) -> list[dict[str, Any]]: ...


def write_kernels(samples: list[KernelSamples] | list[KernelRows], path: Path, extra: list[dict[str, Any]] | None = None) -> None:
    """Kernel CSV ``x_id,y_id,t,p,mode,certificate`` (plus any extra columns given per row)."""
    rows = [row for s in samples for row in s.rows()]
    fields = ["x_id", "y_id", "t", "p", "mode", "certificate"]
    if extra:
        rows = [{**row, **more} for row, more in zip(rows, extra, strict=True)]
        fields += [k for k in extra[0] if k not in fields]
    export_to_csv(rows, path, fieldnames=fields)


def write_operator(op: DiscreteOperator, path: Path) -> None:
    export_to_csv(op.coo_rows(), path, fieldnames=["i", "j", "value"])
