import logging
from typing import List, Tuple

from config import POISSON_TOL, SERIES_TOL, UNIFORMIZATION_K, RunConfig
from services.errors import ConvergenceError, TreeflowError
from services.flow_kernels import KernelQuery, flow_heat_kernel, poisson_kernel, riesz_kernel
from services.oracles import uniformization_heat
from services.tree_geometry import ORIGIN, TreeParams, Vertex, parse_vertex

logger = logging.getLogger(__name__)

KERNEL_COLUMNS = (
    "q", "x", "y", "t", "level_x", "level_y", "d", "heat", "poisson", "riesz", "oracle", "oracle_bound",
    "oracle_agree", "series_tol", "poisson_tol", "riesz_tol", "riesz_t_max", "K",
)


def kernel_pairs(config: RunConfig, tree: TreeParams) -> List[Tuple[Vertex, Vertex]]:
    """--x/--y when given, else o against the vertex d steps straight below it for each --d."""
    if config.x is not None:
        return [(parse_vertex(config.x, tree), parse_vertex(config.y, tree))]
    if config.d:
        return [(ORIGIN, Vertex(0, (0,) * d)) for d in config.d]
    return [(ORIGIN, ORIGIN)]


def _kernel_row(x: Vertex, y: Vertex, t: float, config: RunConfig, tree: TreeParams, failures: list) -> dict:
    query = KernelQuery.from_vertices(x, y, t).validate()
    heat = flow_heat_kernel(query, tree)
    poisson = heat if t == 0 else float("nan")
    if t > 0:
        try:
            poisson = poisson_kernel(query, tree, POISSON_TOL)
        except ConvergenceError as e:
            failures.append(dict(e.to_record(), x=str(x), y=str(y), t=t, column="poisson"))
    riesz = float("nan")
    try:
        riesz = riesz_kernel(x, y, tree, tol=config.tol, t_max=config.tmax)
    except ConvergenceError as e:
        failures.append(dict(e.to_record(), x=str(x), y=str(y), t=t, column="riesz"))

    K = max(UNIFORMIZATION_K, query.d)
    oracle = uniformization_heat(t, x, y, tree, K=K)
    agree = abs(heat - oracle.value) <= oracle.error_bound + 1e-10 * max(abs(oracle.value), 1.0)
    if not agree:
        failures.append({"status": "error", "kind": "invariant", "check": "oracle-agreement",
                         "x": str(x), "y": str(y), "t": t, "heat": heat, "oracle": oracle.value,
                         "bound": oracle.error_bound})
    return {
        "q": tree.q, "x": str(x), "y": str(y), "t": t, "level_x": x.level, "level_y": y.level, "d": query.d,
        "heat": heat, "poisson": poisson, "riesz": riesz, "oracle": oracle.value,
        "oracle_bound": oracle.error_bound, "oracle_agree": agree, "series_tol": SERIES_TOL,
        "poisson_tol": POISSON_TOL, "riesz_tol": config.tol, "riesz_t_max": config.tmax, "K": K,
    }


def build_kernel_rows(config: RunConfig, tree: TreeParams) -> dict:
    """Point evaluations of H_t, P_t and R with the uniformization oracle alongside."""
    try:
        pairs = kernel_pairs(config, tree)
        rows, failures = [], []
        for x, y in pairs:
            for t in config.t:
                rows.append(_kernel_row(x, y, t, config, tree, failures))
        logger.info("kernel: %d rows, %d failures", len(rows), len(failures))
        return {"status": "success", "rows": rows, "columns": KERNEL_COLUMNS, "failures": failures}
    except TreeflowError as e:
        logger.error("kernel report failed: %s", e)
        return dict(e.to_record(), error=e)
    except ValueError as e:
        return {"status": "error", "kind": "config", "message": str(e), "error": e}

