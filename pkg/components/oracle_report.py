import logging

from config import UNIFORMIZATION_K, RunConfig
from services.errors import TreeflowError
from services.flow_kernels import KernelQuery, flow_heat_kernel
from services.oracles import mc_heat, uniformization_heat
from services.tree_geometry import TreeParams
from components.kernel_report import kernel_pairs

logger = logging.getLogger(__name__)

MC_SIGMAS = 4.0

ORACLE_COLUMNS = (
    "q", "x", "y", "t", "d", "flow", "uniformization", "uniformization_bound", "flow_agree",
    "mc", "mc_standard_error", "mc_sigmas", "mc_agree", "samples", "seed", "K",
)


def compare_oracles(x, y, t: float, tree: TreeParams, samples: int, seed: int, threads: int = 1) -> dict:
    """flow_heat_kernel against both oracles at one point."""
    query = KernelQuery.from_vertices(x, y, t).validate()
    flow = flow_heat_kernel(query, tree)
    K = max(UNIFORMIZATION_K, query.d)
    unif = uniformization_heat(t, x, y, tree, K=K)
    mc = mc_heat(t, x, y, tree, samples=samples, seed=seed, workers=threads)
    se = mc.meta["standard_error"]
    gap = abs(mc.value - unif.value)
    sigmas = gap / se if se > 0 else (0.0 if gap <= unif.error_bound else float("inf"))
    return {
        "q": tree.q, "x": str(x), "y": str(y), "t": t, "d": query.d, "flow": flow,
        "uniformization": unif.value, "uniformization_bound": unif.error_bound,
        "flow_agree": abs(flow - unif.value) <= unif.error_bound + 1e-10 * max(abs(unif.value), 1.0),
        "mc": mc.value, "mc_standard_error": se, "mc_sigmas": sigmas,
        "mc_agree": gap <= MC_SIGMAS * se + unif.error_bound, "samples": samples, "seed": seed, "K": K,
    }


def build_oracle_rows(config: RunConfig, tree: TreeParams) -> dict:
    """Uniformization vs Monte Carlo vs flow kernel; seeds advance per row."""
    try:
        rows, failures = [], []
        index = 0
        for x, y in kernel_pairs(config, tree):
            for t in config.t:
                row = compare_oracles(x, y, t, tree, config.samples, config.seed + index, config.threads)
                index += 1
                rows.append(row)
                for check in ("flow_agree", "mc_agree"):
                    if not row[check]:
                        failures.append({"status": "error", "kind": "invariant", "check": check,
                                         "x": row["x"], "y": row["y"], "t": t})
                logger.info("oracle-compare x=%s y=%s t=%g sigmas=%.3g", row["x"], row["y"], t, row["mc_sigmas"])
        return {"status": "success", "rows": rows, "columns": ORACLE_COLUMNS, "failures": failures}
    except TreeflowError as e:
        logger.error("oracle comparison failed: %s", e)
        return dict(e.to_record(), error=e)
    except ValueError as e:
        return {"status": "error", "kind": "config", "message": str(e), "error": e}
