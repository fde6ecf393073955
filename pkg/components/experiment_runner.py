import logging
from typing import Callable, Dict, List

from config import DEFAULT_WEAKTYPE_N, G_CUTOFF, RunConfig
from services.errors import TreeflowError
from services.flow_kernels import TGridPolicy
from services.hardy_lab import (
    SCHEMAS,
    exp_atom_bound,
    exp_g_partials,
    exp_gn_scaling,
    exp_riesz_scaling,
    exp_weak_type,
    local_bound_study,
)
from services.radial_summation import TruncationPolicy
from services.tree_geometry import TreeParams

logger = logging.getLogger(__name__)


def _truncation(config: RunConfig) -> TruncationPolicy:
    return TruncationPolicy(eps=config.eps, max_radius=config.max_radius)


EXPERIMENTS: Dict[str, Callable[[RunConfig, TreeParams, TGridPolicy], List[dict]]] = {
    "exp-gn": lambda c, tree, p: exp_gn_scaling(tree, c.m_list, p, _truncation(c), c.threads),
    "exp-riesz": lambda c, tree, p: exp_riesz_scaling(tree, c.m_list, p, _truncation(c), c.tol, c.threads),
    "exp-atoms": lambda c, tree, p: exp_atom_bound(tree, c.batch, c.caps, c.seed, p, _truncation(c), c.threads),
    "exp-weaktype": lambda c, tree, p: exp_weak_type(tree, c.n or list(DEFAULT_WEAKTYPE_N), c.lambda_grid, p,
                                                     _truncation(c), c.threads),
    "exp-g": lambda c, tree, p: exp_g_partials(tree, c.n[0] if c.n else G_CUTOFF, p, _truncation(c), c.threads),
    "exp-local": lambda c, tree, p: local_bound_study(tree, c.levels, p, c.threads),
}


def run_experiment(config: RunConfig, tree: TreeParams, policy: TGridPolicy = None) -> dict:
    """Rows of one exp-* subcommand; rows that did not converge are reported as failures."""
    runner = EXPERIMENTS.get(config.subcommand)
    if runner is None:
        return {"status": "error", "kind": "config", "message": f"not an experiment: {config.subcommand}"}
    try:
        rows = runner(config, tree, policy or TGridPolicy())
    except TreeflowError as e:
        logger.error("%s failed: %s", config.subcommand, e)
        return dict(e.to_record(), error=e)
    failures = [
        {"status": "error", "kind": "non-convergence", "experiment": config.subcommand, "row": i}
        for i, row in enumerate(rows) if not row.get("converged", True)
    ]
    logger.info("%s: %d rows, %d not converged", config.subcommand, len(rows), len(failures))
    return {"status": "success", "rows": rows, "columns": SCHEMAS[config.subcommand], "failures": failures}
