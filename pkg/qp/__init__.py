from qp.qp_solver import (
    QpProblem,
    QpSettings,
    QpSolution,
    QpStatus,
    ActiveSetQpSolver,
    solve_qp,
    kkt_residuals,
    enumerate_active_sets,
)

__all__ = [
    "QpProblem",
    "QpSettings",
    "QpSolution",
    "QpStatus",
    "ActiveSetQpSolver",
    "solve_qp",
    "kkt_residuals",
    "enumerate_active_sets",
]
