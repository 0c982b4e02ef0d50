from ddsmpc.integrations.conic_solver import (
    ConicSolver,
    SolveReport,
    SolveSettings,
    SolveStatus,
)

__all__ = ["ConicSolver", "SolveReport", "SolveSettings", "SolveStatus"]
