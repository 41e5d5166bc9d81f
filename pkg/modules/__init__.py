"""
Penalized Convex Relaxations for AC OPF - Modules Package
=========================================================

This package contains the library modules behind the ``app.py`` command line:

- netmodel / case_format: case parsing, admittances, branch flows, canonical JSON
- opf: operating points, objective, constraint residuals, flat start
- relax / chordal / conic_program: lifting, cones, penalty, program assembly
- cones / kkt_solver / conic_solver: embedded interior-point conic solver
- sequential: sequential penalized relaxation and its metrics
- analysis: Jacobians, active sets, LICQ and sensitivity checks
- cli, config, run_logging, schemas, report_exporter, batch_runner, performance_monitor
"""

__version__ = "1.0.0"
__author__ = "Penalized OPF Relaxations"

# Import key names for easy access
try:
    from .netmodel import Network, AdmittanceSet, parse_matpower, load_case, build_admittances, branch_flow
    from .opf import OperatingPoint, objective, residuals, is_feasible, flat_start
    from .relax import ConeKind, PenaltySpec, assemble, penalty_matrix, extract_lifted
    from .conic_solver import SolverSettings, SolveStatus, solve
    from .sequential import StoppingRule, RunReport, run, lower_bound
    from .analysis import jacobians, active_sets, licq_report, sensitivity_measure

    __all__ = [
        'Network', 'AdmittanceSet', 'parse_matpower', 'load_case', 'build_admittances', 'branch_flow',
        'OperatingPoint', 'objective', 'residuals', 'is_feasible', 'flat_start',
        'ConeKind', 'PenaltySpec', 'assemble', 'penalty_matrix', 'extract_lifted',
        'SolverSettings', 'SolveStatus', 'solve',
        'StoppingRule', 'RunReport', 'run', 'lower_bound',
        'jacobians', 'active_sets', 'licq_report', 'sensitivity_measure',
    ]

except ImportError as e:
    # Numerical dependencies missing; the version string stays importable
    import logging
    logging.getLogger(__name__).warning(f"Some modules could not be imported: {e}")
    __all__ = []
