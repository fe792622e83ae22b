"""Explicit component-based topology optimization of shells on triangulated surfaces."""
import os as _os

_threads = _os.environ.get("SURFMMC_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .errors import (SurfMmcError, MeshError, ChartError, ConfigError,  # noqa: E402
                     NumericalError)
from .mesh import (TriMesh, TopologySummary, SeamMap, load_mesh, save_mesh,  # noqa: E402
                   topology_summary, boundary_loops, cut_along_path, fill_hole,
                   extract_submesh)
from .conformal import (ConformalChart, BeltramiField, build_laplacian,  # noqa: E402
                        harmonic_disk_map, beltrami_coefficient, rectangle_map,
                        build_chart, isometric_flattening)
from .mmc import (Component, KSParams, DesignState, Atlas, ChartCoverage,  # noqa: E402
                  tdf_component, tdf_component_grad, ks_aggregate, global_tdf,
                  overlap_mismatch)
from .fea import (HeavisideParams, ShellMaterial, LoadCase, FieldSnapshot,  # noqa: E402
                  ShellModel, heaviside, element_density, element_stiffness, solve)
from .sensitivity import (SensitivityReport, sensitivity_report,  # noqa: E402
                          compliance_gradient, volume_gradient,
                          check_gradients)
from .optimizer import MmaState, StopRule, mma_step, run  # noqa: E402
from .pipeline import (ProblemConfig, preprocess, initialize_components,  # noqa: E402
                       run_pipeline, export_vtk, load_vtk)

__version__ = "0.1.0"

__all__ = [
    "SurfMmcError", "MeshError", "ChartError", "ConfigError", "NumericalError",
    "TriMesh", "TopologySummary", "SeamMap", "load_mesh", "save_mesh",
    "topology_summary", "boundary_loops", "cut_along_path", "fill_hole",
    "extract_submesh",
    "ConformalChart", "BeltramiField", "build_laplacian", "harmonic_disk_map",
    "beltrami_coefficient", "rectangle_map", "build_chart", "isometric_flattening",
    "Component", "KSParams", "DesignState", "Atlas", "ChartCoverage",
    "tdf_component", "tdf_component_grad", "ks_aggregate", "global_tdf",
    "overlap_mismatch",
    "HeavisideParams", "ShellMaterial", "LoadCase", "FieldSnapshot", "ShellModel",
    "heaviside", "element_density", "element_stiffness", "solve",
    "SensitivityReport", "sensitivity_report", "compliance_gradient",
    "volume_gradient", "check_gradients",
    "MmaState", "StopRule", "mma_step", "run",
    "ProblemConfig", "preprocess", "initialize_components", "run_pipeline",
    "export_vtk", "load_vtk",
]
