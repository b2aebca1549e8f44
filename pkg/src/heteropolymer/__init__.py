"""Random heteropolymer near a selective interface with droplets.

Exact partition functions via renewal recursions, exact path sampling,
replica estimates of the free energy and phase classification.
"""
from .kernel import WalkKernel, build_kernel, escape_probability, get_kernel
from .model import Disorder, ModelParams, replica_seed, sample_disorder, stream
from .partition import (PartitionTables, brute_force_partition, compute_tables,
                        free_energy_estimate)
from .phase import (DELOCALIZED, LOCALIZED, UNCERTAIN, bound_delocalized, bound_localized,
                    classify_point, critical_h, diffusive_threshold, phase_scan, tail_fit)
from .sampler import endpoint_distribution, return_count_stats, sample_endpoints, sample_paths

__all__ = [
    "WalkKernel", "build_kernel", "escape_probability", "get_kernel",
    "Disorder", "ModelParams", "replica_seed", "sample_disorder", "stream",
    "PartitionTables", "brute_force_partition", "compute_tables", "free_energy_estimate",
    "DELOCALIZED", "LOCALIZED", "UNCERTAIN", "bound_delocalized", "bound_localized",
    "classify_point", "critical_h", "diffusive_threshold", "phase_scan", "tail_fit",
    "endpoint_distribution", "return_count_stats", "sample_endpoints", "sample_paths",
]
