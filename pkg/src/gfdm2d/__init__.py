"""Meshfree GFDM solver for 2D Poisson problems with jumping diffusivity."""

from gfdm2d.pointcloud import (
    PointCloud,
    Neighborhood,
    generate_uniform,
    generate_advancing_front,
    build_neighborhoods,
    quality_check,
    refinement_radius,
)

__all__ = [
    "PointCloud",
    "Neighborhood",
    "generate_uniform",
    "generate_advancing_front",
    "build_neighborhoods",
    "quality_check",
    "refinement_radius",
]

__version__ = "0.1.0"
