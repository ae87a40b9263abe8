"""Semi-Lagrangian finite element exterior calculus solver for 2D incompressible flow."""

from feec_sl.femspace import DiscreteOneForm, DiscreteZeroForm, DofMap
from feec_sl.mesh import Mesh, generate_disk, generate_structured, load_mesh

__all__ = [
    "DiscreteOneForm",
    "DiscreteZeroForm",
    "DofMap",
    "Mesh",
    "generate_disk",
    "generate_structured",
    "load_mesh",
]
