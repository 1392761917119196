"""Hierarchical low-rank cavity radiation coupled to transient FEM heat conduction."""
__version__ = "0.1.0"
