"""Finite element discretisation on simplicial meshes."""
