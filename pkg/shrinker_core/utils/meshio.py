"""
Mesh File I/O - OBJ (exact text round trip) and binary PLY via trimesh
"""
import os
from typing import List, Optional, Tuple

import numpy as np
import trimesh

from utils.errors import MeshIOError


def write_obj(
    path: str,
    vertices: np.ndarray,
    faces: np.ndarray,
    comments: Optional[List[str]] = None
) -> str:
    """
    Write a triangle mesh as OBJ with 17 significant digits

    Args:
        path: Output file
        vertices: (n, 3) float array
        faces: (m, 3) zero-based indices
        comments: Header lines written as '# ...'

    Returns:
        The path written
    """
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 3 or faces.ndim != 2 or faces.shape[1] != 3:
        raise MeshIOError("write_obj expects (n, 3) vertices and (m, 3) faces")

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    try:
        with open(path, 'w') as f:
            for line in comments or []:
                f.write(f"# {line}\n")
            for v in vertices:
                f.write("v %.17g %.17g %.17g\n" % (v[0], v[1], v[2]))
            for t in faces + 1:
                f.write(f"f {t[0]} {t[1]} {t[2]}\n")
    except OSError as e:
        raise MeshIOError(f"Could not write {path}: {e}")
    return path


def read_obj(path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Read vertices and triangular faces written by write_obj"""
    if not os.path.exists(path):
        raise MeshIOError(f"OBJ file not found: {path}")

    vertices, faces = [], []
    with open(path, 'r') as f:
        for number, line in enumerate(f, start=1):
            parts = line.split()
            if not parts or parts[0].startswith('#'):
                continue
            if parts[0] == 'v':
                vertices.append([float(value) for value in parts[1:4]])
            elif parts[0] == 'f':
                indices = [int(item.split('/')[0]) - 1 for item in parts[1:]]
                if len(indices) != 3:
                    raise MeshIOError(f"{path}:{number}: only triangles are supported")
                faces.append(indices)

    return np.array(vertices, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def to_trimesh(vertices: np.ndarray, faces: np.ndarray) -> trimesh.Trimesh:
    """Wrap arrays without merging or reordering anything"""
    return trimesh.Trimesh(vertices=np.asarray(vertices), faces=np.asarray(faces), process=False)


def write_ply(path: str, vertices: np.ndarray, faces: np.ndarray) -> str:
    """Binary little-endian PLY with vertex and face elements"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    data = trimesh.exchange.ply.export_ply(to_trimesh(vertices, faces), encoding='binary')
    with open(path, 'wb') as f:
        f.write(data)
    return path


def euler_characteristic(vertices: np.ndarray, faces: np.ndarray) -> int:
    """V - E + F of a triangle mesh"""
    return int(to_trimesh(vertices, faces).euler_number)
