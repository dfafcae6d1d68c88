"""Planar map export as ASCII PLY.

Each landmark polygon becomes one face carrying the landmark id and a
label code (0 = ground, 1 = wall) so downstream viewers can color by
surface type.
"""

import numpy as np

from ..errors import DataFormatError
from ..geometry import GROUND, WALL

LABEL_CODE = {GROUND: 0, WALL: 1}
CODE_LABEL = {v: k for k, v in LABEL_CODE.items()}


def save_mesh(path, landmarks) -> None:
    verts = []
    faces = []
    for lm in landmarks:
        poly = np.asarray(lm.polygon, dtype=float).reshape(-1, 3)
        if len(poly) < 3:
            continue
        base = len(verts)
        verts.extend(poly)
        faces.append((list(range(base, base + len(poly))), lm.id, LABEL_CODE[lm.label]))
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write("comment planar map; label codes: 0=ground 1=wall\n")
        fh.write(f"element vertex {len(verts)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write(f"element face {len(faces)}\n")
        fh.write("property list uchar int vertex_indices\n")
        fh.write("property int landmark_id\nproperty uchar label\n")
        fh.write("end_header\n")
        for v in verts:
            fh.write(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for idx, lid, code in faces:
            fh.write(f"{len(idx)} {' '.join(map(str, idx))} {lid} {code}\n")


def load_mesh(path) -> list:
    """Returns [(landmark_id, label, vertices (V, 3))] for round trips."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != "ply":
        raise DataFormatError("not a PLY file", path=path, line=1)
    n_vert = n_face = None
    body = None
    for k, ln in enumerate(lines):
        parts = ln.split()
        if parts[:2] == ["element", "vertex"]:
            n_vert = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            n_face = int(parts[2])
        elif ln == "end_header":
            body = k + 1
            break
    if body is None or n_vert is None or n_face is None:
        raise DataFormatError("incomplete PLY header", path=path, line=len(lines))
    verts = np.array(
        [[float(v) for v in lines[body + i].split()] for i in range(n_vert)]
    ).reshape(n_vert, 3)
    out = []
    for i in range(n_face):
        parts = lines[body + n_vert + i].split()
        cnt = int(parts[0])
        idx = [int(p) for p in parts[1 : 1 + cnt]]
        lid = int(parts[1 + cnt])
        code = int(parts[2 + cnt])
        if code not in CODE_LABEL:
            raise DataFormatError(f"unknown label code {code}", path=path, line=body + n_vert + i + 1)
        out.append((lid, CODE_LABEL[code], verts[idx]))
    return out
