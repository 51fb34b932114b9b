"""Conforming triangulations with circumcenter geometry and nested refinement.

The cell-centered flux approximation downstream divides by the distance
between each triangle's circumcircle center and its edges, so meshes must be
strictly acute: every angle below 90 deg minus a safety margin.  The
structured generator therefore uses an offset triangular lattice in the
interior and stretched, notched columns along vertical boundaries and
internal material interfaces, which keeps all angles acute including at the
rectangle corners.  Arbitrary meshes can be imported from a small text
format and are pushed through the same quality gate.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

TAG_NAMES = ("I", "O", "W", "S")  # inflow, outflow, wall, symmetry line
TAG_INDEX = {name: i for i, name in enumerate(TAG_NAMES)}
INTERIOR = -1

# Notch apex offset and boundary-column width of the generator, in units of
# the row spacing / column spacing.  Chosen so that corner and notch
# triangles stay acute for row/column aspect ratios in roughly [0.55, 2.5].
_APEX_FACTOR = 1.06
_COLUMN_PAD = 0.08


class MeshError(Exception):
    """Invalid mesh topology or geometry."""


class MeshQualityError(MeshError):
    """Mesh rejected by the acute-angle quality gate."""

    def __init__(self, message, bad_elements):
        super().__init__(message)
        self.bad_elements = list(bad_elements)


@dataclass
class ParentLinks:
    """Connection of a refined mesh to the next coarser level."""

    coarse: "Mesh"
    elem_parent: np.ndarray        # (M,) coarse element of each fine element
    elem_children: np.ndarray      # (Mc, 4)
    edge_children: np.ndarray      # (Ec, 2) fine halves of each coarse edge
    edge_parent_edge: np.ndarray   # (E,) coarse edge id or -1
    edge_parent_elem: np.ndarray   # (E,) coarse element id or -1 (medial edges)


@dataclass
class Mesh:
    """Immutable triangle mesh with edge topology and circumcenter data.

    Triangles are counterclockwise; local edge i of an element is the edge
    opposite local vertex i.  `edge_elems[e]` lists the one or two incident
    elements (-1 for none), `edge_local[e]` the matching local edge indices.
    `circumdist[K, i]` is the signed distance from the circumcenter of K to
    edge i (positive when the center lies strictly inside K's side).
    """

    nodes: np.ndarray              # (N, 2)
    tris: np.ndarray               # (M, 3) node ids, CCW
    regions: np.ndarray            # (M,)
    edge_nodes: np.ndarray         # (E, 2) sorted node ids
    edge_tags: np.ndarray          # (E,) TAG_INDEX value or INTERIOR
    elem_edges: np.ndarray         # (M, 3)
    edge_elems: np.ndarray         # (E, 2)
    edge_local: np.ndarray         # (E, 2)
    areas: np.ndarray              # (M,)
    centroids: np.ndarray          # (M, 2)
    circumcenters: np.ndarray      # (M, 2)
    circumdist: np.ndarray         # (M, 3)
    edge_lengths: np.ndarray       # (E,)
    edge_midpoints: np.ndarray     # (E, 2)
    edge_normals: np.ndarray       # (M, 3, 2) outward unit normals
    parent: ParentLinks | None = None
    min_angle_deg: float = field(default=0.0)
    max_angle_deg: float = field(default=0.0)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.tris)

    @property
    def n_edges(self):
        return len(self.edge_nodes)

    def element_points(self, idx=slice(None)):
        """Vertex coordinates per element, shape (?, 3, 2)."""
        return self.nodes[self.tris[idx]]

    def boundary_edges(self, tag: str | None = None) -> np.ndarray:
        if tag is None:
            return np.flatnonzero(self.edge_tags != INTERIOR)
        return np.flatnonzero(self.edge_tags == TAG_INDEX[tag])

    def neighbor(self, elem: int, edge: int):
        """Element across `edge` from `elem`, or the boundary tag string."""
        e0, e1 = self.edge_elems[edge]
        if elem == e0:
            other = e1
        elif elem == e1:
            other = e0
        else:
            raise MeshError(f"edge {edge} is not an edge of element {elem}")
        if other >= 0:
            return int(other)
        return TAG_NAMES[self.edge_tags[edge]]


def triangle_areas(points: np.ndarray) -> np.ndarray:
    """Signed areas of triangles given as (..., 3, 2) vertex arrays."""
    d1 = points[..., 1, :] - points[..., 0, :]
    d2 = points[..., 2, :] - points[..., 0, :]
    return 0.5 * (d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0])


def triangle_angles(points: np.ndarray) -> np.ndarray:
    """Interior angles in degrees, shape (..., 3), angle i at vertex i."""
    angles = np.empty(points.shape[:-1])
    for i in range(3):
        u = points[..., (i + 1) % 3, :] - points[..., i, :]
        v = points[..., (i + 2) % 3, :] - points[..., i, :]
        dot = (u * v).sum(axis=-1)
        nrm = np.linalg.norm(u, axis=-1) * np.linalg.norm(v, axis=-1)
        angles[..., i] = np.degrees(np.arccos(np.clip(dot / nrm, -1.0, 1.0)))
    return angles


def circumcenters_of(points: np.ndarray) -> np.ndarray:
    """Circumcircle centers of (..., 3, 2) triangles.

    Raises MeshError for degenerate (collinear) triangles.
    """
    a, b, c = points[..., 0, :], points[..., 1, :], points[..., 2, :]
    d = 2.0 * (a[..., 0] * (b[..., 1] - c[..., 1])
               + b[..., 0] * (c[..., 1] - a[..., 1])
               + c[..., 0] * (a[..., 1] - b[..., 1]))
    if np.any(np.abs(d) < 1e-300):
        raise MeshError("degenerate triangle: vertices are collinear")
    a2 = (a * a).sum(axis=-1)
    b2 = (b * b).sum(axis=-1)
    c2 = (c * c).sum(axis=-1)
    ux = (a2 * (b[..., 1] - c[..., 1]) + b2 * (c[..., 1] - a[..., 1])
          + c2 * (a[..., 1] - b[..., 1])) / d
    uy = (a2 * (c[..., 0] - b[..., 0]) + b2 * (a[..., 0] - c[..., 0])
          + c2 * (b[..., 0] - a[..., 0])) / d
    return np.stack([ux, uy], axis=-1)


def circumcenter_edge_distances(points: np.ndarray) -> np.ndarray:
    """Signed circumcenter-to-edge distances, (..., 3).

    Entry i refers to the edge opposite vertex i.  For counterclockwise
    triangles the distance is positive iff the circumcenter lies on the
    interior side of the edge; it vanishes for right triangles (center on
    the hypotenuse) and goes negative for obtuse ones.
    """
    cc = circumcenters_of(points)
    dist = np.empty(points.shape[:-1])
    for i in range(3):
        p1 = points[..., (i + 1) % 3, :]
        p2 = points[..., (i + 2) % 3, :]
        t = p2 - p1
        length = np.linalg.norm(t, axis=-1)
        # positive to the left of p1->p2, which is the interior for CCW tris
        cross = t[..., 0] * (cc[..., 1] - p1[..., 1]) - t[..., 1] * (cc[..., 0] - p1[..., 0])
        dist[..., i] = cross / length
    return dist


def _build_edge_tables(tris: np.ndarray):
    n_elem = len(tris)
    pair_map: dict[tuple[int, int], int] = {}
    edge_nodes = []
    elem_edges = np.empty((n_elem, 3), dtype=np.int64)
    edge_elems = []
    edge_local = []
    for k in range(n_elem):
        for i in range(3):
            a, b = tris[k, (i + 1) % 3], tris[k, (i + 2) % 3]
            key = (a, b) if a < b else (b, a)
            e = pair_map.get(key)
            if e is None:
                e = len(edge_nodes)
                pair_map[key] = e
                edge_nodes.append(key)
                edge_elems.append([k, -1])
                edge_local.append([i, -1])
            else:
                if edge_elems[e][1] != -1:
                    raise MeshError(f"edge {key} is shared by more than two triangles")
                edge_elems[e][1] = k
                edge_local[e][1] = i
            elem_edges[k, i] = e
    return (np.asarray(edge_nodes, dtype=np.int64), elem_edges,
            np.asarray(edge_elems, dtype=np.int64), np.asarray(edge_local, dtype=np.int64))


def mesh_from_arrays(nodes, tris, regions=None, boundary_tags=None,
                     quality_margin_deg: float | None = 1.0,
                     parent: ParentLinks | None = None) -> Mesh:
    """Assemble a Mesh from raw arrays, validating topology and quality.

    `boundary_tags` maps sorted node pairs (a, b) to a tag letter; every
    boundary edge must be covered.  Pass quality_margin_deg=None to skip the
    acute-angle gate (test fixtures that deliberately use right triangles).
    """
    nodes = np.asarray(nodes, dtype=float)
    tris = np.asarray(tris, dtype=np.int64)
    if nodes.ndim != 2 or nodes.shape[1] != 2:
        raise MeshError("nodes must be an (N, 2) array")
    if tris.ndim != 2 or tris.shape[1] != 3:
        raise MeshError("triangles must be an (M, 3) array")
    if tris.min(initial=0) < 0 or tris.max(initial=-1) >= len(nodes):
        raise MeshError("triangle node index out of range")
    regions = (np.zeros(len(tris), dtype=np.int64) if regions is None
               else np.asarray(regions, dtype=np.int64))

    pts = nodes[tris]
    signed = triangle_areas(pts)
    flip = signed < 0
    if np.any(flip):
        tris = tris.copy()
        tris[flip] = tris[flip][:, [0, 2, 1]]
        pts = nodes[tris]
        signed = triangle_areas(pts)
    if np.any(signed <= 0):
        raise MeshError("zero-area triangle in mesh")

    edge_nodes, elem_edges, edge_elems, edge_local = _build_edge_tables(tris)
    n_edges = len(edge_nodes)

    edge_tags = np.full(n_edges, INTERIOR, dtype=np.int64)
    boundary = edge_elems[:, 1] == -1
    if boundary_tags is not None:
        for (a, b), tag in boundary_tags.items():
            key = (a, b) if a < b else (b, a)
            hit = np.flatnonzero((edge_nodes[:, 0] == key[0]) & (edge_nodes[:, 1] == key[1]))
            if len(hit) != 1:
                raise MeshError(f"tagged edge {key} not found in mesh")
            e = hit[0]
            if not boundary[e]:
                raise MeshError(f"edge {key} is interior but carries boundary tag {tag}")
            if tag not in TAG_INDEX:
                raise MeshError(f"unknown boundary tag {tag!r} (expected one of {TAG_NAMES})")
            edge_tags[e] = TAG_INDEX[tag]
    untagged = boundary & (edge_tags == INTERIOR)
    if np.any(untagged):
        miss = edge_nodes[untagged][:5].tolist()
        raise MeshError(f"boundary edges without tag, e.g. {miss}")

    angles = triangle_angles(pts)
    min_angle = float(angles.min())
    max_angle = float(angles.max())
    if quality_margin_deg is not None:
        limit = 90.0 - quality_margin_deg
        bad = np.flatnonzero((angles >= limit).any(axis=1))
        if len(bad):
            worst = angles[bad].max(axis=1)
            detail = ", ".join(f"#{k} ({a:.2f} deg)" for k, a in zip(bad[:8], worst[:8]))
            raise MeshQualityError(
                f"{len(bad)} triangles with an angle >= {limit:.2f} deg: {detail}", bad)

    cc = circumcenters_of(pts)
    cdist = circumcenter_edge_distances(pts)
    centroids = pts.mean(axis=1)
    edge_vec = nodes[edge_nodes[:, 1]] - nodes[edge_nodes[:, 0]]
    edge_lengths = np.linalg.norm(edge_vec, axis=1)
    edge_midpoints = 0.5 * (nodes[edge_nodes[:, 0]] + nodes[edge_nodes[:, 1]])

    normals = np.empty((len(tris), 3, 2))
    for i in range(3):
        p1 = pts[:, (i + 1) % 3, :]
        p2 = pts[:, (i + 2) % 3, :]
        t = p2 - p1
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)  # right of p1->p2 = outward (CCW)
        normals[:, i, :] = n / np.linalg.norm(n, axis=1)[:, None]

    return Mesh(nodes=nodes, tris=tris, regions=regions, edge_nodes=edge_nodes,
                edge_tags=edge_tags, elem_edges=elem_edges, edge_elems=edge_elems,
                edge_local=edge_local, areas=signed, centroids=centroids,
                circumcenters=cc, circumdist=cdist, edge_lengths=edge_lengths,
                edge_midpoints=edge_midpoints, edge_normals=normals, parent=parent,
                min_angle_deg=min_angle, max_angle_deg=max_angle)


def default_rect_tagger(width, height, tol=1e-12):
    """Tag maker for the burner rectangle: inflow left, outflow right,
    symmetry bottom, wall top."""

    def tagger(midpoint):
        x, y = midpoint
        if abs(x) <= tol * max(1.0, width):
            return "I"
        if abs(x - width) <= tol * max(1.0, width):
            return "O"
        if abs(y) <= tol * max(1.0, height):
            return "S"
        if abs(y - height) <= tol * max(1.0, height):
            return "W"
        raise MeshError(f"edge midpoint {midpoint} not on the rectangle boundary")

    return tagger


def _segment_columns(xa, xb, n_cols, dy):
    """Even-row and odd-row x coordinates of one lattice segment.

    The outermost columns are widened and the odd rows get apex nodes pulled
    off the segment walls, which is what keeps wall-adjacent triangles acute.
    """
    length = xb - xa
    n_cols = max(3, n_cols)
    # interior spacing from: 2*pad_abs + (n_cols-2)*dx = length,
    # pad_abs = APEX*dy + PAD*dx
    dx = (length - 2.0 * _APEX_FACTOR * dy) / (n_cols - 2 + 2.0 * _COLUMN_PAD)
    if dx <= 0:
        raise MeshError(
            f"segment [{xa}, {xb}] too narrow for {n_cols} columns at row spacing {dy}")
    aspect = dy / dx
    if not 0.5 < aspect < 2.6:
        raise MeshError(
            f"generator aspect dy/dx = {aspect:.3f} outside (0.5, 2.6); "
            "adjust nx/ny so cells are closer to square")
    pad = _APEX_FACTOR * dy + _COLUMN_PAD * dx
    even = [xa]
    for k in range(n_cols - 1):
        even.append(xa + pad + k * dx)
    even.append(xb)
    even = np.asarray(even)
    odd = np.concatenate([[xa + _APEX_FACTOR * dy],
                          0.5 * (even[1:-1][:-1] + even[1:-1][1:]),
                          [xb - _APEX_FACTOR * dy]])
    return even, odd


def build_rect_mesh(width, height, nx, ny, region_fn=None, boundary_tagger=None,
                    interfaces=(), quality_margin_deg: float = 1.0) -> Mesh:
    """Structured acute triangulation of a rectangle.

    Rows of nodes alternate between full columns and half-offset columns
    (an offset triangular lattice).  Vertical lines listed in `interfaces`
    become exact edge paths so piecewise material data can jump there.  The
    row count is rounded up to even and each x segment gets at least three
    columns; the resulting mesh always passes the acute-angle gate or the
    call fails with a diagnostic.
    """
    if width <= 0 or height <= 0:
        raise MeshError("width and height must be positive")
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be at least 1")
    ny = int(ny) + (int(ny) % 2)
    ny = max(ny, 2)
    dy = height / ny

    cuts = [0.0] + sorted(x for x in interfaces if 0.0 < x < width) + [width]
    seg_even = []
    seg_odd = []
    for xa, xb in zip(cuts[:-1], cuts[1:]):
        n_cols = max(3, round(nx * (xb - xa) / width))
        even, odd = _segment_columns(xa, xb, n_cols, dy)
        seg_even.append(even)
        seg_odd.append(odd)

    # node table: even rows share segment-boundary nodes, odd rows do not
    node_list: list[tuple[float, float]] = []
    even_rows = []   # per even row: list per segment of node ids
    odd_rows = []    # per odd row: list per segment of node ids

    def add_node(x, y):
        node_list.append((x, y))
        return len(node_list) - 1

    for r in range(ny + 1):
        y = r * dy
        if r % 2 == 0:
            ids_per_seg = []
            shared_right = None
            for s, even in enumerate(seg_even):
                ids = []
                for j, x in enumerate(even):
                    if j == 0 and shared_right is not None:
                        ids.append(shared_right)
                    else:
                        ids.append(add_node(x, y))
                shared_right = ids[-1]
                ids_per_seg.append(ids)
            even_rows.append(ids_per_seg)
        else:
            odd_rows.append([[add_node(x, y) for x in odd] for odd in seg_odd])

    tris = []
    for ro in range(len(odd_rows)):           # odd row index -> rows 2*ro+1
        below = even_rows[ro]
        above = even_rows[ro + 1]
        for s in range(len(seg_even)):
            eb, ea, od = below[s], above[s], odd_rows[ro][s]
            n = len(od)                        # == len(eb) - 1
            for erow, flipped in ((eb, False), (ea, True)):
                # upward fans (downward for the row above)
                for i in range(n):
                    tri = (erow[i], erow[i + 1], od[i])
                    tris.append(tri if not flipped else (tri[0], tri[2], tri[1]))
                # wedges between consecutive apex nodes
                for i in range(n - 1):
                    tri = (od[i], erow[i + 1], od[i + 1])
                    tris.append(tri if flipped else (tri[0], tri[2], tri[1]))
            # notch triangles stitching the two even rows at the segment walls
            tris.append((eb[0], od[0], ea[0]))
            tris.append((eb[-1], ea[-1], od[-1]))

    nodes = np.asarray(node_list)
    tris = np.asarray(tris, dtype=np.int64)

    pts = nodes[tris]
    centroids = pts.mean(axis=1)
    if region_fn is None:
        regions = np.zeros(len(tris), dtype=np.int64)
    else:
        regions = np.asarray([region_fn(c) for c in centroids], dtype=np.int64)

    tagger = boundary_tagger or default_rect_tagger(width, height)
    edge_nodes, _, edge_elems, _ = _build_edge_tables(tris)
    boundary_tags = {}
    for e in np.flatnonzero(edge_elems[:, 1] == -1):
        a, b = edge_nodes[e]
        mid = 0.5 * (nodes[a] + nodes[b])
        boundary_tags[(int(a), int(b))] = tagger(mid)

    return mesh_from_arrays(nodes, tris, regions, boundary_tags,
                            quality_margin_deg=quality_margin_deg)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: each triangle splits into four similar children.

    Children inherit the parent's region; boundary halves inherit the parent
    edge's tag.  Parent links for both elements and edges are recorded so
    multigrid transfers can be built between the levels.
    """
    n0 = mesh.n_nodes
    mid_nodes = np.vstack([mesh.nodes, mesh.edge_midpoints])

    tris = np.empty((4 * mesh.n_elements, 3), dtype=np.int64)
    regions = np.repeat(mesh.regions, 4)
    elem_parent = np.repeat(np.arange(mesh.n_elements), 4)
    elem_children = np.arange(4 * mesh.n_elements).reshape(-1, 4)

    v = mesh.tris
    m = n0 + mesh.elem_edges  # midpoint node of local edge i
    tris[0::4] = np.stack([v[:, 0], m[:, 2], m[:, 1]], axis=1)
    tris[1::4] = np.stack([v[:, 1], m[:, 0], m[:, 2]], axis=1)
    tris[2::4] = np.stack([v[:, 2], m[:, 1], m[:, 0]], axis=1)
    tris[3::4] = np.stack([m[:, 0], m[:, 1], m[:, 2]], axis=1)

    edge_nodes, _, edge_elems, _ = _build_edge_tables(tris)
    key_to_fine = {(int(a), int(b)): e for e, (a, b) in enumerate(edge_nodes)}

    edge_children = np.empty((mesh.n_edges, 2), dtype=np.int64)
    edge_parent_edge = np.full(len(edge_nodes), -1, dtype=np.int64)
    boundary_tags = {}
    for e in range(mesh.n_edges):
        a, b = mesh.edge_nodes[e]
        mid = n0 + e
        halves = []
        for end in (a, b):
            key = (int(min(end, mid)), int(max(end, mid)))
            f = key_to_fine[key]
            halves.append(f)
            edge_parent_edge[f] = e
            if mesh.edge_tags[e] != INTERIOR:
                boundary_tags[key] = TAG_NAMES[mesh.edge_tags[e]]
        edge_children[e] = halves

    edge_parent_elem = np.full(len(edge_nodes), -1, dtype=np.int64)
    for k in range(mesh.n_elements):
        for i, j in ((0, 1), (1, 2), (0, 2)):
            key = (int(min(m[k, i], m[k, j])), int(max(m[k, i], m[k, j])))
            edge_parent_elem[key_to_fine[key]] = k

    links = ParentLinks(coarse=mesh, elem_parent=elem_parent,
                        elem_children=elem_children, edge_children=edge_children,
                        edge_parent_edge=edge_parent_edge,
                        edge_parent_elem=edge_parent_elem)
    margin = None if mesh.max_angle_deg >= 89.0 else 90.0 - mesh.max_angle_deg - 1e-9
    return mesh_from_arrays(mid_nodes, tris, regions, boundary_tags,
                            quality_margin_deg=margin, parent=links)


def build_hierarchy(width, height, nx, ny, levels, **kwargs) -> list[Mesh]:
    """Base mesh at (nx, ny) refined `levels` times; coarse to fine."""
    meshes = [build_rect_mesh(width, height, nx, ny, **kwargs)]
    for _ in range(levels):
        meshes.append(refine_uniform(meshes[-1]))
    return meshes


def quality_report(mesh: Mesh) -> dict:
    """Per-mesh quality numbers used by the CLI and the gate diagnostics."""
    angles = triangle_angles(mesh.element_points())
    return {
        "elements": mesh.n_elements,
        "edges": mesh.n_edges,
        "nodes": mesh.n_nodes,
        "min_angle_deg": float(angles.min()),
        "max_angle_deg": float(angles.max()),
        "min_circumdist": float(mesh.circumdist.min()),
        "total_area": float(mesh.areas.sum()),
        "worst_element": int(angles.max(axis=1).argmax()),
    }


def load_mesh_text(source, quality_margin_deg: float | None = 1.0) -> Mesh:
    """Read the plain-text mesh format.

    Layout: ``nodes N`` then N lines ``x y``; ``triangles M`` then M lines
    ``i j k region``; ``boundary B`` then B lines ``i j tag`` with tag in
    {I, O, W, S}.  Indices are 0-based.
    """
    if isinstance(source, str) and "\n" not in source:
        with open(source, "r", encoding="ascii") as fh:
            tokens = fh.read().split()
    elif isinstance(source, str):
        tokens = source.split()
    else:
        tokens = source.read().split()
    pos = 0

    def take(n=1):
        nonlocal pos
        if pos + n > len(tokens):
            raise MeshError("truncated mesh file")
        out = tokens[pos:pos + n]
        pos += n
        return out

    def expect(word):
        got = take()[0]
        if got != word:
            raise MeshError(f"expected {word!r} in mesh file, got {got!r}")

    expect("nodes")
    n = int(take()[0])
    nodes = np.asarray([[float(x) for x in take(2)] for _ in range(n)])
    expect("triangles")
    m = int(take()[0])
    tri_rows = [[int(x) for x in take(4)] for _ in range(m)]
    tris = np.asarray([r[:3] for r in tri_rows], dtype=np.int64)
    regions = np.asarray([r[3] for r in tri_rows], dtype=np.int64)
    expect("boundary")
    b = int(take()[0])
    boundary_tags = {}
    for _ in range(b):
        i, j, tag = take(3)
        boundary_tags[(int(i), int(j))] = tag
    return mesh_from_arrays(nodes, tris, regions, boundary_tags,
                            quality_margin_deg=quality_margin_deg)


def dump_mesh_text(mesh: Mesh) -> str:
    """Serialize a mesh in the plain-text format accepted by load_mesh_text."""
    out = io.StringIO()
    out.write(f"nodes {mesh.n_nodes}\n")
    for x, y in mesh.nodes:
        out.write(f"{x!r} {y!r}\n")
    out.write(f"triangles {mesh.n_elements}\n")
    for (i, j, k), r in zip(mesh.tris, mesh.regions):
        out.write(f"{i} {j} {k} {r}\n")
    bed = mesh.boundary_edges()
    out.write(f"boundary {len(bed)}\n")
    for e in bed:
        a, b = mesh.edge_nodes[e]
        out.write(f"{a} {b} {TAG_NAMES[mesh.edge_tags[e]]}\n")
    return out.getvalue()
