"""Skeleton connectivity graphs and their symmetric-normalized adjacency.

The normalized matrix D^{-1/2} (A + I) D^{-1/2} (self-loops added before
normalization) is what every graph-convolution layer multiplies by.  Both a
kinematic-tree skeleton and a fully connected graph over the joints are
supported; the latter mirrors treating the body as one densely connected
node set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRAPH_MODES = ("skeleton", "full")


@dataclass(frozen=True)
class SkeletonTopology:
    """Joint-connectivity graph: ``n_joints`` nodes plus undirected edges.

    Edges are stored sorted and deduplicated, without self-loops (the
    normalization adds those).  Immutable after construction, safe to share.
    """

    n_joints: int
    edges: tuple = ()
    joint_names: tuple = None

    def __post_init__(self):
        if self.n_joints < 1:
            raise ValueError(f"n_joints must be >= 1, got {self.n_joints}")
        canon = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop ({i},{j}) not allowed; normalization adds self-loops")
            if not (0 <= i < self.n_joints and 0 <= j < self.n_joints):
                raise ValueError(f"edge ({i},{j}) out of range for {self.n_joints} joints")
            canon.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", tuple(sorted(canon)))
        if self.joint_names is not None:
            names = tuple(self.joint_names)
            if len(names) != self.n_joints:
                raise ValueError("joint_names length must equal n_joints")
            object.__setattr__(self, "joint_names", names)

    def adjacency(self):
        """Binary adjacency matrix without self-loops."""
        a = np.zeros((self.n_joints, self.n_joints))
        for i, j in self.edges:
            a[i, j] = 1.0
            a[j, i] = 1.0
        return a

    def fully_connected(self):
        """Same joints, every pair connected."""
        n = self.n_joints
        edges = tuple((i, j) for i in range(n) for j in range(i + 1, n))
        return SkeletonTopology(n, edges, self.joint_names)


@dataclass(frozen=True)
class NormalizedAdjacency:
    """D^{-1/2} (A + I) D^{-1/2} for a topology; symmetric, spectrum in [-1, 1]."""

    matrix: np.ndarray
    topology: SkeletonTopology = field(compare=False)

    @property
    def n_joints(self):
        return self.topology.n_joints


def normalize(topo):
    """Symmetric normalization with self-loops: D^{-1/2} (A + I) D^{-1/2}."""
    a_hat = topo.adjacency() + np.eye(topo.n_joints)
    deg = a_hat.sum(axis=1)
    if np.any(deg == 0):
        raise ValueError("adjacency with self-loops has a zero-degree row")
    d_inv_sqrt = 1.0 / np.sqrt(deg)
    matrix = a_hat * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
    matrix.setflags(write=False)
    return NormalizedAdjacency(matrix=matrix, topology=topo)


def adjacency_for_mode(topo, graph_mode):
    if graph_mode not in GRAPH_MODES:
        raise ValueError(f"graph_mode must be one of {GRAPH_MODES}, got {graph_mode!r}")
    if graph_mode == "full":
        topo = topo.fully_connected()
    return normalize(topo)


# ---------------------------------------------------------------------------
# default topologies

# 32-joint pelvis-rooted tree used as this package's canonical full-body
# layout: 5-joint legs, 3-joint spine with neck/head/head-top, 7-joint arms
# (clavicle..fingers) and a nose site on the head.  parent[i] < i throughout.
_TREE32_PARENTS = (
    -1,                       # 0  pelvis (root)
    0, 1, 2, 3, 4,            # 1-5   left leg : hip knee ankle foot toe
    0, 6, 7, 8, 9,            # 6-10  right leg: hip knee ankle foot toe
    0, 11, 12,                # 11-13 spine: lower mid chest
    13, 14, 15,               # 14-16 neck head head-top
    13, 17, 18, 19, 20, 21, 22,   # 17-23 left arm : clavicle shoulder elbow wrist hand thumb fingers
    13, 24, 25, 26, 27, 28, 29,   # 24-30 right arm: clavicle shoulder elbow wrist hand thumb fingers
    15,                       # 31 nose
)

_TREE32_NAMES = (
    "pelvis",
    "l_hip", "l_knee", "l_ankle", "l_foot", "l_toe",
    "r_hip", "r_knee", "r_ankle", "r_foot", "r_toe",
    "spine_low", "spine_mid", "chest",
    "neck", "head", "head_top",
    "l_clavicle", "l_shoulder", "l_elbow", "l_wrist", "l_hand", "l_thumb", "l_fingers",
    "r_clavicle", "r_shoulder", "r_elbow", "r_wrist", "r_hand", "r_thumb", "r_fingers",
    "nose",
)


def default_topology(n_joints):
    """Deterministic pelvis-rooted tree for any joint count >= 2.

    ``n_joints == 32`` returns the named full-body layout above.  Other
    counts use a chain+limbs scheme: joints 0..s-1 form a spine chain
    (s = max(2, n_joints // 5)); the remaining joints are dealt round-robin
    into four limb chains, two rooted at the spine top and two at the
    pelvis.  Always a spanning tree (n_joints - 1 edges).
    """
    if n_joints < 2:
        raise ValueError(f"default_topology needs n_joints >= 2, got {n_joints}")
    if n_joints == 32:
        edges = tuple((p, i) for i, p in enumerate(_TREE32_PARENTS) if p >= 0)
        return SkeletonTopology(32, edges, _TREE32_NAMES)

    spine_len = max(2, min(n_joints, n_joints // 5 + 2))
    edges = [(i - 1, i) for i in range(1, spine_len)]
    limb_roots = [spine_len - 1, spine_len - 1, 0, 0]  # two arms, two legs
    limb_tips = list(limb_roots)
    for k, joint in enumerate(range(spine_len, n_joints)):
        limb = k % 4
        edges.append((limb_tips[limb], joint))
        limb_tips[limb] = joint
    return SkeletonTopology(n_joints, tuple(edges))


def rest_pose(topo):
    """Canonical static pose for a topology, independent of any seed.

    Joints are placed by walking the edges breadth-first from joint 0 at the
    origin, offsetting each child from its parent along a direction that
    cycles with the child's visit order.  Roughly unit scale.
    """
    n = topo.n_joints
    children = {i: [] for i in range(n)}
    for i, j in topo.edges:
        children[i].append(j)
        children[j].append(i)
    offsets = np.array(
        [
            [0.00, 0.22, 0.00],
            [0.20, 0.05, 0.00],
            [-0.20, 0.05, 0.00],
            [0.05, -0.20, 0.08],
            [-0.05, -0.20, -0.08],
            [0.00, 0.10, 0.18],
        ]
    )
    pose = np.zeros((n, 3))
    seen = {0}
    queue = [0]
    order = 0
    while queue:
        cur = queue.pop(0)
        for nb in sorted(children[cur]):
            if nb in seen:
                continue
            seen.add(nb)
            pose[nb] = pose[cur] + offsets[order % len(offsets)]
            order += 1
            queue.append(nb)
    # disconnected joints (no edges) stay at distinct spots on a line
    for i in range(n):
        if i not in seen:
            pose[i] = np.array([0.3 * i, -0.5, 0.0])
    return pose
