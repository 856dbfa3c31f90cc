"""Per-camera same-view graph: connected components are viewpoint clusters,
the largest cluster is the camera's dominant view.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Frame
from .geometry import SAME_VIEW_DELTA_DEG_DEFAULT, same_view


@dataclass(frozen=True, order=True)
class FrameRef:
    """Hashable frame key used as a graph vertex."""

    cam_id: str
    timestamp: int


def frame_ref(frame: Frame) -> FrameRef:
    return FrameRef(frame.cam_id, frame.timestamp)


@dataclass(frozen=True)
class PairwiseResult:
    """Outcome of one frame-pair estimate, mirroring the JSONL pairwise log."""

    cam_id: str
    ts_i: int
    ts_j: int
    accepted: bool
    inlier_ratio: float
    theta_deg: float | None

    def to_json(self) -> str:
        return json.dumps(
            {
                "cam_id": self.cam_id,
                "ts_i": self.ts_i,
                "ts_j": self.ts_j,
                "accepted": self.accepted,
                "inlier_ratio": round(self.inlier_ratio, 6),
                "theta_deg": None if self.theta_deg is None else round(self.theta_deg, 6),
            }
        )


def append_pairwise_log(results: list[PairwiseResult], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a") as fh:
        for r in results:
            fh.write(r.to_json() + "\n")


@dataclass
class ViewGraph:
    """Undirected same-view graph over one camera's frames."""

    vertices: list[FrameRef]
    edges: list[tuple[FrameRef, FrameRef, float]] = field(default_factory=list)

    def adjacency(self) -> dict[FrameRef, set[FrameRef]]:
        adj: dict[FrameRef, set[FrameRef]] = {v: set() for v in self.vertices}
        for a, b, _ in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        return adj


@dataclass
class ViewCluster:
    """One viewpoint: cluster id (vpID) plus its timestamp-ordered members."""

    cluster_id: int
    members: list[FrameRef]

    @property
    def earliest(self) -> int:
        return self.members[0].timestamp

    def __len__(self) -> int:
        return len(self.members)


def build_view_graph(
    frames: list[FrameRef],
    pairwise_results: list[PairwiseResult],
    delta_deg: float = SAME_VIEW_DELTA_DEG_DEFAULT,
) -> ViewGraph:
    """One vertex per frame; an edge where the pair was accepted and |theta| <= delta."""
    vertices = sorted(frames)
    known = set(vertices)
    edges: list[tuple[FrameRef, FrameRef, float]] = []
    for result in pairwise_results:
        a = FrameRef(result.cam_id, result.ts_i)
        b = FrameRef(result.cam_id, result.ts_j)
        if a not in known or b not in known:
            raise ValueError(f"pairwise result references unknown frame: {result}")
        if result.accepted and result.theta_deg is not None and same_view(result.theta_deg, delta_deg):
            edges.append((a, b, result.theta_deg))
    return ViewGraph(vertices=vertices, edges=edges)


def connected_components(graph: ViewGraph) -> list[ViewCluster]:
    """Components as clusters; ids assigned in order of earliest member timestamp."""
    adj = graph.adjacency()
    seen: set[FrameRef] = set()
    raw: list[list[FrameRef]] = []
    for v in graph.vertices:
        if v in seen:
            continue
        stack = [v]
        seen.add(v)
        comp = []
        while stack:
            node = stack.pop()
            comp.append(node)
            for nb in adj[node]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        raw.append(sorted(comp, key=lambda r: r.timestamp))
    raw.sort(key=lambda comp: comp[0].timestamp)
    return [ViewCluster(cluster_id=i, members=comp) for i, comp in enumerate(raw)]


def dominant_cluster(clusters: list[ViewCluster]) -> int:
    """Id of the largest cluster; ties go to the earliest member timestamp."""
    if not clusters:
        raise ValueError("no clusters to choose from")
    best = min(clusters, key=lambda c: (-len(c), c.earliest))
    return best.cluster_id


def stability_score(clusters: list[ViewCluster], total_frames: int) -> float:
    """Fraction of frames in the dominant cluster."""
    if total_frames < 1:
        raise ValueError("total_frames must be >= 1")
    dom = dominant_cluster(clusters)
    size = next(len(c) for c in clusters if c.cluster_id == dom)
    return size / total_frames


def filter_to_dominant(
    frames: list[Frame], clusters: list[ViewCluster]
) -> list[tuple[Frame, int]]:
    """Dominant-cluster frames, timestamp-ordered, each tagged with its vpID."""
    by_ref = {frame_ref(f): f for f in frames}
    member_refs = {m for c in clusters for m in c.members}
    if member_refs != set(by_ref):
        raise ValueError("clusters do not partition the provided frames")
    dom = dominant_cluster(clusters)
    members = next(c.members for c in clusters if c.cluster_id == dom)
    return [(by_ref[m], dom) for m in members]


def cluster_assignments(clusters: list[ViewCluster]) -> list[tuple[str, int, int, bool]]:
    """Rows (cam_id, ts, vp_id, is_dominant) for the cluster assignment table."""
    if not clusters:
        return []
    dom = dominant_cluster(clusters)
    rows = [
        (m.cam_id, m.timestamp, c.cluster_id, c.cluster_id == dom)
        for c in clusters
        for m in c.members
    ]
    rows.sort(key=lambda r: (r[0], r[1]))
    return rows
