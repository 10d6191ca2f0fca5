"""Map structures: keyframes, map points, covisibility graph, spanning tree.

Single-writer contract: the tracker (or loop correction) mutates the map
exclusively; residual evaluations only read it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import Pose
from ..imu import ImuBias, PreintegratedImu


@dataclass
class Observation:
    pixel: np.ndarray          # (2,) continuous base-resolution coordinates
    level: int
    weight: float              # distortion weight sigma at the observation
    descriptor: np.ndarray | None = None  # (32,) uint8


class KeyframeState:
    """One keyframe's estimated state plus its measurements."""

    __slots__ = ("id", "timestamp", "pose", "velocity", "bias",
                 "observations", "raw_ids", "raw_obs", "pre_from_prev",
                 "prev_id", "bow")

    def __init__(self, kf_id: int, timestamp: float, pose: Pose,
                 velocity=None, bias: ImuBias | None = None):
        self.id = kf_id
        self.timestamp = timestamp
        self.pose = pose
        self.velocity = np.zeros(3) if velocity is None else np.asarray(velocity, float).copy()
        self.bias = bias if bias is not None else ImuBias()
        self.observations: dict[int, Observation] = {}   # map point id -> Observation
        # all detections of the frame (matched or not), keyed by an external
        # id in simulation mode; used for triangulating new points
        self.raw_ids: np.ndarray | None = None
        self.raw_obs: dict = {}
        self.pre_from_prev: PreintegratedImu | None = None
        self.prev_id: int | None = None
        self.bow = None

    def observed_point_ids(self):
        return self.observations.keys()


class MapPoint:
    __slots__ = ("id", "position", "observations", "descriptor", "external_id")

    def __init__(self, mp_id: int, position, descriptor=None, external_id=None):
        self.id = mp_id
        self.position = np.asarray(position, dtype=float).reshape(3).copy()
        self.observations: dict[int, None] = {}  # keyframe ids (ordered set)
        self.descriptor = descriptor
        self.external_id = external_id


class CovisibilityGraph:
    """Symmetric shared-map-point counts between keyframes."""

    def __init__(self):
        self._w: dict[int, dict[int, int]] = {}

    def add_node(self, kf_id: int):
        self._w.setdefault(kf_id, {})

    def increment(self, a: int, b: int, amount: int = 1):
        if a == b:
            return
        self._w[a][b] = self._w[a].get(b, 0) + amount
        self._w[b][a] = self._w[b].get(a, 0) + amount
        if self._w[a][b] <= 0:
            del self._w[a][b], self._w[b][a]

    def weight(self, a: int, b: int) -> int:
        return self._w.get(a, {}).get(b, 0)

    def neighbors(self, kf_id: int, min_weight: int = 1):
        return {k: w for k, w in self._w.get(kf_id, {}).items() if w >= min_weight}

    def check_symmetric(self) -> bool:
        for a, nbrs in self._w.items():
            for b, w in nbrs.items():
                if self._w.get(b, {}).get(a) != w:
                    return False
        return True


class SlamMap:
    """Keyframes + map points + covisibility + spanning tree, with referential
    integrity maintained on every mutation."""

    def __init__(self):
        self.keyframes: dict[int, KeyframeState] = {}
        self.points: dict[int, MapPoint] = {}
        self.covis = CovisibilityGraph()
        self.parent: dict[int, int | None] = {}   # spanning tree for loop propagation
        self._next_point_id = 0

    # -- keyframes ---------------------------------------------------------

    def add_keyframe(self, kf: KeyframeState, parent_id: int | None = None):
        if kf.id in self.keyframes:
            raise ValueError(f"duplicate keyframe id {kf.id}")
        if self.keyframes:
            last_t = max(k.timestamp for k in self.keyframes.values())
            if kf.timestamp <= last_t:
                raise ValueError("keyframe timestamps must be strictly increasing")
        self.keyframes[kf.id] = kf
        self.covis.add_node(kf.id)
        self.parent[kf.id] = parent_id
        return kf

    def keyframe_ids(self):
        return list(self.keyframes.keys())

    # -- map points --------------------------------------------------------

    def new_point(self, position, descriptor=None, external_id=None) -> MapPoint:
        mp = MapPoint(self._next_point_id, position, descriptor, external_id)
        self._next_point_id += 1
        self.points[mp.id] = mp
        return mp

    def add_observation(self, kf_id: int, mp_id: int, obs: Observation):
        kf = self.keyframes[kf_id]
        mp = self.points[mp_id]
        if mp_id in kf.observations:
            raise ValueError(f"keyframe {kf_id} already observes point {mp_id}")
        kf.observations[mp_id] = obs
        for other in mp.observations:
            self.covis.increment(kf_id, other)
        mp.observations[kf_id] = None

    def remove_observation(self, kf_id: int, mp_id: int):
        kf = self.keyframes[kf_id]
        mp = self.points[mp_id]
        del kf.observations[mp_id]
        del mp.observations[kf_id]
        for other in mp.observations:
            self.covis.increment(kf_id, other, -1)
        if len(mp.observations) == 0:
            del self.points[mp_id]

    def remove_point(self, mp_id: int):
        mp = self.points[mp_id]
        for kf_id in list(mp.observations):
            kf = self.keyframes[kf_id]
            del kf.observations[mp_id]
            del mp.observations[kf_id]
            for other in mp.observations:
                self.covis.increment(kf_id, other, -1)
        del self.points[mp_id]

    def merge_points(self, keep_id: int, drop_id: int):
        """Fuse a duplicated landmark into an older one, remapping observations."""
        if keep_id == drop_id:
            return
        keep = self.points[keep_id]
        drop = self.points[drop_id]
        for kf_id in list(drop.observations):
            kf = self.keyframes[kf_id]
            obs = kf.observations.pop(drop_id)
            del drop.observations[kf_id]
            for other in drop.observations:
                self.covis.increment(kf_id, other, -1)
            if keep_id in kf.observations:
                continue  # keyframe already sees the kept point
            kf.observations[keep_id] = obs
            for other in keep.observations:
                self.covis.increment(kf_id, other)
            keep.observations[kf_id] = None
        if drop_id in self.points:
            del self.points[drop_id]

    # -- queries -----------------------------------------------------------

    def covisible_keyframes(self, kf_id: int, min_shared: int = 1):
        return self.covis.neighbors(kf_id, min_shared)

    def local_window(self, kf_id: int, min_shared: int, max_size: int | None = None):
        """Newest keyframe plus its strongest covisible neighbors."""
        nbrs = sorted(self.covis.neighbors(kf_id, min_shared).items(),
                      key=lambda kv: (-kv[1], -kv[0]))
        window = [kf_id] + [k for k, _ in nbrs]
        if max_size is not None:
            window = window[:max_size]
        return sorted(window)

    def points_in_keyframes(self, kf_ids):
        seen = set()
        for kf_id in kf_ids:
            seen.update(self.keyframes[kf_id].observations.keys())
        return seen

    def check_integrity(self) -> bool:
        """No dangling references, symmetric covisibility with exact counts."""
        for kf_id, kf in self.keyframes.items():
            for mp_id in kf.observations:
                if mp_id not in self.points or kf_id not in self.points[mp_id].observations:
                    return False
        for mp_id, mp in self.points.items():
            for kf_id in mp.observations:
                if kf_id not in self.keyframes or mp_id not in self.keyframes[kf_id].observations:
                    return False
        if not self.covis.check_symmetric():
            return False
        for kf_id, kf in self.keyframes.items():
            for other_id, other in self.keyframes.items():
                if other_id <= kf_id:
                    continue
                shared = len(kf.observations.keys() & other.observations.keys())
                if self.covis.weight(kf_id, other_id) != shared:
                    return False
        return True
