"""Desk-scale partitioned, replicated, append-only pub-sub log.

Brokers are state machines inside one process, which keeps failure
schedules deterministic and testable. Semantics reproduced: topics split
into partitions placed round-robin across brokers, replication to every
live replica before a publish is acknowledged, per-partition total order,
leader failover to the next live replica, recovery by copying the current
leader's log before serving, and independent consumer-group offsets.
"""

from __future__ import annotations

import json
import struct
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterator, Optional

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _U64
    return h


class BusError(Exception):
    pass


class UnknownTopicError(BusError):
    pass


class PublishError(BusError):
    pass


class BrokerStatus(Enum):
    UP = "Up"
    DOWN = "Down"


@dataclass(frozen=True)
class TopicSpec:
    name: str
    partitions: int
    replication_factor: int

    def __post_init__(self):
        if self.partitions < 1 or self.replication_factor < 1:
            raise ValueError("partitions and replication_factor must be positive")


@dataclass(frozen=True)
class EventEnvelope:
    topic: str
    partition: int
    offset: int
    key: Optional[bytes]
    payload: bytes
    ingest_time: float


@dataclass
class _Record:
    key: Optional[bytes]
    payload: bytes
    ingest_time: float


@dataclass
class _Partition:
    replicas: list[int]  # broker ids, leader preference order
    logs: dict[int, list[_Record]] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def __post_init__(self):
        for broker in self.replicas:
            self.logs.setdefault(broker, [])


@dataclass
class _Topic:
    spec: TopicSpec
    partitions: list[_Partition]
    next_round_robin: int = 0


class StreamBus:
    """In-process broker cluster; `clock` injects time for determinism."""

    def __init__(self, broker_ids=(0, 1, 2), clock: Callable[[], float] = time.time):
        self.brokers: dict[int, BrokerStatus] = {b: BrokerStatus.UP for b in broker_ids}
        self.topics: dict[str, _Topic] = {}
        self.group_offsets: dict[tuple[str, str], dict[int, int]] = {}
        self.clock = clock
        self._lock = threading.RLock()

    # -- topology -------------------------------------------------------

    def create_topic(self, spec: TopicSpec) -> None:
        with self._lock:
            if spec.name in self.topics:
                raise BusError(f"topic {spec.name!r} already exists")
            up = [b for b, s in sorted(self.brokers.items()) if s is BrokerStatus.UP]
            if spec.replication_factor > len(up):
                raise BusError(
                    f"replication_factor {spec.replication_factor} exceeds "
                    f"{len(up)} live brokers")
            partitions = []
            for i in range(spec.partitions):
                replicas = [up[(i + j) % len(up)] for j in range(spec.replication_factor)]
                partitions.append(_Partition(replicas=replicas))
            self.topics[spec.name] = _Topic(spec=spec, partitions=partitions)

    def topic_names(self) -> list[str]:
        return sorted(self.topics)

    def replica_assignment(self, topic: str) -> list[list[int]]:
        return [list(p.replicas) for p in self._topic(topic).partitions]

    def _topic(self, name: str) -> _Topic:
        topic = self.topics.get(name)
        if topic is None:
            raise UnknownTopicError(f"unknown topic {name!r}")
        return topic

    # -- broker lifecycle -------------------------------------------------

    def fail_broker(self, broker_id: int) -> None:
        with self._lock:
            if broker_id not in self.brokers:
                raise BusError(f"unknown broker {broker_id}")
            self.brokers[broker_id] = BrokerStatus.DOWN

    def recover_broker(self, broker_id: int) -> None:
        """Copy anything missed from each partition's current leader,
        then resume serving."""
        with self._lock:
            if broker_id not in self.brokers:
                raise BusError(f"unknown broker {broker_id}")
            if self.brokers[broker_id] is BrokerStatus.UP:
                return
            for topic in self.topics.values():
                for part in topic.partitions:
                    if broker_id not in part.replicas:
                        continue
                    leader = self._leader(part)
                    if leader is not None and leader != broker_id:
                        with part.lock:
                            part.logs[broker_id] = list(part.logs[leader])
            self.brokers[broker_id] = BrokerStatus.UP

    def broker_status(self) -> dict[int, str]:
        return {b: s.value for b, s in sorted(self.brokers.items())}

    def _leader(self, part: _Partition) -> Optional[int]:
        for broker in part.replicas:
            if self.brokers[broker] is BrokerStatus.UP:
                return broker
        return None

    # -- publish / consume -------------------------------------------------

    def _choose_partition(self, topic: _Topic, key: Optional[bytes]) -> int:
        if key is not None:
            return fnv1a_64(key) % topic.spec.partitions
        chosen = topic.next_round_robin % topic.spec.partitions
        topic.next_round_robin += 1
        return chosen

    def publish(self, topic_name: str, key: Optional[bytes],
                payload: bytes) -> tuple[int, int]:
        """Append to every live replica; returns (partition, offset).

        The append is acknowledged only after all live replicas hold it;
        with every replica of the target partition down it fails loudly.
        """
        topic = self._topic(topic_name)
        with self._lock:
            partition_id = self._choose_partition(topic, key)
            part = topic.partitions[partition_id]
            live = [b for b in part.replicas if self.brokers[b] is BrokerStatus.UP]
            if not live:
                raise PublishError(
                    f"all replicas of {topic_name}[{partition_id}] are down")
            record = _Record(key=key, payload=payload, ingest_time=self.clock())
            with part.lock:
                offset = len(part.logs[live[0]])
                for broker in live:
                    part.logs[broker].append(record)
            return partition_id, offset

    def _partition_envelopes(self, topic_name: str, part_id: int,
                             start: int) -> list[EventEnvelope]:
        part = self._topic(topic_name).partitions[part_id]
        leader = self._leader(part)
        if leader is None:
            raise BusError(f"no live replica for {topic_name}[{part_id}]")
        log = part.logs[leader]
        return [
            EventEnvelope(topic_name, part_id, off, rec.key, rec.payload,
                          rec.ingest_time)
            for off, rec in enumerate(log[start:], start=start)
        ]

    def consume(self, topic_name: str, group: str,
                max_events: Optional[int] = None) -> list[EventEnvelope]:
        """Events past the group's committed offsets, partition order kept.

        Offsets only advance via commit(); repeated consume without commit
        re-reads the same events.
        """
        topic = self._topic(topic_name)
        committed = self.group_offsets.get((topic_name, group), {})
        out: list[EventEnvelope] = []
        for part_id in range(topic.spec.partitions):
            if max_events is not None and len(out) >= max_events:
                break
            start = committed.get(part_id, 0)
            envelopes = self._partition_envelopes(topic_name, part_id, start)
            if max_events is not None:
                envelopes = envelopes[:max_events - len(out)]
            out.extend(envelopes)
        return out

    def commit(self, topic_name: str, group: str,
               offsets: dict[int, int]) -> None:
        """Record next-to-read offsets for (topic, group)."""
        self._topic(topic_name)
        current = self.group_offsets.setdefault((topic_name, group), {})
        for part_id, offset in offsets.items():
            current[part_id] = max(current.get(part_id, 0), offset)

    def commit_envelopes(self, group: str, envelopes: list[EventEnvelope]) -> None:
        by_topic: dict[str, dict[int, int]] = {}
        for env in envelopes:
            parts = by_topic.setdefault(env.topic, {})
            parts[env.partition] = max(parts.get(env.partition, 0), env.offset + 1)
        for topic_name, offsets in by_topic.items():
            self.commit(topic_name, group, offsets)

    # -- micro-batching ----------------------------------------------------

    def micro_batches(self, topic_name: str, group: str, interval: float,
                      start: Optional[float] = None, end: Optional[float] = None,
                      commit: bool = True) -> Iterator[tuple[int, float, float, list[EventEnvelope]]]:
        """Bucket available events into consecutive half-open intervals.

        Yields (batch_index, batch_start, batch_end, events); boundaries
        fall on multiples of `interval` from t=0. Every event lands in
        exactly one batch. Empty batches between occupied ones (or between
        explicit start/end bounds) are yielded too.
        """
        if interval <= 0:
            raise ValueError("interval must be positive")
        envelopes = self.consume(topic_name, group)
        if commit and envelopes:
            self.commit_envelopes(group, envelopes)
        if not envelopes and (start is None or end is None):
            return
        times = [e.ingest_time for e in envelopes]
        lo = start if start is not None else min(times)
        hi = end if end is not None else max(times)
        first = int(lo // interval)
        last = int(hi // interval)
        buckets: dict[int, list[EventEnvelope]] = {}
        for env in envelopes:
            buckets.setdefault(int(env.ingest_time // interval), []).append(env)
        for k in range(first, last + 1):
            batch = buckets.get(k, [])
            yield k, k * interval, (k + 1) * interval, batch

    # -- persistence ---------------------------------------------------------

    def save_state(self, directory) -> None:
        """Persist canonical (leader) logs as length-prefixed segments plus a
        JSON sidecar with topology, keys, timestamps, and group offsets."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {
            "brokers": {str(b): s.value for b, s in self.brokers.items()},
            "topics": {},
            "group_offsets": [
                [t, g, offs] for (t, g), offs in sorted(self.group_offsets.items())
            ],
        }
        for name, topic in self.topics.items():
            topic_meta = {
                "partitions": topic.spec.partitions,
                "replication_factor": topic.spec.replication_factor,
                "next_round_robin": topic.next_round_robin,
                "assignment": [list(p.replicas) for p in topic.partitions],
                "records": [],
            }
            for part_id, part in enumerate(topic.partitions):
                leader = self._leader(part)
                log = part.logs[leader] if leader is not None else []
                seg_path = directory / f"{name}__p{part_id}.seg"
                with open(seg_path, "wb") as fh:
                    for rec in log:
                        fh.write(struct.pack(">I", len(rec.payload)))
                        fh.write(rec.payload)
                topic_meta["records"].append([
                    [rec.key.hex() if rec.key is not None else None, rec.ingest_time]
                    for rec in log
                ])
            meta["topics"][name] = topic_meta
        (directory / "meta.json").write_text(json.dumps(meta, sort_keys=True))

    @classmethod
    def load_state(cls, directory, clock: Callable[[], float] = time.time) -> "StreamBus":
        directory = Path(directory)
        meta = json.loads((directory / "meta.json").read_text())
        bus = cls(broker_ids=tuple(int(b) for b in sorted(meta["brokers"], key=int)),
                  clock=clock)
        for b, status in meta["brokers"].items():
            bus.brokers[int(b)] = BrokerStatus(status)
        for name, topic_meta in meta["topics"].items():
            spec = TopicSpec(name, topic_meta["partitions"],
                             topic_meta["replication_factor"])
            partitions = []
            for part_id, replicas in enumerate(topic_meta["assignment"]):
                part = _Partition(replicas=list(replicas))
                seg_path = directory / f"{name}__p{part_id}.seg"
                payloads = list(_read_segment(seg_path))
                keyed = topic_meta["records"][part_id]
                log = []
                for payload, (key_hex, ts) in zip(payloads, keyed):
                    key = bytes.fromhex(key_hex) if key_hex is not None else None
                    log.append(_Record(key=key, payload=payload, ingest_time=ts))
                for broker in part.replicas:
                    if bus.brokers[broker] is BrokerStatus.UP:
                        part.logs[broker] = list(log)
                partitions.append(part)
            bus.topics[name] = _Topic(spec=spec, partitions=partitions,
                                      next_round_robin=topic_meta["next_round_robin"])
        for topic_name, group, offs in meta["group_offsets"]:
            bus.group_offsets[(topic_name, group)] = {
                int(p): o for p, o in offs.items()}
        return bus


def _read_segment(path: Path) -> Iterator[bytes]:
    if not path.exists():
        return
    data = path.read_bytes()
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise BusError(f"truncated segment {path.name}")
        (length,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + length > len(data):
            raise BusError(f"truncated segment {path.name}")
        yield data[pos:pos + length]
        pos += length
