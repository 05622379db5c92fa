"""Simulated sharded execution with a byte-exact EG wire.

Two link types share one interface:

* ``QuantLink`` quantizes and dequantizes in process (no encoding).
* ``WireLink`` additionally zigzag-maps, EG-encodes to EGB1 bytes, pushes the
  bytes through a message queue, decodes on the receiving side and records
  exact bit counts in a ``WireLedger``.

Both return identical tensors, so swapping one for the other must not change
a training trajectory. Gradient exchange uses a star topology: workers send
to one aggregator, which merges in worker-index order.
"""

from __future__ import annotations

import csv
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import coding
from .coding import QuantSpec
from .nn import Model, backward, compute_loss, forward

__all__ = [
    "ShardPlan",
    "TransferRecord",
    "WireLedger",
    "QuantLink",
    "WireLink",
    "pipeline_forward",
    "data_parallel_round",
    "effective_ratio",
    "loss_grads",
]


@dataclass(frozen=True)
class ShardPlan:
    boundaries: tuple

    @property
    def n_c(self) -> int:
        return len(self.boundaries) + 1

    @classmethod
    def from_model(cls, model: Model) -> "ShardPlan":
        return cls(tuple(model.shard_points))

    def check(self, model: Model) -> None:
        if tuple(self.boundaries) != tuple(model.shard_points):
            raise ValueError(f"plan boundaries {self.boundaries} != model shard points {model.shard_points}")


@dataclass(frozen=True)
class TransferRecord:
    epoch: int
    step: int
    direction: str  # "activation" or "gradient"
    tensor_id: int
    source: int  # shard index or worker index
    element_count: int
    raw_bits: int
    eg_bits: int
    hm_bits: int


@dataclass
class WireLedger:
    records: list = field(default_factory=list)
    blobs: list = field(default_factory=list)  # EGB1 bytes, parallel to records when kept

    def add(self, record: TransferRecord, blob: bytes | None = None) -> None:
        self.records.append(record)
        if blob is not None:
            self.blobs.append(blob)

    def totals(self, epoch: int | None = None, direction: str | None = None) -> dict:
        out = {"transfers": 0, "elements": 0, "raw_bits": 0, "eg_bits": 0, "hm_bits": 0}
        for r in self.records:
            if (epoch is None or r.epoch == epoch) and (direction is None or r.direction == direction):
                out["transfers"] += 1
                out["elements"] += r.element_count
                out["raw_bits"] += r.raw_bits
                out["eg_bits"] += r.eg_bits
                out["hm_bits"] += r.hm_bits
        return out

    def epochs(self) -> list:
        return sorted({r.epoch for r in self.records})

    def extend(self, other: "WireLedger") -> None:
        self.records.extend(other.records)
        self.blobs.extend(other.blobs)

    def write_csv(self, path) -> None:
        """Per-epoch, per-direction totals."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "direction", "transfers", "elements", "raw_bits", "eg_bits", "hm_bits"])
            for ep in self.epochs():
                for d in sorted({r.direction for r in self.records if r.epoch == ep}):
                    t = self.totals(ep, d)
                    w.writerow([ep, d, t["transfers"], t["elements"], t["raw_bits"], t["eg_bits"], t["hm_bits"]])


class QuantLink:
    """In-process quantize/dequantize of boundary activations and worker gradients."""

    def __init__(self, act_spec: QuantSpec, grad_spec: QuantSpec | None = None):
        self.act_spec = act_spec
        self.grad_spec = grad_spec or act_spec
        self.epoch = 0
        self.step = 0

    def _send(self, x, spec, direction, source):
        return coding.quantize(x, spec).dequantize()

    def activation(self, i: int, a: np.ndarray) -> np.ndarray:
        return self._send(a, self.act_spec, "activation", i)

    def gradients(self, worker: int, grads: Sequence[np.ndarray]) -> list:
        return [self._send(g, self.grad_spec, "gradient", worker) for g in grads]


class WireLink(QuantLink):
    def __init__(self, act_spec: QuantSpec, grad_spec: QuantSpec | None = None, ledger: WireLedger | None = None,
                 keep_blobs: bool = False, dump_dir=None):
        super().__init__(act_spec, grad_spec)
        self.ledger = ledger if ledger is not None else WireLedger()
        self.keep_blobs = keep_blobs
        self.dump_dir = Path(dump_dir) if dump_dir is not None else None
        if self.dump_dir is not None:
            self.dump_dir.mkdir(parents=True, exist_ok=True)
        self._queue: deque = deque()
        self._next_id = 0

    def _send(self, x, spec, direction, source):
        q = coding.quantize(x, spec)
        mapped = coding.zigzag_map(q.values)
        tid = self._next_id & 0xFFFFFFFF
        self._next_id += 1
        blob = coding.eg_encode(mapped, spec.k, tensor_id=tid, n=spec.n)
        self._queue.append(blob.to_bytes())

        # receiving side
        buf = self._queue.popleft()
        recv = coding.EncodedBlob.from_bytes(buf)
        levels = coding.zigzag_unmap(coding.eg_decode(recv))
        if not np.array_equal(levels, q.values):
            raise coding.CorruptStreamError(f"transfer {tid} did not round-trip")

        count = int(mapped.size)
        hm = sum(c * n for c, n in zip(*_huffman_bits(q.values)))
        rec = TransferRecord(self.epoch, self.step, direction, tid, source, count,
                             int(coding.fl_bits(q.values)) * count, recv.bit_length, hm)
        self.ledger.add(rec, buf if self.keep_blobs else None)
        if self.dump_dir is not None:
            (self.dump_dir / f"e{self.epoch:04d}_{tid:08d}.egb").write_bytes(buf)
        return coding.dequantize(levels, spec)


def _huffman_bits(values):
    lengths = coding.huffman_code_lengths(values)
    syms, counts = np.unique(np.asarray(values).ravel(), return_counts=True)
    return counts.tolist(), [lengths[s] for s in syms.tolist()]


def pipeline_forward(model: Model, x, plan: ShardPlan, spec: QuantSpec, link: WireLink | None = None):
    """Forward pass with every shard-boundary activation sent over the wire."""
    plan.check(model)
    link = link if link is not None else WireLink(spec)
    record = forward(model, x, boundary=link.activation)
    return record, link.ledger


def loss_grads(model: Model, x, y, boundary=None):
    """Plain distortion gradients for one shard: ``(grads, loss, record)``."""
    rec = forward(model, x, boundary=boundary)
    loss, dout = compute_loss(model.loss, rec.output, y)
    return backward(model, rec, dout), loss, rec


def data_parallel_round(workers: int, model: Model, batch_shards: Sequence, spec: QuantSpec,
                        link: QuantLink | None = None, grad_fn: Callable | None = None,
                        max_threads: int = 1):
    """One star-topology gradient exchange.

    ``batch_shards`` is a sequence of ``(x, y)`` pairs, one per worker.
    ``grad_fn(replica, x, y)`` returns ``(grads, info)``; the default computes
    plain loss gradients. Each worker's gradients pass through ``link``; the
    aggregator averages the received tensors in worker-index order.

    Returns ``(averaged_grads, infos, ledger)``; ``ledger`` is None for an
    in-process link.
    """
    if workers < 2:
        raise ValueError(f"data-parallel rounds need >= 2 workers, got {workers}")
    if len(batch_shards) != workers:
        raise ValueError(f"{len(batch_shards)} shards for {workers} workers")
    if any(len(xs) == 0 for xs, _ in batch_shards):
        raise ValueError("worker count exceeds batch size: a shard is empty")
    link = link if link is not None else WireLink(spec, spec)
    if grad_fn is None:
        grad_fn = lambda m, xs, ys: loss_grads(m, xs, ys)[:2]

    def work(i):
        replica = model.copy()
        xs, ys = batch_shards[i]
        return grad_fn(replica, xs, ys)

    if max_threads > 1:
        with ThreadPoolExecutor(max_threads) as pool:
            results = list(pool.map(work, range(workers)))
    else:
        results = [work(i) for i in range(workers)]

    received = [link.gradients(i, grads) for i, (grads, _) in enumerate(results)]
    avg = []
    for j in range(len(received[0])):
        acc = received[0][j].copy()
        for i in range(1, workers):
            acc = acc + received[i][j]
        avg.append(acc / workers)
    return avg, [info for _, info in results], getattr(link, "ledger", None)


def effective_ratio(ledger: WireLedger, **filters) -> dict:
    t = ledger.totals(**filters)
    if t["transfers"] == 0:
        raise ValueError("effective_ratio of an empty ledger")
    if t["raw_bits"] == 0:
        raise ValueError("raw_bits is zero")
    return {"c_eg": 1.0 - t["eg_bits"] / t["raw_bits"], "c_hm": 1.0 - t["hm_bits"] / t["raw_bits"]}
