"""Seeded simulation of the observation process ``dz = A u dt + Sigma^{1/2} dW``.

Noise comes from a counter-based generator (Philox) keyed by the seed.
Step ``k`` always reads the same fixed block of counters, so any step can be
regenerated on its own and a longer stream extends a shorter one.
"""

from dataclasses import dataclass
import math
import struct

import numpy as np

from . import linalg

_HEADER = struct.Struct("<qddQ")
_UINT53 = 2.0**-53


@dataclass(frozen=True)
class DataStream:
    """Observation increments ``dz_k``, ``k = 1..floor(T/h)``.

    ``increments`` has shape ``(steps, dim)`` for a single stream or
    ``(reps, steps, dim)`` for a stack of independent streams, in which case
    ``seed`` is a tuple with one entry per stream.
    """

    increments: np.ndarray
    h: float
    T: float
    seed: object
    problem_ref: str = ""

    @property
    def steps(self):
        return self.increments.shape[-2]

    @property
    def batched(self):
        return self.increments.ndim == 3

    def coarsen(self, factor):
        """Sum groups of ``factor`` consecutive increments (step ``factor*h``)."""
        factor = int(factor)
        if factor < 1:
            raise ValueError("coarsening factor must be >= 1")
        steps = self.steps // factor
        inc = self.increments[..., : steps * factor, :]
        shape = inc.shape[:-2] + (steps, factor, inc.shape[-1])
        return DataStream(
            inc.reshape(shape).sum(axis=-2), self.h * factor, self.T, self.seed, self.problem_ref
        )


def _block_size(dim):
    # raw uint64 draws per step; Philox4x64 advances one counter per 4 draws
    pairs = (dim + 1) // 2
    return 4 * math.ceil(2 * pairs / 4)


def standard_normals(seed, dim, steps, start=0):
    """Standard normal vectors for steps ``start+1 .. start+steps``.

    Box-Muller on Philox output; the result for step ``k`` depends only on
    ``(seed, k, dim)``.
    """
    block = _block_size(dim)
    bitgen = np.random.Philox(key=int(seed) % 2**64)
    if start:
        bitgen.advance(start * block // 4)
    raw = bitgen.random_raw(steps * block).reshape(steps, block)
    pairs = (dim + 1) // 2
    u = ((raw[:, : 2 * pairs] >> np.uint64(11)).astype(np.float64) + 0.5) * _UINT53
    u1, u2 = u[:, 0::2], u[:, 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.empty((steps, 2 * pairs))
    z[:, 0::2] = r * np.cos(angle)
    z[:, 1::2] = r * np.sin(angle)
    return z[:, :dim]


def _check_times(T, h):
    if not h > 0:
        raise ValueError(f"time step must be positive, got h={h}")
    if T < h:
        raise ValueError(f"ending time T={T} is shorter than the step h={h}")
    # tolerate T/h landing a hair below an integer
    return int(math.floor(T / h + 1e-9))


class _NoiseModel:
    """Caches ``A u`` and ``Sigma^{1/2}`` for a problem instance."""

    def __init__(self, prob):
        self.drift = prob.A @ prob.u_true
        self.root = None if prob.white_noise else linalg.spd_sqrt(prob.Sigma)

    def increments(self, h, normals):
        noise = normals if self.root is None else normals @ self.root.T
        return h * self.drift + math.sqrt(h) * noise


def simulate_stream(prob, T, h, seed):
    """One stream of increments ``h A u + sqrt(h) Sigma^{1/2} xi_k``."""
    steps = _check_times(T, h)
    model = _NoiseModel(prob)
    xi = standard_normals(seed, model.drift.size, steps)
    return DataStream(model.increments(h, xi), float(h), float(T), int(seed), prob.label)


def simulate_streams(prob, T, h, seeds):
    """Independent streams stacked as ``(len(seeds), steps, dim)``."""
    steps = _check_times(T, h)
    model = _NoiseModel(prob)
    dim = model.drift.size
    out = np.empty((len(seeds), steps, dim))
    for i, seed in enumerate(seeds):
        out[i] = model.increments(h, standard_normals(seed, dim, steps))
    return DataStream(out, float(h), float(T), tuple(int(s) for s in seeds), prob.label)


def noiseless_stream(prob, T, h, reps=None):
    """Increments ``h A u`` exactly; ``reps`` stacks identical copies."""
    steps = _check_times(T, h)
    inc = np.broadcast_to(h * (prob.A @ prob.u_true), (steps, prob.A.shape[0])).copy()
    if reps is not None:
        inc = np.broadcast_to(inc, (reps,) + inc.shape).copy()
        return DataStream(inc, float(h), float(T), (0,) * reps, prob.label)
    return DataStream(inc, float(h), float(T), 0, prob.label)


def compensated_sum(x, axis=0):
    """Neumaier-compensated sum along ``axis`` (vectorized over the rest)."""
    x = np.moveaxis(np.asarray(x, dtype=float), axis, 0)
    total = np.zeros(x.shape[1:])
    comp = np.zeros(x.shape[1:])
    for row in x:
        t = total + row
        big = np.abs(total) >= np.abs(row)
        comp += np.where(big, (total - t) + row, (row - t) + total)
        total = t
    return total + comp


def final_observation(stream):
    """``z(T)`` as the compensated sum of all increments."""
    return compensated_sum(stream.increments, axis=-2)


def averaged_datum(stream):
    """``z(T)/T``, distributed as ``N(A u, Sigma/T)``."""
    if stream.steps == 0:
        raise ValueError("empty stream")
    return final_observation(stream) / stream.T


def write_stream(stream, path):
    """Binary dump: ``<q d d Q`` header (steps, T, h, seed), then float64 rows."""
    if stream.batched:
        raise ValueError("only single streams can be dumped")
    inc = np.ascontiguousarray(stream.increments, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(stream.steps, stream.T, stream.h, int(stream.seed) % 2**64))
        fh.write(inc.tobytes())


def read_stream(path):
    with open(path, "rb") as fh:
        steps, T, h, seed = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if steps == 0 or data.size % steps:
        raise ValueError(f"{path}: payload of {data.size} floats does not split into {steps} rows")
    return DataStream(data.reshape(steps, -1).astype(float), h, T, seed)
