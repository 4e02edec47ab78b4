"""Face embedders: a built-in differentiable one and a subprocess adapter.

The built-in embedder resizes luminance to a 32x32 patch, subtracts the
mean, applies a fixed seeded orthonormal projection to 128 dimensions and
normalizes. It is deterministic, sensitive to lighting changes, and its
input gradient has a closed form, which makes it a practical desk-scale
stand-in for a deep face-recognition model.

External models plug in over a newline-delimited subprocess protocol:

    endpoint -> HELLO <name> <dimension>
    client   -> EMBED <width> <height>
    client   -> <base64 of row-major 8-bit luminance>
    endpoint -> VEC
    endpoint -> <dimension space-separated decimals>
"""

from __future__ import annotations

import base64
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, ProtocolError, ProtocolTimeoutError
from .relight import FaceImage

PATCH = 32
DEFAULT_DIM = 128

#: Accept external vectors whose norm is within this fraction of 1.
NORM_SLACK = 0.01

_DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class EmbedderDescriptor:
    name: str
    dimension: int
    differentiable: bool

    def __post_init__(self):
        if self.dimension < 2:
            raise ValueError("embedding dimension must be >= 2")


def cosine_similarity(a, b) -> float:
    """Dot product of unit vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"embedding dimensions differ: {a.shape} vs {b.shape}")
    return float(np.clip(a @ b, -1.0, 1.0))


class BuiltinEmbedder:
    """Deterministic linear-then-normalize embedder over resized luminance."""

    def __init__(self, dimension: int = DEFAULT_DIM, seed: int = 0):
        if not 2 <= dimension <= PATCH * PATCH:
            raise ValueError(f"dimension must be in [2, {PATCH * PATCH}]")
        rng = np.random.default_rng(seed)
        gauss = rng.standard_normal((PATCH * PATCH, dimension))
        q, _ = np.linalg.qr(gauss)
        self._projection = q.T.copy()  # rows orthonormal, (dim, PATCH^2)
        self.descriptor = EmbedderDescriptor("builtin", dimension, differentiable=True)
        self._resize_plans: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    def embed(self, image: FaceImage) -> np.ndarray:
        v, norm = self._project(image.luminance)
        if norm < _DEGENERATE_NORM:
            return self._fallback_axis()
        return v / norm

    def input_gradient(self, image: FaceImage, upstream) -> np.ndarray:
        """Exact gradient of <embed(image), upstream> w.r.t. each luminance pixel."""
        u = np.asarray(upstream, dtype=np.float64)
        if u.shape != (self.descriptor.dimension,):
            raise ValueError("upstream cotangent has the wrong dimension")
        lum = image.luminance
        v, norm = self._project(lum)
        if norm < _DEGENERATE_NORM:
            return np.zeros_like(lum)
        e = v / norm
        dv = (u - (u @ e) * e) / norm
        dz = self._projection.T @ dv
        dz -= dz.mean()  # transpose of the mean subtraction
        idx, weights = self._plan(lum.shape)
        grad = np.zeros(lum.size, dtype=np.float64)
        np.add.at(grad, idx, dz[:, None] * weights)
        return grad.reshape(lum.shape)

    def _project(self, lum: np.ndarray) -> tuple[np.ndarray, float]:
        idx, weights = self._plan(lum.shape)
        patch = (lum.reshape(-1)[idx] * weights).sum(axis=1)
        z = patch - patch.mean()
        v = self._projection @ z
        return v, float(np.linalg.norm(v))

    def _fallback_axis(self) -> np.ndarray:
        e = np.zeros(self.descriptor.dimension)
        e[0] = 1.0
        return e

    def _plan(self, shape: tuple[int, int]):
        """Bilinear gather indices/weights mapping ``shape`` to PATCH x PATCH."""
        plan = self._resize_plans.get(shape)
        if plan is None:
            h, w = shape
            rows = np.clip((np.arange(PATCH) + 0.5) * h / PATCH - 0.5, 0, h - 1)
            cols = np.clip((np.arange(PATCH) + 0.5) * w / PATCH - 0.5, 0, w - 1)
            r0 = np.floor(rows).astype(int)
            c0 = np.floor(cols).astype(int)
            r1 = np.minimum(r0 + 1, h - 1)
            c1 = np.minimum(c0 + 1, w - 1)
            fr = (rows - r0)[:, None]
            fc = (cols - c0)[None, :]
            idx = np.stack(
                [
                    (r0[:, None] * w + c0[None, :]).ravel(),
                    (r0[:, None] * w + c1[None, :]).ravel(),
                    (r1[:, None] * w + c0[None, :]).ravel(),
                    (r1[:, None] * w + c1[None, :]).ravel(),
                ],
                axis=1,
            )
            weights = np.stack(
                [
                    ((1 - fr) * (1 - fc)).ravel(),
                    ((1 - fr) * fc).ravel(),
                    (fr * (1 - fc)).ravel(),
                    (fr * fc).ravel(),
                ],
                axis=1,
            )
            plan = (idx, weights)
            self._resize_plans[shape] = plan
        return plan


def luminance_bytes(image: FaceImage) -> bytes:
    """Row-major 8-bit quantization of the luminance channel."""
    return np.round(image.luminance * 255.0).astype(np.uint8).tobytes()


class ExternalEmbedder:
    """Adapter speaking the subprocess line protocol.

    ``command`` is the endpoint command line (string or argv list). One
    adapter serializes its requests; use :class:`EmbedderPool` for
    concurrent embedding over several endpoint processes.
    """

    def __init__(self, command, timeout: float = 30.0):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self._timeout = timeout
        self._lock = threading.Lock()
        self._proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        try:
            hello = self._read_line().split()
            if len(hello) != 3 or hello[0] != "HELLO":
                raise ProtocolError(f"bad handshake: {' '.join(hello)!r}")
            try:
                dimension = int(hello[2])
            except ValueError:
                raise ProtocolError(f"bad handshake dimension: {hello[2]!r}") from None
            self.descriptor = EmbedderDescriptor(hello[1], dimension,
                                                 differentiable=False)
        except ProtocolError:
            self.close()
            raise

    def embed(self, image: FaceImage) -> np.ndarray:
        payload = base64.b64encode(luminance_bytes(image)).decode("ascii")
        with self._lock:
            self._send(f"EMBED {image.width} {image.height}\n{payload}\n")
            header = self._read_line()
            if header.strip() != "VEC":
                raise ProtocolError(f"expected VEC, got {header!r}")
            tokens = self._read_line().split()
        if len(tokens) != self.descriptor.dimension:
            raise ProtocolError(
                f"endpoint advertised dimension {self.descriptor.dimension} "
                f"but sent {len(tokens)} values"
            )
        vec = np.array([float(t) for t in tokens], dtype=np.float64)
        if not np.all(np.isfinite(vec)):
            raise ProtocolError("endpoint sent non-finite values")
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > NORM_SLACK:
            raise ProtocolError(f"embedding norm {norm:.4g} outside unit tolerance")
        return vec / norm

    def input_gradient(self, image: FaceImage, upstream):
        raise CapabilityError("external embedders do not provide input gradients")

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _pump(self) -> None:
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _send(self, text: str) -> None:
        try:
            self._proc.stdin.write(text)
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise ProtocolError("endpoint process is gone") from exc

    def _read_line(self) -> str:
        try:
            line = self._lines.get(timeout=self._timeout)
        except queue.Empty:
            raise ProtocolTimeoutError(
                f"no response within {self._timeout:.0f} s"
            ) from None
        if line is None:
            raise ProtocolError("endpoint closed the connection")
        return line.rstrip("\n")


class EmbedderPool:
    """Round-robin pool of independent endpoint connections."""

    def __init__(self, command, size: int = 2, timeout: float = 30.0):
        if size < 1:
            raise ValueError("pool size must be >= 1")
        self._workers = [ExternalEmbedder(command, timeout) for _ in range(size)]
        self._free: queue.Queue = queue.Queue()
        for worker in self._workers:
            self._free.put(worker)
        self.descriptor = self._workers[0].descriptor

    def embed(self, image: FaceImage) -> np.ndarray:
        worker = self._free.get()
        try:
            return worker.embed(image)
        finally:
            self._free.put(worker)

    def input_gradient(self, image: FaceImage, upstream):
        raise CapabilityError("external embedders do not provide input gradients")

    def close(self) -> None:
        for worker in self._workers:
            worker.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
