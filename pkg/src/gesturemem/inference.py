"""Short-window prediction path and the streaming NDJSON serving protocol.

Input protocol: one JSON object per line, ``{"t": <ms>, "joints": [[x,y,z]*3]}``
(``t`` optional; synthesized from the frame counter and ``--frame-hz`` when
absent). Output: ``{"t": <ms>, "class": <id>, "name": <gesture>, "probs": [...]}``
once the window buffer holds T frames, at most once per ``stride_ms``.
Malformed input yields an ``{"error": ...}`` object and the session continues.
"""

from __future__ import annotations

import json
import logging
import math
import socketserver
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from . import memory as mem
from .dataset import NUM_CHANNELS, NUM_JOINTS, mean_center
from .errors import NonFiniteError, StructuralError
from .training import load_checkpoint

log = logging.getLogger(__name__)

# tolerance when comparing float timestamps against the emission stride, so a
# stride exactly equal to the frame period never misses a frame to rounding
TIME_EPS_MS = 1e-6


@dataclass
class FrozenModel:
    """Immutable bundle of everything prediction needs; shareable across sessions."""

    encoder_cfg: enc.EncoderConfig
    adjacency: np.ndarray
    params: dict
    decoder: dict
    queue: mem.MemoryQueue
    label_names: list
    short_len: int
    use_recall: bool
    center: bool
    input_scale: float
    dtype: type

    @classmethod
    def from_state(cls, state):
        cfg = state.config
        return cls(encoder_cfg=cfg.encoder_config(),
                   adjacency=state.graph.normalized,
                   params=state.params_s, decoder=state.decoder, queue=state.queue,
                   label_names=list(state.label_map.names), short_len=cfg.short_len,
                   use_recall=cfg.use_recall, center=cfg.center,
                   input_scale=cfg.input_scale, dtype=cfg.np_dtype)

    @classmethod
    def from_checkpoint(cls, path):
        return cls.from_state(load_checkpoint(path))

    @property
    def num_classes(self):
        return len(self.label_names)


def model_input(model, window):
    """Apply the model's preprocessing (centering, scaling, dtype) to a window."""
    x = np.asarray(window, dtype=np.float64)
    if model.center:
        x = mean_center(x)
    if model.input_scale != 1.0:
        x = x * model.input_scale
    return x.astype(model.dtype)


def predict(model, window):
    """Classify one [C, T, V] window; returns (class index, probability vector).

    Ties break toward the lowest class index. With an empty memory queue the
    recalled feature is zero, so prediction reduces to the plain decoder path.
    """
    window = np.asarray(window)
    if window.shape != (NUM_CHANNELS, model.short_len, NUM_JOINTS):
        raise StructuralError(
            f"expected window shape ({NUM_CHANNELS}, {model.short_len}, "
            f"{NUM_JOINTS}), got {window.shape}")
    if not np.isfinite(window).all():
        raise NonFiniteError("non-finite value in prediction input")
    feature = enc.encode(model.params, model_input(model, window),
                         model.adjacency, model.encoder_cfg)
    if model.use_recall:
        fused = mem.fuse(feature, mem.recall_for_query(model.queue, feature))
    else:
        fused = feature
    probs = enc.classify(model.decoder, fused)
    return int(probs.argmax()), probs


def latency_estimate(frames, frame_period_ms, inference_ms):
    """End-to-end latency: window fill time plus single-sample inference time."""
    if frames < 0 or frame_period_ms < 0 or inference_ms < 0:
        raise StructuralError("latency inputs must be non-negative")
    return float(frames * frame_period_ms + inference_ms)


class StreamSession:
    """One client's sliding window over arriving frames.

    Keeps the last T frames; once full, emits a prediction whenever at least
    ``stride_ms`` has elapsed (by frame timestamp) since the previous emission.
    """

    def __init__(self, model, stride_ms=180.0, frame_hz=30.0):
        self.model = model
        self.stride_ms = float(stride_ms)
        self.frame_hz = float(frame_hz)
        self.buffer = deque(maxlen=model.short_len)
        self.frames_received = 0
        self.last_emit_t = None
        self.last_prediction = None

    def handle_line(self, line):
        """Process one NDJSON line; returns an output object or None."""
        line = line.strip()
        if not line:
            return None
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            return {"error": f"malformed frame: {e.msg}"}
        if not isinstance(obj, dict) or "joints" not in obj:
            return {"error": "malformed frame: expected an object with 'joints'"}
        t = obj.get("t")
        if t is None:
            t = self.frames_received * 1000.0 / self.frame_hz
        elif not isinstance(t, (int, float)) or not math.isfinite(t):
            return {"error": "malformed frame: 't' must be a finite number"}
        return self.handle_frame(float(t), obj["joints"])

    def handle_frame(self, t_ms, joints):
        """Append one frame; returns a prediction object when one is due."""
        joints = np.asarray(joints, dtype=np.float64)
        if joints.shape != (NUM_JOINTS, NUM_CHANNELS):
            return {"error": f"expected {NUM_JOINTS}x{NUM_CHANNELS} joints, "
                             f"got shape {list(joints.shape)}", "t": t_ms}
        if not np.isfinite(joints).all():
            return {"error": "non-finite joint coordinate", "t": t_ms}
        self.buffer.append(joints)
        self.frames_received += 1
        if len(self.buffer) < self.model.short_len:
            return None
        if (self.last_emit_t is not None
                and t_ms - self.last_emit_t < self.stride_ms - TIME_EPS_MS):
            return None
        window = np.stack(self.buffer).transpose(2, 0, 1)  # [T,V,C] -> [C,T,V]
        started = time.perf_counter()
        cls, probs = predict(self.model, window)
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        log.info("prediction at t=%.1f ms: class %d (%s), inference %.2f ms",
                 t_ms, cls, self.model.label_names[cls], elapsed_ms)
        self.last_emit_t = t_ms
        self.last_prediction = {"t": t_ms, "class": cls,
                                "name": self.model.label_names[cls],
                                "probs": [float(p) for p in probs]}
        return self.last_prediction


def serve_stream(model, source, sink, stride_ms=180.0, frame_hz=30.0):
    """Run one session over text streams (used for --stdin serving and tests)."""
    session = StreamSession(model, stride_ms=stride_ms, frame_hz=frame_hz)
    for line in source:
        out = session.handle_line(line)
        if out is not None:
            sink.write(json.dumps(out) + "\n")
            sink.flush()
    return session


def serve_tcp(model, host, port, stride_ms=180.0, frame_hz=30.0):
    """Serve concurrent NDJSON sessions over TCP; blocks until interrupted."""

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            session = StreamSession(model, stride_ms=stride_ms, frame_hz=frame_hz)
            for raw in self.rfile:
                out = session.handle_line(raw.decode("utf-8", errors="replace"))
                if out is not None:
                    self.wfile.write((json.dumps(out) + "\n").encode())

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    with Server((host, port), Handler) as server:
        log.info("serving on %s:%d (stride %.0f ms)", host, port, stride_ms)
        server.serve_forever()
