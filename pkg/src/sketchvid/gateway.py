"""Uniform client layer for every external neural service.

All seven service roles (chat planner, text-to-image, image-to-video,
text-to-video, tagger, open-vocabulary detector, box-prompted segmenter)
plus the optional autoencoder and remote denoiser share one transport:
HTTP POST with JSON envelopes.

Wire conventions (normative, bit-exact):

- Images travel as base64-encoded 8-bit RGB PNG under ``image_png_b64``
  (masks: grayscale PNG under ``mask_png_b64``); in file mode the client
  writes the PNG beside the run and sends ``image_path`` instead.
- Videos are JSON lists of frame PNGs under ``frames_png_b64`` plus ``fps``.
- Tensors use the ``TEN1`` binary format, base64-encoded under
  ``tensor_b64``: magic ``b"TEN1"``, uint32 little-endian rank, rank
  uint32 little-endian dimensions, then the float32 little-endian payload
  in C order.
- Boxes are ``[x1, y1, x2, y2]`` fractions of width/height; detector hits
  are ``{"label": ..., "box": [...], "confidence": ...}``.

Endpoint paths: ``/v1/chat``, ``/v1/t2i``, ``/v1/i2v``, ``/v1/t2v``,
``/v1/tag``, ``/v1/detect``, ``/v1/segment``, ``/v1/vae/encode``,
``/v1/vae/decode``, ``/v1/denoise``.

Every response is shape-validated before it crosses the gateway boundary,
transient failures retry with exponential backoff, and every call lands in
the gateway's log (kind, latency, retry count, payload hashes) for the run
manifest. Per-kind URLs and tokens can be overridden through
``SKETCHVID_<KIND>_URL`` / ``SKETCHVID_<KIND>_TOKEN``.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import os
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests
from PIL import Image as PILImage

from .codec import LatentVideo, PixelVideo
from .errors import (
    ConfigError,
    GatewayHTTPError,
    GatewayPayloadError,
    GatewayTimeout,
)
from .planner import BBox, DetectedObject

SERVICE_KINDS = ("chat", "t2i", "i2v", "t2v", "tag", "detect", "segment",
                 "vae", "denoise")

_PATHS = {
    "chat": "/v1/chat",
    "t2i": "/v1/t2i",
    "i2v": "/v1/i2v",
    "t2v": "/v1/t2v",
    "tag": "/v1/tag",
    "detect": "/v1/detect",
    "segment": "/v1/segment",
    "vae_encode": "/v1/vae/encode",
    "vae_decode": "/v1/vae/decode",
    "denoise": "/v1/denoise",
}

TENSOR_MAGIC = b"TEN1"


# ---------------------------------------------------------------------------
# payload codecs
# ---------------------------------------------------------------------------

def encode_image_png(image: np.ndarray) -> bytes:
    """8-bit RGB PNG bytes from an (H, W, 3) float image in [0, 1]."""
    arr = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0),
                  0, 255).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_image_png(data: bytes) -> np.ndarray:
    arr = np.asarray(PILImage.open(io.BytesIO(data)).convert("RGB"),
                     dtype=np.float64)
    return arr / 255.0


def encode_mask_png(mask: np.ndarray) -> bytes:
    arr = np.clip(np.round(np.asarray(mask, dtype=np.float64) * 255.0),
                  0, 255).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def decode_mask_png(data: bytes) -> np.ndarray:
    arr = np.asarray(PILImage.open(io.BytesIO(data)).convert("L"),
                     dtype=np.float64)
    return arr / 255.0


def pack_tensor(arr: np.ndarray) -> bytes:
    """Serialize to the TEN1 format (float32 little-endian, C order)."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = TENSOR_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def unpack_tensor(data: bytes) -> np.ndarray:
    if data[:4] != TENSOR_MAGIC:
        raise GatewayPayloadError("tensor payload lacks TEN1 magic")
    (ndim,) = struct.unpack_from("<I", data, 4)
    if ndim > 8:
        raise GatewayPayloadError(f"implausible tensor rank {ndim}")
    shape = struct.unpack_from(f"<{ndim}I", data, 8)
    offset = 8 + 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    if len(data) - offset != 4 * count:
        raise GatewayPayloadError(
            f"tensor payload size {len(data) - offset} does not match shape {shape}"
        )
    flat = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
    return flat.reshape(shape).astype(np.float64)


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text: str) -> bytes:
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except Exception as exc:
        raise GatewayPayloadError(f"invalid base64 payload: {exc}") from exc


# ---------------------------------------------------------------------------
# endpoint configuration
# ---------------------------------------------------------------------------

@dataclass
class ServiceEndpoint:
    """Where one service kind lives and how patiently to talk to it."""

    kind: str
    base_url: str
    timeout: float = 30.0
    max_retries: int = 2
    auth_token: str | None = None
    backoff_base: float = 0.1

    def __post_init__(self):
        if self.kind not in SERVICE_KINDS:
            raise ConfigError(f"unknown service kind {self.kind!r}")
        if self.timeout <= 0:
            raise ConfigError(f"timeout must be positive, got {self.timeout}")
        if self.max_retries < 0:
            raise ConfigError(f"retries must be >= 0, got {self.max_retries}")


def endpoints_from_env(base_url: str, timeout: float = 30.0,
                       max_retries: int = 2) -> dict[str, ServiceEndpoint]:
    """One endpoint per kind at ``base_url``, with per-kind env overrides."""
    out = {}
    for kind in SERVICE_KINDS:
        url = os.environ.get(f"SKETCHVID_{kind.upper()}_URL", base_url)
        token = os.environ.get(f"SKETCHVID_{kind.upper()}_TOKEN")
        out[kind] = ServiceEndpoint(kind=kind, base_url=url, timeout=timeout,
                                    max_retries=max_retries, auth_token=token)
    return out


# ---------------------------------------------------------------------------
# chat request/response
# ---------------------------------------------------------------------------

@dataclass
class ChatMessage:
    role: str
    content: str
    image: np.ndarray | None = None


@dataclass
class ChatRequest:
    messages: list[ChatMessage]
    model: str = "default"

    def __post_init__(self):
        if not self.messages:
            raise ConfigError("chat request needs at least one message")


@dataclass
class GatewayCall:
    """One recorded round trip, as persisted into the run manifest."""

    kind: str
    url: str
    status: int
    retries: int
    elapsed_s: float
    request_sha256: str
    response_sha256: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# gateway client
# ---------------------------------------------------------------------------

class ModelGateway:
    """Typed, retrying client over the shared wire protocol.

    ``payload_mode="file"`` writes request images as PNG files under
    ``file_dir`` and sends their paths instead of inline base64 (for local
    runs against services on the same filesystem). Instances are safe for
    concurrent calls; the call log appends atomically under a lock.
    """

    def __init__(self, endpoints: dict[str, ServiceEndpoint],
                 payload_mode: str = "inline",
                 file_dir: str | Path | None = None,
                 parallelism: int = 4,
                 session: requests.Session | None = None):
        if payload_mode not in ("inline", "file"):
            raise ConfigError(f"payload mode must be inline or file: {payload_mode!r}")
        if payload_mode == "file" and file_dir is None:
            raise ConfigError("file payload mode requires file_dir")
        self.endpoints = dict(endpoints)
        self.payload_mode = payload_mode
        self.file_dir = Path(file_dir) if file_dir else None
        self.parallelism = max(1, int(parallelism))
        self.call_log: list[GatewayCall] = []
        self._session = session or requests.Session()
        import threading

        self._log_lock = threading.Lock()
        self._file_counter = 0

    # -- transport ----------------------------------------------------------

    def _endpoint(self, kind: str) -> ServiceEndpoint:
        ep = self.endpoints.get(kind)
        if ep is None:
            raise ConfigError(f"no endpoint configured for kind {kind!r}")
        return ep

    def _post(self, kind: str, path: str, payload: dict) -> dict:
        ep = self._endpoint(kind)
        url = ep.base_url.rstrip("/") + path
        body = json.dumps(payload).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if ep.auth_token:
            headers["Authorization"] = f"Bearer {ep.auth_token}"

        started = time.monotonic()
        last_error: Exception | None = None
        status = 0
        response_bytes = b""
        for attempt in range(ep.max_retries + 1):
            if attempt:
                time.sleep(ep.backoff_base * (2 ** (attempt - 1)))
            try:
                resp = self._session.post(url, data=body, headers=headers,
                                          timeout=ep.timeout)
            except requests.Timeout:
                last_error = GatewayTimeout(
                    f"{kind} endpoint timed out after {ep.timeout}s",
                    kind=kind, elapsed_s=time.monotonic() - started,
                )
                continue
            except requests.RequestException as exc:
                last_error = GatewayHTTPError(
                    f"{kind} endpoint unreachable: {exc}", kind=kind)
                continue
            status = resp.status_code
            response_bytes = resp.content
            if 500 <= status < 600:
                last_error = GatewayHTTPError(
                    f"{kind} endpoint returned {status}", kind=kind, status=status)
                continue
            if status != 200:
                self._record(kind, url, status, attempt, started, body,
                             response_bytes)
                raise GatewayHTTPError(
                    f"{kind} endpoint returned {status}", kind=kind, status=status)
            self._record(kind, url, status, attempt, started, body,
                         response_bytes)
            try:
                doc = json.loads(response_bytes.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise GatewayPayloadError(
                    f"{kind} endpoint sent a malformed JSON body: {exc}",
                    kind=kind) from exc
            if not isinstance(doc, dict):
                raise GatewayPayloadError(
                    f"{kind} endpoint sent a non-object body", kind=kind)
            return doc
        self._record(kind, url, status, ep.max_retries, started, body,
                     response_bytes)
        assert last_error is not None
        raise last_error

    def _record(self, kind, url, status, retries, started, body, response):
        call = GatewayCall(
            kind=kind, url=url, status=status, retries=retries,
            elapsed_s=time.monotonic() - started,
            request_sha256=hashlib.sha256(body).hexdigest(),
            response_sha256=hashlib.sha256(response).hexdigest(),
        )
        with self._log_lock:
            self.call_log.append(call)

    # -- payload helpers ----------------------------------------------------

    def _image_field(self, image: np.ndarray) -> dict:
        png = encode_image_png(image)
        if self.payload_mode == "file":
            self.file_dir.mkdir(parents=True, exist_ok=True)
            with self._log_lock:
                self._file_counter += 1
                n = self._file_counter
            path = self.file_dir / f"payload_{n:06d}.png"
            path.write_bytes(png)
            return {"image_path": str(path)}
        return {"image_png_b64": _b64(png)}

    @staticmethod
    def _frames_from(doc: dict, kind: str, expected: int | None = None) -> PixelVideo:
        frames64 = doc.get("frames_png_b64")
        if not isinstance(frames64, list) or not frames64:
            raise GatewayPayloadError(f"{kind} response lacks frames", kind=kind)
        frames = [decode_image_png(_unb64(f)) for f in frames64]
        shapes = {f.shape for f in frames}
        if len(shapes) != 1:
            raise GatewayPayloadError(
                f"{kind} response frames disagree on shape: {shapes}", kind=kind)
        if expected is not None and len(frames) != expected:
            raise GatewayPayloadError(
                f"{kind} returned {len(frames)} frames, wanted {expected}",
                kind=kind)
        fps = float(doc.get("fps", 8.0))
        return PixelVideo(frames=np.stack(frames), fps=fps)

    # -- service operations -------------------------------------------------

    def chat(self, request: ChatRequest) -> str:
        payload = {
            "model": request.model,
            "messages": [
                {"role": m.role, "content": m.content,
                 **(self._image_field(m.image) if m.image is not None else {})}
                for m in request.messages
            ],
        }
        doc = self._post("chat", _PATHS["chat"], payload)
        text = doc.get("text")
        if not isinstance(text, str):
            raise GatewayPayloadError("chat response lacks text", kind="chat")
        return text

    def ask(self, prompt: str, image: np.ndarray | None = None) -> str:
        """Single-turn convenience wrapper around :meth:`chat`."""
        return self.chat(ChatRequest(messages=[
            ChatMessage(role="user", content=prompt, image=image)
        ]))

    def text_to_image(self, prompt: str, width: int, height: int,
                      seed: int) -> np.ndarray:
        doc = self._post("t2i", _PATHS["t2i"], {
            "prompt": prompt, "width": int(width), "height": int(height),
            "seed": int(seed),
        })
        if "image_png_b64" not in doc:
            raise GatewayPayloadError("t2i response lacks image", kind="t2i")
        image = decode_image_png(_unb64(doc["image_png_b64"]))
        if image.shape != (height, width, 3):
            raise GatewayPayloadError(
                f"t2i returned {image.shape}, wanted {(height, width, 3)}",
                kind="t2i")
        return image

    def image_to_video(self, image: np.ndarray, prompt: str,
                       frame_count: int, seed: int) -> PixelVideo:
        payload = {"prompt": prompt, "frame_count": int(frame_count),
                   "seed": int(seed)}
        payload.update(self._image_field(image))
        doc = self._post("i2v", _PATHS["i2v"], payload)
        video = self._frames_from(doc, "i2v", expected=frame_count)
        if video.frames.shape[1:3] != image.shape[:2]:
            raise GatewayPayloadError(
                "i2v changed the frame size", kind="i2v")
        return video

    def text_to_video(self, prompt: str, frame_count: int, width: int,
                      height: int, seed: int) -> PixelVideo:
        doc = self._post("t2v", _PATHS["t2v"], {
            "prompt": prompt, "frame_count": int(frame_count),
            "width": int(width), "height": int(height), "seed": int(seed),
        })
        video = self._frames_from(doc, "t2v", expected=frame_count)
        if video.frames.shape[1:3] != (height, width):
            raise GatewayPayloadError("t2v ignored the frame size", kind="t2v")
        return video

    def tag_image(self, image: np.ndarray) -> list[str]:
        payload = self._image_field(image)
        doc = self._post("tag", _PATHS["tag"], payload)
        labels = doc.get("labels")
        if (not isinstance(labels, list)
                or any(not isinstance(v, str) or not v for v in labels)):
            raise GatewayPayloadError("tag response lacks labels", kind="tag")
        return labels

    def detect(self, image: np.ndarray, labels: list[str]) -> list[DetectedObject]:
        payload = {"labels": list(labels)}
        payload.update(self._image_field(image))
        doc = self._post("detect", _PATHS["detect"], payload)
        raw = doc.get("objects")
        if not isinstance(raw, list):
            raise GatewayPayloadError("detect response lacks objects", kind="detect")
        out = []
        for entry in raw:
            try:
                out.append(DetectedObject(
                    label=str(entry["label"]),
                    box=BBox(*[float(v) for v in entry["box"]]),
                    confidence=float(entry.get("confidence", 1.0)),
                ))
            except Exception as exc:
                raise GatewayPayloadError(
                    f"malformed detection {entry!r}: {exc}", kind="detect"
                ) from exc
        return out

    def segment(self, image: np.ndarray, box: BBox) -> np.ndarray:
        payload = {"box": box.as_list()}
        payload.update(self._image_field(image))
        doc = self._post("segment", _PATHS["segment"], payload)
        if "mask_png_b64" not in doc:
            raise GatewayPayloadError("segment response lacks mask", kind="segment")
        mask = decode_mask_png(_unb64(doc["mask_png_b64"]))
        if mask.shape != image.shape[:2]:
            raise GatewayPayloadError(
                f"segment mask {mask.shape} does not match image "
                f"{image.shape[:2]}", kind="segment")
        return mask

    def vae_encode(self, video: PixelVideo) -> LatentVideo:
        doc = self._post("vae", _PATHS["vae_encode"], {
            "frames_png_b64": [_b64(encode_image_png(f)) for f in video.frames],
            "fps": video.fps,
        })
        if "tensor_b64" not in doc:
            raise GatewayPayloadError("vae encode lacks tensor", kind="vae")
        data = unpack_tensor(_unb64(doc["tensor_b64"]))
        if data.ndim != 4 or data.shape[0] != video.frame_count:
            raise GatewayPayloadError(
                f"vae encode returned shape {data.shape}", kind="vae")
        return LatentVideo(data=data, codec_id=str(doc.get("codec_id", "remote")))

    def vae_decode(self, z: LatentVideo, fps: float = 8.0) -> PixelVideo:
        doc = self._post("vae", _PATHS["vae_decode"], {
            "tensor_b64": _b64(pack_tensor(z.data)),
            "codec_id": z.codec_id,
            "fps": fps,
        })
        return self._frames_from(doc, "vae", expected=z.frame_count)

    def denoise(self, z: LatentVideo, t: float, conditioning: str = "") -> LatentVideo:
        doc = self._post("denoise", _PATHS["denoise"], {
            "tensor_b64": _b64(pack_tensor(z.data)),
            "t": float(t),
            "conditioning": conditioning,
        })
        if "tensor_b64" not in doc:
            raise GatewayPayloadError("denoise response lacks tensor", kind="denoise")
        data = unpack_tensor(_unb64(doc["tensor_b64"]))
        if data.shape != z.data.shape:
            raise GatewayPayloadError(
                f"denoise changed shape {z.data.shape} -> {data.shape}",
                kind="denoise")
        return LatentVideo(data=data, codec_id=z.codec_id)


@dataclass
class RemoteDenoiser:
    """Solver-facing adapter exposing the remote denoise endpoint.

    Predictions run in float32 over the wire; the gateway validates shapes
    on the way back.
    """

    gateway: ModelGateway
    supports_concurrent_calls: bool = True

    def predict(self, z: LatentVideo, t: float, conditioning: str = "") -> LatentVideo:
        return self.gateway.denoise(z, t, conditioning)
