"""Deterministic in-process model server for tests and ``--mock`` runs.

Serves every gateway endpoint over real HTTP (a stdlib threading server on
an ephemeral localhost port), so mock runs exercise the same transport,
retries, and wire formats as production endpoints. Every response is a pure
function of (request, seed): images are procedural fields keyed by a SHA-256
of the request, the chat endpoint answers the three planning prompts with
canned-but-valid content, and the denoise endpoint hosts the analytic
posterior denoiser.

Failure injection: ``MockConfig.flaky`` maps a service kind to a number of
initial requests that will be answered with HTTP 503, for retry tests.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .compositor import resize_bilinear
from .gateway import (
    SERVICE_KINDS,
    ServiceEndpoint,
    decode_image_png,
    encode_image_png,
    encode_mask_png,
    pack_tensor,
    unpack_tensor,
)
from .planner import derive_object_specs, fallback_plan, serialize_plan
from .schedule import make_schedule
from .solver import GaussianDenoiser
from .codec import LatentVideo

_SCENES = ("meadow", "harbor", "courtyard", "riverbank", "snowfield",
           "desert road", "forest clearing")

DEFAULT_FIXTURE_BOXES = {
    "path": (0.44, 0.57, 0.99, 0.99),
    "grass": (0.01, 0.5, 0.99, 0.99),
    "sky": (0.01, 0.01, 0.99, 0.45),
}


@dataclass
class MockConfig:
    """Knobs for the deterministic services."""

    fixture_boxes: dict[str, tuple] = field(
        default_factory=lambda: dict(DEFAULT_FIXTURE_BOXES))
    schedule_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    schedule_kind: str = "linear"
    denoiser_mu: float = 0.0
    denoiser_sigma: float = 1.0
    flaky: dict[str, int] = field(default_factory=dict)
    latency_s: float = 0.0
    chat_override: str | None = None  # fixed chat reply, for failure tests


def _hash_rng(*parts) -> np.random.Generator:
    digest = hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).digest()
    entropy = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def procedural_image(width: int, height: int, *key) -> np.ndarray:
    """Smooth deterministic color field with a horizon gradient."""
    rng = _hash_rng("image", *key)
    low = rng.random((6, 6, 3))
    img = resize_bilinear(low, height, width)
    ramp = np.linspace(0.12, -0.12, height).reshape(-1, 1, 1)
    return np.clip(img * 0.8 + 0.1 + ramp, 0.0, 1.0)


class _MockServices:
    """The request -> response mapping, independent of the transport."""

    def __init__(self, config: MockConfig):
        self.config = config
        schedule = make_schedule(config.schedule_steps, config.beta_start,
                                 config.beta_end, config.schedule_kind)
        self._denoiser = GaussianDenoiser(
            schedule=schedule, mu=config.denoiser_mu,
            sigma=config.denoiser_sigma)

    # -- helpers ------------------------------------------------------------

    @staticmethod
    def _read_image(payload: dict) -> np.ndarray:
        import base64

        if "image_png_b64" in payload:
            return decode_image_png(base64.b64decode(payload["image_png_b64"]))
        if "image_path" in payload:
            return decode_image_png(Path(payload["image_path"]).read_bytes())
        raise ValueError("request carries no image")

    @staticmethod
    def _b64(data: bytes) -> str:
        import base64

        return base64.b64encode(data).decode("ascii")

    # -- chat ---------------------------------------------------------------

    def chat(self, payload: dict) -> dict:
        if self.config.chat_override is not None:
            return {"text": self.config.chat_override}
        text = payload["messages"][-1]["content"]
        prompt_match = re.search(r'Video prompt: "(.*)"', text)
        video_prompt = prompt_match.group(1) if prompt_match else text[:80]

        if "only the background" in text:
            scene = _SCENES[int(_hash_rng("scene", video_prompt).integers(
                len(_SCENES)))]
            reply = (
                f"A quiet {scene} under soft daylight, with gentle ambient "
                "motion and no subjects present. The camera stays static "
                "throughout."
            )
            return {"text": reply}

        frames_match = re.search(r"a (\d+)-frame video", text)
        if frames_match and "bounding box" in text:
            frame_count = int(frames_match.group(1))
            specs = derive_object_specs(video_prompt)
            plan = fallback_plan(video_prompt, frame_count, specs)
            doc = serialize_plan(plan)
            doc["reasoning"] = (
                f"{specs[0][0]} is placed on the band and drifts "
                f"{specs[0][2]} at a constant rate."
            )
            return {"text": "Here is the plan.\n```json\n"
                            + json.dumps(doc, indent=1) + "\n```\n"}

        range_match = re.search(
            r"between ([0-9]*\.?[0-9]+) and ([0-9]*\.?[0-9]+)", text)
        if range_match:
            lo, hi = float(range_match.group(1)), float(range_match.group(2))
            frac = int(_hash_rng("alpha", video_prompt).integers(1000)) / 999.0
            return {"text": f"{lo + frac * (hi - lo):.3f}"}

        return {"text": f"ack: {video_prompt}"}

    # -- generators ---------------------------------------------------------

    def t2i(self, payload: dict) -> dict:
        img = procedural_image(payload["width"], payload["height"],
                               payload["prompt"], payload["seed"])
        return {"image_png_b64": self._b64(encode_image_png(img))}

    def i2v(self, payload: dict) -> dict:
        base = self._read_image(payload)
        n = int(payload["frame_count"])
        phase = float(_hash_rng("i2v", payload["prompt"],
                                payload["seed"]).random())
        frames = []
        for k in range(n):
            wobble = 1.0 + 0.04 * math.sin(2 * math.pi * (k / max(n, 1) + phase))
            frames.append(np.clip(base * wobble, 0.0, 1.0))
        return {
            "frames_png_b64": [self._b64(encode_image_png(f)) for f in frames],
            "fps": 8.0,
        }

    def t2v(self, payload: dict) -> dict:
        base = procedural_image(payload["width"], payload["height"],
                                "t2v", payload["prompt"], payload["seed"])
        n = int(payload["frame_count"])
        # a mock t2v pans sideways: it ignores static-camera instructions
        frames = [np.roll(base, shift=3 * k, axis=1) for k in range(n)]
        return {
            "frames_png_b64": [self._b64(encode_image_png(f)) for f in frames],
            "fps": 8.0,
        }

    # -- perception ---------------------------------------------------------

    def tag(self, payload: dict) -> dict:
        self._read_image(payload)
        return {"labels": list(self.config.fixture_boxes.keys())}

    def detect(self, payload: dict) -> dict:
        image = self._read_image(payload)
        digest = hashlib.sha256(image.tobytes()).hexdigest()[:8]
        objects = []
        for label in payload.get("labels", []):
            if label in self.config.fixture_boxes:
                box = list(self.config.fixture_boxes[label])
            else:
                rng = _hash_rng("detect", digest, label)
                cx, cy = 0.25 + 0.5 * rng.random(2)
                w, h = 0.15 + 0.2 * rng.random(2)
                box = [max(cx - w / 2, 0.0), max(cy - h / 2, 0.0),
                       min(cx + w / 2, 1.0), min(cy + h / 2, 1.0)]
            objects.append({"label": label,
                            "box": [round(v, 4) for v in box],
                            "confidence": 0.9})
        return {"objects": objects}

    def segment(self, payload: dict) -> dict:
        image = self._read_image(payload)
        h, w = image.shape[:2]
        x1, y1, x2, y2 = payload["box"]
        mask = np.zeros((h, w))
        mask[int(y1 * h):max(int(y1 * h) + 1, round(y2 * h)),
             int(x1 * w):max(int(x1 * w) + 1, round(x2 * w))] = 1.0
        return {"mask_png_b64": self._b64(encode_mask_png(mask))}

    # -- latent services ----------------------------------------------------

    def vae_encode(self, payload: dict) -> dict:
        import base64

        frames = [decode_image_png(base64.b64decode(f))
                  for f in payload["frames_png_b64"]]
        latent = np.transpose(np.stack(frames) * 2.0 - 1.0, (0, 3, 1, 2))
        return {"tensor_b64": self._b64(pack_tensor(latent)),
                "codec_id": "remote"}

    def vae_decode(self, payload: dict) -> dict:
        import base64

        data = unpack_tensor(base64.b64decode(payload["tensor_b64"]))
        frames = np.clip(np.transpose((data + 1.0) / 2.0, (0, 2, 3, 1)), 0, 1)
        return {
            "frames_png_b64": [self._b64(encode_image_png(f)) for f in frames],
            "fps": float(payload.get("fps", 8.0)),
        }

    def denoise(self, payload: dict) -> dict:
        import base64

        data = unpack_tensor(base64.b64decode(payload["tensor_b64"]))
        z = LatentVideo(data=data, codec_id="remote")
        eps = self._denoiser.predict(z, float(payload["t"]),
                                     payload.get("conditioning", ""))
        return {"tensor_b64": self._b64(pack_tensor(eps.data))}


_ROUTES = {
    "/v1/chat": ("chat", "chat"),
    "/v1/t2i": ("t2i", "t2i"),
    "/v1/i2v": ("i2v", "i2v"),
    "/v1/t2v": ("t2v", "t2v"),
    "/v1/tag": ("tag", "tag"),
    "/v1/detect": ("detect", "detect"),
    "/v1/segment": ("segment", "segment"),
    "/v1/vae/encode": ("vae", "vae_encode"),
    "/v1/vae/decode": ("vae", "vae_decode"),
    "/v1/denoise": ("denoise", "denoise"),
}


class MockModelServer:
    """Threaded localhost HTTP server exposing the mock services."""

    def __init__(self, config: MockConfig | None = None, host: str = "127.0.0.1"):
        self.config = config or MockConfig()
        self._services = _MockServices(self.config)
        self._host = host
        self._httpd: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None
        self._flaky_lock = threading.Lock()
        self._flaky_left = dict(self.config.flaky)
        self.request_counts: dict[str, int] = {}

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> "MockModelServer":
        services = self._services
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_GET(self):
                if self.path == "/healthz":
                    self._reply(200, {"ok": True})
                else:
                    self._reply(404, {"error": "not found"})

            def do_POST(self):
                route = _ROUTES.get(self.path)
                if route is None:
                    self._reply(404, {"error": f"unknown path {self.path}"})
                    return
                kind, method = route
                with server._flaky_lock:
                    server.request_counts[kind] = \
                        server.request_counts.get(kind, 0) + 1
                    if server._flaky_left.get(kind, 0) > 0:
                        server._flaky_left[kind] -= 1
                        self._reply(503, {"error": "transient failure"})
                        return
                if server.config.latency_s:
                    time.sleep(server.config.latency_s)
                length = int(self.headers.get("Content-Length", 0))
                try:
                    payload = json.loads(self.rfile.read(length) or b"{}")
                    result = getattr(services, method)(payload)
                except Exception as exc:  # noqa: BLE001 - report to client
                    self._reply(400, {"error": str(exc)})
                    return
                self._reply(200, result)

            def _reply(self, status, doc):
                body = json.dumps(doc).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

        class QuietServer(ThreadingHTTPServer):
            daemon_threads = True

            def handle_error(self, request, client_address):
                pass  # client disconnects (timeout tests) are expected

        self._httpd = QuietServer((self._host, 0), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        daemon=True)
        self._thread.start()
        return self

    def stop(self):
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def __enter__(self) -> "MockModelServer":
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # -- client configuration -----------------------------------------------

    @property
    def base_url(self) -> str:
        assert self._httpd is not None, "server not started"
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def endpoints(self, timeout: float = 10.0, max_retries: int = 2,
                  backoff_base: float = 0.02) -> dict[str, ServiceEndpoint]:
        return {
            kind: ServiceEndpoint(kind=kind, base_url=self.base_url,
                                  timeout=timeout, max_retries=max_retries,
                                  backoff_base=backoff_base)
            for kind in SERVICE_KINDS
        }
