"""File-handshake bridge to out-of-process model backends.

For every call the bridge writes ``<workdir>/<id>/request.json`` plus the
input tensors (LCTK v1), runs the configured command with the request
directory as its only extra argument and waits, up to a deadline, for the
process to exit and leave a ``response.json``::

    request.json   {"id", "role", "inputs": {name: path}, "params": {...}, "deadline_s"}
    response.json  {"id", "status": "ok" | "error", "outputs": {name: path}, "message"}

A response may also carry ``"latent_scale"`` (codec backends declare it).
Relative output paths are resolved against the request directory.
"""
from __future__ import annotations

import itertools
import json
import logging
import os
import shlex
import shutil
import subprocess
import tempfile
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .plugins import PluginError
from .tensor import LCTKError, as_tensor4, load_tensor, save_tensor

log = logging.getLogger(__name__)

ROLES = ("codec_encode", "codec_decode", "denoise", "relight", "normals")
WORKDIR_ENV = "LIGHTKIT_WORKDIR"
STDERR_TAIL = 2000
DEFAULT_DEADLINE = 600.0


class BridgeError(PluginError):
    """Base class; ``stderr_tail`` holds the end of the backend's stderr."""

    def __init__(self, message: str, stderr_tail: str = ""):
        if stderr_tail:
            message = f"{message}\n--- backend stderr (tail) ---\n{stderr_tail}"
        super().__init__(message)
        self.stderr_tail = stderr_tail


class SpawnError(BridgeError):
    pass


class BridgeTimeout(BridgeError):
    pass


class BackendFailed(BridgeError):
    pass


class BackendRejected(BackendFailed):
    """The backend answered ``status: error`` (e.g. an unsupported role)."""


class MalformedResponse(BridgeError):
    pass


class ShapeContractError(BridgeError):
    pass


@dataclass
class BridgeRequest:
    id: str
    role: str
    inputs: dict  # name -> array
    params: dict = field(default_factory=dict)
    deadline_s: float = DEFAULT_DEADLINE

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown bridge role {self.role!r} (expected one of {ROLES})")
        if not self.id or "/" in self.id or self.id in (".", ".."):
            raise ValueError(f"invalid request id {self.id!r}")
        if self.deadline_s <= 0:
            raise ValueError("deadline must be positive")


@dataclass(frozen=True)
class Capabilities:
    roles: tuple
    latent_scale: int


def _tail(path: Path) -> str:
    try:
        data = path.read_bytes()
    except OSError:
        return ""
    return data[-STDERR_TAIL:].decode("utf-8", errors="replace")


class Bridge:
    """Dispatches requests to one backend command."""

    def __init__(self, command: Union[str, Sequence[str]], workdir=None, keep_artifacts: bool = False,
                 deadline_s: float = DEFAULT_DEADLINE, poll_interval: float = 0.005):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise ValueError("empty backend command")
        workdir = workdir or os.environ.get(WORKDIR_ENV)
        self._own_workdir = workdir is None
        self.workdir = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="lightkit-bridge-"))
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.keep_artifacts = keep_artifacts
        self.deadline_s = deadline_s
        self.poll_interval = poll_interval
        self.latent_scale: Optional[int] = None
        self._ids = itertools.count()
        # bridges sharing a workdir must not collide
        self._prefix = uuid.uuid4().hex[:8]

    def next_id(self, role: str) -> str:
        return f"{self._prefix}-{next(self._ids):06d}-{role}"

    def request(self, role: str, inputs: dict, params: Optional[dict] = None) -> BridgeRequest:
        return BridgeRequest(self.next_id(role), role, inputs, dict(params or {}), self.deadline_s)

    def close(self) -> None:
        if self._own_workdir and not self.keep_artifacts:
            shutil.rmtree(self.workdir, ignore_errors=True)

    # -- handshake -----------------------------------------------------------------

    def _write(self, req: BridgeRequest) -> Path:
        rdir = self.workdir / req.id
        if rdir.exists():
            raise ValueError(f"request id {req.id!r} already used in {self.workdir}")
        rdir.mkdir(parents=True)
        paths = {}
        for name, arr in req.inputs.items():
            p = rdir / f"in_{name}.lctk"
            save_tensor(arr, p)
            paths[name] = str(p)
        manifest = {"id": req.id, "role": req.role, "inputs": paths,
                    "params": req.params, "deadline_s": req.deadline_s}
        tmp = rdir / "request.json.tmp"
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
        tmp.replace(rdir / "request.json")
        return rdir

    def _invoke(self, rdir: Path, deadline_s: float) -> None:
        err_path = rdir / "stderr.log"
        with open(err_path, "wb") as err:
            try:
                proc = subprocess.Popen(self.command + [str(rdir)], stdin=subprocess.DEVNULL,
                                        stdout=subprocess.DEVNULL, stderr=err)
            except OSError as exc:
                raise SpawnError(f"cannot start backend {self.command[0]!r}: {exc}") from exc
            end = time.monotonic() + deadline_s
            while proc.poll() is None:
                if time.monotonic() >= end:
                    proc.kill()
                    proc.wait()
                    raise BridgeTimeout(f"backend exceeded its {deadline_s:g} s deadline", _tail(err_path))
                time.sleep(self.poll_interval)
        if proc.returncode != 0:
            raise BackendFailed(f"backend exited with status {proc.returncode}", _tail(err_path))

    def _read(self, req: BridgeRequest, rdir: Path, stderr: str) -> tuple[dict, dict]:
        try:
            resp = json.loads((rdir / "response.json").read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise MalformedResponse("backend exited without writing response.json", stderr) from None
        except (OSError, json.JSONDecodeError) as exc:
            raise MalformedResponse(f"unreadable response.json: {exc}", stderr) from exc
        if not isinstance(resp, dict) or resp.get("id") != req.id:
            raise MalformedResponse(f"response id {resp.get('id') if isinstance(resp, dict) else resp!r} "
                                    f"does not match request {req.id!r}", stderr)
        status = resp.get("status")
        if status == "error":
            raise BackendRejected(f"backend reported an error: {resp.get('message', '')}", stderr)
        if status != "ok" or not isinstance(resp.get("outputs"), dict):
            raise MalformedResponse(f"response needs status 'ok' and an outputs object, got {resp!r}", stderr)
        outputs = {}
        for name, p in resp["outputs"].items():
            path = Path(p)
            if not path.is_absolute():
                path = rdir / path
            try:
                outputs[name] = load_tensor(path).astype(np.float64)
            except (OSError, LCTKError) as exc:
                raise MalformedResponse(f"output {name!r}: {exc}", stderr) from exc
        return resp, outputs

    def exchange(self, req: BridgeRequest) -> tuple[dict, dict, str]:
        """Run one request; returns (response object, output tensors, stderr tail)."""
        rdir = self._write(req)
        self._invoke(rdir, req.deadline_s)
        stderr = _tail(rdir / "stderr.log")
        resp, outputs = self._read(req, rdir, stderr)
        if not self.keep_artifacts:
            shutil.rmtree(rdir, ignore_errors=True)
        return resp, outputs, stderr

    def dispatch(self, req: BridgeRequest, expect_shape=None) -> np.ndarray:
        """Run ``req`` and return its ``output`` tensor.

        ``expect_shape`` entries may be ``None`` to leave that axis free.
        Failed request directories are kept for inspection.
        """
        _, outputs, stderr = self.exchange(req)
        if "output" not in outputs:
            raise MalformedResponse(f"response has no 'output' tensor (got {sorted(outputs)})", stderr)
        out = outputs["output"]
        if expect_shape is not None:
            ok = len(expect_shape) == out.ndim and all(e is None or e == d for e, d in zip(expect_shape, out.shape))
            if not ok:
                raise ShapeContractError(f"{req.role}: backend returned {out.shape}, expected "
                                         f"{tuple('*' if e is None else e for e in expect_shape)}",
                                         stderr)
        return out


def healthcheck(command, workdir=None, deadline_s: float = 30.0) -> Capabilities:
    """Probe every role with a 1x1x8x8 tensor.

    Roles answering ``status: error`` are reported as unsupported; spawn
    failures, timeouts and crashes propagate.
    """
    bridge = command if isinstance(command, Bridge) else Bridge(command, workdir=workdir, deadline_s=deadline_s)
    probe = np.zeros((1, 1, 8, 8), dtype=np.float64)
    probe[0, 0] = np.arange(64).reshape(8, 8) / 64.0
    roles = []
    scale = 1
    try:
        for role in ROLES:
            req = bridge.request(role, {"input": probe}, {"probe": True, "step": 0, "prompt": ""})
            try:
                resp, outputs, _ = bridge.exchange(req)
            except BackendRejected:
                continue
            if "output" not in outputs:
                raise MalformedResponse(f"{role} probe returned no 'output' tensor")
            if role == "codec_encode":
                scale = int(resp.get("latent_scale", 1))
                if scale < 1 or 8 % scale:
                    raise ShapeContractError(f"declared latent_scale {scale} does not divide the 8x8 probe")
                if outputs["output"].shape[2:] != (8 // scale, 8 // scale):
                    raise ShapeContractError(f"encode probe gave {outputs['output'].shape}, "
                                             f"inconsistent with latent_scale {scale}")
            roles.append(role)
    finally:
        if bridge is not command:
            bridge.close()
    return Capabilities(tuple(roles), scale)


# -- plugin adapters ------------------------------------------------------------------


class BridgeCodec:
    def __init__(self, bridge: Bridge, scale: int):
        self.bridge = bridge
        self.scale = int(scale)

    def encode(self, video):
        v = as_tensor4(video, "video")
        f, _, h, w = v.shape
        if h % self.scale or w % self.scale:
            raise ShapeContractError(f"{h}x{w} is not divisible by latent scale {self.scale}")
        req = self.bridge.request("codec_encode", {"input": v})
        return self.bridge.dispatch(req, (f, None, h // self.scale, w // self.scale))

    def decode(self, latents):
        z = as_tensor4(latents, "latents")
        f, _, h, w = z.shape
        req = self.bridge.request("codec_decode", {"input": z})
        return self.bridge.dispatch(req, (f, 3, h * self.scale, w * self.scale))


class BridgeDenoiser:
    def __init__(self, bridge: Bridge):
        self.bridge = bridge

    def predict_z0(self, z_t, step, light_maps, prompt):
        z = as_tensor4(z_t, "latents")
        req = self.bridge.request("denoise", {"input": z, "light_maps": as_tensor4(light_maps, "light maps")},
                                  {"step": int(step), "prompt": prompt})
        return self.bridge.dispatch(req, z.shape)


class BridgeRelighter:
    def __init__(self, bridge: Bridge):
        self.bridge = bridge

    def relight(self, frame, light_map, prompt="", *, index=0, step=0):
        x = np.asarray(frame, dtype=np.float64)
        lm = np.asarray(light_map, dtype=np.float64)
        req = self.bridge.request("relight", {"input": x[None], "light_map": lm.reshape((1, 1) + lm.shape[-2:])},
                                  {"step": int(step), "index": int(index), "prompt": prompt})
        return self.bridge.dispatch(req, (1,) + x.shape)[0]


class BridgeNormalSource:
    def __init__(self, bridge: Bridge):
        self.bridge = bridge

    def normals(self, video):
        v = as_tensor4(video, "video")
        req = self.bridge.request("normals", {"input": v})
        return self.bridge.dispatch(req, (v.shape[0], 3) + v.shape[2:])
