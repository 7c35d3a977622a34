import json
import sys

import numpy as np
import pytest

from lightkit import bridge as B
from lightkit.pipeline import PipelineConfig, run
from lightkit.plugins import PluginError
from lightkit.trajectory import linear_sweep

PY = sys.executable
ECHO = [PY, "-m", "lightkit.echo_backend"]


def script_backend(tmp_path, body):
    """A throwaway backend whose behaviour is given as Python source."""
    p = tmp_path / "backend.py"
    p.write_text("import json, sys, pathlib\nd = pathlib.Path(sys.argv[1])\n"
                 "req = json.loads((d / 'request.json').read_text())\n" + body)
    return [PY, str(p)]


def test_echo_round_trip_bit_exact(tmp_path, rng):
    x = rng.standard_normal((3, 4, 8, 8)).astype(np.float32)
    br = B.Bridge(ECHO, workdir=tmp_path / "w")
    out = br.dispatch(br.request("denoise", {"input": x}), x.shape)
    assert out.astype(np.float32).tobytes() == x.tobytes()
    # successful request directories are removed
    assert list((tmp_path / "w").iterdir()) == []


def test_request_layout(tmp_path, rng):
    br = B.Bridge(ECHO, workdir=tmp_path, keep_artifacts=True)
    req = br.request("relight", {"input": np.zeros((1, 3, 4, 4))}, {"step": 2, "prompt": "warm"})
    br.dispatch(req)
    d = tmp_path / req.id
    manifest = json.loads((d / "request.json").read_text())
    assert manifest["role"] == "relight" and manifest["params"] == {"step": 2, "prompt": "warm"}
    assert set(p.name for p in d.iterdir()) >= {"request.json", "in_input.lctk", "response.json", "out.lctk",
                                                "stderr.log"}


def test_ids_are_unique_and_reuse_rejected(tmp_path):
    br = B.Bridge(ECHO, workdir=tmp_path, keep_artifacts=True)
    ids = {br.next_id("denoise") for _ in range(5)}
    assert len(ids) == 5
    req = B.BridgeRequest("dup", "denoise", {"input": np.zeros((1, 1, 2, 2))})
    br.dispatch(req)
    with pytest.raises(ValueError):
        br.dispatch(B.BridgeRequest("dup", "denoise", {"input": np.zeros((1, 1, 2, 2))}))


def test_request_validation():
    with pytest.raises(ValueError):
        B.BridgeRequest("a", "paint", {})
    with pytest.raises(ValueError):
        B.BridgeRequest("../x", "denoise", {})
    with pytest.raises(ValueError):
        B.BridgeRequest("a", "denoise", {}, deadline_s=0)


def test_failure_surfaces_stderr_and_keeps_directory(tmp_path):
    br = B.Bridge(ECHO + ["--fail"], workdir=tmp_path)
    req = br.request("denoise", {"input": np.zeros((1, 1, 2, 2))})
    with pytest.raises(B.BackendFailed) as info:
        br.dispatch(req)
    assert "asked to fail" in info.value.stderr_tail
    assert "asked to fail" in str(info.value)
    assert (tmp_path / req.id / "request.json").exists()
    assert isinstance(info.value, PluginError)


def test_timeout(tmp_path):
    br = B.Bridge(ECHO + ["--sleep", "5"], workdir=tmp_path, deadline_s=0.5)
    with pytest.raises(B.BridgeTimeout):
        br.dispatch(br.request("denoise", {"input": np.zeros((1, 1, 2, 2))}))


def test_spawn_error(tmp_path):
    br = B.Bridge(["/nonexistent/backend-binary"], workdir=tmp_path)
    with pytest.raises(B.SpawnError):
        br.dispatch(br.request("denoise", {"input": np.zeros((1, 1, 2, 2))}))


@pytest.mark.parametrize("body", [
    "",  # no response at all
    "(d / 'response.json').write_text('{not json')\n",
    "(d / 'response.json').write_text(json.dumps({'id': 'other', 'status': 'ok', 'outputs': {}}))\n",
    "(d / 'response.json').write_text(json.dumps({'id': req['id'], 'status': 'maybe', 'outputs': {}}))\n",
    "(d / 'response.json').write_text(json.dumps({'id': req['id'], 'status': 'ok', 'outputs': {'output': 'x.lctk'}}))\n",
    "(d / 'x.lctk').write_bytes(b'garbage')\n"
    "(d / 'response.json').write_text(json.dumps({'id': req['id'], 'status': 'ok', 'outputs': {'output': 'x.lctk'}}))\n",
    "(d / 'response.json').write_text(json.dumps({'id': req['id'], 'status': 'ok', 'outputs': {}}))\n",
])
def test_malformed_responses(tmp_path, body):
    br = B.Bridge(script_backend(tmp_path, body), workdir=tmp_path / "w")
    with pytest.raises(B.MalformedResponse):
        br.dispatch(br.request("denoise", {"input": np.zeros((1, 1, 2, 2))}))


def test_backend_error_status(tmp_path):
    body = ("(d / 'response.json').write_text(json.dumps({'id': req['id'], 'status': 'error', "
            "'outputs': {}, 'message': 'out of memory'}))\n")
    br = B.Bridge(script_backend(tmp_path, body), workdir=tmp_path / "w")
    with pytest.raises(B.BackendRejected, match="out of memory"):
        br.dispatch(br.request("denoise", {"input": np.zeros((1, 1, 2, 2))}))


def test_shape_contract(tmp_path):
    br = B.Bridge(ECHO, workdir=tmp_path)
    with pytest.raises(B.ShapeContractError):
        br.dispatch(br.request("denoise", {"input": np.zeros((1, 1, 2, 2))}), (1, 1, 4, 4))
    codec = B.BridgeCodec(br, 2)  # echo at scale 1 does not downsample
    with pytest.raises(B.ShapeContractError):
        codec.encode(np.zeros((1, 3, 4, 4)))


def test_healthcheck_reports_roles_and_scale(tmp_path):
    caps = B.healthcheck(ECHO + ["--scale", "8"], workdir=tmp_path)
    assert caps == B.Capabilities(B.ROLES, 8)
    caps = B.healthcheck(ECHO + ["--roles", "relight,normals"], workdir=tmp_path)
    assert caps.roles == ("relight", "normals") and caps.latent_scale == 1
    with pytest.raises(B.BackendFailed):
        B.healthcheck(ECHO + ["--fail"], workdir=tmp_path)


def test_workdir_env_and_cleanup(tmp_path, monkeypatch):
    monkeypatch.setenv(B.WORKDIR_ENV, str(tmp_path / "envdir"))
    br = B.Bridge(ECHO)
    assert br.workdir == tmp_path / "envdir"
    br.close()
    assert br.workdir.exists()  # caller-owned directories are never removed
    monkeypatch.delenv(B.WORKDIR_ENV)
    own = B.Bridge(ECHO)
    own.close()
    assert not own.workdir.exists()


def test_adapters_round_trip(tmp_path, rng):
    br = B.Bridge(ECHO + ["--scale", "4"], workdir=tmp_path)
    codec = B.BridgeCodec(br, 4)
    v = rng.random((2, 3, 8, 8))
    z = codec.encode(v)
    assert z.shape == (2, 3, 2, 2)
    assert codec.decode(z).shape == v.shape
    frame = rng.random((3, 8, 8))
    assert np.allclose(B.BridgeRelighter(br).relight(frame, np.zeros((8, 8)), index=1, step=2), frame, atol=1e-7)
    assert B.BridgeNormalSource(br).normals(v).shape == v.shape
    assert B.BridgeDenoiser(br).predict_z0(z, 0, np.zeros((2, 1, 8, 8)), "").shape == z.shape


def test_pipeline_through_bridge(tmp_path, rng):
    from lightkit.cli import build_plugins
    cfg = PipelineConfig(T_m=2, codec="bridge", denoiser="bridge", relighter="bridge", normal_source="bridge",
                         backend_command=" ".join(ECHO + ["--scale", "4"]), latent_scale=4)
    plugins, br = build_plugins(cfg, workdir=tmp_path)
    v = rng.random((2, 3, 8, 8))
    try:
        res = run(cfg, v, linear_sweep(2), plugins=plugins)
    finally:
        br.close()
    assert res.video.shape == v.shape and np.isfinite(res.video).all()
    assert list(tmp_path.iterdir()) == []
