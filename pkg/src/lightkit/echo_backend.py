"""Reference backend for the file-handshake bridge.

Usage: ``python3 -m lightkit.echo_backend [--scale S] [--sleep SEC] [--fail] [--roles R,...] REQUEST_DIR``

Every role copies its ``input`` tensor to ``output``, except that with
``--scale S`` the codec roles area-average (encode) or repeat (decode) by
``S``. ``--sleep`` and ``--fail`` exist to exercise the bridge's timeout
and failure paths.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .tensor import load_tensor, resample_area, save_tensor, upsample_nearest


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="lightkit-echo-backend", description=__doc__.splitlines()[0])
    ap.add_argument("request_dir", type=Path)
    ap.add_argument("--scale", type=int, default=1, help="declared latent scale (default 1)")
    ap.add_argument("--sleep", type=float, default=0.0, help="seconds to wait before answering")
    ap.add_argument("--fail", action="store_true", help="write to stderr and exit with status 1")
    ap.add_argument("--roles", default=None, help="comma-separated roles to serve; others answer status error")
    args = ap.parse_args(argv)

    req = json.loads((args.request_dir / "request.json").read_text(encoding="utf-8"))
    if args.sleep:
        time.sleep(args.sleep)
    if args.fail:
        print(f"echo backend: asked to fail on {req['role']}", file=sys.stderr)
        return 1
    resp = {"id": req["id"], "status": "ok", "outputs": {}, "message": "", "latent_scale": args.scale}
    if args.roles is not None and req["role"] not in args.roles.split(","):
        resp.update(status="error", message=f"role {req['role']} not supported")
    else:
        x = load_tensor(req["inputs"]["input"])
        if req["role"] == "codec_encode" and args.scale > 1:
            x = resample_area(x, args.scale)
        elif req["role"] == "codec_decode" and args.scale > 1:
            x = upsample_nearest(x, args.scale)
        save_tensor(x, args.request_dir / "out.lctk")
        resp["outputs"]["output"] = "out.lctk"
    (args.request_dir / "response.json").write_text(json.dumps(resp), encoding="utf-8")
    return 0


if __name__ == "__main__":
    sys.exit(main())
