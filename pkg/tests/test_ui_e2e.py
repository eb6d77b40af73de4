"""End-to-end UI check: scripted session against a live service.

Needs the frontend built (frontend/dist) and node on PATH; skipped
otherwise so the primary suite runs without any UI build.
"""

from __future__ import annotations

import shutil
import socket
import subprocess
import threading
import time
from pathlib import Path

import httpx
import pytest

from angiocorr.corrmodel import CorrespondenceModel, ModelConfig, save_checkpoint

FRONTEND = Path(__file__).resolve().parent.parent / "frontend"
SESSION_JS = FRONTEND / "dist" / "session_script.js"

pytestmark = pytest.mark.skipif(
    not SESSION_JS.exists() or shutil.which("node") is None,
    reason="frontend not built or node unavailable",
)


def _free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture()
def live_service(dataset_1subject, tmp_path):
    import uvicorn

    from angiocorr.service import create_app

    p2p = CorrespondenceModel(ModelConfig.tiny("p2p"), seed=0)
    c2c = CorrespondenceModel(ModelConfig.tiny("c2c", waypoint_n=10), seed=0)
    save_checkpoint(tmp_path / "p2p.ckpt", p2p, seed=0, step=0)
    save_checkpoint(tmp_path / "c2c.ckpt", c2c, seed=0, step=0)

    app = create_app(
        data_dir=dataset_1subject,
        p2p_ckpt=tmp_path / "p2p.ckpt",
        c2c_ckpt=tmp_path / "c2c.ckpt",
        static_dir=FRONTEND / "dist",
    )
    port = _free_port()
    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{port}"
    for _ in range(100):
        try:
            if httpx.get(base + "/api/views", timeout=1.0).status_code == 200:
                break
        except httpx.HTTPError:
            time.sleep(0.1)
    else:
        raise RuntimeError("service did not come up")
    yield base
    server.should_exit = True
    thread.join(timeout=5)


def test_scripted_browser_session(live_service):
    proc = subprocess.run(
        ["node", str(SESSION_JS), live_service],
        capture_output=True,
        text=True,
        timeout=120,
    )
    print(proc.stdout)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert "scripted session complete" in proc.stdout
    assert proc.stdout.count("PASS") >= 7


def test_service_serves_ui_bundle(live_service):
    index = httpx.get(live_service + "/", timeout=5.0)
    assert index.status_code == 200
    assert "angiocorr" in index.text
    js = httpx.get(live_service + "/main.js", timeout=5.0)
    assert js.status_code == 200
