"""
Serving predictions over HTTP
=============================

Start the real service in a background thread, send frames the way any
client would, and read back the session log it keeps. The same app also
exposes a WebSocket stream endpoint for continuous feeds (the bundled
browser UI uses it); plain request/response is shown here.
"""

import base64
import io
import json
import tempfile
import threading
import time
from pathlib import Path

import httpx
import numpy as np
import uvicorn
from PIL import Image

from earnet.data import synth_image
from earnet.service import ServeConfig, SessionLog, build_engine, create_app

log_dir = Path(tempfile.mkdtemp(prefix="earnet-demo-"))
port = 8731

# a freshly seeded default engine; real deployments pass weights=... so the
# served model is a trained checkpoint instead of random initialization
engine = build_engine(ServeConfig(seed=0))
app = create_app(engine, SessionLog(log_dir))

server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning"))
thread = threading.Thread(target=server.run, daemon=True)
thread.start()
while not server.started:
    time.sleep(0.05)

base = f"http://127.0.0.1:{port}"
with httpx.Client() as client:
    health = client.get(f"{base}/health").json()
    print("health:", json.dumps(health))

    # frames go up as raw image bytes...
    buf = io.BytesIO()
    Image.fromarray(synth_image(2, np.random.default_rng(1), size=224)).save(buf, "PNG")
    frame = buf.getvalue()
    r = client.post(f"{base}/infer?session=demo", content=frame).json()
    print(f"top1: {r['top1_class']} p={max(r['probabilities']):.3f} "
          f"latency {r['latency_ms']:.1f}ms blurry={r['blurry']}")

    # ...or base64 inside JSON, with an optional rendered heatmap
    r2 = client.post(
        f"{base}/infer?heatmap=1",
        json={"image_b64": base64.b64encode(frame).decode()},
    ).json()
    print("heatmap bytes:", len(base64.b64decode(r2["heatmap_png"])))

    # the session endpoint replays what was logged for that id
    history = client.get(f"{base}/sessions/demo").json()
    print("session rows:", len(history["records"]))

server.should_exit = True
thread.join(timeout=5)
# one file per session; the request without ?session= got a generated id
print("log files:", sorted(p.name for p in log_dir.glob("*.jsonl")))
