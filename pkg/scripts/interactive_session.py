"""Walk the HTTP service through a full annotation session.

Boots the service on an ephemeral port, uploads the fractured phantom,
creates a job, inspects the distance field to spot the fracture gap,
drops the bridging stroke before evolution starts, then runs with a
pause/resume in the middle and saves the exported fields and mask.
This is the same sequence the browser UI drives; run it to sanity-check
a deployment.

The stroke has to go in before the contour reaches the fracture: the
flow covers the few pixels between the initial box and the gap within
the first hundred iterations, and a prompt only freezes pixels from the
moment it is posted.

Usage: python3 scripts/interactive_session.py --out results/session
"""
import argparse
import json
import socket
import threading
import time
from pathlib import Path

import httpx
import uvicorn

from figac import dice, make_phantom, read_mask_image, write_gray_image
from figac.service import create_app


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def start_server(data_dir: Path, port: int) -> uvicorn.Server:
    config = uvicorn.Config(create_app(data_dir), host="127.0.0.1", port=port,
                            log_level="warning")
    server = uvicorn.Server(config)
    threading.Thread(target=server.run, daemon=True).start()
    while not server.started:
        time.sleep(0.02)
    return server


def wait_idle(client, jid, timeout=120.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        doc = client.get(f"/jobs/{jid}").json()
        if doc["state"] != "running":
            return doc
        time.sleep(0.1)
    raise TimeoutError("job still running")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/session")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    ph = make_phantom("fractured_ring")
    write_gray_image(ph.image, out / "slice.png")

    port = free_port()
    server = start_server(out / "data", port)
    client = httpx.Client(base_url=f"http://127.0.0.1:{port}", timeout=30.0)

    r = client.post("/slices", files={"file": ("slice.png",
                                               (out / "slice.png").read_bytes(),
                                               "image/png")})
    sid = r.json()["slice_id"]
    print(f"uploaded slice {sid}")

    job = client.post("/jobs", json={"slice_id": sid, "config": {}}).json()
    jid = job["id"]
    print(f"job {jid}: {job['state']}")

    # Inspect the distance field first: the stopping set has a hole
    # where the cortical band is fractured.
    (out / "beta_before.png").write_bytes(
        client.get(f"/jobs/{jid}/fields/beta").content)

    strokes = json.loads(ph.suggested_prompt.to_json())
    r = client.post(f"/jobs/{jid}/prompts", json=strokes)
    print(f"prompt accepted, field version {r.json()['field_version']}")
    (out / "beta_after.png").write_bytes(
        client.get(f"/jobs/{jid}/fields/beta").content)

    client.post(f"/jobs/{jid}/run", json={"iters": 100000})
    time.sleep(0.4)
    doc = client.post(f"/jobs/{jid}/pause").json()
    print(f"paused at iteration {doc['iteration']}")

    remaining = max(6000 - doc["iteration"], 0)
    if remaining:
        client.post(f"/jobs/{jid}/run", json={"iters": remaining})
        doc = wait_idle(client, jid)
    print(f"finished as {doc['state']} at iteration {doc['iteration']}")

    (out / "g.png").write_bytes(client.get(f"/jobs/{jid}/fields/g").content)
    (out / "mask.png").write_bytes(client.get(f"/jobs/{jid}/mask").content)
    contour = client.get(f"/jobs/{jid}/contour?iter=latest").json()
    (out / "contour.json").write_text(json.dumps(contour))

    mask = read_mask_image(out / "mask.png")
    print(f"dice vs analytic truth: {dice(ph.truth, mask) / 100.0:.4f}")
    print(f"artifacts in {out}")
    server.should_exit = True


if __name__ == "__main__":
    main()
