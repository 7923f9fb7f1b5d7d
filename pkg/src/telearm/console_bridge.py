"""WebSocket/HTTP bridge between the operator gateway and the browser console.

Serves the console's static assets, the kinematics description, a forward-
kinematics debug endpoint (for client-side render cross-checks), and a
WebSocket carrying JSON twin/session/hand/command messages.
"""

from __future__ import annotations

import asyncio
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.staticfiles import StaticFiles

from . import kinematics
from .gateway import CommandRejected, ConsoleBridgeSource, GatewayRuntime
from .planner import scene_object_to_doc

TWIN_PUSH_INTERVAL = 0.033  # ~30 Hz refresh toward the console


def twin_message(runtime: GatewayRuntime) -> dict:
    twin = runtime.twin
    return {
        "type": "twin",
        "q": list(twin.q) if twin.q is not None else None,
        "scene": [scene_object_to_doc(o) for o in twin.scene],
        "latency_ms": twin.link_latency_estimate * 1000.0,
    }


def create_console_app(
    runtime: GatewayRuntime,
    source: ConsoleBridgeSource,
    static_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI()

    @app.get("/api/kinematics")
    def get_kinematics():
        return kinematics.table_to_doc(runtime.dh)

    @app.get("/api/fk")
    def get_fk(q: str):
        try:
            joints = np.array([float(v) for v in q.split(",")])
            origins = kinematics.link_origins(joints, runtime.dh)
        except (ValueError, kinematics.ParameterError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"origins": origins.tolist()}

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        outbox: asyncio.Queue = asyncio.Queue()
        loop = asyncio.get_running_loop()

        def on_event(event: dict):
            if event["event"] == "nack":
                payload = {"type": "nack", "code": event["code"], "detail": event["detail"]}
            elif event["event"] == "session":
                payload = {"type": "session", "state": event["state"]}
            elif event["event"] == "trained":
                payload = {"type": "trained", "object_id": event["object_id"]}
            else:
                return
            loop.call_soon_threadsafe(outbox.put_nowait, payload)

        runtime.add_event_listener(on_event)
        await ws.send_json(twin_message(runtime))
        await ws.send_json({"type": "session", "state": runtime.session})

        async def sender():
            last_twin = None
            while True:
                try:
                    payload = await asyncio.wait_for(outbox.get(), timeout=TWIN_PUSH_INTERVAL)
                    await ws.send_json(payload)
                except asyncio.TimeoutError:
                    current = twin_message(runtime)
                    if current != last_twin:
                        last_twin = current
                        await ws.send_json(current)

        send_task = asyncio.create_task(sender())
        try:
            while True:
                msg = await ws.receive_json()
                msg_type = msg.get("type")
                if msg_type == "hand":
                    source.push_position(float(msg["x"]), float(msg["y"]), float(msg["z"]))
                elif msg_type == "teach_start":
                    await _run_command(ws, runtime.teach_start)
                elif msg_type == "teach_stop":
                    await _run_command(ws, runtime.teach_stop_and_train, msg.get("object_id", ""))
                elif msg_type == "execute":
                    await _run_command(ws, runtime.execute_to_object, msg.get("object_id", ""))
                else:
                    await ws.send_json({"type": "error", "message": f"unknown message {msg_type!r}"})
        except WebSocketDisconnect:
            pass
        finally:
            send_task.cancel()

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="console")
    return app


async def _run_command(ws: WebSocket, fn, *args):
    try:
        await asyncio.to_thread(fn, *args)
    except CommandRejected as exc:
        await ws.send_json({"type": "nack", "code": exc.nack.code, "detail": exc.nack.detail})
    except Exception as exc:  # surfaced, never crashes the socket
        await ws.send_json({"type": "error", "message": str(exc)})


def serve_console(app: FastAPI, listen: tuple[str, int]) -> threading.Thread:
    import uvicorn

    config = uvicorn.Config(app, host=listen[0], port=listen[1], log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    return thread
