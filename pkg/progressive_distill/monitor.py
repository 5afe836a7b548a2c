# progressive_distill/monitor.py

import logging
import threading
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .coordinator import DistillationCoordinator, create_distillation_coordinator
from .errors import DistillError
from .metrics import read_metrics

logger = logging.getLogger(__name__)

CoordinatorFactory = Callable[..., DistillationCoordinator]


@dataclass
class RunHandle:
    coordinator: DistillationCoordinator
    thread: threading.Thread
    messages: List[str] = field(default_factory=list)


def _error(message: str, status_code: int) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=status_code)


def create_app(coordinator_factory: CoordinatorFactory = create_distillation_coordinator) -> FastAPI:
    """
    Run monitor: starts distillation runs on background threads and reports on them.

    Args:
        coordinator_factory: Builds a coordinator from (config_path, run_id=..., allow_violations=...).
    """
    app = FastAPI(title="progressive-distill monitor")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    # Active and finished runs
    runs: Dict[str, RunHandle] = {}
    lock = threading.Lock()
    app.state.runs = runs
    app.state.runs_lock = lock

    def _run(handle: RunHandle):
        try:
            handle.coordinator.coordinate()
        except Exception as e:
            logger.error(f"❌ Background run {handle.coordinator.run_id} failed: {e}")

    @app.get("/")
    async def health_check():
        with lock:
            run_count = len(runs)
        return {"status": "healthy", "service": "progressive-distill-monitor", "runs": run_count}

    @app.post("/runs/start")
    async def start_run(request: Request):
        """
        Start a distillation run in the background.
        Body: {"config_path": str, "run_id"?: str, "allow_violations"?: bool}
        """
        data = await request.json()
        config_path = data.get("config_path")
        if not config_path:
            return _error("config_path required", 400)

        try:
            coordinator = coordinator_factory(
                config_path, run_id=data.get("run_id"), allow_violations=data.get("allow_violations")
            )
        except DistillError as e:
            logger.error(f"❌ Rejected run from {config_path}: {e}")
            return _error(str(e), 400)

        with lock:
            existing = runs.get(coordinator.run_id)
            if existing is not None and existing.thread.is_alive():
                return _error(f"run {coordinator.run_id} is already running", 409)
            handle = RunHandle(coordinator, threading.Thread(target=lambda: _run(handle), daemon=True))
            coordinator.status_callback = handle.messages.append
            runs[coordinator.run_id] = handle
            handle.thread.start()

        logger.info(f"🚀 Started run {coordinator.run_id}")
        return {"status": "started", "run_id": coordinator.run_id}

    @app.get("/runs/{run_id}")
    async def run_status(run_id: str):
        with lock:
            handle = runs.get(run_id)
        if handle is None:
            return _error(f"unknown run {run_id}", 404)
        coordinator = handle.coordinator
        rows: List[Dict] = []
        if coordinator.metrics_path.exists():
            try:
                rows = [asdict(row) for row in read_metrics(coordinator.metrics_path)]
            except (DistillError, ValueError) as e:
                logger.warning(f"⚠️ Could not read metrics for {run_id}: {e}")
        return {
            "run_id": run_id,
            "status": coordinator.status,
            "error": coordinator.error,
            "messages": list(handle.messages),
            "metrics": rows,
        }

    @app.post("/runs/{run_id}/stop")
    async def stop_run(run_id: str):
        with lock:
            handle = runs.get(run_id)
        if handle is None:
            return _error(f"unknown run {run_id}", 404)
        handle.coordinator.stop()
        logger.info(f"🛑 Stop requested for run {run_id}")
        return {"status": "stopping", "run_id": run_id}

    return app


def serve(host: str = "127.0.0.1", port: int = 8080):
    import uvicorn

    uvicorn.run(create_app(), host=host, port=port)
