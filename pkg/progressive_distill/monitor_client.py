"""
HTTP client for the run monitor.

Network failures are logged and turned into fallback values so callers can
report them without handling transport exceptions.
"""

import logging
from typing import Dict, Optional

import requests

from .config import DEFAULT_MONITOR_URL

logger = logging.getLogger(__name__)


def fetch_run_status(run_id: str, base_url: Optional[str] = None, timeout: float = 10) -> Optional[Dict]:
    """
    Get status, messages and metrics rows of a run.

    Returns:
        The monitor's JSON payload, or None when the monitor is unreachable or
        does not know the run.
    """
    url = f"{(base_url or DEFAULT_MONITOR_URL).rstrip('/')}/runs/{run_id}"
    try:
        response = requests.get(url, timeout=timeout)
        response.raise_for_status()
        return response.json()
    except requests.exceptions.RequestException as e:
        logger.error(f"Error fetching status of run {run_id}: {str(e)}")
        return None


def start_remote_run(
    config_path: str,
    run_id: Optional[str] = None,
    allow_violations: bool = False,
    base_url: Optional[str] = None,
    timeout: float = 30,
) -> Dict:
    url = f"{(base_url or DEFAULT_MONITOR_URL).rstrip('/')}/runs/start"
    payload = {"config_path": config_path, "allow_violations": allow_violations}
    if run_id:
        payload["run_id"] = run_id
    try:
        response = requests.post(url, json=payload, timeout=timeout)
        response.raise_for_status()
        return response.json()
    except requests.exceptions.RequestException as e:
        logger.error(f"Error starting remote run from {config_path}: {str(e)}")
        return {"status": "error", "error": str(e)}


def stop_remote_run(run_id: str, base_url: Optional[str] = None, timeout: float = 10) -> bool:
    url = f"{(base_url or DEFAULT_MONITOR_URL).rstrip('/')}/runs/{run_id}/stop"
    try:
        response = requests.post(url, timeout=timeout)
        response.raise_for_status()
        return True
    except requests.exceptions.RequestException as e:
        logger.error(f"Error stopping run {run_id}: {str(e)}")
        return False
