"""Host information for run manifests and worker-pool sizing"""
import platform
import subprocess
import time
from pathlib import Path
from typing import Optional

import psutil

# refreshed at most every _cache_timeout seconds
_snapshot_cache = {}
_cache_timeout = 5.0


def host_snapshot() -> dict:
    """CPU/memory summary of the machine running the simulation"""
    now = time.time()
    if '_timestamp' in _snapshot_cache and now - _snapshot_cache['_timestamp'] < _cache_timeout:
        return {k: v for k, v in _snapshot_cache.items() if not k.startswith('_')}

    mem = psutil.virtual_memory()
    cpu_freq = None
    try:
        freq = psutil.cpu_freq()
        if freq:
            cpu_freq = round(freq.current, 1)
    except (OSError, NotImplementedError, AttributeError):
        pass

    snapshot = {
        'platform': platform.platform(),
        'python': platform.python_version(),
        'cpu_count': psutil.cpu_count(),
        'cpu_physical': psutil.cpu_count(logical=False),
        'cpu_freq_mhz': cpu_freq,
        'ram_total_gb': round(mem.total / (1024 ** 3), 2),
        'ram_available_gb': round(mem.available / (1024 ** 3), 2),
    }
    _snapshot_cache.clear()
    _snapshot_cache.update(snapshot)
    _snapshot_cache['_timestamp'] = now
    return snapshot


def default_workers() -> int:
    """Physical core count, falling back to logical cores, never below 1"""
    count = psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
    return max(1, int(count))


def git_revision(repo_dir: Optional[Path] = None) -> str:
    """Current commit hash, or 'unknown' outside a git checkout"""
    try:
        result = subprocess.run(
            ['git', 'rev-parse', 'HEAD'],
            cwd=str(repo_dir or Path(__file__).parent),
            capture_output=True, text=True, timeout=5,
        )
        if result.returncode == 0 and result.stdout.strip():
            return result.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return 'unknown'
