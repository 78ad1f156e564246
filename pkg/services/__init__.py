from .config import config, worker_count
from .schemas import RunConfig, DatasetManifest

__all__ = ["config", "worker_count", "RunConfig", "DatasetManifest"]
