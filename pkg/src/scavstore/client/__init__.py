from .reader import ReadHandle, open_read, restart_fetch
from .rpc import BenefactorClient, BenefactorView, ChunkMapView, ManagerClient
from .session import TransferMetrics, WritePolicy, WriteSession, open_write

__all__ = [
    "BenefactorClient",
    "BenefactorView",
    "ChunkMapView",
    "ManagerClient",
    "ReadHandle",
    "TransferMetrics",
    "WritePolicy",
    "WriteSession",
    "open_read",
    "open_write",
    "restart_fetch",
]
