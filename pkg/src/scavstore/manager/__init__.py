from .journal import Journal, replay
from .state import (
    MODE_NONE,
    MODE_PURGE,
    MODE_REPLACE,
    PENDING,
    SATISFIED,
    BenefactorRecord,
    ChunkEntry,
    DatasetName,
    ManagerState,
    Reservation,
    VersionRecord,
    benefactor_id_for,
)
from .server import ManagerServer

__all__ = [
    "MODE_NONE",
    "MODE_PURGE",
    "MODE_REPLACE",
    "PENDING",
    "SATISFIED",
    "BenefactorRecord",
    "ChunkEntry",
    "DatasetName",
    "Journal",
    "ManagerServer",
    "ManagerState",
    "Reservation",
    "VersionRecord",
    "benefactor_id_for",
    "replay",
]
