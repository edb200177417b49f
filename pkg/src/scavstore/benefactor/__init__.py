from .daemon import BenefactorDaemon, PutPriorityGate
from .store import ChunkStore

__all__ = ["BenefactorDaemon", "ChunkStore", "PutPriorityGate"]
