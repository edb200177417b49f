"""scavstore: checkpoint storage on scavenged disk space.

A metadata manager tracks donated storage (benefactors) and committed chunk
maps; clients stripe content-addressed chunks across benefactors with
checkpoint-oriented write protocols, dedup against already-stored chunks,
background replication, and garbage collection by inventory exchange.
"""

__version__ = "0.1.0"
