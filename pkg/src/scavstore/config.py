"""Plain key=value configuration files with command-line overrides.

Lines are `key = value`; blank lines and lines starting with # are ignored.
Durations accept a unit suffix (5s, 10m, 2h, 1d), sizes accept k/m/g
(binary). Values given on the command line as KEY=VALUE win over the file.
"""

from __future__ import annotations

from pathlib import Path

DEFAULTS = {
    "heartbeat_interval": "5s",
    "liveness_timeout": "15s",
    "reservation_ttl": "10m",
    "replication": "1",
    "lifecycle_mode": "none",
    "purge_after": "1h",
    "replication_interval": "0.5s",
    "gc_interval": "30s",
    "lifecycle_interval": "5s",
    "chunk_size": "1m",
    "stripe_width": "4",
}

_SIZE_UNITS = {"k": 1 << 10, "m": 1 << 20, "g": 1 << 30}
_TIME_UNITS = {"s": 1.0, "m": 60.0, "h": 3600.0, "d": 86400.0}


class Config:
    def __init__(self, values: dict[str, str] | None = None):
        self.values = dict(DEFAULTS)
        if values:
            self.values.update(values)

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: list[str] | None = None):
        values: dict[str, str] = {}
        if path:
            for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value")
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
        for item in overrides or []:
            if "=" not in item:
                raise ValueError(f"override {item!r}: expected KEY=VALUE")
            key, _, value = item.partition("=")
            values[key.strip()] = value.strip()
        return cls(values)

    def get(self, key: str, default: str | None = None) -> str:
        if key in self.values:
            return self.values[key]
        if default is None:
            raise KeyError(key)
        return default

    def get_int(self, key: str, default: int | None = None) -> int:
        if key not in self.values:
            if default is None:
                raise KeyError(key)
            return default
        return int(self.values[key])

    def get_size(self, key: str, default: int | None = None) -> int:
        if key not in self.values:
            if default is None:
                raise KeyError(key)
            return default
        raw = self.values[key].lower()
        if raw and raw[-1] in _SIZE_UNITS:
            return int(float(raw[:-1]) * _SIZE_UNITS[raw[-1]])
        return int(raw)

    def get_duration(self, key: str, default: float | None = None) -> float:
        if key not in self.values:
            if default is None:
                raise KeyError(key)
            return default
        raw = self.values[key].lower()
        if raw and raw[-1] in _TIME_UNITS:
            return float(raw[:-1]) * _TIME_UNITS[raw[-1]]
        return float(raw)

    def dump(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.values.items()))
