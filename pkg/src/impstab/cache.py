"""On-disk cache of the spectral and probe stages, keyed by a content hash.

Entries are JSON; Python's float repr round-trips exactly, so a cached run
reproduces the cold run bit for bit.  Writes go to a temporary file in the
same directory and are then renamed into place.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CacheMissError
from .probe import ProbeData
from .spectrum import SpectralData

__all__ = [
    "CACHE_ENV",
    "cache_dir",
    "spectral_to_dict",
    "spectral_from_dict",
    "probe_to_dict",
    "probe_from_dict",
    "store_stages",
    "load_stages",
    "atomic_write_text",
]

CACHE_ENV = "IMPSTAB_CACHE_DIR"
CACHE_DIRNAME = ".impstab-cache"
FORMAT = 1


def cache_dir(config_path: Optional[Path]) -> Path:
    """``$IMPSTAB_CACHE_DIR`` if set, else ``.impstab-cache`` beside the config."""
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    base = Path(config_path).resolve().parent if config_path is not None else Path.cwd()
    return base / CACHE_DIRNAME


def _complex_list(values) -> list:
    return [[complex(z).real, complex(z).imag] for z in values]


def _complex_tuple(pairs) -> tuple:
    return tuple(complex(re, im) for re, im in pairs)


def spectral_to_dict(sd: SpectralData) -> dict:
    return {
        "lambda_block": np.asarray(sd.lambda_block).tolist(),
        "phi0": np.asarray(sd.phi0).tolist(),
        "psi0": np.asarray(sd.psi0).tolist(),
        "gamma": np.asarray(sd.gamma).tolist(),
        "eigs_all": _complex_list(sd.eigs_all),
        "retained": _complex_list(sd.retained),
        "block_sizes": list(sd.block_sizes),
    }


def spectral_from_dict(data: dict) -> SpectralData:
    def arr(key):
        a = np.array(data[key], dtype=float, ndmin=2)
        a.setflags(write=False)
        return a

    return SpectralData(
        lambda_block=arr("lambda_block"),
        phi0=arr("phi0"),
        psi0=arr("psi0"),
        gamma=arr("gamma"),
        eigs_all=_complex_tuple(data["eigs_all"]),
        retained=_complex_tuple(data["retained"]),
        block_sizes=tuple(data["block_sizes"]),
    )


def probe_to_dict(probe: ProbeData) -> dict:
    return {
        "m0_vectorized": probe.m0_vectorized.tolist(),
        "z_vectorized": probe.z_vectorized.tolist(),
        "h": probe.h,
    }


def probe_from_dict(data: dict) -> ProbeData:
    return ProbeData.from_vectorized(data["m0_vectorized"], data["z_vectorized"], data["h"])


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def store_stages(directory: Path, key: str, spectral: SpectralData, probe: ProbeData) -> Path:
    path = Path(directory) / f"{key}.json"
    payload = {
        "format": FORMAT,
        "key": key,
        "spectral": spectral_to_dict(spectral),
        "probe": probe_to_dict(probe),
    }
    atomic_write_text(path, json.dumps(payload, sort_keys=True))
    return path


def load_stages(directory: Path, key: str) -> tuple[SpectralData, ProbeData]:
    path = Path(directory) / f"{key}.json"
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CacheMissError(
            f"no cached spectral/probe data for this configuration in {directory}; "
            "run once with refining disabled to populate the cache"
        ) from None
    except json.JSONDecodeError as exc:
        raise CacheMissError(f"cache entry {path} is corrupt ({exc.msg}); rerun with refining disabled") from None
    if payload.get("format") != FORMAT or payload.get("key") != key:
        raise CacheMissError(f"cache entry {path} is stale; rerun with refining disabled")
    return spectral_from_dict(payload["spectral"]), probe_from_dict(payload["probe"])
