"""Pluggable token-embedding providers.

Real multilingual encoders stay outside this package; the estimator only
ever sees an (n_tokens x dim) matrix per text. Three providers cover the
lifecycle: a deterministic hash-based provider for tests and demos, a
content-addressed on-disk store of precomputed matrices, and an HTTP
client for a sidecar process wrapping an actual encoder.

File-store format, one file per text, named by the SHA-256 hex digest of
(provider identity || text) as UTF-8 bytes: an 8-byte header of two
little-endian uint32 values {rows, dim}, then rows*dim little-endian
float32 values, row-major. Writes are atomic (temp file + rename).
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CacheMissError, DataError, ValidationError

PROVIDER_KINDS = ("deterministic_test", "file_store", "remote")

_HEADER = struct.Struct("<II")


@dataclass(frozen=True)
class ProviderDescriptor:
    kind: str
    dim: int
    identity: str

    def __post_init__(self):
        if self.kind not in PROVIDER_KINDS:
            raise ValidationError(f"unknown provider kind {self.kind!r}")
        if self.dim <= 0:
            raise ValidationError("embedding dim must be positive")


class EmbeddingProvider:
    """Base interface: embed(text) -> (n_tokens x dim) float matrix."""

    descriptor: ProviderDescriptor

    def embed(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.embed(t) for t in texts]

    def _check_text(self, text: str) -> list[str]:
        if not text:
            raise ValidationError("cannot embed empty text")
        tokens = text.split()
        if not tokens:
            raise ValidationError("cannot embed whitespace-only text")
        return tokens


class DeterministicTestProvider(EmbeddingProvider):
    """Hashes whitespace tokens into unit-norm vectors.

    Pure and process-independent: the vector for a token depends only on
    the descriptor identity (which acts as the hash seed) and the token.
    """

    def __init__(self, dim: int, identity: str = "det-test-v1"):
        self.descriptor = ProviderDescriptor("deterministic_test", dim, identity)

    def embed(self, text: str) -> np.ndarray:
        tokens = self._check_text(text)
        dim = self.descriptor.dim
        rows = np.empty((len(tokens), dim), dtype=np.float64)
        for i, token in enumerate(tokens):
            digest = hashlib.blake2b(
                f"{self.descriptor.identity}\x00{token}".encode("utf-8"),
                digest_size=8,
            ).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vec = rng.standard_normal(dim)
            rows[i] = vec / np.linalg.norm(vec)
        return rows


def content_digest(identity: str, text: str) -> str:
    return hashlib.sha256(identity.encode("utf-8") + text.encode("utf-8")).hexdigest()


def write_matrix(path, matrix: np.ndarray) -> None:
    """Write one matrix in the store's binary format, atomically."""
    arr = np.ascontiguousarray(matrix, dtype="<f4")
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValidationError("embedding matrix must be 2-D with at least one row")
    path = Path(path)
    payload = _HEADER.pack(arr.shape[0], arr.shape[1]) + arr.tobytes(order="C")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-emb-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise DataError(f"truncated embedding file {path}")
        rows, dim = _HEADER.unpack(header)
        data = fh.read()
    expected = rows * dim * 4
    if len(data) != expected:
        raise DataError(
            f"embedding file {path}: expected {expected} payload bytes, found {len(data)}"
        )
    return np.frombuffer(data, dtype="<f4").reshape(rows, dim).astype(np.float64)


class FileStoreProvider(EmbeddingProvider):
    """Content-addressed directory of precomputed embedding matrices."""

    def __init__(self, root, dim: int, identity: str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.descriptor = ProviderDescriptor("file_store", dim, identity)

    def _path(self, text: str) -> Path:
        return self.root / f"{content_digest(self.descriptor.identity, text)}.emb"

    def embed(self, text: str) -> np.ndarray:
        self._check_text(text)
        path = self._path(text)
        if not path.exists():
            raise CacheMissError(content_digest(self.descriptor.identity, text))
        matrix = read_matrix(path)
        if matrix.shape[1] != self.descriptor.dim:
            raise DataError(
                f"stored matrix width {matrix.shape[1]} != descriptor dim {self.descriptor.dim}"
            )
        return matrix

    def put(self, text: str, matrix: np.ndarray) -> str:
        """Store a matrix for a text; returns the content digest."""
        self._check_text(text)
        arr = np.asarray(matrix)
        if arr.ndim != 2 or arr.shape[1] != self.descriptor.dim:
            raise ValidationError(
                f"matrix shape {arr.shape} does not match descriptor dim {self.descriptor.dim}"
            )
        digest = content_digest(self.descriptor.identity, text)
        write_matrix(self.root / f"{digest}.emb", arr)
        return digest

    def contains(self, text: str) -> bool:
        return self._path(text).exists()


class RemoteProvider(EmbeddingProvider):
    """HTTP client for an embedding sidecar.

    Protocol: POST {url}/embed with body {"texts": [...]} returns
    {"dim": d, "matrices": [[[...], ...], ...]} (one matrix per text).
    """

    def __init__(self, url: str, dim: int, identity: str, timeout: float = 30.0):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.descriptor = ProviderDescriptor("remote", dim, identity)

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        import requests

        for text in texts:
            self._check_text(text)
        try:
            response = requests.post(
                f"{self.url}/embed", json={"texts": list(texts)}, timeout=self.timeout
            )
            response.raise_for_status()
            body = response.json()
        except requests.RequestException as exc:
            raise DataError(f"embedding service request failed: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"embedding service returned invalid JSON: {exc}") from exc
        try:
            dim = int(body["dim"])
            matrices = body["matrices"]
        except (KeyError, TypeError) as exc:
            raise DataError(f"embedding service response missing field: {exc}") from exc
        if dim != self.descriptor.dim:
            raise DataError(
                f"embedding service dim {dim} != descriptor dim {self.descriptor.dim}"
            )
        if len(matrices) != len(texts):
            raise DataError(
                f"embedding service returned {len(matrices)} matrices for {len(texts)} texts"
            )
        out = []
        for matrix in matrices:
            arr = np.asarray(matrix, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != dim or arr.shape[0] < 1:
                raise DataError(f"embedding service returned a malformed matrix of shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise DataError("embedding service returned non-finite values")
            out.append(arr)
        return out


def make_embedding_app(provider: EmbeddingProvider):
    """FastAPI sidecar exposing a provider over the remote protocol."""
    from fastapi import Body, FastAPI, HTTPException

    app = FastAPI(title="embedding sidecar")

    @app.post("/embed")
    def embed(payload: dict = Body(...)):
        texts = payload.get("texts")
        if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
            raise HTTPException(status_code=422, detail='body must be {"texts": [str, ...]}')
        try:
            matrices = provider.embed_batch(texts)
        except (ValidationError, DataError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {
            "dim": provider.descriptor.dim,
            "matrices": [m.tolist() for m in matrices],
        }

    return app


def provider_from_config(config: dict) -> EmbeddingProvider:
    """Build a provider from a config mapping {kind, dim, identity?, ...}."""
    kind = config.get("kind")
    if kind not in PROVIDER_KINDS:
        raise ValidationError(f"unknown provider kind {kind!r}")
    dim = int(config.get("dim", 0))
    identity = config.get("identity", f"{kind}-v1")
    if kind == "deterministic_test":
        return DeterministicTestProvider(dim, identity)
    if kind == "file_store":
        root = config.get("root")
        if not root:
            raise ValidationError("file_store provider requires a 'root' directory")
        return FileStoreProvider(root, dim, identity)
    url = config.get("url")
    if not url:
        raise ValidationError("remote provider requires a 'url'")
    return RemoteProvider(url, dim, identity, timeout=float(config.get("timeout", 30.0)))
