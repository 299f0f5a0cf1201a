import json
import threading
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from mtevalkit.corpus import (
    Annotation,
    AnnotationSet,
    ErrorSpan,
    LanguagePair,
    TranslationTriple,
    TripleSet,
)

TS = datetime(2024, 5, 1, 12, 0, 0, tzinfo=timezone.utc)
LP = LanguagePair("eng", "yor")


def make_triple(segment_id, src="the cat sat on the mat", mt="o nran naa joko lori te",
                ref="o nran naa joko lori ate naa", lp=LP, split="unsplit"):
    return TranslationTriple(segment_id=segment_id, lp=lp, src=src, mt=mt, ref=ref, split=split)


def make_annotation(segment_id, evaluator_id, da_score, dimension="adequacy", spans=(), ts=TS):
    return Annotation(
        segment_id=segment_id,
        evaluator_id=evaluator_id,
        dimension=dimension,
        spans=tuple(spans),
        da_score=da_score,
        submitted_at=ts,
    )


def make_span(start, end, target="translation_side", category="Mistranslation"):
    return ErrorSpan(start=start, end=end, target=target, category=category)


@pytest.fixture
def small_corpus():
    return TripleSet(make_triple(f"seg{i:03d}") for i in range(10))


def annotation_set(pairs, dimension="adequacy"):
    """pairs: iterable of (segment_id, evaluator_id, da_score[, spans])."""
    out = AnnotationSet()
    for entry in pairs:
        sid, eid, score = entry[:3]
        spans = entry[3] if len(entry) > 3 else ()
        out.add(make_annotation(sid, eid, score, dimension=dimension, spans=spans))
    return out


class _EmbedStubHandler(BaseHTTPRequestHandler):
    """Minimal /embed endpoint speaking the remote-provider protocol."""

    provider = None

    def do_POST(self):
        if self.path != "/embed":
            self.send_error(404)
            return
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        try:
            matrices = [self.provider.embed(t) for t in body["texts"]]
        except Exception as exc:
            self.send_response(422)
            self.end_headers()
            self.wfile.write(json.dumps({"detail": str(exc)}).encode())
            return
        payload = json.dumps(
            {"dim": self.provider.descriptor.dim, "matrices": [m.tolist() for m in matrices]}
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def embed_stub_server():
    """Yields (url, provider) for a live HTTP embedding stub."""
    from mtevalkit.embeddings import DeterministicTestProvider

    provider = DeterministicTestProvider(dim=6, identity="stub-v1")
    handler = type("Handler", (_EmbedStubHandler,), {"provider": provider})
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_port}", provider
    finally:
        server.shutdown()
        thread.join(timeout=5)


def rng(seed=0):
    return np.random.default_rng(seed)
