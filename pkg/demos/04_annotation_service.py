"""Run the annotation service over HTTP and play two evaluators against it.

Starts the FastAPI app on a real local port, creates an adequacy project
with calibration items, registers two evaluators, drives them through
calibration and the main corpus, and finally exports the annotations and
pushes them through the QA pipeline.

Run: python demos/04_annotation_service.py
"""
import threading
import time

import requests
import uvicorn

from mtevalkit.corpus import Annotation, AnnotationSet
from mtevalkit.qa import aggregate_segments, filter_discrepant, iaa, znormalize
from mtevalkit.service import MemoryStorage
from mtevalkit.service.app import create_app

# ----------------------------------------------------------------- start server
PORT = 8765
app = create_app(MemoryStorage())
server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=PORT, log_level="error"))
thread = threading.Thread(target=server.run, daemon=True)
thread.start()
while not server.started:
    time.sleep(0.05)
base = f"http://127.0.0.1:{PORT}"
print(f"service listening on {base}")

# ----------------------------------------------------------------- create project
triples = [
    {
        "segment_id": f"seg{i:02d}",
        "lp": {"src_lang": "eng", "tgt_lang": "ibo"},
        "src": f"english sentence {i} with words",
        "mt": f"nsụgharị igwe {i} nwere okwu",
        "ref": f"nsụgharị ezi {i} nwere okwu niile",
    }
    for i in range(8)
]
response = requests.post(
    f"{base}/projects",
    json={
        "project_id": "demo",
        "dimension": "adequacy",
        "lp": {"src_lang": "eng", "tgt_lang": "ibo"},
        "calibration_size": 2,
        "min_annotators_per_item": 2,
        "triples": triples,
    },
    timeout=10,
)
response.raise_for_status()
print(f"project created over {response.json()['segments']} segments")

guidelines = requests.get(f"{base}/projects/demo/guidelines", timeout=10).json()
print(f"guideline anchors: {guidelines['buckets']}")

# ----------------------------------------------------------------- annotate
scores = {"ama": 72, "obi": 68}
for evaluator in scores:
    requests.post(
        f"{base}/projects/demo/evaluators", json={"evaluator_id": evaluator}, timeout=10
    ).raise_for_status()

for evaluator, base_score in scores.items():
    done = 0
    while True:
        task = requests.get(
            f"{base}/projects/demo/next-task", params={"evaluator": evaluator}, timeout=10
        ).json()["task"]
        if task is None:
            break
        spans = []
        if done % 3 == 0:  # occasionally highlight the first word as an error
            spans.append(
                {"start": 0, "end": len(task["mt"].split()[0]),
                 "target": "translation_side", "category": "Mistranslation"}
            )
        # both evaluators track the same per-segment quality, offset by a
        # personal bias the z-normalization will remove
        segment_quality = 2 * (int(task["segment_id"][-2:]) % 6)
        submit = requests.post(
            f"{base}/tasks/{task['task_id']}/submit",
            json={"spans": spans, "da_score": base_score + segment_quality},
            timeout=10,
        )
        submit.raise_for_status()
        done += 1
    print(f"{evaluator} annotated {done} items (first 2 were calibration)")

progress = requests.get(f"{base}/projects/demo/progress", timeout=10).json()
print(f"progress: {progress['segments_complete']}/{progress['segments_total']} segments at full coverage")

# ----------------------------------------------------------------- export + QA
exported = requests.get(f"{base}/projects/demo/export", timeout=10).json()["annotations"]
print(f"exported {len(exported)} annotations (calibration excluded by default)")

annotations = AnnotationSet(Annotation.from_json(r) for r in exported)
result = filter_discrepant(annotations, threshold=34)
kept = result.kept_annotations()
segment_scores = aggregate_segments(kept, znormalize(kept))
agreement = iaa(kept, repeats=100, seed=0)
print(f"QA over the export: {len(result.kept)} segments kept, agreement {agreement:.3f}")
for score in segment_scores[:3]:
    print(f"  {score.segment_id}: z_mean {score.z_mean:+.3f}")

server.should_exit = True
thread.join(timeout=5)
print("server stopped")
