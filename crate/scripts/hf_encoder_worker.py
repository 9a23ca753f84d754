"""JSON-lines embedding worker for the `external` encoder backend.

Reads one request per line on stdin:
    {"id": 0, "op": "embed", "texts": [...], "model_id": "...", "revision": "...",
     "max_sequence_length": 128, "pooling": "mean"}
and answers with {"id": 0, "embeddings": [[...], ...]} or {"id": 0, "error": "..."}.
"""

import json
import sys

import torch
from transformers import AutoModel, AutoTokenizer

_models = {}


def load(model_id, revision):
    key = (model_id, revision or None)
    if key not in _models:
        tok = AutoTokenizer.from_pretrained(model_id, revision=revision or None)
        model = AutoModel.from_pretrained(model_id, revision=revision or None)
        model.eval()
        _models[key] = (tok, model)
    return _models[key]


@torch.no_grad()
def embed(req):
    if req.get("pooling", "mean") != "mean":
        raise ValueError(f"unsupported pooling {req['pooling']!r}")
    tok, model = load(req["model_id"], req.get("revision", ""))
    out = []
    texts = req["texts"]
    for start in range(0, len(texts), 32):
        batch = tok(
            texts[start : start + 32],
            padding=True,
            truncation=True,
            max_length=req.get("max_sequence_length", 128),
            return_tensors="pt",
        )
        hidden = model(**batch).last_hidden_state
        mask = batch["attention_mask"].unsqueeze(-1).to(hidden.dtype)
        pooled = (hidden * mask).sum(1) / mask.sum(1).clamp(min=1.0)
        out.extend(pooled.double().tolist())
    return {"embeddings": out}


def main():
    torch.manual_seed(0)
    for line in sys.stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        try:
            if req.get("op") != "embed":
                raise ValueError(f"unknown op {req.get('op')!r}")
            resp = embed(req)
        except Exception as exc:  # reported to the caller
            resp = {"error": f"{type(exc).__name__}: {exc}"}
        resp["id"] = req.get("id")
        sys.stdout.write(json.dumps(resp) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
