"""JSON-lines paraphrase worker for minority-class augmentation.

Request: {"id": 0, "text": "...", "n_candidates": 1, "seed": 7,
          "decode": {"sampling": "top_k", "temperature": 2.0, "top_k": 40,
                     "top_p": 0.85, "repetition_penalty": 1.5}}
Response: {"id": 0, "paraphrases": ["..."]} or {"id": 0, "error": "..."}.

The first argument overrides the default T5 paraphrase model.
"""

import json
import sys

import torch
from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

MODEL_ID = sys.argv[1] if len(sys.argv) > 1 else "Vamsi/T5_Paraphrase_Paws"
PREFIX = "paraphrase: "


def main():
    tok = AutoTokenizer.from_pretrained(MODEL_ID)
    model = AutoModelForSeq2SeqLM.from_pretrained(MODEL_ID)
    model.eval()
    for line in sys.stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        try:
            d = req["decode"]
            torch.manual_seed(req.get("seed", 0) % (2**63))
            inputs = tok(PREFIX + req["text"], return_tensors="pt", truncation=True, max_length=256)
            with torch.no_grad():
                out = model.generate(
                    **inputs,
                    do_sample=True,
                    temperature=d["temperature"],
                    top_k=d["top_k"],
                    top_p=d["top_p"],
                    repetition_penalty=d["repetition_penalty"],
                    num_return_sequences=max(1, req.get("n_candidates", 1)),
                    max_new_tokens=256,
                )
            resp = {"paraphrases": tok.batch_decode(out, skip_special_tokens=True)}
        except Exception as exc:  # reported to the caller
            resp = {"error": f"{type(exc).__name__}: {exc}"}
        resp["id"] = req.get("id")
        sys.stdout.write(json.dumps(resp) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
