#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Convert a Hugging Face BERT checkpoint into the docmsu tensor archive.

    python tools/export_bert.py --model bert-base-uncased --out weights/bert.bin --vocab-out weights/vocab.txt
"""
import argparse
import json
import shutil
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"DOCMSUA1"


def write_archive(path, meta, tensors, dtype="f32"):
    """tensors: list of (name, numpy array). Offsets count elements."""
    np_dtype = {"f32": "<f4", "f64": "<f8"}[dtype]
    entries, offset = [], 0
    for name, arr in tensors:
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += int(arr.size)
    header = json.dumps({"meta": meta, "dtype": dtype, "tensors": entries}).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for _, arr in tensors:
            f.write(np.ascontiguousarray(arr, dtype=np_dtype).tobytes())


def bert_tensors(model):
    params = dict(model.named_parameters())
    out = []
    for name, p in params.items():
        key = name[len("bert."):] if name.startswith("bert.") else name
        if key.startswith("pooler."):
            continue
        out.append((key, p.detach().cpu().double().numpy()))
    return out


def bert_meta(config):
    return {"config": {
        "vocab_size": config.vocab_size,
        "hidden_size": config.hidden_size,
        "num_hidden_layers": config.num_hidden_layers,
        "num_attention_heads": config.num_attention_heads,
        "intermediate_size": config.intermediate_size,
        "max_position_embeddings": config.max_position_embeddings,
        "layer_norm_eps": config.layer_norm_eps,
    }}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--model", required=True, help="model name or local directory")
    ap.add_argument("--out", required=True, help="archive to write")
    ap.add_argument("--vocab-out", required=True, help="vocab.txt to write")
    ap.add_argument("--dtype", choices=["f32", "f64"], default="f32")
    args = ap.parse_args()

    from transformers import BertModel, BertTokenizer

    model = BertModel.from_pretrained(args.model)
    if model.config.hidden_act != "gelu":
        raise SystemExit(f"unsupported activation {model.config.hidden_act}")
    tok = BertTokenizer.from_pretrained(args.model)
    if not tok.do_lower_case:
        raise SystemExit("only uncased vocabularies are supported")
    write_archive(args.out, bert_meta(model.config), bert_tensors(model), args.dtype)
    Path(args.vocab_out).parent.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        shutil.copy(tok.save_vocabulary(tmp)[0], args.vocab_out)
    print(f"wrote {args.out} ({model.config.num_hidden_layers} layers, width {model.config.hidden_size})")


if __name__ == "__main__":
    main()
