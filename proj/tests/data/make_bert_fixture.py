#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Builds the tiny random BERT used by test_text_encoder, plus reference
token ids and first-subpiece hidden states computed with transformers."""
import json
import sys
from pathlib import Path

import torch
from transformers import BertConfig, BertModel, BertTokenizer

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent.parent / "tools"))
from export_bert import bert_meta, bert_tensors, write_archive  # noqa: E402

WORDS = ["the", "great", "another", "monday", "red", "blue", "day", "mon", "##day", "##s", "un", "##known",
         ",", ".", "!", "'", "?"]
TEXTS = [
    "Great , another MONDAY!",
    "the red days.",
    "unknown€word blue",
    "mondays? great'",
]


def main():
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    vocab += [chr(c) for c in range(ord("a"), ord("z") + 1)]
    vocab += ["##" + chr(c) for c in range(ord("a"), ord("z") + 1)]
    vocab += [w for w in WORDS if w not in vocab]
    (HERE / "tiny_bert_vocab.txt").write_text("\n".join(vocab) + "\n")

    torch.manual_seed(1234)
    cfg = BertConfig(vocab_size=len(vocab), hidden_size=16, num_hidden_layers=2, num_attention_heads=2,
                     intermediate_size=32, max_position_embeddings=64, hidden_act="gelu")
    model = BertModel(cfg, add_pooling_layer=False).double().eval()
    write_archive(HERE / "tiny_bert.bin", bert_meta(cfg), bert_tensors(model), "f64")

    tok = BertTokenizer(str(HERE / "tiny_bert_vocab.txt"), do_lower_case=True)
    cases = []
    for text in TEXTS:
        words = text.split()
        ids, first = [tok.cls_token_id], []
        for w in words:
            pieces = tok.convert_tokens_to_ids(tok.tokenize(w)) or [tok.unk_token_id]
            first.append(len(ids))
            ids.extend(pieces)
        ids.append(tok.sep_token_id)
        with torch.no_grad():
            hidden = model(torch.tensor([ids])).last_hidden_state[0]
        cases.append({"text": text, "ids": ids, "first": first,
                      "embeddings": hidden[first].tolist()})
    (HERE / "tiny_bert_reference.json").write_text(json.dumps({"cases": cases}, indent=1) + "\n")


if __name__ == "__main__":
    main()
