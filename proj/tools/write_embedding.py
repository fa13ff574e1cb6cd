#!/usr/bin/env python3
"""Standalone embedding-cache writer.

Reference implementation of the adapter contract: any external program
that produces this byte layout is a valid encoder. Entry layout:

    bytes 0-3   magic "EMB1"
    byte  4     modality code (text=0, voice=1, face=2, video=3)
    bytes 5-7   reserved, zero
    bytes 8-11  dim, little-endian u32
    bytes 12-15 CRC-32 of the payload, little-endian u32
    payload     dim little-endian float32 values

Files live at <cache>/<producer>/<utterance_id>.<modality>.emb next to a
producer-level index.jsonl sorted by (utterance_id, modality). Utterance
ids should be filename-safe ([A-Za-z0-9._-]).
"""

import argparse
import json
import os
import struct
import zlib

MODALITY_CODES = {"text": 0, "voice": 1, "face": 2, "video": 3}


def index_line(utterance_id, modality, dim, file_name):
    return json.dumps(
        {
            "utterance_id": utterance_id,
            "modality": modality,
            "dim": dim,
            "file": file_name,
        },
        sort_keys=True,
        separators=(",", ":"),
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--cache", required=True, help="cache root directory")
    parser.add_argument("--producer", required=True, help="producer id, e.g. roberta")
    parser.add_argument("--id", required=True, help="utterance id")
    parser.add_argument(
        "--modality", required=True, choices=sorted(MODALITY_CODES), help="modality name"
    )
    parser.add_argument("values", nargs="+", type=float, help="embedding values")
    args = parser.parse_args()

    payload = b"".join(struct.pack("<f", v) for v in args.values)
    entry = (
        b"EMB1"
        + bytes([MODALITY_CODES[args.modality], 0, 0, 0])
        + struct.pack("<I", len(args.values))
        + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
        + payload
    )

    producer_dir = os.path.join(args.cache, args.producer)
    os.makedirs(producer_dir, exist_ok=True)
    file_name = "%s.%s.emb" % (args.id, args.modality)
    with open(os.path.join(producer_dir, file_name), "wb") as f:
        f.write(entry)

    # refresh the index: replace any line for this (id, modality), keep sorted
    index_path = os.path.join(producer_dir, "index.jsonl")
    entries = {}
    if os.path.exists(index_path):
        with open(index_path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                entries[(row["utterance_id"], row["modality"])] = row
    entries[(args.id, args.modality)] = {
        "utterance_id": args.id,
        "modality": args.modality,
        "dim": len(args.values),
        "file": file_name,
    }
    code_order = {name: code for name, code in MODALITY_CODES.items()}
    with open(index_path, "w", encoding="utf-8") as f:
        for key in sorted(entries, key=lambda k: (k[0], code_order[k[1]])):
            row = entries[key]
            f.write(
                index_line(row["utterance_id"], row["modality"], row["dim"], row["file"])
                + "\n"
            )

    print(os.path.join(producer_dir, file_name))


if __name__ == "__main__":
    main()
