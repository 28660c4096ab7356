"""Line-protocol text embedding service.

Reads one composed string per line from stdin and replies with one line of
dim space-separated decimal floats (a unit vector). A line it cannot embed
gets a single ``ERR <reason>`` line; the process stays alive either way.
"""

from __future__ import annotations

import sys


def serve(encoder, stream_in=None, stream_out=None) -> None:
    stream_in = stream_in if stream_in is not None else sys.stdin
    stream_out = stream_out if stream_out is not None else sys.stdout
    for line in stream_in:
        text = line.rstrip("\n").rstrip("\r")
        if not text.strip():
            stream_out.write("ERR empty input line\n")
            stream_out.flush()
            continue
        try:
            vec = encoder.encode_texts([text])[0]
        except Exception as exc:  # stay alive on any single-line failure
            stream_out.write(f"ERR {type(exc).__name__}: {exc}\n")
            stream_out.flush()
            continue
        stream_out.write(" ".join(repr(float(x)) for x in vec) + "\n")
        stream_out.flush()
