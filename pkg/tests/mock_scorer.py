#!/usr/bin/env python3
"""Deterministic scoring/translation service for exercising the wire protocol.

Scoring rule: each whitespace token of the target costs -0.25 if it also
appears in the source, else -1.25. Translate mode appends "+" to every
source token. Misbehaviors for negative tests are switched on by flags:

  --reverse       answer each pair of requests in swapped order
  --drop-every N  never answer every Nth request
  --positive      emit a positive log-probability (protocol violation)
  --garbage       emit one unparseable line before each response
  --flip-eos      alternate the includes_eos flag between responses
"""
import argparse
import json
import sys


def scores(source: str, target: str, positive: bool) -> list[float]:
    src_tokens = set(source.split())
    out = []
    for tok in target.split():
        out.append(-0.25 if tok in src_tokens else -1.25)
    if positive and out:
        out[0] = 0.5
    return out or [-1.25]


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--reverse", action="store_true")
    parser.add_argument("--drop-every", type=int, default=0)
    parser.add_argument("--positive", action="store_true")
    parser.add_argument("--garbage", action="store_true")
    parser.add_argument("--flip-eos", action="store_true")
    args = parser.parse_args()

    count = 0
    eos = False
    pending = None

    def reply(msg) -> None:
        nonlocal count, eos
        count += 1
        if args.drop_every and count % args.drop_every == 0:
            return
        if args.garbage:
            sys.stdout.write("{this is not json\n")
        if msg.get("mode") == "translate":
            body = {
                "id": msg["id"],
                "translation": " ".join(t + "+" for t in msg["source"].split()),
            }
        else:
            if args.flip_eos:
                eos = not eos
            body = {
                "id": msg["id"],
                "tokens": msg["target"].split(),
                "token_logprobs": scores(msg["source"], msg["target"], args.positive),
                "includes_eos": eos,
            }
        sys.stdout.write(json.dumps(body) + "\n")
        sys.stdout.flush()

    for line in sys.stdin:
        if not line.strip():
            continue
        msg = json.loads(line)
        if args.reverse:
            if pending is None:
                pending = msg
                continue
            reply(msg)
            reply(pending)
            pending = None
        else:
            reply(msg)
    if pending is not None:
        reply(pending)


if __name__ == "__main__":
    main()
