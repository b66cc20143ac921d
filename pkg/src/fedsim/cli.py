"""Command-line entry points.

``fedsim run PLAN [--out DIR] [--threads K]`` executes an experiment plan;
``--threads`` affects speed only, never results.  ``fedsim replay CAPTURE``
decodes a ``.packets`` capture and re-aggregates it, validating that every
packet round-trips bit-exactly and that all update values are integers in
range.
"""

from __future__ import annotations

import argparse
import struct
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from .codec import CodecError, account_round, decode_packet, encode_packet
from .errors import FedSimError
from .plan import load_plan, run_plan


def _cmd_run(args) -> int:
    plan = load_plan(args.plan)
    return run_plan(plan, out_dir=args.out, threads=args.threads)


def _iter_raw_packets(path):
    raw = Path(path).read_bytes()
    offset = 0
    while offset < len(raw):
        if offset + 4 > len(raw):
            raise CodecError("capture truncated inside a length prefix")
        (length,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if offset + length > len(raw):
            raise CodecError("capture truncated inside a packet")
        yield raw[offset : offset + length]
        offset += length


def _cmd_replay(args) -> int:
    rounds = defaultdict(list)
    count = 0
    for chunk in _iter_raw_packets(args.capture):
        pkt = decode_packet(chunk)
        if encode_packet(pkt) != chunk:
            # decode is lossless, so any disagreement is a codec defect
            print(f"round {pkt.round} client {pkt.client_id}: re-encode mismatch", file=sys.stderr)
            return 1
        rounds[pkt.round].append(pkt)
        count += 1
    if count == 0:
        print("empty capture")
        return 0
    for t in sorted(rounds):
        group = rounds[t]
        E = group[0].delta.E
        d = group[0].delta.d
        if any(p.delta.E != E or p.delta.d != d for p in group):
            print(f"round {t}: inconsistent E or d across clients", file=sys.stderr)
            return 1
        total = np.zeros(d, dtype=np.int64)
        for p in group:
            total += p.delta.values
        account = account_round("fedlion", d, E, len(group))
        print(
            f"round {t}: clients={len(group)} d={d} E={E} "
            f"sum_l1={int(np.abs(total).sum())} "
            f"uplink_bits={len(group) * account.uplink_bits_per_client}"
        )
    print(f"ok: {count} packets, {len(rounds)} rounds")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="fedsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment plan")
    p_run.add_argument("plan", help="path to a TOML plan file")
    p_run.add_argument("--out", default=None, help="output directory (overrides plan)")
    p_run.add_argument("--threads", type=int, default=1, help="client-level parallelism")
    p_run.set_defaults(func=_cmd_run)

    p_replay = sub.add_parser("replay", help="validate and re-aggregate a packet capture")
    p_replay.add_argument("capture", help="path to a .packets file")
    p_replay.set_defaults(func=_cmd_replay)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FedSimError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
