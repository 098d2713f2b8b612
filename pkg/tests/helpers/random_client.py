"""Stdio wire-protocol client that plays uniformly random actions.

Usage: random_client.py SEED RESULT_JSON

Speaks the episode protocol over stdin/stdout, draws actions from the
same seeded stream as the in-process random policy, and writes the
actions it sent plus the END metadata to RESULT_JSON.
"""

import json
import sys

from metamaze import rng, wire

NUM_ACTIONS = 5


def main() -> int:
    seed, result_path = int(sys.argv[1]), sys.argv[2]
    g = rng.stream(seed, rng.STREAM_AGENT)
    actions = []

    def act(step, reward, command, frame):
        a = int(g.integers(NUM_ACTIONS))
        actions.append(a)
        return a

    transport = wire.Transport(sys.stdin.buffer, sys.stdout.buffer)
    end = wire.run_policy_client(act, transport)
    with open(result_path, "w") as f:
        json.dump({"actions": actions, "end": end}, f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
