"""End-to-end acceptance checks for the benchmark suite.

Each test prints a single PASS/FAIL line for its criterion, so the
suite doubles as a release checklist.  Run with `pytest -s` to see the
lines inline.
"""

import functools
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from metamaze import cli, evalkit, metalang as ml, rng, rollout, wire
from metamaze.maze import core, render

HELPER = Path(__file__).parent / "helpers" / "random_client.py"


def criterion(label):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"{label}: FAIL", flush=True)
                raise
            print(f"{label}: PASS", flush=True)
        return wrapper
    return deco


@criterion("P1 generator parameter counts")
def test_p1_param_counts():
    for order, expected in ((2, 7264), (4, 11360), (8, 19552)):
        cfg = ml.LangConfig(order=order)
        assert cfg.param_count == expected
        assert ml.sample_task(cfg, 0).param_count == expected


@criterion("P2 intrinsic difficulty band")
def test_p2_difficulty_band():
    cfg = ml.LangConfig(vocab_size=32, order=4, logit_scale=5.0)
    sigma = ml.calibrate_theta_sigma(cfg, num_tasks=50, tokens_per_task=256,
                                     seed=0)
    mean, sem = ml.intrinsic_difficulty(
        ml.LangConfig(vocab_size=32, order=4, logit_scale=5.0,
                      theta_sigma=sigma),
        num_tasks=200, tokens_per_task=512, seed=1)
    half = 1.96 * sem
    assert half < 0.05, f"CI half-width {half:.4f}"
    assert 0.5 <= mean <= 1.0, f"mean difficulty {mean:.4f} nats"


@criterion("P3 Markov oracle agreement")
def test_p3_markov_oracle():
    import math
    task = ml.sample_task(ml.LangConfig(vocab_size=4, order=2, embed_dim=8,
                                        hidden_dim=8), 77)

    def brute_force(context):
        x = []
        for tok in context:
            x.extend(task.embed[tok].tolist())
        h = [math.tanh(task.b_hidden[j]
                       + sum(x[i] * task.w_hidden[i, j]
                             for i in range(len(x))))
             for j in range(task.config.hidden_dim)]
        z = [task.b_out[j] + sum(h[i] * task.w_out[i, j]
                                 for i in range(len(h)))
             for j in range(task.config.vocab_size)]
        mean = sum(z) / len(z)
        var = sum((v - mean) ** 2 for v in z) / len(z)
        if var < 1e-12:
            return [1.0 / len(z)] * len(z)
        zn = [task.config.logit_scale * (v - mean) / math.sqrt(var)
              for v in z]
        m = max(zn)
        e = [math.exp(v - m) for v in zn]
        return [v / sum(e) for v in e]

    for a in range(4):
        for b in range(4):
            got = ml.next_token_dist(task, [a, b])
            want = brute_force([a, b])
            assert np.allclose(got, want, atol=1e-9)


@criterion("P4 maze statistics")
def test_p4_maze_statistics():
    fracs = []
    for seed in range(1000):
        t = core.generate_task(core.MazeConfig(size=15), seed)
        assert core.connected_free_cells(t), f"disconnected at seed {seed}"
        fracs.append(t.actual_density)
    mean = float(np.mean(fracs))
    assert abs(mean - 0.36) <= 0.02, f"mean wall fraction {mean:.4f}"
    for seed in range(1000):
        t = core.generate_task(
            core.MazeConfig(size=15, obstacle_density=0.55), seed)
        assert core.free_graph_cycles(t) == 0, f"cycle at seed {seed}"


@criterion("P5 agent ordering with disjoint CIs")
def test_p5_agent_ordering():
    cfg = evalkit.InteractiveEvalConfig(num_tasks=64, sizes=(15,),
                                        horizon=2000)
    finals = {}
    cis = {}
    policies = {
        "priv_1.0": evalkit.PrivilegedPolicyHandle(1.0),
        "priv_0.25": evalkit.PrivilegedPolicyHandle(0.25),
        "priv_0.05": evalkit.PrivilegedPolicyHandle(0.05),
        "random": evalkit.RandomPolicyHandle(),
    }
    for name, policy in policies.items():
        curve = evalkit.run_interactive(policy, cfg, seed=0)[15]
        finals[name] = curve.means[-1]
        cis[name] = (curve.ci_lo[-1], curve.ci_hi[-1])
    assert finals["priv_1.0"] > finals["priv_0.25"] \
        > finals["priv_0.05"] > finals["random"], finals
    assert cis["priv_1.0"][0] > cis["random"][1], (cis["priv_1.0"],
                                                   cis["random"])


@criterion("P6 exploit path optimality")
def test_p6_exploit_optimality():
    from metamaze.agents import PrivilegedAgent
    checked = 0
    seed = 0
    while checked < 100:
        t = core.generate_task(
            core.MazeConfig(size=9, num_pnts=3, reach_reward=1.0,
                            episode_len=256), seed)
        seed += 1
        state = core.initial_state(t)
        target = t.pnt_by_color(int(t.commands[0])).cell
        if target == state.agent_cell:
            continue
        agent = PrivilegedAgent(1.0, seed)
        agent.memory.ltm = {
            (r, c): render.cell_class(t, (r, c))
            for r in range(9) for c in range(9)}
        moves = 0
        for _ in range(256):
            agent.observe(render.visible_cells(t, state))
            cmd = core.current_command(t, state)
            a = agent.act(state.agent_cell, state.heading, cmd)
            prev = state.agent_cell
            state, _, events = core.step(t, state, a)
            moves += state.agent_cell != prev
            if ("reach", cmd) in events:
                break
        else:
            pytest.fail(f"never reached target on seed {seed - 1}")
        oracle = core.shortest_path(t, core.initial_state(t).agent_cell,
                                    target)
        assert moves == oracle, (seed - 1, moves, oracle)
        checked += 1


@criterion("P7 renderer throughput >= 20 FPS")
def test_p7_renderer_fps(capsys):
    assert cli.main(["maze", "bench-fps", "--frames", "300"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["fps"] >= 20.0, report


@criterion("P8 byte-identical generation reruns")
def test_p8_determinism(tmp_path):
    def run_twice(argv_of, files_of):
        blobs = []
        for name in ("a", "b"):
            d = tmp_path / name
            d.mkdir(exist_ok=True)
            assert cli.main(argv_of(d)) == 0
            blobs.append([Path(f).read_bytes() for f in files_of(d)])
        assert blobs[0] == blobs[1]

    run_twice(lambda d: ["metalang", "gen", "--out", str(d / "ds.bin"),
                         "--sequences", "20", "--seq-len", "128",
                         "--seed", "7"],
              lambda d: [d / "ds.bin", d / "ds.bin.index.json"])
    run_twice(lambda d: ["maze", "gen-task", "--seed", "7",
                         "--out", str(d / "task.json")],
              lambda d: [d / "task.json"])
    run_twice(lambda d: ["maze", "collect", "--episodes", "2",
                         "--episode-len", "32", "--seed", "7",
                         "--out", str(d / "packs")],
              lambda d: sorted(p for p in (d / "packs").rglob("*")
                               if p.is_file()
                               and not p.name.endswith("manifest.json")))
    run_twice(lambda d: ["maze", "eval", "--policy", "privileged:1.0",
                         "--tasks", "2", "--sizes", "15", "--horizon", "20",
                         "--seed", "7", "--out", str(d / "i.csv")],
              lambda d: [d / "i.csv"])
    run_twice(lambda d: ["maze", "wm-eval", "--predictor", "constant",
                         "--tasks", "2", "--sizes", "15",
                         "--checkpoints", "1,4", "--depths", "1",
                         "--seed", "7", "--out", str(d / "wm.csv")],
              lambda d: [d / "wm.csv"])


@criterion("P9 episode replay byte-exact")
def test_p9_replay(tmp_path):
    cfg = rollout.RolloutConfig()
    pick = np.random.default_rng(2024)
    for i in range(20):
        task = core.generate_task(core.MazeConfig(size=15),
                                  int(pick.integers(1 << 31)))
        record = rollout.collect_episode(task, cfg,
                                         int(pick.integers(1 << 31)))
        pack = rollout.write_pack(record, tmp_path / f"ep_{i:03d}")
        back = rollout.read_pack(pack)
        frames = rollout.replay_frames(back.manifest, back.behavior_actions)
        assert frames.tobytes() == back.frames.tobytes(), f"pack {i}"


@criterion("P10 wire conformance over stdio")
def test_p10_wire_conformance(tmp_path):
    horizon = 10_000
    task = core.generate_task(core.MazeConfig(size=15, episode_len=horizon),
                              3)
    result_file = tmp_path / "client.json"
    proc = subprocess.Popen(
        [sys.executable, str(HELPER), "123", str(result_file)],
        stdin=subprocess.PIPE, stdout=subprocess.PIPE)
    transport = wire.Transport(proc.stdout, proc.stdin)
    total = wire.serve_episode(task, transport, horizon)
    proc.stdin.close()
    assert proc.wait(timeout=60) == 0
    result = json.loads(result_file.read_text())

    # identical reward accounting on both ends of the wire
    assert result["end"]["accumulated_reward"] == pytest.approx(total)
    actions = np.array(result["actions"])
    state = core.initial_state(task)
    for a in actions:
        state, _, _ = core.step(task, state, int(a))
    assert state.accumulated_reward == pytest.approx(total)

    # the external histogram matches the in-process random policy's
    from metamaze.agents import RandomAgent
    local = RandomAgent(123)
    local_actions = np.array([int(local.act(None, None, 0))
                              for _ in range(horizon)])
    obs = np.stack([np.bincount(actions, minlength=5),
                    np.bincount(local_actions, minlength=5)])
    p = stats.chi2_contingency(obs).pvalue
    assert p > 0.01, f"chi-square p = {p:.4f}"


@criterion("P11 oracle predictor MSE 0 on the full checkpoint grid")
def test_p11_wm_oracle():
    cfg = evalkit.WMEvalConfig(checkpoints=(1, 100, 1000, 2000),
                               depths=(1, 4), num_tasks=3, sizes=(15,))
    table = evalkit.run_wm_eval(evalkit.OraclePredictor(), cfg, seed=5)
    assert set(table) == {(15, t, k) for t in (1, 100, 1000, 2000)
                          for k in (1, 4)}
    for key, (mse, lo, hi) in table.items():
        assert mse == 0.0 and lo == 0.0 and hi == 0.0, (key, mse)
