import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sstage.data import Scene
from sstage.metrics import (
    DUMP_HEADER,
    DumpError,
    ModeErrors,
    ade,
    agent_metrics,
    aggregate,
    dump_rows,
    evaluate_dataset,
    fde,
    m1,
    m2,
    min_metrics,
    read_dump,
    select_best_mode,
    write_dump,
)


# -- displacement errors ----------------------------------------------------
def test_ade_fde_zero_when_equal():
    p = np.random.default_rng(0).standard_normal((12, 2))
    assert ade(p, p) == 0.0 and fde(p, p) == 0.0


def test_ade_constant_offset():
    gt = np.zeros((12, 2))
    assert ade(gt + [0.3, 0.4], gt) == pytest.approx(0.5, abs=1e-15)


def test_error_only_at_last_step():
    gt = np.zeros((12, 2))
    pred = gt.copy()
    pred[-1] = [0.0, 2.0]
    assert fde(pred, gt) == 2.0
    assert ade(pred, gt) == pytest.approx(2.0 / 12)


def test_ade_fde_match_step_loop(rng):
    pred, gt = rng.standard_normal((12, 2)), rng.standard_normal((12, 2))
    steps = [math.hypot(*(pred[t] - gt[t])) for t in range(12)]
    assert ade(pred, gt) == pytest.approx(sum(steps) / 12, rel=1e-14)
    assert fde(pred, gt) == pytest.approx(steps[-1], rel=1e-14)


# -- mode selection and diversity metrics -----------------------------------
def test_min_metrics_cases():
    assert min_metrics(ModeErrors(np.array([0.7]), np.array([1.1]))) == (0.7, 1.1)
    assert min_metrics(ModeErrors(np.array([1.0, 0.2, 0.5]), np.array([2.0, 0.1, 3.0])))[0] == 0.2


def test_m1_hand_cases():
    assert m1([1.0, 3.0], 1.0) == 1.5
    assert m1([0.8], 0.8) == 0.0
    e = 0.37
    assert m1([e] * 5, e) == pytest.approx(e * 4 / 5)


def test_m2_hand_cases():
    assert m2([1.0, 3.0], [0.75, 0.25]) == 0.75
    assert m2([0.4], [1.0]) == 0.0
    with pytest.raises(ValueError):
        m2([1.0, 2.0], None)


def test_selection_rules():
    errs = ModeErrors(np.array([0.5, 0.2]), np.array([0.9, 0.3]), np.array([0.1, 0.9]))
    assert select_best_mode(errs, "p_max") == (1, 0.2)
    assert select_best_mode(errs, "oracle") == (1, 0.2)
    tie = ModeErrors(np.array([0.5, 0.2]), np.array([0.9, 0.3]), np.array([0.5, 0.5]))
    assert select_best_mode(tie, "p_max")[0] == 0
    mean = ModeErrors(np.array([0.5, 0.2]), np.array([0.9, 0.3]), mean_ade=0.33, mean_fde=0.4)
    assert select_best_mode(mean, "mean") == (-1, 0.33)
    with pytest.raises(ValueError):
        select_best_mode(errs, "median")


def brute_m1(e, e_hat):
    total = 0.0
    for x in e:
        total += x / len(e)
    return total - e_hat / len(e)


def brute_m2(e, p):
    top = 0
    for i in range(len(p)):
        if p[i] > p[top]:
            top = i
    return sum(p[i] * e[i] for i in range(len(e))) - p[top] * e[top]


def test_metric_oracles_on_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        M = int(rng.integers(1, 21))
        e = rng.uniform(0, 5, M)
        p = rng.dirichlet(np.ones(M))
        errs = ModeErrors(e, rng.uniform(0, 8, M), p)
        assert min_metrics(errs)[0] == min(e)
        i_p = max(range(M), key=lambda i: (p[i], -i))
        e_hat = e[i_p]
        assert abs(m1(e, e_hat) - brute_m1(e, e_hat)) < 1e-9
        assert abs(m2(e, p) - brute_m2(e, p)) < 1e-9
        if M == 1:
            assert m1(e, e_hat) == 0.0 and m2(e, p) == 0.0


@given(st.lists(st.floats(0, 100), min_size=1, max_size=20))
def test_m1_nonnegative_for_oracle_selection(e):
    # the oracle choice is the minimum, so removing it leaves a nonnegative average
    assert m1(e, min(e)) >= -1e-12


def test_mode_errors_from_trajectories(rng):
    modes, gt = rng.standard_normal((3, 12, 2)), rng.standard_normal((12, 2))
    errs = ModeErrors.from_trajectories(modes, gt)
    assert np.allclose(errs.ade, [ade(m, gt) for m in modes])
    assert np.allclose(errs.fde, [fde(m, gt) for m in modes])


# -- aggregation ------------------------------------------------------------
def test_perfect_prediction_all_zero():
    gt = np.random.default_rng(0).standard_normal((12, 2))
    errs = ModeErrors.from_trajectories(np.stack([gt, gt, gt]), gt, np.array([0.2, 0.5, 0.3]))
    rep = aggregate([agent_metrics(errs, "p_max")], "p_max")
    assert all(v == 0.0 for k, v in rep.as_dict().items() if k not in ("n_agents", "best_mode_rule"))


def test_dataset_average_over_agents():
    rows = [agent_metrics(ModeErrors(np.array([a]), np.array([a]), np.array([1.0])), "p_max") for a in (0.2, 0.4)]
    assert aggregate(rows, "p_max").ade == pytest.approx(0.3)


def test_aggregate_is_order_independent(rng):
    rows = [agent_metrics(ModeErrors(rng.uniform(0, 3, 4), rng.uniform(0, 3, 4), rng.dirichlet(np.ones(4))),
                          "p_max") for _ in range(50)]
    a = aggregate(rows, "p_max")
    b = aggregate(rows[::-1], "p_max")
    assert a == b


def test_aggregate_empty():
    with pytest.raises(ValueError):
        aggregate([], "oracle")


def test_report_csv_and_table():
    rep = aggregate([agent_metrics(ModeErrors(np.array([0.1, 0.3]), np.array([0.2, 0.6]), np.array([0.4, 0.6])),
                                   "p_max")], "p_max")
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0][:4] == ["ade", "fde", "ade_min", "fde_min"]
    assert float(rows[1][0]) == rep.ade == 0.3
    assert "ADE_min" in rep.table()


# -- prediction dumps -------------------------------------------------------
def random_case(rng, n_scenes=4, M=3):
    scenes, rows = [], []
    for sid in range(n_scenes):
        K = int(rng.integers(1, 4))
        scene = Scene(sid, [10 + k for k in range(K)], rng.normal(0, 3, (K, 20, 2)))
        pos = rng.normal(0, 3, (M, 12, 2, K))
        probs = rng.dirichlet(np.ones(M), size=K).T
        scenes.append(scene)
        rows.extend(dump_rows(sid, scene.agent_ids, pos, probs))
    return scenes, rows


def reference_evaluator(text, scenes, rule):
    """Single pass over the CSV text, independent of the library reader."""
    table = {}
    for line in text.splitlines()[1:]:
        sid, aid, mode, prob, t, x, y = line.split(",")
        entry = table.setdefault((int(sid), int(aid)), {})
        entry.setdefault(int(mode), [float(prob), {}])[1][int(t)] = (float(x), float(y))
    sums = {"ade": 0.0, "ade_min": 0.0, "m1_ade": 0.0, "m2_ade": 0.0}
    n = 0
    for scene in scenes:
        for k, aid in enumerate(scene.agent_ids):
            modes = table[(scene.scene_id, aid)]
            errs, probs = [], []
            for m in sorted(modes):
                p, steps = modes[m]
                d = [math.hypot(steps[t][0] - scene.future[k, t - 1, 0], steps[t][1] - scene.future[k, t - 1, 1])
                     for t in sorted(steps)]
                errs.append(sum(d) / len(d))
                probs.append(p)
            top = probs.index(max(probs))
            e_hat = errs[top] if rule == "p_max" else min(errs)
            sums["ade"] += e_hat
            sums["ade_min"] += min(errs)
            sums["m1_ade"] += (sum(errs) - e_hat) / len(errs)
            sums["m2_ade"] += sum(p * e for p, e in zip(probs, errs)) - probs[top] * errs[top]
            n += 1
    return {k: v / n for k, v in sums.items()}


@pytest.mark.parametrize("rule", ["p_max", "oracle"])
def test_evaluate_dataset_matches_reference(rule):
    rng = np.random.default_rng(11)
    scenes, rows = random_case(rng)
    buf = io.StringIO()
    write_dump(rows, buf)
    text = buf.getvalue()
    rep = evaluate_dataset(read_dump(io.StringIO(text)), scenes, rule)
    ref = reference_evaluator(text, scenes, rule)
    for key, val in ref.items():
        assert getattr(rep, key) == pytest.approx(val, abs=1e-12), key


def test_dump_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    pos = rng.normal(0, 1e3, (2, 12, 2, 2))
    probs = np.array([[0.3, 0.9], [0.7, 0.1]])
    path = tmp_path / "d.csv"
    write_dump(dump_rows(7, [4, 5], pos, probs), path)
    assert path.read_text().splitlines()[0] == ",".join(DUMP_HEADER)
    dump = read_dump(path)
    assert np.array_equal(dump[(7, 5)].positions, pos[:, :, :, 1])
    assert np.array_equal(dump[(7, 4)].probs, probs[:, 0])


def test_dump_evaluated_twice_identical(tmp_path):
    scenes, rows = random_case(np.random.default_rng(5))
    path = tmp_path / "d.csv"
    write_dump(rows, path)
    assert evaluate_dataset(read_dump(path), scenes) == evaluate_dataset(read_dump(path), scenes)


@pytest.mark.parametrize("text, match", [
    ("a,b\n", "header"),
    (",".join(DUMP_HEADER) + "\n1,1,1,0.5,1,x,0\n", "malformed"),
    (",".join(DUMP_HEADER) + "\n1,1,2,0.5,1,0,0\n", "modes"),
    (",".join(DUMP_HEADER) + "\n1,1,1,0.5,2,0,0\n", "time steps"),
])
def test_dump_errors(text, match):
    with pytest.raises(DumpError, match=match):
        read_dump(io.StringIO(text))


def test_missing_prediction_is_an_error():
    scenes, rows = random_case(np.random.default_rng(1), n_scenes=2)
    dump = read_dump(io.StringIO("\n".join([",".join(DUMP_HEADER)] + [",".join(map(repr, r)) for r in rows
                                                                       if r[0] == 0])))
    with pytest.raises(DumpError, match="missing"):
        evaluate_dataset(dump, scenes)
