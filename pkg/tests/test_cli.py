import csv
import json

import numpy as np
import pytest
import yaml

from reachrl.chain import default_chain, forward_kinematics
from reachrl.cli import ROLLOUT_HEADER, main
from reachrl.config import default_config
from reachrl.percept import TargetPipeline, camera_pose, mount_from_doc, write_detections, write_pgm16, DetectionBox


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", "--out", str(out), "--total-steps", "4096", "--seed", "1"]) == 0
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def write_config(path, override):
    path.write_text(yaml.safe_dump(override))
    return str(path)


def test_train_outputs(trained):
    rows = read_csv(trained / "trainlog.csv")
    assert len(rows) == 3 and rows[1][:2] == ["1", "2048"]
    assert (trained / "policy.ckpt").exists()


def test_train_is_reproducible(trained, tmp_path):
    assert main(["train", "--out", str(tmp_path), "--total-steps", "4096", "--seed", "1"]) == 0
    assert (tmp_path / "trainlog.csv").read_bytes() == (trained / "trainlog.csv").read_bytes()
    assert (tmp_path / "policy.ckpt").read_bytes() == (trained / "policy.ckpt").read_bytes()


def test_missing_config_leaves_nothing(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tmp_path / "nope.yaml"), "--out", str(out)]) == 1
    assert not out.exists()
    assert "error" in capsys.readouterr().err


def test_bad_config_value(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", {"ppo": {"gamma": 3.0}})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "run")]) == 1
    assert not (tmp_path / "run").exists()


def test_usage_errors_exit_one():
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["eval"])
    assert exc.value.code == 1


def test_eval(trained, tmp_path):
    args = ["eval", "--checkpoint", str(trained / "policy.ckpt"), "--episodes", "3", "--seed", "4"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = json.loads((tmp_path / "a" / "eval.json").read_text())
    assert a == json.loads((tmp_path / "b" / "eval.json").read_text())
    assert a["episodes"] == 3 and 0.0 <= a["success_rate"] <= 1.0


def test_eval_rejects_zero_episodes(trained, tmp_path):
    assert main(["eval", "--checkpoint", str(trained / "policy.ckpt"), "--episodes", "0",
                 "--out", str(tmp_path)]) == 1
    assert not (tmp_path / "eval.json").exists()


def test_eval_missing_checkpoint_is_runtime_failure(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "x.ckpt"), "--out", str(tmp_path)]) == 2


def test_rollout_fixed_target(trained, tmp_path):
    assert main(["rollout", "--checkpoint", str(trained / "policy.ckpt"), "--target", "0.3", "-0.2", "0.6",
                 "--steps", "250", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "rollout.csv")
    assert tuple(rows[0]) == ROLLOUT_HEADER
    assert len(rows) - 1 == 250
    assert [float(v) for v in rows[1][10:13]] == [0.3, -0.2, 0.6]


def test_rollout_needs_one_target_source(trained, tmp_path):
    ckpt = str(trained / "policy.ckpt")
    assert main(["rollout", "--checkpoint", ckpt, "--out", str(tmp_path)]) == 1
    assert main(["rollout", "--checkpoint", ckpt, "--target", "1", "0", "1", "--detections", "d.csv",
                 "--out", str(tmp_path)]) == 1


def make_frames(tmp_path, depths, boxes):
    frames = tmp_path / "depth"
    frames.mkdir()
    for fid, depth in depths.items():
        write_pgm16(frames / f"{fid}.pgm", np.full((480, 640), depth, dtype=np.uint16))
    write_detections(tmp_path / "det.csv", boxes)
    return frames, tmp_path / "det.csv"


def test_rollout_percept_single_frame(trained, tmp_path):
    box = DetectionBox("hand", 300, 180, 340, 300, 0.9, 0)
    frames, det = make_frames(tmp_path, {0: 700}, [box])
    out = tmp_path / "out"
    assert main(["rollout", "--checkpoint", str(trained / "policy.ckpt"), "--depth-dir", str(frames),
                 "--detections", str(det), "--steps", "20", "--seed", "3", "--out", str(out)]) == 0

    doc = default_config()
    chain = default_chain()
    pipe = TargetPipeline.from_config(doc, np.random.default_rng(3))
    depth = np.full((480, 640), 700, dtype=np.uint16)
    expected = pipe.process(0, depth, [box], camera_pose(chain, np.zeros(6), mount_from_doc(doc)))
    targets = read_csv(out / "targets.csv")
    assert len(targets) == 2
    assert np.array_equal([float(v) for v in targets[1][2:5]], expected.point_base)
    rows = read_csv(out / "rollout.csv")
    assert np.array_equal([float(v) for v in rows[1][10:13]], expected.point_base)


def test_rollout_percept_never_publishes(trained, tmp_path):
    frames, det = make_frames(tmp_path, {0: 700}, [DetectionBox("hand", 300, 230, 340, 250, 0.9, 0)])
    out = tmp_path / "out"
    assert main(["rollout", "--checkpoint", str(trained / "policy.ckpt"), "--depth-dir", str(frames),
                 "--detections", str(det), "--out", str(out)]) == 2
    assert not (out / "rollout.csv").exists()


def ik_check(tmp_path, args, override=None):
    cmd = ["ik-check", "--out", str(tmp_path)] + args
    if override is not None:
        cmd += ["--config", write_config(tmp_path / "c.yaml", override)]
    assert main(cmd) == 0
    return json.loads((tmp_path / "ik_check.json").read_text())


def test_ik_check_default_ranges(tmp_path):
    frac = ik_check(tmp_path, ["--n-targets", "1000"])["reachable_fraction"]
    assert 0.0 < frac < 1.0


def test_ik_check_point_range(tmp_path):
    q = np.zeros(6)
    q[1], q[3] = -0.6, 0.4
    p = forward_kinematics(default_chain(), q)["right_hand"].translation
    ranges = {axis: [float(v), float(v)] for axis, v in zip("xyz", p)}
    report = ik_check(tmp_path, ["--n-targets", "20"],
                      {"env": {"target_ranges": ranges, "target_offset": [0, 0, 0]}})
    assert report["reachable_fraction"] == 1.0


def test_ik_check_out_of_reach(tmp_path):
    report = ik_check(tmp_path, ["--n-targets", "20"], {"env": {"target_ranges": {"x": [10, 10]}}})
    assert report["reachable_fraction"] == 0.0


def test_export(trained, tmp_path):
    assert main(["export", "--trainlog", str(trained / "trainlog.csv"), "--out", str(tmp_path)]) == 0
    for name in ("disc_return.csv", "final_dist.csv"):
        rows = read_csv(tmp_path / name)
        assert len(rows) == 3 and [r[0] for r in rows[1:]] == ["2048", "4096"]


def test_export_empty_log(trained, tmp_path):
    header = (trained / "trainlog.csv").read_text().splitlines()[0]
    (tmp_path / "empty.csv").write_text(header + "\n")
    assert main(["export", "--trainlog", str(tmp_path / "empty.csv"), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()
