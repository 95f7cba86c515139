import json

import pytest

from atomsmc.cli import dispatch

FC_CFG = {
    "model": "finite_chain",
    "transition": [[0.3, 0.4, 0.3], [0.2, 0.5, 0.3], [0.25, 0.25, 0.5]],
    "atom": 0,
}
LG_CFG = {"model": "linear_gaussian", "observations": {"simulate": {"seed": 5, "n": 5}}}


@pytest.fixture
def fc_model(tmp_path):
    p = tmp_path / "fc.json"
    p.write_text(json.dumps(FC_CFG))
    return str(p)


@pytest.fixture
def lg_model(tmp_path):
    p = tmp_path / "lg.json"
    p.write_text(json.dumps(LG_CFG))
    return str(p)


def _strip_wall_time(text):
    lines = []
    for line in text.splitlines():
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            lines.append(line)
            continue
        rec.pop("wall_time_ms", None)
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines)


class TestExitCodes:
    def test_missing_seed_is_config_error(self, capsys):
        assert dispatch(["bench-factory", "--beta", "0.4", "--eps", "0.2", "--p", "0.5"]) == 2

    def test_unknown_subcommand(self, capsys):
        assert dispatch(["frobnicate", "--seed", "1"]) == 2

    def test_help_exits_zero(self, capsys):
        assert dispatch(["--help"]) == 0

    def test_missing_model_file(self, tmp_path, capsys):
        code = dispatch(
            ["smc", "--seed", "1", "--model", str(tmp_path / "nope.json"),
             "--particles", "8"]
        )
        assert code == 2

    def test_bad_model_kind(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"model": "finite_chain", "transition": [[1.0]]}))
        # a kernel model cannot serve as a path-measure model
        assert dispatch(["smc", "--seed", "1", "--model", str(p), "--particles", "8"]) == 2

    def test_diagnostic_failure_exit(self, tmp_path, capsys):
        p = tmp_path / "fc.json"
        p.write_text(json.dumps(FC_CFG))
        # beta far above the true minimum atom probability: budget exhausts
        code = dispatch(
            ["diagnose", "--seed", "3", "--model", str(p), "--beta", "0.9",
             "--budget", "2000", "--pilot-steps", "20",
             "--out", str(tmp_path / "d.jsonl")]
        )
        assert code == 5


class TestOutputs:
    def test_bench_factory_csv(self, tmp_path):
        out = tmp_path / "bench.csv"
        code = dispatch(
            ["bench-factory", "--seed", "1", "--beta", "0.4", "--eps", "0.2",
             "--p", "0.5", "--reps", "2000", "--out", str(out)]
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("# config_hash=")
        assert lines[1] == "beta,eps,p,reps,mean_output,mean_subcoin_flips,mean_raw_flips,se"
        fields = lines[2].split(",")
        assert len(fields) == 8
        assert abs(float(fields[4]) - 0.4) < 0.05  # eps/p = 0.2/0.5

    def test_sample_jsonl(self, tmp_path, fc_model):
        out = tmp_path / "s.jsonl"
        code = dispatch(
            ["sample", "--seed", "2", "--model", fc_model, "--beta", "0.25",
             "--eps", "0.1", "--n-samples", "20", "--out", str(out)]
        )
        assert code == 0
        recs = [json.loads(l) for l in out.read_text().splitlines()]
        assert recs[0]["header"] and recs[0]["subcommand"] == "sample"
        assert len(recs) == 21
        for r in recs[1:]:
            assert r["sample"] in (0, 1, 2)
            assert r["algorithm"] == "imputation"
            assert r["cost"]["kernel_draws"] >= 1

    def test_smc_and_tours_jsonl(self, tmp_path, fc_model, lg_model):
        out1 = tmp_path / "smc.jsonl"
        assert dispatch(
            ["smc", "--seed", "4", "--model", lg_model, "--particles", "32",
             "--reps", "5", "--out", str(out1)]
        ) == 0
        recs = [json.loads(l) for l in out1.read_text().splitlines()]
        assert len(recs) == 6 and all("log_nc" in r for r in recs[1:])

        out2 = tmp_path / "tours.jsonl"
        assert dispatch(
            ["tours", "--seed", "4", "--model", fc_model, "--n-tours", "50",
             "--workers", "2", "--out", str(out2)]
        ) == 0
        recs = [json.loads(l) for l in out2.read_text().splitlines()]
        summary = recs[-1]
        assert summary["summary"] and summary["n_failed"] == 0
        assert abs(sum(summary["occupancy"]) - 1.0) < 1e-9

    def test_reproduce_passes(self, tmp_path):
        out = tmp_path / "r.jsonl"
        assert dispatch(
            ["reproduce", "--seed", "1", "--experiment", "bounds", "--out", str(out)]
        ) == 0
        recs = [json.loads(l) for l in out.read_text().splitlines()]
        assert all(r["verdict"] == "PASS" for r in recs[1:])


class TestReproducibility:
    def _run_twice(self, argv, tmp_path):
        # same argv both times, so the config hash in the header matches too
        out = tmp_path / "run.out"
        assert dispatch(argv + ["--out", str(out)]) == 0
        first = out.read_text()
        assert dispatch(argv + ["--out", str(out)]) == 0
        return first, out.read_text()

    def test_sample_byte_identical_modulo_wall_time(self, tmp_path, fc_model):
        x, y = self._run_twice(
            ["sample", "--seed", "9", "--model", fc_model, "--beta", "0.25",
             "--eps", "0.1", "--n-samples", "30"],
            tmp_path,
        )
        assert _strip_wall_time(x) == _strip_wall_time(y)

    def test_bench_byte_identical(self, tmp_path):
        x, y = self._run_twice(
            ["bench-factory", "--seed", "9", "--beta", "0.4", "--eps", "0.2",
             "--p", "0.5", "--reps", "1000"],
            tmp_path,
        )
        assert x == y  # no wall-time fields in the CSV at all

    def test_config_hash_tracks_output_path_only(self, tmp_path, fc_model):
        # different --out paths still yield identical records apart from the
        # header's config hash, which covers the full argv
        a, b = tmp_path / "c1.jsonl", tmp_path / "c2.jsonl"
        argv = ["tours", "--seed", "5", "--model", fc_model, "--n-tours", "10"]
        assert dispatch(argv + ["--out", str(a)]) == 0
        assert dispatch(argv + ["--out", str(b)]) == 0
        ra = [json.loads(l) for l in a.read_text().splitlines()]
        rb = [json.loads(l) for l in b.read_text().splitlines()]
        assert ra[1:] == rb[1:]
        assert ra[0]["config_hash"] != rb[0]["config_hash"]

    def test_different_seed_changes_records(self, tmp_path, fc_model):
        a, b = tmp_path / "s1.jsonl", tmp_path / "s2.jsonl"
        base = ["sample", "--model", fc_model, "--beta", "0.25", "--eps", "0.1",
                "--n-samples", "30"]
        assert dispatch(base + ["--seed", "1", "--out", str(a)]) == 0
        assert dispatch(base + ["--seed", "2", "--out", str(b)]) == 0
        sa = [json.loads(l)["sample"] for l in a.read_text().splitlines()[1:]]
        sb = [json.loads(l)["sample"] for l in b.read_text().splitlines()[1:]]
        assert sa != sb
