import numpy as np
import pytest

from signrec.cli import main, read_config
from signrec.pathenc import build_table, type_id
from signrec.spectral import load_spectrum
from signrec.synthetic import signed_communities
from signrec.train import load_checkpoint

SMALL = ["--d", "8", "--layers", "2", "--path-length", "2", "--batch-size", "256"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_raw(path, seed=0, n=60, m=40):
    with open(path, "w") as fh:
        fh.write("user,item,rating\n")
        for u, i, s in signed_communities(n, m, seed=seed):
            fh.write(f"u{u},i{i},{5 if s else 1}\n")
    return path


@pytest.fixture
def prepared(tmp_path, capsys):
    raw = write_raw(tmp_path / "raw.csv")
    assert run(capsys, "prepare", raw, "--out", tmp_path / "ds", "--k-core", 3)[0] == 0
    assert run(capsys, "spectrum", tmp_path / "ds", "--out", tmp_path / "spec.bin", "--alpha", -0.2, "--d-h", 8)[0] == 0
    return tmp_path


@pytest.fixture
def trained(prepared, capsys):
    code, out, _ = run(
        capsys, "train", prepared / "ds", "--spectrum", prepared / "spec.bin", "--out", prepared / "m.sigf",
        "--epochs", 4, *SMALL,
    )
    assert code == 0
    return prepared, out


def write_toy(directory):
    """Users a and d like X0, X1; b likes X0, X1, X2; c likes X3, X4 and dislikes X0, X5."""
    directory.mkdir()
    train = [(0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 1, 1), (1, 2, 1), (2, 3, 1), (2, 4, 1), (2, 0, 0), (3, 0, 1), (3, 1, 1), (2, 5, 0)]
    rows = [(r, "train") for r in train] + [((3, 2, 1), "val"), ((1, 4, 1), "test")]
    with open(directory / "dataset.tsv", "w") as fh:
        fh.write("user\titem\tsign\tsplit\n")
        for (u, i, s), name in rows:
            fh.write(f"{u}\t{i}\t{s}\t{name}\n")
    (directory / "users.map").write_text("".join(f"{k}\t{j}\n" for j, k in enumerate("abcd")))
    (directory / "items.map").write_text("".join(f"X{j}\t{j}\n" for j in range(6)))


class TestPrepare:
    def test_stats_and_files(self, tmp_path, capsys):
        raw = write_raw(tmp_path / "raw.csv")
        code, out, _ = run(capsys, "prepare", raw, "--out", tmp_path / "ds", "--k-core", 3)
        assert code == 0
        stats = dict(line.split("\t") for line in out.splitlines())
        assert (stats["users"], stats["items"], stats["interactions"]) == ("60", "40", "840")
        assert int(stats["train"]) + int(stats["val"]) + int(stats["test"]) == 840
        lines = (tmp_path / "ds" / "dataset.tsv").read_text().splitlines()
        assert lines[0] == "user\titem\tsign\tsplit" and len(lines) == 841
        assert len((tmp_path / "ds" / "users.map").read_text().splitlines()) == 60

    def test_rerun_is_byte_identical(self, tmp_path, capsys):
        raw = write_raw(tmp_path / "raw.csv")
        for out in ("a", "b"):
            assert run(capsys, "--seed", 4, "prepare", raw, "--out", tmp_path / out, "--k-core", 3)[0] == 0
        for name in ("dataset.tsv", "users.map", "items.map"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        run(capsys, "--seed", 5, "prepare", raw, "--out", tmp_path / "c", "--k-core", 3)
        assert (tmp_path / "a" / "dataset.tsv").read_bytes() != (tmp_path / "c" / "dataset.tsv").read_bytes()

    def test_missing_column_mapping(self, tmp_path, capsys):
        raw = tmp_path / "raw.csv"
        raw.write_text("uid,product,stars\nu1,i1,5\n")
        code, _, err = run(capsys, "prepare", raw, "--out", tmp_path / "ds")
        assert code == 2 and "--user-col" in err

    def test_headerless_with_indices(self, tmp_path, capsys):
        raw = tmp_path / "raw.tsv"
        rows = signed_communities(30, 20, seed=1)
        raw.write_text("".join(f"{i}\tx{u}\t{4.0 if s else 2.0}\t123\n" for u, i, s in rows))
        code, out, _ = run(
            capsys, "prepare", raw, "--out", tmp_path / "ds", "--no-header",
            "--user-col", 1, "--item-col", 0, "--signal-col", 2, "--k-core", 2, "--rule", "pos>3",
        )
        assert code == 0
        assert "users\t30" in out

    def test_unreadable_input(self, tmp_path, capsys):
        assert run(capsys, "prepare", tmp_path / "absent.csv", "--out", tmp_path / "ds")[0] == 3

    def test_kcore_wipes_everything(self, tmp_path, capsys):
        raw = tmp_path / "raw.csv"
        raw.write_text("user,item,rating\nu1,i1,5\nu2,i2,1\n")
        assert run(capsys, "prepare", raw, "--out", tmp_path / "ds")[0] == 3

    def test_config_file_and_override(self, tmp_path, capsys):
        raw = write_raw(tmp_path / "raw.csv")
        conf = tmp_path / "run.conf"
        conf.write_text(f"# prepare settings\nraw = {raw}\nout = {tmp_path / 'ds'}\nk_core = 3\nratios = 0.5, 0.25, 0.25\n")
        code, out, _ = run(capsys, "prepare", "--config", conf, "--ratios", "0.8,0.1,0.1")
        assert code == 0
        assert "train\t672" in out
        conf.write_text("bogus = 1\n")
        assert run(capsys, "prepare", raw, "--config", conf)[0] == 2


class TestSpectrum:
    def test_connected_positive_graph_ground_state(self, tmp_path, capsys):
        ds = tmp_path / "ds"
        ds.mkdir()
        rows = [(u, i) for u in range(4) for i in range(3) if (u + i) % 4]
        ds.joinpath("dataset.tsv").write_text(
            "user\titem\tsign\tsplit\n" + "".join(f"{u}\t{i}\t1\ttrain\n" for u, i in rows)
        )
        assert run(capsys, "spectrum", ds, "--out", tmp_path / "s.bin", "--alpha", 0, "--d-h", 2)[0] == 0
        basis, alpha = load_spectrum(tmp_path / "s.bin")
        assert alpha == 0.0 and abs(basis.values[0]) < 1e-10

    def test_cache_hit_and_force(self, prepared, capsys):
        spec = prepared / "spec.bin"
        before = spec.stat().st_mtime_ns
        code, out, _ = run(capsys, "spectrum", prepared / "ds", "--out", spec, "--alpha", -0.2, "--d-h", 8)
        assert code == 0 and out.startswith("cache hit") and spec.stat().st_mtime_ns == before
        code, out, _ = run(capsys, "spectrum", prepared / "ds", "--out", spec, "--alpha", -0.2, "--d-h", 8, "--force")
        assert code == 0 and out.startswith("wrote")
        code, out, _ = run(capsys, "spectrum", prepared / "ds", "--out", spec, "--alpha", 0.1, "--d-h", 8)
        assert out.startswith("wrote") and load_spectrum(spec)[1] == 0.1

    @pytest.mark.parametrize("alpha", ["1.0", "-1", "2.5"])
    def test_alpha_out_of_range(self, prepared, capsys, alpha):
        assert run(capsys, "spectrum", prepared / "ds", "--out", prepared / "x.bin", "--alpha", alpha)[0] == 2

    def test_clamps_dimension(self, prepared, capsys, caplog):
        code, _, _ = run(capsys, "spectrum", prepared / "ds", "--out", prepared / "big.bin", "--alpha", 0, "--d-h", 500)
        assert code == 0 and "clamping" in caplog.text
        assert load_spectrum(prepared / "big.bin")[0].d_h == 100


class TestTrain:
    def test_outputs(self, trained):
        tmp, out = trained
        params, header = load_checkpoint(tmp / "m.sigf")
        assert (header.n, header.m, header.d, header.layers, header.d_h, header.path_length) == (60, 40, 8, 2, 8, 2)
        assert (header.alpha, header.beta, header.num_types) == (-0.2, 0.1, 6)
        log = (tmp / "m.sigf.log.tsv").read_text().splitlines()
        assert log[0] == "epoch\tloss\tval_recall@20\tval_ndcg@20\tseconds"
        assert [row.split("\t")[0] for row in log[1:]] == ["0", "1", "2", "3", "final-val", "final-test"]
        assert read_config(tmp / "m.sigf.conf")["seed"] == "0"

    def test_checkpoint_is_byte_stable(self, trained, capsys):
        tmp, _ = trained
        args = ["train", tmp / "ds", "--spectrum", tmp / "spec.bin", "--out", tmp / "again.sigf", "--epochs", 4, *SMALL]
        assert run(capsys, *args)[0] == 0
        assert (tmp / "m.sigf").read_bytes() == (tmp / "again.sigf").read_bytes()

    def test_zero_epochs_writes_initial_params(self, prepared, capsys):
        code, _, _ = run(
            capsys, "train", prepared / "ds", "--spectrum", prepared / "spec.bin", "--out", prepared / "init.sigf",
            "--epochs", 0, *SMALL,
        )
        assert code == 0
        params, _ = load_checkpoint(prepared / "init.sigf")
        assert not params.phi.any()
        np.testing.assert_allclose(params.theta().numpy(), 1.0, atol=1e-15)

    def test_alpha_mismatch(self, prepared, capsys):
        code, _, err = run(
            capsys, "train", prepared / "ds", "--spectrum", prepared / "spec.bin", "--out", prepared / "x.sigf",
            "--alpha", 0.3, "--epochs", 1,
        )
        assert code == 2 and "alpha" in err

    def test_spectrum_for_other_graph(self, prepared, tmp_path, capsys):
        raw = write_raw(tmp_path / "other.csv", seed=3, n=30, m=20)
        run(capsys, "prepare", raw, "--out", tmp_path / "other", "--k-core", 2)
        code, _, _ = run(capsys, "train", tmp_path / "other", "--spectrum", prepared / "spec.bin", "--out", tmp_path / "x.sigf")
        assert code == 3

    def test_missing_spectrum(self, prepared, capsys):
        assert run(capsys, "train", prepared / "ds", "--out", prepared / "x.sigf")[0] == 2


class TestEvaluate:
    def test_matches_training_log(self, trained, capsys):
        tmp, train_out = trained
        final = {row.split("\t")[0]: row.split("\t") for row in (tmp / "m.sigf.log.tsv").read_text().splitlines()}
        for part in ("val", "test"):
            code, out, _ = run(capsys, "evaluate", tmp / "m.sigf", tmp / "ds", "--split", part)
            assert code == 0
            metrics = dict(line.split("\t") for line in out.splitlines())
            assert metrics["recall@20"] == final[f"final-{part}"][2]
            assert metrics["ndcg@20"] == final[f"final-{part}"][3]
            assert f"{part}\trecall@20\t{metrics['recall@20']}" in train_out
        assert (tmp / "m.sigf.test.tsv").read_text().startswith("metric\tvalue\nrecall@20\t")

    def test_k_flag(self, trained, capsys):
        tmp, _ = trained
        out = run(capsys, "evaluate", tmp / "m.sigf", tmp / "ds", "--k", 5)[1]
        assert out.splitlines()[0].startswith("recall@5\t")

    def test_bad_magic(self, trained, capsys):
        tmp, _ = trained
        blob = (tmp / "m.sigf").read_bytes()
        (tmp / "bad.sigf").write_bytes(b"SIGX" + blob[4:])
        assert run(capsys, "evaluate", tmp / "bad.sigf", tmp / "ds", "--spectrum", tmp / "spec.bin")[0] == 3


class TestInspect:
    def test_untrained_phi(self, prepared, capsys):
        run(
            capsys, "train", prepared / "ds", "--spectrum", prepared / "spec.bin", "--out", prepared / "init.sigf",
            "--epochs", 0, *SMALL,
        )
        code, out, _ = run(capsys, "inspect", prepared / "init.sigf", "--phi", "--layer", 1)
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "layer\tpath\tphi"
        assert lines[1:] == [f"1\t{s}\t0.0" for s in build_table(2).strings()]

    def test_top_and_bottom(self, trained, capsys):
        tmp, _ = trained
        out = run(capsys, "inspect", tmp / "m.sigf", "--phi", "--layer", 0, "--top", 5)[1]
        rows = [line.split("\t") for line in out.splitlines()[1:]]
        assert len(rows) == 5
        values = [float(r[2]) for r in rows]
        assert values == sorted(values, reverse=True)
        params, _ = load_checkpoint(tmp / "m.sigf")
        table = build_table(2)
        for _, sign, value in rows:
            assert params.phi[0, type_id(sign, table)].item() == float(value)
        both = run(capsys, "inspect", tmp / "m.sigf", "--phi", "--layer", 0, "--top", 2, "--bottom", 2)[1].splitlines()
        assert len(both) == 5

    def test_all_layers_and_theta(self, trained, capsys):
        tmp, _ = trained
        assert len(run(capsys, "inspect", tmp / "m.sigf", "--phi")[1].splitlines()) == 1 + 2 * 6
        out = run(capsys, "inspect", tmp / "m.sigf", "--theta")[1].splitlines()
        params, _ = load_checkpoint(tmp / "m.sigf")
        assert out[0] == "layer\ttheta"
        assert [float(line.split("\t")[1]) for line in out[1:]] == params.theta().tolist()

    def test_bad_layer(self, trained, capsys):
        tmp, _ = trained
        assert run(capsys, "inspect", tmp / "m.sigf", "--phi", "--layer", 7)[0] == 2


class TestRecommend:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_neighbor_of_neighbor_ranks_first(self, tmp_path, capsys, seed):
        write_toy(tmp_path / "toy")
        run(capsys, "spectrum", tmp_path / "toy", "--out", tmp_path / "s.bin", "--alpha", 0.0, "--d-h", 4)
        code, _, _ = run(
            capsys, "--seed", seed, "train", tmp_path / "toy", "--spectrum", tmp_path / "s.bin", "--out", tmp_path / "m.sigf",
            "--epochs", 60, "--patience", 60, "--d", 4, "--layers", 2, "--path-length", 2, "--k", 1, "--lr", 0.05,
        )
        assert code == 0
        code, out, _ = run(capsys, "recommend", tmp_path / "m.sigf", tmp_path / "toy", "--user", "a", "--k", 3)
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "rank\titem\tscore"
        rows = [line.split("\t") for line in lines[1:]]
        assert rows[0][:2] == ["1", "X2"]
        assert [r[0] for r in rows] == ["1", "2", "3"]
        assert not {"X0", "X1"} & {r[1] for r in rows}
        scores = [float(r[2]) for r in rows]
        assert scores == sorted(scores, reverse=True)

    def test_unknown_user(self, trained, capsys):
        tmp, _ = trained
        code, _, err = run(capsys, "recommend", tmp / "m.sigf", tmp / "ds", "--user", "nobody")
        assert code == 2 and "nobody" in err


def test_usage_errors_exit_2(capsys):
    assert main([]) == 2
    assert main(["inspect", "x.sigf"]) == 2
    assert main(["frobnicate"]) == 2


def test_pipeline_is_deterministic(tmp_path, capsys):
    raw = write_raw(tmp_path / "raw.csv", seed=2)
    reports = []
    for run_dir in ("one", "two"):
        d = tmp_path / run_dir
        assert run(capsys, "prepare", raw, "--out", d / "ds", "--k-core", 3)[0] == 0
        assert run(capsys, "spectrum", d / "ds", "--out", d / "spec.bin", "--alpha", 0.2, "--d-h", 6)[0] == 0
        assert run(capsys, "train", d / "ds", "--spectrum", d / "spec.bin", "--out", d / "m.sigf", "--epochs", 3, *SMALL)[0] == 0
        reports.append(run(capsys, "evaluate", d / "m.sigf", d / "ds")[1])
    assert reports[0] == reports[1]
