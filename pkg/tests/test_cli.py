import json
from types import SimpleNamespace

import numpy as np
import pytest

from cdskit import cli, fixtures, metrics
from cdskit.core_graph import (read_matrix_binary, read_matrix_text,
                               write_matrix_text)


def write_g8(tmp_path):
    path = tmp_path / "g8.txt"
    write_matrix_text(path, fixtures.g8_affinity())
    return str(path)


def run(args):
    return cli.main(args)


def load(path):
    with open(path) as fh:
        return json.load(fh)


def supports(payload):
    return [frozenset(c["support"]) for c in payload["clusters"]]


def test_cluster_unconstrained_enumerates_both_triangles(tmp_path):
    aff = write_g8(tmp_path)
    out = tmp_path / "out.json"
    assert run(["cluster", "--affinity", aff, "--mode", "enumerate",
                "--starts", "16", "--out", str(out)]) == cli.EXIT_OK
    assert set(supports(load(out))) == {frozenset({4, 5, 7}),
                                        frozenset({4, 6, 7})}


def test_cluster_single_constraint(tmp_path):
    aff = write_g8(tmp_path)
    out = tmp_path / "out.json"
    assert run(["cluster", "--affinity", aff, "--constraints", "1",
                "--out", str(out)]) == cli.EXIT_OK
    payload = load(out)
    assert supports(payload) == [frozenset({0, 1, 2})]
    clu = payload["clusters"][0]
    assert clu["converged"] is True
    assert clu["kkt_residual"] <= 1e-6
    assert sum(clu["membership"]) == pytest.approx(1.0)


def test_cluster_peel_multiple_seeds(tmp_path):
    aff = write_g8(tmp_path)
    out = tmp_path / "out.json"
    assert run(["cluster", "--affinity", aff, "--constraints", "1,4,7",
                "--out", str(out)]) == cli.EXIT_OK
    assert set(supports(load(out))) == {frozenset({0, 1, 2}),
                                        frozenset({4, 5, 6, 7})}


def test_config_file_defaults_and_flag_precedence(tmp_path):
    aff = write_g8(tmp_path)
    cfg = tmp_path / "run.cfg"
    cfg.write_text("constraints = 1\nmax-iters = 500\n")
    out1 = tmp_path / "a.json"
    assert run(["--config", str(cfg), "cluster", "--affinity", aff,
                "--out", str(out1)]) == cli.EXIT_OK
    assert supports(load(out1)) == [frozenset({0, 1, 2})]
    # an explicit flag beats the config value
    out2 = tmp_path / "b.json"
    assert run(["--config", str(cfg), "cluster", "--affinity", aff,
                "--constraints", "3,4", "--out", str(out2)]) == cli.EXIT_OK
    assert supports(load(out2)) == [frozenset({3, 4})]


def test_cluster_reports_are_deterministic(tmp_path):
    aff = write_g8(tmp_path)
    out1, out2 = tmp_path / "r1.json", tmp_path / "r2.json"
    argv = ["cluster", "--affinity", aff, "--mode", "enumerate"]
    assert run(argv + ["--out", str(out1)]) == cli.EXIT_OK
    assert run(argv + ["--out", str(out2)]) == cli.EXIT_OK
    assert out1.read_bytes() == out2.read_bytes()


def test_missing_file_exits_with_input_error(tmp_path, capsys):
    assert run(["cluster", "--affinity", str(tmp_path / "nope.txt")]) == \
        cli.EXIT_INPUT
    assert "error:" in capsys.readouterr().err


def test_bad_constraint_list_exits_with_input_error(tmp_path, capsys):
    aff = write_g8(tmp_path)
    assert run(["cluster", "--affinity", aff, "--constraints", "1,x"]) == \
        cli.EXIT_INPUT


def test_invalid_affinity_exits_with_input_error(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    write_matrix_text(bad, np.array([[0.0, 1.0], [0.5, 0.0]]))  # asymmetric
    assert run(["cluster", "--affinity", str(bad)]) == cli.EXIT_INPUT


def test_non_convergence_exits_with_code_3(tmp_path, monkeypatch, capsys):
    aff = write_g8(tmp_path)

    def fake_extract(A, constraints, params):
        return SimpleNamespace(converged=False)

    monkeypatch.setattr(cli.solver, "extract_cds", fake_extract)
    code = run(["cluster", "--affinity", aff, "--constraints", "1",
                "--mode", "single"])
    assert code == cli.EXIT_NO_CONVERGENCE
    assert "error:" in capsys.readouterr().err


def test_segment_subcommand(tmp_path):
    rng = np.random.default_rng(0)
    feats = np.vstack([rng.normal(size=(6, 3)) * 0.02,
                       rng.normal(size=(6, 3)) * 0.02 + 8.0])
    fpath = tmp_path / "feats.txt"
    write_matrix_text(fpath, feats)
    gt = tmp_path / "gt.txt"
    write_matrix_text(gt, np.array([[1.0] * 6 + [0.0] * 6]))
    ann = tmp_path / "ann.json"
    ann.write_text(json.dumps({"mode": "scribble_fg", "ids": [0, 1]}))
    out = tmp_path / "seg.json"
    assert run(["segment", "--features", str(fpath), "--annotation",
                str(ann), "--gt", str(gt), "--out", str(out)]) == cli.EXIT_OK
    payload = load(out)
    assert payload["mask"] == list(range(6))
    assert payload["metrics"]["jaccard"] == pytest.approx(1.0)


def test_coseg_subcommand(tmp_path):
    from helpers import make_coseg_pair
    im1, im2, obj = make_coseg_pair(seed=0)
    paths = []
    for i, im in enumerate((im1, im2)):
        p = tmp_path / f"im{i}.json"
        p.write_text(json.dumps({
            "colors": im.colors.tolist(), "sift": im.sift.tolist(),
            "hog": im.hog.tolist(), "adjacency": im.adjacency.tolist(),
            "objectness": im.objectness.tolist()}))
        paths.append(str(p))
    out = tmp_path / "coseg.json"
    assert run(["coseg", "--instance", paths[0], "--instance", paths[1],
                "--out", str(out)]) == cli.EXIT_OK
    payload = load(out)
    assert payload["masks"][0] == sorted(obj)
    assert payload["masks"][1] == sorted(obj)


def test_diffuse_subcommand_with_labels_and_matrix_out(tmp_path):
    A, labels = fixtures.planted_blob_affinity(n_per=6, blobs=2, seed=0)
    aff = tmp_path / "aff.txt"
    write_matrix_text(aff, A)
    lab = tmp_path / "labels.txt"
    lab.write_text("".join(f"{x}\n" for x in labels))
    out = tmp_path / "diff.json"
    mat = tmp_path / "V.bin"
    assert run(["diffuse", "--affinity", str(aff), "--iterations", "30",
                "--labels", str(lab), "--matrix-out", str(mat),
                "--out", str(out)]) == cli.EXIT_OK
    payload = load(out)
    assert payload["transition"] == "B6"
    assert payload["bulls_eye_R"] == 6
    assert payload["mean_bulls_eye"] >= payload["mean_bulls_eye_raw"] - 1e-9
    assert len(payload["rankings"]) == 12
    V = read_matrix_binary(mat)
    assert V.shape == (12, 12)
    assert np.allclose(V.sum(axis=1), 1.0)


def test_fuse_subcommand_reports_piw_and_metrics(tmp_path):
    A, B, labels = fixtures.planted_channels(n_per=6, blobs=3, seed=6)
    pa, pb = tmp_path / "a.txt", tmp_path / "b.txt"
    write_matrix_text(pa, A)
    write_matrix_text(pb, B)
    lab = tmp_path / "labels.txt"
    lab.write_text("".join(f"{x}\n" for x in labels))
    out = tmp_path / "fuse.json"
    assert run(["fuse", "--channel", f"pure={pa}", "--channel",
                f"shuffled={pb}", "--all-queries", "--lambda-scale", "0.5",
                "--labels", str(lab), "--out", str(out)]) == cli.EXIT_OK
    payload = load(out)
    assert len(payload["queries"]) == 18
    piw = payload["queries"][0]["piw"]
    assert set(piw) == {"pure", "shuffled"}
    assert piw["pure"] + piw["shuffled"] == pytest.approx(1.0)
    assert payload["metrics"]["map"] == pytest.approx(1.0)


def test_fuse_requires_query_selection(tmp_path, capsys):
    A, _, _ = fixtures.planted_channels(n_per=4, blobs=2, seed=0)
    pa = tmp_path / "a.txt"
    write_matrix_text(pa, A)
    assert run(["fuse", "--channel", f"a={pa}"]) == cli.EXIT_INPUT
    assert run(["fuse", "--query", "0"]) == cli.EXIT_INPUT


def test_dcds_subcommand(tmp_path):
    batch = tmp_path / "batch.json"
    rng = np.random.default_rng(1)
    feats = np.repeat(rng.normal(size=(4, 5)), 3, axis=0)
    feats = feats + 0.05 * rng.normal(size=feats.shape)
    batch.write_text(json.dumps({
        "features": feats.tolist(),
        "labels": np.repeat(np.arange(4), 3).tolist()}))
    out = tmp_path / "dcds.json"
    assert run(["dcds", "--batch", str(batch), "--unroll", "10",
                "--gradcheck", "--expand", "3",
                "--out", str(out)]) == cli.EXIT_OK
    payload = load(out)
    assert payload["batch_size"] == 12
    assert payload["within_identity_mass"] > payload["cross_identity_mass"]
    assert payload["grad_check_max_rel_error"] < 1e-4
    assert sorted(payload["expanded_ranking"]) == list(range(12))


def test_metrics_subcommand(tmp_path):
    ranked = [[0, 1, 2, 3], [1, 0, 3, 2]]
    labels = ["a", "a", "b", "b"]
    rpath = tmp_path / "ranked.json"
    rpath.write_text(json.dumps(ranked))
    lpath = tmp_path / "labels.txt"
    lpath.write_text("".join(f"{x}\n" for x in labels))
    out = tmp_path / "metrics.json"
    assert run(["metrics", "--ranked", str(rpath), "--labels", str(lpath),
                "--queries", "0,1", "--out", str(out)]) == cli.EXIT_OK
    payload = load(out)
    labels_arr = np.array(labels)
    assert payload["map"] == pytest.approx(
        metrics.mean_average_precision(ranked, labels_arr, [0, 1]))
    assert payload["ns"] == pytest.approx(
        metrics.ns_score(ranked, labels_arr, [0, 1]))
    assert payload["cmc"]["1"] == 1.0


def test_fixtures_subcommand_variants(tmp_path):
    out = tmp_path / "g8.txt"
    assert run(["fixtures", "--name", "g8", "--out", str(out)]) == cli.EXIT_OK
    assert np.allclose(read_matrix_text(out), fixtures.g8_affinity())

    out = tmp_path / "blobs.bin"
    assert run(["fixtures", "--name", "blobs", "--binary", "--out",
                str(out)]) == cli.EXIT_OK
    A, labels = fixtures.planted_blob_affinity(seed=0)
    assert np.allclose(read_matrix_binary(out), A)
    written = (tmp_path / "blobs.bin.labels").read_text().split()
    assert written == [str(x) for x in labels]

    out = tmp_path / "chan.txt"
    assert run(["fixtures", "--name", "channels", "--seed", "3", "--out",
                str(out)]) == cli.EXIT_OK
    A, B, _ = fixtures.planted_channels(seed=3)
    assert np.allclose(read_matrix_text(out), A)
    assert np.allclose(read_matrix_text(str(out) + ".channelB"), B)

    assert run(["fixtures", "--name", "g8", "--out",
                str(tmp_path / "x"), "--seed", "0"]) == cli.EXIT_OK


def test_figures_directory_gets_rendered_plots(tmp_path):
    aff = write_g8(tmp_path)
    figdir = tmp_path / "figs"
    figdir.mkdir()
    out = tmp_path / "out.json"
    assert run(["cluster", "--affinity", aff, "--constraints", "4",
                "--figures", str(figdir), "--out", str(out)]) == cli.EXIT_OK
    pngs = sorted(p.name for p in figdir.glob("*.png"))
    assert pngs  # at least membership + affinity renderings
    assert any("membership" in n for n in pngs)
    assert any("affinity" in n for n in pngs)
