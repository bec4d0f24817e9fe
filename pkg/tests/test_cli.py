import pytest

from tsp_sparsify.cli import EXIT_FORMAT, EXIT_INVALID, EXIT_MISSING, EXIT_USAGE, main
from tsp_sparsify.instances import read_tsplib
from tsp_sparsify.learn import load_model


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def workdir(tmp_path, capsys):
    """Generate three labelled instances through the CLI."""
    items = []
    for seed in range(3):
        inst = tmp_path / f"i{seed}.tsp"
        graph = tmp_path / f"i{seed}.graph"
        tour = tmp_path / f"i{seed}.tour"
        dump = tmp_path / f"i{seed}.csv"
        assert run(["generate", "--family", "uniform", "--type", "EUC_2D", "--n", 12,
                    "--seed", seed, "--out", inst], capsys)[0] == 0
        assert run(["candidates", "--instance", inst, "--out", graph], capsys)[0] == 0
        assert run(["label", "--instance", inst, "--method", "held-karp", "--out", tour], capsys)[0] == 0
        assert run(["features", "--instance", inst, "--graph", graph, "--tour", tour, "--out", dump],
                   capsys)[0] == 0
        items.append((inst, graph, tour, dump))
    return tmp_path, items


def test_full_cli_flow(workdir, capsys):
    tmp, items = workdir
    model = tmp / "model.txt"
    code, out, _ = run(["train", "--dump", *(d for *_, d in items), "--out", model,
                        "--log", tmp / "log.csv"], capsys)
    assert code == 0 and "iterations:" in out
    val = tmp / "val.txt"
    val.write_text("\n".join(f"{i} {g} {t}" for i, g, t, _ in items) + "\n")
    code, out, _ = run(["calibrate", "--model", model, "--val", val, "--format", "delimited"], capsys)
    assert code == 0 and out.splitlines()[0] == "eta,feasible"
    assert load_model(model).calibrated_eta is not None
    inst, graph, tour, _ = items[0]
    pruned = tmp / "pruned.graph"
    code, out, _ = run(["prune", "--model", model, "--instance", inst, "--graph", graph,
                        "--out", pruned], capsys)
    assert code == 0 and "pruned_edges" in out
    code, out, _ = run(["eval", "--graph", pruned, "--tour", tour, "--instance", inst], capsys)
    assert code == 0 and "coverage:" in out and "gap_percent:" in out
    code, out, _ = run(["solve", "--instance", inst, "--graph", graph, "--opt-tour", tour, "--restarts", 3], capsys)
    assert code == 0 and "gap_percent:" in out
    lkh = tmp / "cand.txt"
    assert run(["export-lkh", "--instance", inst, "--graph", graph, "--out", lkh], capsys)[0] == 0
    assert lkh.read_text().splitlines()[0] == "12"


def test_label_with_graph_reports_coverage(workdir, capsys):
    _, items = workdir
    inst, graph, _, _ = items[1]
    code, out, _ = run(["label", "--instance", inst, "--graph", graph], capsys)
    assert code == 0 and "proven_optimal: True" in out and "coverage:" in out


def test_seed_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("TSP_SPARSIFY_SEED", "42")
    a = tmp_path / "a.tsp"
    assert run(["generate", "--family", "clustered", "--type", "GEO", "--n", 9, "--out", a], capsys)[0] == 0
    assert read_tsplib(a).seed == 42
    monkeypatch.setenv("TSP_SPARSIFY_SEED", "x")
    assert run(["generate", "--family", "clustered", "--type", "GEO", "--n", 9, "--out", a],
               capsys)[0] == EXIT_INVALID


def test_config_overrides_flags(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("n: 7\nseed: 3\ngenerator:\n  n_clusters: 2\n")
    out = tmp_path / "g.tsp"
    code, _, _ = run(["generate", "--family", "clustered", "--type", "EUC_2D", "--n", 30,
                      "--config", cfg, "--out", out], capsys)
    assert code == 0
    inst = read_tsplib(out)
    assert inst.n == 7 and inst.seed == 3
    cfg.write_text("bogus: 1\n")
    assert run(["generate", "--family", "uniform", "--type", "EUC_2D", "--n", 8, "--config", cfg],
               capsys)[0] == EXIT_INVALID


def test_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--family", "uniform"])
    assert exc.value.code == EXIT_USAGE
    capsys.readouterr()
    code, _, err = run(["candidates", "--instance", tmp_path / "missing.tsp"], capsys)
    assert code == EXIT_MISSING and "missing.tsp" in err
    bad = tmp_path / "bad.tsp"
    bad.write_text("NAME : x\nTYPE : TSP\nDIMENSION : 3\nEDGE_WEIGHT_TYPE : EXPLICIT\n")
    code, _, err = run(["candidates", "--instance", bad], capsys)
    assert code == EXIT_FORMAT and "EXPLICIT" in err
    with pytest.raises(SystemExit) as exc:
        main(["prune", "--model", "m", "--instance", "i", "--graph", "g", "--eta", "1.5"])
    assert exc.value.code == EXIT_USAGE


def test_graph_format_error(tmp_path, capsys):
    inst = tmp_path / "i.tsp"
    run(["generate", "--family", "uniform", "--type", "EUC_2D", "--n", 8, "--out", inst], capsys)
    g = tmp_path / "g.graph"
    g.write_text("not a graph\n")
    code, _, _ = run(["solve", "--instance", inst, "--graph", g], capsys)
    assert code == EXIT_FORMAT


def test_pipeline_command(tmp_path, capsys):
    cfg = tmp_path / "p.yaml"
    cfg.write_text(
        "families: [[uniform, EUC_2D]]\ntrain_n: 10\nval_n: 10\nn_train: 4\nn_val: 2\n"
        "test_sizes: [[10, 2]]\ngap_sizes: [10]\nn_gap: 1\n"
    )
    code, out, _ = run(["pipeline", "--config", cfg, "--out", tmp_path / "run", "--format", "delimited"],
                       capsys)
    assert code == 0
    assert (tmp_path / "run" / "metrics.csv").exists()
    assert out.splitlines()[0] == "out,eta,calibration_feasible,excluded_unproven"
