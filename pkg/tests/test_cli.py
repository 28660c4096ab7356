import json
import sys
import textwrap

import pytest

from dcir.cli import main
from dcir.synthetic import make_bundle, write_bundle


@pytest.fixture(scope="module")
def bundle_paths(tmp_path_factory):
    sb = make_bundle(n_classes=4, n_domains=3, per_cluster=4, queries_per_cluster=2, dim=32, seed=5)
    return write_bundle(sb, tmp_path_factory.mktemp("bundle"))


def bundle_args(paths):
    return [
        "--manifest", paths["manifest"],
        "--db-emb", paths["db_emb"],
        "--query-emb", paths["query_emb"],
        "--vocab", paths["vocab"],
        "--vocab-emb", paths["vocab_emb"],
        "--composed", paths["composed_index"],
    ]


def test_validate_ok(bundle_paths, capsys):
    assert main(["validate", *bundle_args(bundle_paths)]) == 0
    out = capsys.readouterr().out
    assert "ok" in out and "database:" in out


def test_validate_bad_file_is_data_error(bundle_paths, tmp_path, capsys):
    bad = dict(bundle_paths)
    broken = tmp_path / "broken.fdem"
    broken.write_bytes(b"NOPE" + b"\x00" * 24)
    bad["db_emb"] = str(broken)
    assert main(["validate", *bundle_args(bad)]) == 2
    assert "error:" in capsys.readouterr().err


def test_query_returns_requested_count_descending(bundle_paths, capsys):
    rc = main(["query", *bundle_args(bundle_paths), "--id", "q_00000", "--target", "origami", "--top", "8"])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 8
    scores = [float(line.split("\t")[1]) for line in lines]
    assert scores == sorted(scores, reverse=True)


def test_query_unknown_domain_exit_2_names_domain(bundle_paths, capsys):
    rc = main(["query", *bundle_args(bundle_paths), "--id", "q_00000", "--target", "wonderland"])
    assert rc == 2
    assert "wonderland" in capsys.readouterr().err


def test_query_unknown_id_exit_2(bundle_paths, capsys):
    rc = main(["query", *bundle_args(bundle_paths), "--id", "ghost", "--target", "origami"])
    assert rc == 2
    assert "ghost" in capsys.readouterr().err


def test_usage_error_exit_1(bundle_paths, capsys):
    assert main(["bench", *bundle_args(bundle_paths), "--method", "astrology"]) == 1
    assert main(["frobnicate"]) == 1


def test_bench_writes_report(bundle_paths, tmp_path):
    out = tmp_path / "r.json"
    rc = main([
        "bench", *bundle_args(bundle_paths), "--method", "freedom", "--k", "5", "--n", "3", "--m", "3",
        "--metric", "map,recall@10", "--out", str(out),
    ])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["config"]["method"] == "freedom"
    assert doc["pairs"] and "map" in doc["pairs"][0]
    assert "timing" in doc
    assert doc["grand"]["map"] > 0.9


def test_bench_deterministic_outside_timing(bundle_paths, tmp_path):
    outs = []
    for name in ("a.json", "b.json"):
        out = tmp_path / name
        rc = main(["bench", *bundle_args(bundle_paths), "--k", "5", "--n", "3", "--m", "3",
                   "--threads", "4", "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        doc.pop("timing")
        outs.append(json.dumps(doc, sort_keys=True))
    assert outs[0] == outs[1]


def test_bench_csv_format(bundle_paths, tmp_path):
    out = tmp_path / "r.csv"
    rc = main(["bench", *bundle_args(bundle_paths), "--method", "image", "--format", "csv", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("source,")
    assert lines[-1].startswith("avg,")


def test_sweep_csv_matrix(bundle_paths, tmp_path):
    out = tmp_path / "s.csv"
    rc = main([
        "sweep", *bundle_args(bundle_paths), "--method", "freedom", "--k", "1,4", "--n", "2,3", "--m", "3",
        "--format", "csv", "--out", str(out),
    ])
    assert rc == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("k\\n,")
    assert len(lines) == 3


def test_hist_csv(bundle_paths, tmp_path):
    out = tmp_path / "h.csv"
    rc = main(["hist", *bundle_args(bundle_paths), "--id", "q_00000", "--target", "origami",
               "--bins", "12", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "bin_left,bin_right,neg,pos_object,pos_domain,pos"
    assert len(lines) == 13
    total = sum(sum(int(v) for v in line.split(",")[2:]) for line in lines[1:])
    assert total == 48  # database size


def test_oracle_remove_words(bundle_paths, tmp_path):
    out = tmp_path / "o.json"
    rc = main(["oracle", *bundle_args(bundle_paths), "--kind", "remove_words", "--ell", "1",
               "--k", "5", "--n", "3", "--m", "3", "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["kind"] == "remove_words"
    assert doc["delta"]["map"] < 0
    assert doc["extras"]["removed_words"]


def test_oracle_needs_ell_for_remove_words(bundle_paths, capsys):
    assert main(["oracle", *bundle_args(bundle_paths), "--kind", "remove_words"]) == 2


PROVIDER = textwrap.dedent(
    """
    import sys, numpy as np
    for line in sys.stdin:
        text = line.rstrip("\\n")
        rng = np.random.default_rng(sum(ord(c) * 31**i for i, c in enumerate(text)) % 2**32)
        v = rng.standard_normal(32)
        v /= np.linalg.norm(v)
        print(" ".join(f"{x:.9f}" for x in v))
        sys.stdout.flush()
    """
)


def test_early_method_with_subprocess_provider(bundle_paths, tmp_path):
    out = tmp_path / "e.json"
    script = tmp_path / "provider.py"
    script.write_text(PROVIDER)
    rc = main([
        "bench", *bundle_args(bundle_paths), "--method", "early", "--m", "3",
        "--provider", f"{sys.executable} {script}", "--out", str(out),
    ])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["config"]["method"] == "early"
    assert doc["grand"]["n_pairs"] > 0


def test_early_without_provider_is_data_error(bundle_paths, capsys):
    rc = main(["bench", *bundle_args(bundle_paths), "--method", "early", "--m", "3"])
    assert rc == 2
    assert "provider" in capsys.readouterr().err
