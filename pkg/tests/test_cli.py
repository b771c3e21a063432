import json

import pytest

from microfract import __version__
from microfract.cli import main, run
from microfract.dyadic import from_json, kx_set, unpack_bits


def read(path):
    with open(path) as fh:
        return fh.read()


class TestDims:
    def test_beatty_third(self, tmp_path):
        out = tmp_path / "c.csv"
        rc = main(["dims", "--word", "beatty:1/3", "--depth", "12",
                   "--out", str(out)])
        assert rc == 0
        text = read(out)
        assert text.startswith(f"# microfract {__version__}\n# config ")
        rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        assert rows[0] == "level,count,log2count_over_n"
        last = rows[-1].split(",")
        assert last[0] == "12" and last[1] == str(2 ** 4)  # sigma(12) = 4

    def test_missing_word_is_validation_error(self, tmp_path):
        rc = main(["dims", "--depth", "4", "--out", str(tmp_path / "x.csv")])
        assert rc == 1


class TestPercolate:
    def test_supercritical_run(self, tmp_path):
        out = tmp_path / "p.csv"
        rc = main(["percolate", "--k", "full:1", "--beta", "1/2",
                   "--depth", "10", "--trials", "300", "--seed", "7",
                   "--out", str(out)])
        assert rc == 0
        rows = [ln for ln in read(out).splitlines() if not ln.startswith("#")]
        depth, surv = rows[1].split(",")[:2]
        assert depth == "10"
        assert 0.5 < float(surv) <= 1.0

    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        args = ["percolate", "--k", "full:1", "--beta", "1/2", "--depth", "8",
                "--trials", "100", "--seed", "3"]
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert read(a).replace(str(a), "") == read(b).replace(str(b), "")

    def test_save_set_roundtrips(self, tmp_path):
        out, setf = tmp_path / "p.csv", tmp_path / "s.bin"
        rc = main(["percolate", "--k", "full:1", "--beta", "1/2", "--depth", "6",
                   "--trials", "10", "--seed", "1", "--out", str(out),
                   "--save-set", str(setf)])
        assert rc == 0
        ds = unpack_bits(setf.read_bytes())
        assert ds.depth == 6 and ds.d == 1

    def test_invalid_beta_exits_1(self, tmp_path):
        rc = main(["percolate", "--k", "full:1", "--beta", "2", "--depth", "6",
                   "--trials", "10", "--out", str(tmp_path / "x.csv")])
        assert rc == 1

    def test_depth_limit_exits_3(self, tmp_path):
        rc = main(["percolate", "--k", "full:1", "--beta", "1/2", "--depth", "40",
                   "--trials", "10", "--out", str(tmp_path / "x.csv")])
        assert rc == 3


class TestHawkes:
    def test_two_depths(self, tmp_path):
        out = tmp_path / "h.csv"
        rc = main(["hawkes", "--k", "beatty:1/3", "--beta", "3/5",
                   "--depths", "4,10", "--trials", "200", "--seed", "5",
                   "--out", str(out)])
        assert rc == 0
        rows = [ln for ln in read(out).splitlines() if not ln.startswith("#")]
        assert len(rows) == 3
        assert rows[1].split(",")[0] == "4"
        assert rows[2].split(",")[0] == "10"


class TestRealize:
    def test_interval_target(self, tmp_path):
        out = tmp_path / "r.csv"
        rc = main(["realize", "--target", "interval:3/10:7/10", "--blocks", "30",
                   "--seed", "11", "--out", str(out)])
        assert rc == 0
        rows = [ln for ln in read(out).splitlines() if not ln.startswith("#")]
        assert rows[0] == "block,n,k,phi,density,abs_error,length_fraction"
        assert len(rows) == 30  # blocks 1..29 plus header

    def test_explicit_branch(self, tmp_path):
        out = tmp_path / "r.csv"
        rc = main(["realize", "--target", "finite:1/2", "--blocks", "10",
                   "--branch", "0101010101", "--out", str(out)])
        assert rc == 0


class TestFamily:
    def test_strict_one_level(self, tmp_path):
        out = tmp_path / "f.json"
        rc = main(["family", "--net", "grid:65", "--target", "finite:1/2",
                   "--variant", "box", "--depth", "1", "--branch", "1",
                   "--out", str(out)])
        assert rc == 0
        payload = json.loads(read(out))
        assert payload["report"]["cardinalities_exact"]
        assert payload["report"]["g_mode"] == "strict"
        assert payload["version"] == __version__

    def test_strict_deep_exhausts_exit_3(self, tmp_path):
        rc = main(["family", "--net", "grid:65", "--target", "finite:1/2",
                   "--variant", "box", "--depth", "3", "--branch", "111",
                   "--out", str(tmp_path / "f.json")])
        assert rc == 3


class TestZoom:
    def test_zoom_word_set(self, tmp_path):
        out = tmp_path / "z.json"
        rc = main(["zoom", "--set", "word:1011", "--depth", "4", "--m", "1",
                   "--u", "0", "--out", str(out)])
        assert rc == 0
        body = [ln for ln in read(out).splitlines() if not ln.startswith("#")][0]
        assert from_json(body) == kx_set("011")

    def test_zoom_binary_output(self, tmp_path):
        out = tmp_path / "z.bin"
        rc = main(["zoom", "--set", "word:111", "--depth", "3", "--m", "0",
                   "--u", "0", "--binary", "--out", str(out)])
        assert rc == 0
        assert unpack_bits(out.read_bytes()) == kx_set("111")


class TestConfigPlumbing:
    def test_print_schema(self, capsys):
        assert main(["--print-schema"]) == 0
        out = capsys.readouterr().out
        assert json.loads(out)["properties"]["command"]["enum"]

    def test_config_file_merge(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"word": "beatty:1/2", "depth": 6}))
        out = tmp_path / "c.csv"
        rc = main(["dims", "--config", str(cfg), "--out", str(out)])
        assert rc == 0

    def test_env_seed_recorded(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MICROFRACT_SEED", "99")
        out = tmp_path / "p.csv"
        rc = main(["percolate", "--k", "full:1", "--beta", "1/2", "--depth", "5",
                   "--trials", "20", "--out", str(out)])
        assert rc == 0
        header = read(out).splitlines()[1]
        assert '"seed":99' in header.replace(" ", "")

    def test_schema_rejects_unknown_key(self):
        with pytest.raises(Exception):
            run({"command": "dims", "word": "beatty:1/2", "depth": 4,
                 "bogus": 1})

    def test_no_command(self):
        assert main([]) == 1
