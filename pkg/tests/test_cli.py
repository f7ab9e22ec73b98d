import json
import os

import pytest

from viana.cli import SUBCOMMANDS, main, tails_reference_sequence
from viana.config import RunConfig, parse_config
from viana.errors import ConfigTypeError, RangeError, UnknownKey


@pytest.fixture(autouse=True)
def _no_env_out(monkeypatch):
    monkeypatch.delenv("VIANA_OUT", raising=False)


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestConfig:
    def test_defaults(self):
        cfg = parse_config(env={})
        assert cfg == RunConfig()
        assert cfg.eps == 1e-3 and cfg.d == 16 and cfg.a0 == "auto" and cfg.c_prime == 0.11

    def test_file_and_flags(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("# comment\neps = 2e-3\nseed = 7  # trailing\nburn-in = 50\n")
        cfg = parse_config(str(f), {"seed": "9"}, env={})
        assert cfg.eps == 2e-3 and cfg.seed == 9 and cfg.burn_in == 50

    def test_range_error_carries_line(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("eps = 1e-3\nd = 8\n")
        with pytest.raises(RangeError) as info:
            parse_config(str(f), env={})
        assert info.value.key == "d" and info.value.line == 2

    def test_unknown_key(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("\n\nfoo = 1\n")
        with pytest.raises(UnknownKey) as info:
            parse_config(str(f), env={})
        assert info.value.line == 3

    def test_type_error(self):
        with pytest.raises(ConfigTypeError):
            parse_config(flags={"d": "sixteen"}, env={})

    @pytest.mark.parametrize("flags", [{"eps": "0.06"}, {"eta": "0.4"}, {"c": "0.2"}, {"a0": "2.5"},
                                       {"seed": "-1"}, {"bracket_lo": "1.8"}])
    def test_ranges(self, flags):
        with pytest.raises(RangeError):
            parse_config(flags=flags, env={})

    def test_env_out(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("out = from_file\n")
        assert parse_config(str(f), env={"VIANA_OUT": "from_env"}).out == "from_env"
        assert parse_config(str(f), {"out": "from_flag"}, env={"VIANA_OUT": "from_env"}).out == "from_flag"

    def test_with_defaults(self):
        cfg = RunConfig(n_max=7).with_defaults(n_max=400, samples=100)
        assert cfg.n_max == 7 and cfg.samples == 100


class TestCommands:
    def test_params(self, capsys, tmp_path):
        code, out, _ = _run(capsys, "params", "--a0", "auto", "--eps", "1e-3", "--out", str(tmp_path))
        assert code == 0
        echo = json.loads(out)
        assert echo["subcommand"] == "params" and echo["config"]["eps"] == 1e-3
        saved = json.loads((tmp_path / "params.json").read_text())
        assert saved == echo
        a0 = saved["result"]["a0"]
        assert saved["result"]["I"][1] == pytest.approx(a0 + 1e-3)

    def test_misiurewicz(self, capsys, tmp_path):
        code, out, _ = _run(capsys, "misiurewicz", "--out", str(tmp_path))
        res = json.loads(out)["result"]
        assert code == 0 and abs(res["residual"]) < 1e-12 and res["multiplier"] > 1

    def test_tails(self, capsys, tmp_path):
        code, out, _ = _run(capsys, "tails", "--gamma", "1.0", "--N", "4096", "--out", str(tmp_path))
        assert code == 0
        res = json.loads(out)["result"]
        assert res["ok"] is True
        lines = (tmp_path / "tails.csv").read_text().splitlines()
        assert lines[0].startswith("# config={") and lines[1] == "n,u_n,w_n_u_n,bound"
        assert len(lines) == 4097 + 2

    def test_reference_sequence(self):
        a = tails_reference_sequence(1.0, 10)
        assert a[0] == 0.0 and a[4] == pytest.approx(2.718281828459045 ** -2)

    def test_hyp_tail_byte_identical(self, capsys, tmp_path):
        args = ["hyp-tail", "--n-max", "120", "--samples", "3000", "--seed", "5"]
        _run(capsys, *args, "--out", str(tmp_path / "a"))
        _run(capsys, *args, "--out", str(tmp_path / "b"), "--shards", "3")
        _run(capsys, *args, "--out", str(tmp_path / "c"), "--shards", "3", "--workers", "3")
        # the header line records out and workers, so compare the tables below it
        a, b, c = ((tmp_path / d / "hyp-tail.csv").read_bytes().split(b"\n", 1)[1] for d in "abc")
        assert a.startswith(b"n,survivors") and b == c
        _run(capsys, *args, "--out", str(tmp_path / "a"))
        again = (tmp_path / "a" / "hyp-tail.csv").read_bytes()
        assert again.split(b"\n", 1)[1] == a

    def test_grow_dump(self, capsys, tmp_path):
        code, out, _ = _run(capsys, "grow", "--rects", "3", "--dump", "--out", str(tmp_path))
        assert code == 0
        dump = json.loads((tmp_path / "grow-dump.json").read_text())
        assert len(dump["rectangles"]) == 3

    def test_file_permissions_follow_umask(self, capsys, tmp_path):
        _run(capsys, "params", "--out", str(tmp_path))
        mode = os.stat(tmp_path / "params.json").st_mode & 0o777
        umask = os.umask(0)
        os.umask(umask)
        assert mode == 0o666 & ~umask


class TestExitCodes:
    def test_usage_errors(self, capsys, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["bogus"])
        assert info.value.code == 2
        code, _, err = _run(capsys, "params", "--d", "8", "--out", str(tmp_path))
        assert code == 2 and "usage error" in err
        code, _, _ = _run(capsys, "params", "--config", str(tmp_path / "missing.cfg"))
        assert code == 2

    def test_operational_error_leaves_no_files(self, capsys, tmp_path):
        out = tmp_path / "out"
        code, stdout, err = _run(capsys, "misiurewicz", "--bracket-lo", "1.1", "--bracket-hi", "1.2",
                                 "--out", str(out))
        assert code == 1 and "NoSignChange" in err and stdout == ""
        assert not out.exists() or not any(out.iterdir())

    def test_every_subcommand_is_wired(self):
        from viana.cli import COMMANDS
        assert set(COMMANDS) == set(SUBCOMMANDS)
