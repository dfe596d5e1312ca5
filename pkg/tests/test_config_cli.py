import json
import math

import pytest

from cryoplan.cli import (CURVE_HEADER, CliError, load_manifest, load_split,
                          main, write_manifest)
from cryoplan.config import (ConfigError, PlannerConfig, RunConfig,
                             load_run_config, parse_run_config)

pytestmark = pytest.mark.filterwarnings("ignore::PendingDeprecationWarning")


# ------------------------------------------------------------------ config


class TestParseRunConfig:
    def test_empty_table_gives_defaults(self):
        cfg = parse_run_config({})
        assert cfg == RunConfig()

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown key 'outdir'"):
            parse_run_config({"outdir": "x"})

    def test_unknown_nested_keys_report_dotted_path(self):
        with pytest.raises(ConfigError, match="unknown key 'env.probes'"):
            parse_run_config({"env": {"probes": 3}})
        with pytest.raises(ConfigError, match="unknown key 'env.noise.sd'"):
            parse_run_config({"env": {"noise": {"sd": 1.0}}})
        with pytest.raises(ConfigError, match="unknown key 'train.lr'"):
            parse_run_config({"train": {"lr": 1e-3}})
        with pytest.raises(ConfigError, match="unknown key 'planners.a.window'"):
            parse_run_config({"planners": {"a": {"kind": "random", "window": 3}}})

    def test_lists_become_tuples(self):
        cfg = parse_run_config({
            "phantom": {"dims": [32, 32, 32], "blob_count": [1, 2]},
            "train": {"conv_channels": [2, 4], "feature_grid": [8, 8, 8]},
        })
        assert cfg.phantom.dims == (32, 32, 32)
        assert cfg.train.conv_channels == (2, 4)

    def test_nested_noise_and_shaping_merge(self):
        cfg = parse_run_config({
            "env": {"probes_per_visit": 2, "noise": {"enabled": False},
                    "shaping": {"repeat_penalty_weight": 0.5}},
        })
        assert cfg.env.probes_per_visit == 2
        assert not cfg.env.noise.enabled
        assert cfg.env.noise.sigma_d == 5.0  # untouched defaults survive
        assert cfg.env.shaping.repeat_penalty_weight == 0.5

    def test_planner_kind_defaults_to_table_name(self):
        cfg = parse_run_config({"planners": {"geometric": {"refine_iters": 3}}})
        assert cfg.planners["geometric"].kind == "geometric"
        assert cfg.planners["geometric"].refine_iters == 3

    def test_planner_entries_validated(self):
        with pytest.raises(ConfigError, match="must be a table"):
            parse_run_config({"planners": {"a": "random"}})
        with pytest.raises(ConfigError, match="expected random, centre"):
            parse_run_config({"planners": {"a": {"kind": "astar"}}})

    def test_out_of_range_values_rejected(self):
        with pytest.raises(ConfigError, match=r"\[dataset\]"):
            parse_run_config({"dataset": {"count": 0}})
        with pytest.raises(ConfigError):
            parse_run_config({"dataset": {"split": 1.5}})
        with pytest.raises(ConfigError, match=r"\[env\]"):
            parse_run_config({"env": {"probes_per_visit": 0}})
        with pytest.raises(ConfigError, match=r"\[train\]"):
            parse_run_config({"train": {"gamma": 1.5}})

    def test_planner_config_lookup_falls_back_to_kind(self):
        cfg = parse_run_config({"planners": {"geometric": {"healthy_penalty": 0.1}}})
        assert cfg.planner_config("geometric").healthy_penalty == 0.1
        assert cfg.planner_config("random") == PlannerConfig(kind="random")

    def test_geometric_settings_passthrough(self):
        pc = PlannerConfig(kind="geometric", candidate_subsample=0.5,
                           refine_iters=1, refine_step=2.0, healthy_penalty=0.2)
        gs = pc.geometric_settings()
        assert (gs.candidate_subsample, gs.refine_iters, gs.refine_step,
                gs.healthy_penalty) == (0.5, 1, 2.0, 0.2)


class TestLoadRunConfig:
    def test_round_trip_from_file(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text(
            'out_dir = "runs/x"\nseed = 9\n'
            '[dataset]\ndir = "d"\ncount = 3\nsplit = 0.5\n'
            '[env]\nprobes_per_visit = 2\nvisits = 3\n'
        )
        cfg = load_run_config(path)
        assert cfg.out_dir == "runs/x" and cfg.seed == 9
        assert cfg.dataset.count == 3
        assert (cfg.env.probes_per_visit, cfg.env.visits) == (2, 3)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            load_run_config(tmp_path / "nope.toml")

    def test_toml_syntax_error(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("out_dir = [unterminated\n")
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_error_names_the_file(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("mystery = 1\n")
        with pytest.raises(ConfigError, match="run.toml"):
            load_run_config(path)


# ------------------------------------------------------------------ manifest


class TestManifest:
    def test_ceil_split(self, tmp_path):
        ids = [f"c{i}" for i in range(5)]
        manifest = write_manifest(tmp_path, ids, split=0.7, seed=0)
        assert len(manifest["dev"]) == math.ceil(0.7 * 5) == 4
        assert len(manifest["holdout"]) == 1
        assert sorted(manifest["dev"] + manifest["holdout"]) == sorted(ids)

    def test_shuffle_is_seeded(self, tmp_path):
        ids = [f"c{i}" for i in range(8)]
        a = write_manifest(tmp_path / "a", ids, 0.5, seed=1)
        b = write_manifest(tmp_path / "b", ids, 0.5, seed=1)
        c = write_manifest(tmp_path / "c", ids, 0.5, seed=2)
        assert a["dev"] == b["dev"]
        assert a["dev"] != c["dev"]

    def test_load_rejects_foreign_json(self, tmp_path):
        (tmp_path / "manifest.json").write_text(json.dumps({"format": "other"}))
        with pytest.raises(CliError, match="not a dataset manifest"):
            load_manifest(tmp_path)

    def test_load_split_missing_case_file(self, tmp_path):
        write_manifest(tmp_path, ["ghost"], 0.5, seed=0)
        with pytest.raises(CliError, match="ghost"):
            load_split(tmp_path, "dev")


# ------------------------------------------------------------------ cli


def base_toml(root, total_steps=32, extra=""):
    return (
        f'out_dir = "{(root / "run").as_posix()}"\n'
        f'seed = 0\n'
        f'[dataset]\ndir = "{(root / "data").as_posix()}"\ncount = 4\nsplit = 0.5\n'
        f'[phantom]\ndims = [32, 32, 32]\n'
        f'gland_semi_axes_lo = [10.0, 9.0, 9.0]\n'
        f'gland_semi_axes_hi = [13.0, 11.0, 11.0]\n'
        f'blob_count = [1, 2]\nblob_radius = [3.5, 5.0]\nblob_separation_mm = 2.0\n'
        f'[env]\nprobes_per_visit = 2\nvisits = 2\n'
        f'[env.noise]\nenabled = false\n'
        f'[env.shaping]\nrepeat_penalty_weight = 0.0\n'
        f'[train]\ntotal_steps = {total_steps}\nbatch_size = 16\neval_every = 16\n'
        f'eval_cases = 1\nhidden = 8\nconv_channels = [2, 4]\nfeature_grid = [8, 8, 8]\n'
        f'[eval]\nplanners = ["random", "centre"]\n'
        + extra
    )


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One generated+trained workspace shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "run.toml"
    config.write_text(base_toml(root))
    assert main(["gen", "--config", str(config), "--quiet"]) == 0
    assert main(["train", "--config", str(config), "--quiet"]) == 0
    return root, config


class TestGen:
    def test_writes_cases_and_manifest(self, workspace):
        root, _ = workspace
        manifest = json.loads((root / "data" / "manifest.json").read_text())
        ids = manifest["dev"] + manifest["holdout"]
        assert len(ids) == 4
        assert len(manifest["dev"]) == 2  # ceil(0.5 * 4)
        for case_id in ids:
            assert (root / "data" / f"{case_id}.cvol").exists()

    def test_deterministic_given_seed(self, tmp_path, workspace):
        root, _ = workspace
        config = tmp_path / "run.toml"
        config.write_text(base_toml(tmp_path))
        assert main(["gen", "--config", str(config), "--quiet"]) == 0
        a = json.loads((root / "data" / "manifest.json").read_text())
        b = json.loads((tmp_path / "data" / "manifest.json").read_text())
        assert a["dev"] == b["dev"] and a["holdout"] == b["holdout"]
        case = a["dev"][0]
        assert (root / "data" / f"{case}.cvol").read_bytes() == \
               (tmp_path / "data" / f"{case}.cvol").read_bytes()

    def test_seed_override_changes_split(self, tmp_path):
        config = tmp_path / "run.toml"
        config.write_text(base_toml(tmp_path))
        assert main(["gen", "--config", str(config), "--seed", "5", "--quiet"]) == 0
        manifest = json.loads((tmp_path / "data" / "manifest.json").read_text())
        assert manifest["seed"] == 5

    def test_progress_line(self, tmp_path, capsys):
        config = tmp_path / "run.toml"
        config.write_text(base_toml(tmp_path))
        assert main(["gen", "--config", str(config)]) == 0
        out = capsys.readouterr().out
        assert "generated 4 cases" in out and "dev 2" in out


class TestTrain:
    def test_curve_and_checkpoint_written(self, workspace):
        root, _ = workspace
        lines = (root / "run" / "curve.csv").read_text().splitlines()
        assert lines[0] == CURVE_HEADER
        steps = [int(ln.split(",")[0]) for ln in lines[1:]]
        assert steps == [16, 32]
        for ln in lines[1:]:
            _, reward, dice = ln.split(",")
            assert 0.0 <= float(dice) <= 1.0 and float(reward) == float(reward)
        assert (root / "run" / "policy.ckpt").exists()
        assert (root / "run" / "policy.ckpt.state.pt").exists()

    def test_zero_steps_still_writes_checkpoint(self, tmp_path, workspace):
        root, _ = workspace
        config = tmp_path / "run.toml"
        text = base_toml(tmp_path, total_steps=0).replace(
            f'dir = "{(tmp_path / "data").as_posix()}"',
            f'dir = "{(root / "data").as_posix()}"')
        config.write_text(text)
        assert main(["train", "--config", str(config), "--quiet"]) == 0
        assert (tmp_path / "run" / "curve.csv").read_text() == CURVE_HEADER + "\n"
        assert (tmp_path / "run" / "policy.ckpt").exists()

    def test_resume_extends_run(self, tmp_path, workspace):
        root, _ = workspace
        config = tmp_path / "run.toml"
        text = base_toml(tmp_path, total_steps=32).replace(
            f'dir = "{(tmp_path / "data").as_posix()}"',
            f'dir = "{(root / "data").as_posix()}"')
        config.write_text(text)
        assert main(["train", "--config", str(config), "--quiet"]) == 0
        config.write_text(text.replace("total_steps = 32", "total_steps = 48"))
        assert main(["train", "--config", str(config), "--resume", "--quiet"]) == 0
        lines = (tmp_path / "run" / "curve.csv").read_text().splitlines()
        assert [int(ln.split(",")[0]) for ln in lines[1:]] == [16, 32, 48]

    def test_resume_without_state_fails(self, tmp_path, workspace, capsys):
        root, _ = workspace
        config = tmp_path / "run.toml"
        config.write_text(base_toml(tmp_path).replace(
            f'dir = "{(tmp_path / "data").as_posix()}"',
            f'dir = "{(root / "data").as_posix()}"'))
        assert main(["train", "--config", str(config), "--resume", "--quiet"]) == 2
        assert "no training state" in capsys.readouterr().err


class TestEval:
    def test_results_and_report_written(self, workspace, capsys):
        root, config = workspace
        assert main(["eval", "--config", str(config)]) == 0
        out = capsys.readouterr().out
        assert "random" in out and "centre" in out
        from cryoplan.eval import read_results_csv

        rows = read_results_csv(root / "run" / "results.csv")
        assert len(rows) == 2 * 2  # two planners x two holdout cases
        assert (root / "run" / "report.txt").read_text().startswith("planner benchmark")

    def test_rl_eval_uses_trained_checkpoint(self, workspace):
        root, config = workspace
        rl_config = root / "rl.toml"
        rl_config.write_text(base_toml(root).replace(
            'planners = ["random", "centre"]', 'planners = ["rl"]'))
        assert main(["eval", "--config", str(rl_config), "--quiet"]) == 0
        from cryoplan.eval import read_results_csv

        rows = read_results_csv(root / "run" / "results.csv")
        assert {r.planner for r in rows} == {"rl"}

    def test_rl_eval_without_checkpoint_explains(self, tmp_path, workspace, capsys):
        root, _ = workspace
        config = tmp_path / "run.toml"
        config.write_text(base_toml(tmp_path).replace(
            f'dir = "{(tmp_path / "data").as_posix()}"',
            f'dir = "{(root / "data").as_posix()}"').replace(
            'planners = ["random", "centre"]', 'planners = ["rl"]'))
        assert main(["eval", "--config", str(config), "--quiet"]) == 2
        assert "needs a policy checkpoint" in capsys.readouterr().err

    def test_eval_without_dataset_fails(self, tmp_path, capsys):
        config = tmp_path / "run.toml"
        config.write_text(base_toml(tmp_path))
        assert main(["eval", "--config", str(config), "--quiet"]) == 2
        assert "run `cryoplan gen` first" in capsys.readouterr().err


class TestAblate:
    def test_T_sweep_writes_csv(self, workspace):
        root, config = workspace
        assert main(["ablate", "--config", str(config), "--quiet",
                     "T", "--values", "1,2"]) == 0
        lines = (root / "run" / "ablation_T.csv").read_text().splitlines()
        assert lines[0] == "component,value,mean_dice,std_dice,train_time_s,error"
        assert len(lines) == 3
        assert [ln.split(",")[1] for ln in lines[1:]] == ["1", "2"]

    def test_bad_values_usage_error(self, workspace, capsys):
        _, config = workspace
        assert main(["ablate", "--config", str(config), "--quiet",
                     "T", "--values", "1,two"]) == 1
        assert "comma-separated numbers" in capsys.readouterr().err

    def test_unknown_component_rejected_by_parser(self, workspace, capsys):
        _, config = workspace
        assert main(["ablate", "--config", str(config), "D", "--values", "1"]) == 1


class TestRender:
    @pytest.fixture()
    def traj(self, workspace, tmp_path):
        root, config = workspace
        from cryoplan.config import load_run_config
        from cryoplan.environment import write_traj
        from cryoplan.eval import run_episode
        from cryoplan.planners import PlannerSpec
        from cryoplan.volume import load_case

        cfg = load_run_config(config)
        manifest = json.loads((root / "data" / "manifest.json").read_text())
        case_path = root / "data" / f"{manifest['dev'][0]}.cvol"
        case = load_case(case_path)
        plan, _ = run_episode(case, PlannerSpec("centre"), cfg.env, seed=0)
        traj_path = tmp_path / "plan.traj"
        write_traj(traj_path, plan)
        return case_path, traj_path

    def test_renders_requested_indices(self, workspace, traj, tmp_path, capsys):
        _, config = workspace
        case_path, traj_path = traj
        out = tmp_path / "imgs"
        assert main(["render", "--config", str(config), "--out", str(out),
                     str(case_path), str(traj_path), "--axis", "z",
                     "--indices", "10,16"]) == 0
        printed = capsys.readouterr().out.splitlines()
        assert len(printed) == 2
        for line in printed:
            assert line.endswith(".png") and (out / line.split("/")[-1]).exists()

    def test_default_index_is_middle_slice(self, workspace, traj, tmp_path):
        _, config = workspace
        case_path, traj_path = traj
        out = tmp_path / "imgs"
        assert main(["render", "--config", str(config), "--out", str(out),
                     str(case_path), str(traj_path), "--quiet"]) == 0
        names = [p.name for p in out.glob("*.png")]
        assert len(names) == 1 and "_z16" in names[0]

    def test_bad_axis_and_indices(self, workspace, traj, tmp_path, capsys):
        _, config = workspace
        case_path, traj_path = traj
        out = str(tmp_path / "imgs")
        assert main(["render", "--config", str(config), "--out", out,
                     str(case_path), str(traj_path), "--axis", "w"]) == 2
        assert main(["render", "--config", str(config), "--out", out,
                     str(case_path), str(traj_path), "--indices", "a,b"]) == 1
        capsys.readouterr()


class TestExitCodes:
    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["gen", "--config", str(tmp_path / "nope.toml")]) == 1
        assert "does not exist" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        config = tmp_path / "run.toml"
        config.write_text("mystery = 1\n")
        assert main(["gen", "--config", str(config)]) == 1
        assert "unknown key" in capsys.readouterr().err

    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 1
        capsys.readouterr()

    def test_no_arguments(self, capsys):
        assert main([]) == 1
        capsys.readouterr()

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "gen" in capsys.readouterr().out
