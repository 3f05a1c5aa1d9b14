# tests/test_cli.py
"""End-to-end runs of the lab subcommands"""

import json

import pandas as pd
import pytest

from database import connection, crud
from lab.experiment import dump_config
from lab.main import EXIT_CONFIG, EXIT_IO, build_parser, cli_main
from lab.utils.datasets import load_task_file


def _error(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture
def config_file(tmp_path, tiny_config):
    path = tmp_path / 'tiny.yaml'
    path.write_text(dump_config(tiny_config), encoding='utf-8')
    return path


@pytest.fixture
def finished_runs(tmp_path, config_file):
    root = tmp_path / 'matrix'
    status = cli_main(['prune', '--config', str(config_file), '--scheme', 'lrr', '--scheme', 'imp',
                       '--seeds', '2', '--output-root', str(root)])
    assert status == 0
    return root


class TestParser:

    def test_subcommand_required(self):
        assert cli_main([]) == 2

    def test_unknown_scheme(self):
        assert cli_main(['prune', '--scheme', 'magic']) == 2

    def test_neuron_defaults(self):
        args = build_parser().parse_args(['neuron'])
        assert (args.d, args.n, args.levels, args.seeds) == (10, 1000, 3, 10)
        assert args.target_sparsity == 0.9


class TestGenData:

    def test_writes_a_task(self, tmp_path):
        out = tmp_path / 'task.npz'
        assert cli_main(['gen-data', '--out', str(out), '--classes', '3', '--dim', '5',
                         '--n-train', '40', '--n-test', '10', '--seed', '2']) == 0
        task = load_task_file(out)
        assert task.train.inputs.shape == (40, 5)
        assert task.classes == 3

    def test_dim_below_classes(self, tmp_path, capsys):
        status = cli_main(['gen-data', '--out', str(tmp_path / 't.npz'), '--classes', '8', '--dim', '4'])
        assert status == EXIT_CONFIG
        assert _error(capsys)['error'] == 'ConfigError'


class TestPrune:

    def test_one_directory_per_scheme_and_seed(self, finished_runs):
        names = sorted(p.name for p in finished_runs.iterdir() if p.is_dir())
        assert names == ['imp_magnitude_global_seed0', 'imp_magnitude_global_seed1',
                         'lrr_magnitude_global_seed0', 'lrr_magnitude_global_seed1']
        metrics = pd.read_csv(finished_runs / 'lrr_magnitude_global_seed1' / 'metrics.csv')
        assert metrics['level'].tolist() == [0, 1, 2, 3]
        assert set(metrics['scheme']) == {'lrr'}

    def test_runs_are_registered(self, finished_runs):
        url = f"sqlite:///{(finished_runs / 'registry.sqlite').resolve()}"
        with connection.get_session(url) as session:
            runs = crud.list_runs(session)
            assert len(runs) == 4
            assert {r.status for r in runs} == {'finished'}
            assert len(crud.get_level_results(session, runs[0].id)) == 4
        connection.dispose_engine(url)

    def test_worker_pool_matches_serial(self, tmp_path, config_file):
        serial, pooled = tmp_path / 'serial', tmp_path / 'pooled'
        common = ['prune', '--config', str(config_file), '--seeds', '2', '--levels', '2']
        assert cli_main(common + ['--output-root', str(serial), '--workers', '1']) == 0
        assert cli_main(common + ['--output-root', str(pooled), '--workers', '2']) == 0
        for name in ('imp_magnitude_global_seed0', 'imp_magnitude_global_seed1'):
            assert (serial / name / 'metrics.csv').read_bytes() == (pooled / name / 'metrics.csv').read_bytes()

    def test_mask_transplant_by_seed(self, finished_runs, config_file):
        source = str(finished_runs / 'lrr_magnitude_global_seed{seed}')
        assert cli_main(['prune', '--config', str(config_file), '--scheme', 'imp', '--seeds', '1',
                         '--mask-run', source, '--output-root', str(finished_runs)]) == 0
        assert (finished_runs / 'imp_magnitude_global_maskxfer_seed0' / 'metrics.csv').is_file()

    def test_overrides(self, tmp_path, config_file):
        root = tmp_path / 'short'
        assert cli_main(['prune', '--config', str(config_file), '--levels', '1', '--epochs', '2',
                         '--criterion', 'random_balanced', '--output-root', str(root)]) == 0
        metrics = pd.read_csv(root / 'imp_random_balanced_seed0' / 'metrics.csv')
        assert metrics['level'].tolist() == [0, 1]

    def test_crashed_run_does_not_stop_the_others(self, tmp_path, config_file, monkeypatch):
        from lab.handlers import prune as prune_handler

        real = prune_handler.run_iterative_pruning

        def crash_seed_zero(config, run_dir=None):
            if config.seed == 0:
                raise RuntimeError('worker died')
            return real(config, run_dir=run_dir)

        monkeypatch.setattr(prune_handler, 'run_iterative_pruning', crash_seed_zero)
        root = tmp_path / 'crash'
        with pytest.raises(RuntimeError, match='worker died'):
            cli_main(['prune', '--config', str(config_file), '--seeds', '2', '--workers', '1',
                      '--output-root', str(root)])

        url = f"sqlite:///{(root / 'registry.sqlite').resolve()}"
        with connection.get_session(url) as session:
            status = {r.seed: (r.status, r.error) for r in crud.list_runs(session)}
        connection.dispose_engine(url)
        assert status[0] == ('failed', 'RuntimeError: worker died')
        assert status[1] == ('finished', None)

    def test_missing_config(self, tmp_path, capsys):
        assert cli_main(['prune', '--config', str(tmp_path / 'absent.yaml')]) == EXIT_IO
        assert _error(capsys)['error'] == 'FileNotFoundError'

    def test_unknown_config_key(self, tmp_path, capsys):
        path = tmp_path / 'bad.yaml'
        path.write_text("pruning:\n  shceme: lrr\n", encoding='utf-8')
        assert cli_main(['prune', '--config', str(path)]) == EXIT_CONFIG
        error = _error(capsys)
        assert error['error'] == 'ConfigError'
        assert 'shceme' in error['message']


class TestReport:

    def test_aggregates_over_seeds(self, finished_runs, capsys):
        assert cli_main(['report', '--output-root', str(finished_runs)]) == 0
        summary = pd.read_csv(finished_runs / 'report' / 'summary_test_acc.csv')
        assert set(summary['group']) == {'imp_magnitude_global', 'lrr_magnitude_global'}
        assert set(summary['seeds']) == {2}
        assert (finished_runs / 'report' / 'summary_train_loss.csv').is_file()
        assert 'lrr_magnitude_global' in capsys.readouterr().out

    def test_empty_root(self, tmp_path):
        assert cli_main(['report', '--output-root', str(tmp_path / 'nothing')]) == 0


class TestAnalyze:

    def test_histograms_and_comparison(self, finished_runs, tmp_path):
        lrr = finished_runs / 'lrr_magnitude_global_seed0'
        imp = finished_runs / 'imp_magnitude_global_seed0'
        out = tmp_path / 'analysis'
        assert cli_main(['analyze', str(lrr), str(imp), '--compare', str(lrr), str(imp),
                         '--out', str(out)]) == 0
        settle = pd.read_csv(out / 'lrr_magnitude_global_seed0_settle.csv')
        assert settle['bin'].tolist() == [0, 1, 2, 3]
        assert (out / 'imp_magnitude_global_seed0_flips.dat').is_file()
        medians = pd.read_csv(out / 'median_settle.csv')
        assert len(medians) == 2
        diff = pd.read_csv(out / 'flipdiff_lrr_magnitude_global_seed0__imp_magnitude_global_seed0.csv')
        assert (diff['difference'] == diff['flips_a'] - diff['flips_b']).all()
        assert diff['flips_a'].iloc[0] == 0

    def test_run_without_ledger(self, tmp_path, capsys):
        (tmp_path / 'empty_run').mkdir()
        assert cli_main(['analyze', str(tmp_path / 'empty_run'), '--out', str(tmp_path / 'a')]) == EXIT_IO


class TestNeuron:

    def test_closed_form(self, capsys):
        assert cli_main(['neuron', '--closed-form', '--n', '200', '--t-end', '2', '--step', '0.01']) == 0
        out = capsys.readouterr().out
        error = float(out.strip().splitlines()[-1].split('=')[-1])
        assert error < 1e-6

    def test_univariate_table(self, capsys):
        assert cli_main(['neuron', '--univariate', '--n', '200', '--seeds', '1']) == 0
        out = capsys.readouterr().out
        for label in ('PosPos', 'PosNeg', 'NegPos', 'NegNeg'):
            assert label in out

    def test_quadrant_rows(self, tmp_path, isolated_output_root):
        csv = tmp_path / 'quadrants.csv'
        assert cli_main(['neuron', '--d', '2', '--n', '100', '--seeds', '1', '--levels', '1',
                         '--epochs-per-level', '50', '--csv', str(csv), '--tag', 'smoke']) == 0
        rows = pd.read_csv(csv)
        assert len(rows) == 8
        assert set(rows['scheme']) == {'imp', 'lrr'}
        with connection.get_session() as session:
            assert len(crud.get_quadrant_results(session, 'smoke')) == 8
        connection.dispose_engine()
