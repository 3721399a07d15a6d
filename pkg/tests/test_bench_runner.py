import pytest

from src.services.bench_runner import (
    ROW_FIELDS, ExperimentConfig, ResultRow, emit_csv, emit_plotdata, plot_groups, read_csv,
    run_convergence, run_dynamic, run_many, sweep_configs,
)
from src.services.harness_config import ConfigError


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(method='lsm')
    with pytest.raises(ConfigError):
        ExperimentConfig(method='eam', invalidation='flag')
    with pytest.raises(ConfigError):
        ExperimentConfig(mode='dynamic')
    with pytest.raises(ConfigError):
        ExperimentConfig(pattern='zipf')
    with pytest.raises(ValueError):
        ExperimentConfig(selectivity=1.5)
    assert ExperimentConfig(pattern='newkeys').pattern == 'new_keys'
    assert ExperimentConfig(mode='dynamic', workload='read').index_only


def test_sweep_covers_one_to_five_percent():
    configs = sweep_configs(ExperimentConfig())
    assert [c.selectivity for c in configs] == [0.01, 0.02, 0.03, 0.04, 0.05]


def test_pam_converges_on_new_keys():
    row = run_convergence(ExperimentConfig(method='pam', pattern='new_keys', rows=2000))
    assert row.converged
    assert row.queries_to_convergence == 20
    assert row.sim_time_ns > 0
    assert row.init_sim_time_ns > 0
    assert row.invalidation == 'journal'


def test_query_cap_stops_unconverged_runs():
    row = run_convergence(ExperimentConfig(method='eam', pattern='random', rows=2000, query_cap=3))
    assert row.operations == 3
    assert not row.converged


def test_runs_are_deterministic():
    config = ExperimentConfig(method='am', invalidation='flag', pattern='sequential', rows=1500, query_cap=30)
    first, second = run_convergence(config), run_convergence(config)
    assert (first.sim_time_ns, first.bits_modified, first.reads) == \
        (second.sim_time_ns, second.bits_modified, second.reads)


def test_dynamic_workload_and_trace_replay(tmp_path):
    trace = tmp_path / 'a.trace'
    config = ExperimentConfig(mode='dynamic', method='pam', workload='A', rows=1000, scale=10,
                              trace_out=str(trace))
    row = run_dynamic(config)
    assert row.operations == 300
    assert trace.exists()

    replayed = run_dynamic(ExperimentConfig(mode='dynamic', method='pam', rows=1000, trace_in=str(trace)))
    assert replayed.sim_time_ns == row.sim_time_ns
    assert replayed.bits_modified == row.bits_modified


def test_index_only_workload():
    row = run_dynamic(ExperimentConfig(mode='dynamic', index='ub', workload='read', rows=2000, scale=1000))
    assert row.method == 'index'
    assert row.index == 'ub'
    assert row.operations == 1000


def test_csv_round_trip(tmp_path):
    rows = run_many([
        ExperimentConfig(method='pam', pattern='new_keys', rows=1000),
        ExperimentConfig(method='am', invalidation='journal', pattern='new_keys', rows=1000),
    ])
    path = tmp_path / 'results.csv'
    emit_csv(rows, str(path))
    assert path.read_text().splitlines()[0] == ','.join(ROW_FIELDS)
    assert read_csv(str(path)) == rows


def test_empty_csv_has_header_only(tmp_path):
    path = tmp_path / 'empty.csv'
    emit_csv([], str(path))
    assert path.read_text().strip() == ','.join(ROW_FIELDS)
    assert read_csv(str(path)) == []


def test_invalidation_figure_has_three_series(tmp_path):
    rows = [
        ResultRow(mode='convergence', method='am', index='pbt', invalidation=name, pattern='random',
                  selectivity=0.05, sim_time_ns=10, invalidation_ns=cost)
        for name, cost in [('flag', 300), ('bitmap', 40), ('journal', 0)]
    ]
    frame = plot_groups(rows)
    invalidation = frame[frame.figure == 'invalidation']
    assert sorted(invalidation.series) == ['bitmap', 'flag', 'journal']
    assert set(frame.figure) == {'invalidation', 'convergence-random'}
    emit_plotdata(rows, str(tmp_path / 'plot.csv'))
    assert (tmp_path / 'plot.csv').read_text().startswith('figure,series,x,metric,value')


@pytest.mark.slow
def test_eam_cuts_am_time_in_most_patterns():
    ratios = []
    for pattern in ('random', 'sequential', 'new_keys'):
        am = run_convergence(ExperimentConfig(method='am', invalidation='bitmap', pattern=pattern, rows=20000))
        eam = run_convergence(ExperimentConfig(method='eam', pattern=pattern, rows=20000))
        assert am.bits_modified > eam.bits_modified
        ratios.append(eam.sim_time_ns / am.sim_time_ns)
    assert sum(1 for r in ratios if 0.25 <= r <= 0.6) >= 2, ratios


@pytest.mark.slow
def test_invalidation_cost_ordering():
    costs = {
        name: run_convergence(ExperimentConfig(method='am', invalidation=name, pattern='new_keys',
                                               rows=20000)).invalidation_ns
        for name in ('flag', 'bitmap', 'journal')
    }
    assert costs['journal'] < costs['bitmap'] < costs['flag']
    assert costs['flag'] >= 4 * costs['bitmap']


@pytest.mark.slow
@pytest.mark.parametrize('pattern', ['random', 'sequential', 'new_keys'])
def test_pam_convergence_insensitive_to_index(pattern):
    times = [
        run_convergence(ExperimentConfig(method='pam', index=kind, pattern=pattern, rows=20000)).sim_time_ns
        for kind in ('bb', 'sb', 'ub')
    ]
    assert max(times) < 1.1 * min(times)


@pytest.mark.slow
def test_bb_fastest_on_read_workload():
    times = {
        kind: run_dynamic(ExperimentConfig(mode='dynamic', index=kind, workload='read', rows=20000,
                                           scale=100)).sim_time_ns
        for kind in ('bb', 'sb', 'ub')
    }
    assert times['bb'] < times['sb'] <= times['ub']


@pytest.mark.slow
def test_bb_fastest_on_insert_heavy_workload():
    def run(method, index='ub'):
        return run_dynamic(ExperimentConfig(mode='dynamic', method=method, index=index, workload='D',
                                            rows=20000, scale=10000)).sim_time_ns

    bb = run('pam', 'bb')
    assert bb < run('pam', 'sb')
    assert bb < run('pam', 'ub')
    assert bb < run('eam')


@pytest.mark.slow
@pytest.mark.parametrize('workload', ['C', 'D'])
def test_pam_bb_beats_eam_under_modifications(workload):
    def run(method, index='ub'):
        return run_dynamic(ExperimentConfig(mode='dynamic', method=method, index=index, workload=workload,
                                            rows=20000, scale=1000)).sim_time_ns

    assert run('pam', 'bb') <= 0.9 * run('eam')
