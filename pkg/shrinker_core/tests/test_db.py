from utils import db


def test_run_ids_are_deterministic():
    config = {'c0': 3.0, 'refinement': 4}
    assert db.make_run_id('solve', config) == db.make_run_id('solve', dict(reversed(config.items())))
    assert db.make_run_id('solve', config) != db.make_run_id('verify', config)
    assert db.make_run_id('solve', config) != db.make_run_id('solve', {'c0': 2.0, 'refinement': 4})


def test_registry_records_runs(registry):
    config = {'tau': 0.0625, 'c0': 3.0}
    run_id = db.make_run_id('solve', config)
    db.create_run(run_id, 'solve', config)

    record = db.get_run(run_id)
    assert record['command'] == 'solve'
    assert record['status'] == 'running'
    assert record['config'] == config

    db.update_run_status(run_id, 'completed')
    assert db.get_run(run_id)['status'] == 'completed'
    assert [run['id'] for run in db.list_runs(status='completed')] == [run_id]
    assert db.list_runs(status='failed') == []


def test_registry_keeps_latest_output_per_step(registry):
    run_id = db.make_run_id('verify', {})
    db.create_run(run_id, 'verify', {})
    db.save_run_output(run_id, 'compute', {'passed': False})
    db.save_run_output(run_id, 'compute', {'passed': True})
    db.save_run_output(run_id, 'export', {'files': ['a.json']})

    outputs = db.get_run_outputs(run_id)
    assert outputs == {'compute': {'passed': True}, 'export': {'files': ['a.json']}}


def test_audit_log(registry):
    run_id = db.make_run_id('spectrum', {'phi0': [0.3]})
    db.log_audit_event(run_id, 'run_started', {'command': 'spectrum'})
    db.log_audit_event(run_id, 'run_completed')

    events = db.get_audit_log(run_id)
    assert [event['event_type'] for event in events] == ['run_started', 'run_completed']
    assert events[1]['metadata'] is None


def test_missing_run(registry):
    assert db.get_run('no-such-run') is None
    assert db.get_run_outputs('no-such-run') == {}
