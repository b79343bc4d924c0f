import pytest

from stages import stage7_verify
from stages.stage7_verify import CHECK_NAMES, run_suite
from utils.errors import InvalidParameterError


def test_suite_passes(defaults):
    report = run_suite(defaults)
    assert report['passed'], report['failed']
    assert list(report['checks']) == list(CHECK_NAMES)
    assert report['checks']['minimality']['max_abs_H'] <= 1e-9
    assert min(report['checks']['minimality']['fd_orders']) >= 1.8
    assert report['checks']['scaling_identity']['max_abs_difference'] <= 1e-9
    assert report['checks']['supersolution']['admissibility'] == pytest.approx(-4.133, abs=1e-3)


@pytest.mark.parametrize('name', CHECK_NAMES)
def test_each_check_fails_when_broken(defaults, name):
    report = run_suite(defaults, broken=[name], checks=[name])
    assert not report['passed']
    assert report['failed'] == [name]
    assert report['checks'][name]['broken'] is True


def test_breaking_one_check_leaves_the_others(defaults):
    report = run_suite(defaults, broken=['minimality'], checks=['minimality', 'conformality'])
    assert report['failed'] == ['minimality']
    assert report['checks']['conformality']['passed']


def test_unknown_checks_are_rejected(defaults):
    with pytest.raises(InvalidParameterError):
        run_suite(defaults, broken=['flatness'])
    with pytest.raises(InvalidParameterError):
        run_suite(defaults, checks=['flatness'])


def test_run_reports_failure(defaults):
    result = stage7_verify.run(defaults, broken=['supersolution'])
    assert not result['success']
    assert result['report']['failed'] == ['supersolution']
