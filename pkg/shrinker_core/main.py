"""
Command-Line Entry Point
Builds cores, solves the Dirichlet problem, runs spectral sweeps and the
verification suite, and records every run in the registry
"""
import argparse
import json
import sys
import traceback
from typing import Any, Callable, Dict, List, Optional

from utils import db
from utils.config import load_config, load_environment, parse_float_list
from utils.errors import InvalidParameterError, ShrinkerError
from utils.validation import (
    EXPORT_FORMATS,
    F_KINDS,
    JACOBIAN_MODES,
    validate_c0,
    validate_core_params,
    validate_export_formats,
    validate_phi0,
    validate_refinement,
    validate_solve_params,
)

from stages import stage5_spectral
from stages import stage6_solver
from stages import stage7_verify
from stages import stage8_export
from stages.stage3_discretize import SYMMETRY_CLASSES
from stages.stage4_graphgeom import graph_surface

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

# CLI flag -> config key
OVERRIDES = {
    'c': 'c0',
    'refinement': 'refinement',
    'newton_tol': 'newton_tol',
    'max_iters': 'max_iters',
    'jacobian_mode': 'jacobian_mode',
    'f': 'f_kind',
    'f_norm': 'f_norm',
    'seed': 'seed',
    'k': 'eigen_k',
    'formats': 'export_formats',
    'output': 'output_dir',
}


class UsageError(Exception):
    """Invalid command-line parameters (exit code 2)"""


def compute_build_core(config: Dict[str, Any]) -> Dict[str, Any]:
    output = stage6_solver.run_core(config, solve=bool(config.get('solve')))
    if output['success']:
        output['surface'] = {
            'vertices': output.pop('vertices'), 'faces': output.pop('faces'), 'h_tilde': output.pop('h_tilde'),
        }
        solve = output['report'].get('solve')
        if solve is not None:
            threshold = 16.0 * float(config['newton_tol'])
            output['report']['residual_threshold'] = threshold
            output['success'] = output['report']['rescaled_residual'] <= threshold
    return output


def compute_solve(config: Dict[str, Any]) -> Dict[str, Any]:
    output = stage6_solver.run_solve(config)
    if output['success']:
        result, mesh = output.pop('result'), output.pop('mesh')
        vertices, slab = graph_surface(mesh, result.h, result.tau)
        output['surface'] = {'vertices': vertices, 'faces': slab.triangles, 'h': result.h[slab.source]}
    return output


def compute_spectrum(config: Dict[str, Any]) -> Dict[str, Any]:
    output = stage5_spectral.run(
        config['phi0_list'], config['sym_class'], int(config['eigen_k']), int(config['refinement']),
        closed=bool(config.get('closed')), min_gap=float(config['kernel_min_gap']),
    )
    if output['success']:
        output['sweep'] = output.pop('reports')
        output['report'] = {
            'runs': output['sweep'],
            'monotone': output['monotone'],
            'all_gaps_positive': output['all_gaps_positive'],
            'closed': output.get('closed'),
        }
        output['success'] = output['all_gaps_positive']
    return output


def compute_verify(config: Dict[str, Any]) -> Dict[str, Any]:
    return stage7_verify.run(config, config.get('break'))


COMPUTE: Dict[str, Callable[[Dict[str, Any]], Dict[str, Any]]] = {
    'build-core': compute_build_core,
    'solve': compute_solve,
    'spectrum': compute_spectrum,
    'verify': compute_verify,
}


def validate_command(command: str, config: Dict[str, Any]) -> None:
    """Fail fast on invalid parameters, before any mesh is allocated"""
    if command == 'build-core':
        valid, issues = validate_core_params(config)
    elif command == 'solve':
        valid, issues = validate_solve_params(config)
    elif command == 'spectrum':
        issues = validate_refinement(config['refinement'])[1]
        for phi0 in config['phi0_list']:
            issues.extend(validate_phi0(phi0)[1])
        if int(config['eigen_k']) < 1:
            issues.append(f"k must be >= 1, got {config['eigen_k']}")
        valid = not issues
    elif command == 'verify':
        issues = validate_c0(config['c0'])[1] + validate_refinement(config['refinement'])[1]
        valid = not issues
    else:
        valid, issues = True, []
    valid_formats, format_issues = validate_export_formats(config['export_formats'])
    if not (valid and valid_formats):
        raise UsageError('; '.join(issues + format_issues))


def execute_command(command: str, config: Dict[str, Any], json_path: Optional[str] = None) -> int:
    """
    Run one command with registry bookkeeping and export

    Args:
        command: Command name
        config: Merged, validated configuration
        json_path: Optional extra location for the JSON report

    Returns:
        Process exit code
    """
    run_id = db.make_run_id(command, config)
    try:
        print(f"\n{'=' * 60}")
        print(f"Executing {command} (run {run_id})")
        print(f"{'=' * 60}")

        db.create_run(run_id, command, config)
        output = COMPUTE[command](config)
        report = stage8_export.plain_data(output.get('report', {'error': output.get('error')}))
        db.save_run_output(run_id, command, report)

        formats = [item.strip().lower() for item in str(config['export_formats']).split(',') if item.strip()]
        exported = stage8_export.run(
            run_id, command, config, report, config['output_dir'], formats,
            surface=output.get('surface'), sweep=output.get('sweep'),
        )
        if json_path:
            stage8_export.write_json_report(json_path, {'command': command, 'config': config, 'report': report})
        db.save_run_output(run_id, 'export', {'files': exported.get('files', [])})

        success = bool(output.get('success')) and exported['success']
        db.update_run_status(run_id, 'completed' if success else 'failed')
        db.log_audit_event(run_id, f"{command}_{'completed' if success else 'failed'}",
                           metadata={'error': output.get('error')} if output.get('error') else None)

        if success:
            print(f"✓ {command} completed successfully")
            return EXIT_OK
        failed = report.get('failed') or [output.get('error', 'see report')]
        print(f"✗ {command} failed: {', '.join(map(str, failed))}")
        return EXIT_FAILURE

    except ShrinkerError as e:
        print(f"✗ {command} failed: {e}")
        traceback.print_exc()
        db.update_run_status(run_id, 'failed')
        db.log_audit_event(run_id, f"{command}_failed", metadata={'error': str(e)})
        return EXIT_FAILURE


def export_run(run_id: str, formats: Optional[str], output_dir: Optional[str]) -> int:
    """Recompute a stored run from its configuration and export it again"""
    record = db.get_run(run_id)
    if record is None:
        raise UsageError(f"Run {run_id} not found")
    config = dict(record['config'])
    if formats:
        config['export_formats'] = formats
    if output_dir:
        config['output_dir'] = output_dir
    validate_command(record['command'], config)
    return execute_command(record['command'], config)


def list_runs(status: Optional[str], limit: int) -> int:
    runs = db.list_runs(status=status, limit=limit)
    print(f"\nRecent runs ({len(runs)}):")
    print("-" * 80)
    for run in runs:
        print(f"ID: {run['id']}")
        print(f"  Command: {run['command']}")
        print(f"  Status: {run['status']}")
        print(f"  Updated: {run['updated_at']}")
        print()
    return EXIT_OK


def show_run(run_id: str) -> int:
    record = db.get_run(run_id)
    if not record:
        print(f"Run {run_id} not found")
        return EXIT_FAILURE
    print(f"Run {run_id}:")
    print(f"  Command: {record['command']}")
    print(f"  Status: {record['status']}")
    print(f"  Config: {json.dumps(record['config'], sort_keys=True)}")
    outputs = db.get_run_outputs(run_id)
    print(f"  Steps: {', '.join(sorted(outputs))}")
    for event in db.get_audit_log(run_id):
        print(f"  [{event['timestamp']}] {event['event_type']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, help='Flat YAML config file (overrides defaults)')
    common.add_argument('--c', type=float, help='Truncation constant C0')
    common.add_argument('--refinement', type=int, help='Octahedron subdivision level')
    common.add_argument('--formats', type=str, help=f"Export formats, comma separated ({', '.join(EXPORT_FORMATS)})")
    common.add_argument('--output', type=str, help='Output directory')
    common.add_argument('--json', type=str, help='Also write the JSON report to this path')

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument('--f', choices=F_KINDS, help='Boundary data')
    solver.add_argument('--f-norm', type=float, help='max|f| of random boundary data')
    solver.add_argument('--seed', type=int, help='Seed of random boundary data')
    solver.add_argument('--newton-tol', type=float, help='Weighted residual tolerance')
    solver.add_argument('--max-iters', type=int, help='Newton iteration cap')
    solver.add_argument('--jacobian-mode', choices=JACOBIAN_MODES, help='Jacobian used by the Newton step')

    parser = argparse.ArgumentParser(description='Shrinker core construction and verification')
    sub = parser.add_subparsers(dest='command', required=True)

    core = sub.add_parser('build-core', parents=[common, solver], help='Build the N-handle core')
    core.add_argument('--n', type=int, required=True, help='Handle count N (tau = 1/N)')
    core.add_argument('--solve', action='store_true', help='Correct the core by solving F = 0')

    solve = sub.add_parser('solve', parents=[common, solver], help='Solve the Dirichlet problem')
    solve.add_argument('--tau', type=float, required=True, help='Bending parameter')

    spectrum = sub.add_parser('spectrum', parents=[common], help='Dirichlet spectra of punctured spheres')
    spectrum.add_argument('--phi0', type=str, help='Puncture radii, comma separated')
    spectrum.add_argument('--class', dest='sym_class', choices=list(SYMMETRY_CLASSES),
                          default='xz-inv-yz-anti', help='Symmetry class')
    spectrum.add_argument('--k', type=int, help='Eigenpairs per run')
    spectrum.add_argument('--closed', action='store_true', help='Also validate on the closed sphere')

    verify = sub.add_parser('verify', parents=[common], help='Run the analytic identity suite')
    verify.add_argument('--break', dest='break_checks', action='append', choices=list(stage7_verify.CHECK_NAMES),
                        help='Inject a perturbation into a check (repeatable)')
    verify.add_argument('--seed', type=int, help='Seed of the random fields')

    export = sub.add_parser('export', help='Recompute and export a stored run')
    export.add_argument('--load', type=str, required=True, help='Run id')
    export.add_argument('--formats', type=str, help='Export formats, comma separated')
    export.add_argument('--output', type=str, help='Output directory')

    runs = sub.add_parser('runs', help='List runs or show one')
    runs.add_argument('--load', type=str, help='Run id to show')
    runs.add_argument('--status', type=str, help='Filter by status')
    runs.add_argument('--limit', type=int, default=20, help='Maximum number of runs')

    return parser


def command_config(args: argparse.Namespace) -> Dict[str, Any]:
    """Merge defaults, --config file and flags for one command"""
    overrides = {key: getattr(args, flag, None) for flag, key in OVERRIDES.items()}
    config = load_config(args.config, overrides)

    if args.command == 'build-core':
        config.update({'n': args.n, 'solve': args.solve})
    elif args.command == 'solve':
        config['tau'] = args.tau
    elif args.command == 'spectrum':
        config['phi0_list'] = parse_float_list(args.phi0 if args.phi0 is not None else config['eigen_sweep'])
        config['sym_class'] = args.sym_class
        config['closed'] = args.closed
    elif args.command == 'verify':
        config['break'] = sorted(set(args.break_checks or []))
    return config


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)

    load_environment()
    db.init_database()

    try:
        if args.command == 'runs':
            return show_run(args.load) if args.load else list_runs(args.status, args.limit)
        if args.command == 'export':
            return export_run(args.load, args.formats, args.output)

        config = command_config(args)
        validate_command(args.command, config)
        return execute_command(args.command, config, args.json)

    except (UsageError, InvalidParameterError) as e:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ShrinkerError as e:
        print(f"✗ {e}")
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
