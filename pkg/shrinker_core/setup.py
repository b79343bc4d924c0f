"""
Setup Script for the Shrinker Core Toolkit
Checks the environment, creates the data and output directories, initializes
the run registry and runs a short self-test
"""
import os
import sys
from pathlib import Path

# Add current directory to path
sys.path.insert(0, str(Path(__file__).parent))

from dotenv import load_dotenv

from utils import db
from utils.config import get_thread_count, load_defaults

ENV_TEMPLATE = """# Worker cap for parameter sweeps
SHRINKER_THREADS=4
# Run registry location (default: data/runs.db)
# SHRINKER_DB_PATH=
"""


def check_env_vars() -> bool:
    """Report the optional environment settings"""
    print("Checking environment variables...")

    load_dotenv()

    optional_vars = {
        'SHRINKER_THREADS': 'Worker cap for sweeps (default 4)',
        'SHRINKER_DB_PATH': 'Run registry location (default data/runs.db)',
    }

    for var, description in optional_vars.items():
        value = os.getenv(var)
        if value:
            print(f"  ✓ {var}: {value}")
        else:
            print(f"  ⚠ {var}: Not set ({description})")

    try:
        print(f"  ✓ Using {get_thread_count()} worker threads")
    except Exception as e:
        print(f"  ✗ {e}")
        return False

    print("\n✓ Environment variables OK")
    return True


def check_packages() -> bool:
    """Import the numerical stack and make sure jax runs in double precision"""
    print("\nChecking packages...")

    try:
        import jax
        import numpy
        import pandas
        import scipy
        import trimesh
        import yaml
        from stages import stage2_transforms  # noqa: F401  enables 64-bit jax
    except ImportError as e:
        print(f"  ✗ Missing package: {e}")
        return False

    if not jax.config.jax_enable_x64:
        print("  ✗ jax is not running in 64-bit mode")
        return False

    for module in (numpy, scipy, jax, trimesh, pandas, yaml):
        print(f"  ✓ {module.__name__} {getattr(module, '__version__', '')}")
    return True


def create_directories():
    """Create the registry and output directories"""
    print("\nCreating directories...")

    base = Path(__file__).parent
    output = Path(load_defaults()['output_dir'])
    dirs = [
        base / 'data',
        output if output.is_absolute() else base / output,
    ]

    for dir_path in dirs:
        dir_path.mkdir(parents=True, exist_ok=True)
        print(f"  ✓ {dir_path}")

    print("✓ Directories created")


def init_database() -> bool:
    """Initialize SQLite run registry"""
    print("\nInitializing run registry...")

    try:
        db.init_database()
        print(f"✓ Registry initialized at {db.get_db_path()}")
        return True
    except Exception as e:
        print(f"✗ Registry initialization failed: {e}")
        return False


def create_sample_env():
    """Create a .env file with the optional settings if it doesn't exist"""
    env_path = Path(__file__).parent / '.env'

    if env_path.exists():
        return

    print("\nCreating .env file...")
    env_path.write_text(ENV_TEMPLATE)
    print(f"✓ Created {env_path}")


def run_tests() -> bool:
    """Quick self-test: one surface point and a coarse mesh"""
    print("\nRunning validation tests...")

    try:
        from stages.stage1_scherk import gauss_map, surface_point
        from stages.stage3_discretize import build_mesh, check_mesh
        print("  ✓ Module imports OK")
    except Exception as e:
        print(f"  ✗ Module import failed: {e}")
        return False

    try:
        normal = gauss_map(surface_point(0.0, 0.0))
        assert abs(normal[1] - 1.0) < 1e-12
        print("  ✓ Gauss map OK")
    except Exception as e:
        print(f"  ✗ Gauss map check failed: {e}")
        return False

    try:
        passed, issues = check_mesh(build_mesh(0.3, 2))
        assert passed, issues
        print("  ✓ Punctured mesh OK")
    except Exception as e:
        print(f"  ✗ Mesh check failed: {e}")
        return False

    try:
        db.list_runs(limit=1)
        print("  ✓ Registry connection OK")
    except Exception as e:
        print(f"  ✗ Registry connection failed: {e}")
        return False

    print("✓ All validation tests passed")
    return True


def main():
    """Main setup function"""
    import argparse

    parser = argparse.ArgumentParser(description='Setup the shrinker core toolkit')
    parser.add_argument('--test', action='store_true', help='Run validation tests only')

    args = parser.parse_args()

    print("=" * 60)
    print("Shrinker Core - Setup")
    print("=" * 60)

    if args.test:
        sys.exit(0 if run_tests() else 1)

    create_sample_env()

    if not check_env_vars() or not check_packages():
        print("\n✗ Setup incomplete")
        sys.exit(1)

    create_directories()

    if not init_database():
        print("\n✗ Setup failed at registry initialization")
        sys.exit(1)

    if not run_tests():
        print("\n⚠ Setup completed with warnings: Some validation tests failed")

    print("\n" + "=" * 60)
    print("✓ Setup Complete!")
    print("=" * 60)
    print("\nNext steps:")
    print("  1. Verify the analytic identities:")
    print("     python main.py verify")
    print("  2. Build an approximate core with 8 handles:")
    print("     python main.py build-core --n 8 --c 3")
    print("  3. Run the spectral sweep:")
    print("     python main.py spectrum --phi0 0.3,0.15,0.075")
    print()


if __name__ == '__main__':
    main()
