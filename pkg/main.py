"""
QND decoherence simulator - main entry point.

This script handles:
- Adding the project root to Python path for imports
- Checking that the numerical stack is installed
- Handing the command line over to src.cli
- Gracefully handling Ctrl+C shutdown

Usage:
    python main.py simulate scenarios/two_level_kicks.json --out output/kicks
    python main.py compare scenarios/smoothed_kicks.json
    python main.py validate scenarios/commuting_triple.json
    python main.py limit scenarios/continuous_gaussian.json
"""

import sys
from pathlib import Path

# Add the project root directory to Python path
# This ensures imports like 'src.model' work correctly
sys.path.insert(0, str(Path(__file__).parent))

if __name__ == "__main__":
    # Catch the usual "forgot to activate the virtual environment" case early
    try:
        import numpy  # noqa: F401
        import scipy  # noqa: F401
    except ImportError as exc:
        sys.stderr.write("\n" + "=" * 60 + "\n")
        sys.stderr.write(f"ERROR: {exc.name} is not installed in the current Python environment\n")
        sys.stderr.write("=" * 60 + "\n")
        sys.stderr.write("\nActivate the virtual environment and run:\n")
        sys.stderr.write("   pip install -r requirements.txt\n")
        sys.exit(2)

    from src.cli import main

    try:
        sys.exit(main())
    except KeyboardInterrupt:
        sys.stderr.write("\nInterrupted\n")
        sys.exit(130)
