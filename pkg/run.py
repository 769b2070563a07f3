#!/usr/bin/env python3
"""
FunnelKit Runner
Command line launcher with logging and environment setup
"""

import os
import sys
import logging
from pathlib import Path

# Add the project root to Python path for proper module imports
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))


def setup_logging():
    """Configure console logging; the run config may raise the level or add a log file"""
    log_level = os.getenv('LOG_LEVEL', 'INFO').upper()
    logging.basicConfig(
        level=getattr(logging, log_level, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[logging.StreamHandler()]
    )


def check_environment():
    """
    Load environment overrides from a .env file next to this script if present
    """
    env_file = project_root / '.env'
    if env_file.exists():
        print("Loading environment from .env file")
        with open(env_file, 'r', encoding='utf-8') as f:
            for line in f:
                line = line.strip()
                if line and not line.startswith('#') and '=' in line:
                    key, value = line.split('=', 1)
                    os.environ.setdefault(key.strip(), value.strip())
    return True


def main():
    """
    Main entry point
    Sets up logging and the environment, then dispatches to the CLI
    """
    check_environment()
    setup_logging()
    logger = logging.getLogger(__name__)

    try:
        from app.main import main as cli_main
    except ImportError as e:
        logger.error(f"Failed to import FunnelKit: {e}")
        sys.exit(1)

    try:
        print("FunnelKit")
        print("=" * 50)
        exit_code = cli_main(sys.argv[1:])
        print("=" * 50)
        print(f"Finished with exit code {exit_code}")
        sys.exit(exit_code)
    except KeyboardInterrupt:
        print("\nFunnelKit stopped by user")
        sys.exit(130)


if __name__ == "__main__":
    main()
