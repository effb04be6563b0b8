"""
DrowsyWatch - Smartwatch Drowsiness Detection
Main Application Entry Point

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from common.config import Config
from common.errors import DrowsyWatchError, UsageError
from common.logger import set_console_level, setup_logger
from drowsywatch.cli.commands import build_parser

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the DrowsyWatch command line"""

    # DDS_PASSPHRASE may come from a local .env file
    load_dotenv()

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    logger = setup_logger('DrowsyWatch')

    try:
        config = Config()
        level_name = 'DEBUG' if args.verbose else str(config.get('logging.level', 'INFO')).upper()
        set_console_level(getattr(logging, level_name, logging.INFO))

        logger.debug(f"Running '{args.command}' with config {config.config_file}")
        return args.handler(args, config)

    except UsageError as e:
        logger.error(f"Usage error: {e}")
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (DrowsyWatchError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
