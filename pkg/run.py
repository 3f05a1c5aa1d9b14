# run.py
"""
Sparsification Lab - Main Entry Point

    python run.py <neuron|prune|analyze|gen-data|report> [options]
"""

import sys
import logging
import signal

logger = logging.getLogger(__name__)


# ============================================
# PRE-FLIGHT CHECKS
# ============================================

def validate_environment() -> bool:
    """Validate settings and make sure the output root exists"""
    logger.debug("🔍 Step 1/2: Validating environment...")

    try:
        from config import settings

        settings.OUTPUT_ROOT.mkdir(parents=True, exist_ok=True)
        logger.debug(f"✅ Output root: {settings.OUTPUT_ROOT}")
        logger.debug(f"✅ Workers: {settings.WORKERS}")
        return True

    except Exception as e:
        logger.error(f"❌ Environment validation failed: {e}")
        return False


def check_registry() -> bool:
    """Create registry tables on demand; a missing registry only warns"""
    logger.debug("🔍 Step 2/2: Checking registry...")

    try:
        from config import settings
        from database.connection import init_registry, test_connection

        url = settings.database_url_for(settings.OUTPUT_ROOT)
        init_registry(url)
        if not test_connection(url):
            logger.warning("⚠️  Registry not reachable, runs will not be recorded")
        else:
            logger.debug("✅ Registry: OK")

    except Exception as e:
        logger.warning(f"⚠️  Registry check failed: {e}")

    return True


# ============================================
# SIGNAL HANDLERS
# ============================================

def signal_handler(signum, frame):
    """Handle shutdown signals; finished levels stay on disk for resume"""
    logger.info("\n⚠️  Received shutdown signal. Stopping...")
    sys.exit(130)


# ============================================
# MAIN
# ============================================

def main() -> int:
    """Main entry point"""
    signal.signal(signal.SIGINT, signal_handler)
    signal.signal(signal.SIGTERM, signal_handler)

    if not validate_environment():
        return 1
    check_registry()

    from lab.main import cli_main
    return cli_main(sys.argv[1:])


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logger.info("\n👋 Goodbye!")
        sys.exit(130)
    except Exception as e:
        logger.exception(f"💥 Fatal error: {e}")
        sys.exit(1)
