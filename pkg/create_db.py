# create_db.py
"""
Registry Initialization Script

Creates the run-registry tables under the configured output root.
"""

import sys
import logging

from sqlalchemy import func, inspect, select

from config import settings
from database.connection import init_registry, test_connection
from database.models import Base

logger = logging.getLogger(__name__)


def create_tables(url: str = None) -> bool:
    """Create all registry tables and list them"""
    url = url or settings.database_url_for(settings.OUTPUT_ROOT)

    print("=" * 60)
    print("🧪 Sparsification Lab - Registry Initialization")
    print("=" * 60)
    print()

    # Step 1: Create tables
    print("📊 Step 1: Creating registry tables...")

    try:
        engine = init_registry(url)
        print("✅ All tables created successfully!")
        print()

    except Exception as e:
        print(f"❌ Error creating tables: {e}")
        print()
        print("Troubleshooting:")
        print("1. Check that LAB_OUTPUT_ROOT is writable")
        print("2. Verify LAB_DATABASE_URL in .env")
        print()
        return False

    # Step 2: Test connection
    print("📡 Step 2: Testing registry connection...")

    if not test_connection(url):
        print("❌ Connection failed!")
        return False

    print("✅ Connection successful!")
    print()

    # Step 3: Verify tables
    print("🔍 Step 3: Verifying tables...")

    inspector = inspect(engine)
    missing = sorted(set(Base.metadata.tables) - set(inspector.get_table_names()))
    if missing:
        print(f"⚠️  Missing tables: {', '.join(missing)}")
        return False

    # existing registries keep their rows; report what is already recorded
    with engine.connect() as connection:
        for table in Base.metadata.sorted_tables:
            rows = connection.execute(select(func.count()).select_from(table)).scalar_one()
            columns = inspector.get_columns(table.name)
            print(f"   📊 {table.name:<18} {len(columns):>2} columns  {rows:>6} rows")

    print()
    print("=" * 60)
    print("🎉 Registry initialization completed!")
    print("=" * 60)
    print()
    print("Next steps:")
    print("1. Run: python run.py neuron --univariate")
    print("2. Run: python run.py prune --scheme imp --scheme lrr --seeds 3")
    print()

    return True


if __name__ == "__main__":
    try:
        success = create_tables()
        sys.exit(0 if success else 1)
    except KeyboardInterrupt:
        print("\n\n⚠️  Interrupted by user")
        sys.exit(1)
    except Exception as e:
        logger.exception(f"❌ Unexpected error: {e}")
        sys.exit(1)
