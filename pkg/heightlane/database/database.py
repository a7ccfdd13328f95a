"""
Database Configuration Module

This module handles the run registry connection setup and session management.
It uses SQLAlchemy as the ORM; the URL comes from HEIGHTLANE_DATABASE_URL and
defaults to a local SQLite file.
"""

from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from heightlane.config import DATABASE_URL

# SQLite connections are shared between the API worker threads
connect_args = {"check_same_thread": False} if DATABASE_URL.startswith("sqlite") else {}

# Create SQLAlchemy engine instance
engine = create_engine(DATABASE_URL, connect_args=connect_args)

# autocommit=False: Changes are not automatically committed
# autoflush=False: Changes are not automatically flushed to the database
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

# Declarative base class inherited by all registry models
Base = declarative_base()


def init_db() -> None:
    """Create registry tables that do not exist yet."""
    from heightlane.database import models  # noqa: F401

    Base.metadata.create_all(bind=engine)
