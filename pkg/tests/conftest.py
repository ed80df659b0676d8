import pytest

from chainforge.module_db import default_database


@pytest.fixture(scope="session")
def db():
    return default_database()


@pytest.fixture()
def db_path(tmp_path, db):
    from chainforge.module_db import save_database

    path = tmp_path / "db.json"
    save_database(db, path)
    return path
