import nox
import nox.command


@nox.session()
def ruff(session: nox.Session):
    session.install("ruff")
    session.run("ruff", "format", "--diff", "fusion_bounds", "tests")
    session.run("ruff", "check", "fusion_bounds", "tests")


@nox.session()
def mypy(session: nox.Session):
    session.install("mypy", "pandas-stubs", "scipy-stubs", ".")
    session.run("mypy", "fusion_bounds", *session.posargs)


@nox.session()
def tests(session: nox.Session):
    session.install("-r", "requirements.txt", "pytest", ".")
    session.run("pytest", *session.posargs)
