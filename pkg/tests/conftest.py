import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from vetbench.platform import App, DeviceSpec, Platform, Trigger
from vetbench.policy import And, Atom, Const, Not, Or
from vetbench.scenarios import load_testbed

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion lines collected by test_acceptance, echoed after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def binary_device(name, initial="OFF", kind="actuator", **kw):
    return DeviceSpec(name, kind, ("OFF", "ON"), initial, **kw)


def binary_devices(names, initial="OFF"):
    return {n: binary_device(n, initial) for n in names}


def platform_with(devices, apps=(), chain_limit=25, hook=None):
    p = Platform(chain_limit=chain_limit, defense_hook=hook)
    for d in devices:
        p.install_device(d)
    for a in apps:
        p.install_app(a)
    return p


def on_trigger(device, value="ON"):
    return Trigger(device, Atom(device, "=", value))


# -- expression strategies over a fixed small vocabulary --------------------

BINARY = ("A", "B", "C")
TEMP_RANGE = (0, 5)


def atom_strategy(devices=BINARY, with_int=False):
    binary = st.builds(
        Atom,
        st.sampled_from(devices),
        st.sampled_from(["=", "!="]),
        st.sampled_from(["OFF", "ON"]),
    )
    if not with_int:
        return binary
    numeric = st.builds(
        Atom,
        st.just("T"),
        st.sampled_from(["=", "!=", "<", "<=", ">", ">="]),
        st.integers(*TEMP_RANGE),
    )
    return st.one_of(binary, numeric)


def expr_strategy(devices=BINARY, with_int=False, max_leaves=8):
    leaves = st.one_of(atom_strategy(devices, with_int), st.sampled_from([Const(True), Const(False)]))

    def extend(children):
        return st.one_of(
            st.builds(Not, children),
            st.builds(And, st.lists(children, min_size=2, max_size=3).map(tuple)),
            st.builds(Or, st.lists(children, min_size=2, max_size=3).map(tuple)),
        )

    return st.recursive(leaves, extend, max_leaves=max_leaves)


def python_oracle(expr) -> str:
    """Render an expression as Python source, independently of ``evaluate``."""
    if isinstance(expr, Atom):
        op = "==" if expr.op == "=" else expr.op
        return f"(s[{expr.device!r}] {op} {expr.value!r})"
    if isinstance(expr, Const):
        return repr(expr.value)
    if isinstance(expr, Not):
        return f"(not {python_oracle(expr.operand)})"
    joiner = " and " if isinstance(expr, And) else " or "
    return "(" + joiner.join(python_oracle(e) for e in expr.operands) + ")"


@pytest.fixture(scope="session")
def shared_config():
    return load_testbed("expat")


@pytest.fixture(scope="session")
def motivating_config():
    return load_testbed("motivating")


@pytest.fixture(scope="session")
def iotguard_config():
    return load_testbed("iotguard")


@pytest.fixture(scope="session")
def patriot_config():
    return load_testbed("patriot")


def simple_app(app_id, trigger_device, actions, value="ON", condition=None):
    from vetbench.platform import ActionCommand

    return App(
        app_id,
        on_trigger(trigger_device, value),
        tuple(ActionCommand(d, c) for d, c in actions),
        condition,
    )
