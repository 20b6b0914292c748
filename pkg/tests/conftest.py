import pytest

from emglitch import campaign, core, oracle, programs


@pytest.fixture(scope="session")
def nop_sled():
    return programs.load("nop-sled")


@pytest.fixture(scope="session")
def array_sum():
    return programs.load("array-sum")


@pytest.fixture(scope="session")
def ldr_r4_context():
    return campaign.prepare_context("ldr-r4")


@pytest.fixture(scope="session")
def nop_sled_context():
    return campaign.prepare_context("nop-sled")


@pytest.fixture(scope="session")
def nop_sled_search(nop_sled_context):
    """Memory-comparing replacement search against the third sled NOP.

    Session-scoped because the 65536-candidate table is the expensive part
    and several tests (uniqueness, planted replacements) reuse it.
    """
    ctx = nop_sled_context
    target = ctx.program.entry + 4
    pre = oracle.pre_state_at(ctx.program, target)
    return oracle.ReplacementSearch(
        ctx.program, target, pre, ctx.program.watchpoint,
        cycle_budget=ctx.cycle_budget,
        compare=oracle.CompareSpec(memory=True),
        watched=(programs.R0_RESULT_ADDR,))


def golden_run(program, budget=100000):
    image = program.build_image()
    state = program.initial_state()
    result = core.run_to_watchpoint(state, image, program.watchpoint, budget)
    return result, image
