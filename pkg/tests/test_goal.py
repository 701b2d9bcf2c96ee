import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsim.goal import (
    CALC,
    RECV,
    SEND,
    GoalSyntaxError,
    Schedule,
    ScheduleOp,
    ScheduleValidationError,
    emit_goal,
    gen_compute_collective,
    gen_dissemination,
    gen_ring_allreduce,
    parse_goal,
    schedule_from_json,
    schedule_to_json,
    validate,
)


class TestParse:
    def test_minimal_program(self):
        s = parse_goal(
            "num_ranks 2\nrank 0 { l1: send 16b to 1 }\nrank 1 { l1: recv 16b from 0 }"
        )
        assert s.nranks == 2
        assert s.ops[0] == (ScheduleOp(0, SEND, 1, 16),)
        assert s.ops[1] == (ScheduleOp(0, RECV, 0, 16),)

    def test_requires_statement(self):
        s = parse_goal(
            "num_ranks 2\n"
            "rank 0 { l1: send 8b to 1\n l2: calc 100\n l2 requires l1 }\n"
            "rank 1 { r: recv 8b from 0 }"
        )
        assert s.ops[0][1].requires == frozenset({0})

    def test_requires_forward_reference(self):
        s = parse_goal(
            "num_ranks 2\n"
            "rank 0 { l2 requires l1\n l1: send 8b to 1\n l2: calc 5 }\n"
            "rank 1 { r: recv 8b from 0 }"
        )
        assert s.ops[0][1].requires == frozenset({0})

    def test_multi_dependency_list(self):
        s = parse_goal(
            "num_ranks 1\nrank 0 { a: calc 1\n b: calc 2\n c: calc 3\n"
            " c requires a, b }"
        )
        assert s.ops[0][2].requires == frozenset({0, 1})

    def test_comments_and_whitespace(self):
        s = parse_goal(
            "# header comment\nnum_ranks   2\n\nrank 0 {\n"
            "  # op comment\n  l1: send 16b to 1  # trailing\n}\n"
            "rank 1 { l1: recv 16b from 0 }\n"
        )
        assert s.op_count() == 2

    def test_calc_line(self):
        s = parse_goal("num_ranks 1\nrank 0 { l3: calc 5000 }")
        assert s.ops[0][0] == ScheduleOp(0, CALC, None, 5000)

    def test_missing_rank_block_is_empty(self):
        s = parse_goal(
            "num_ranks 3\nrank 0 { a: send 4b to 1 }\nrank 1 { a: recv 4b from 0 }"
        )
        assert s.ops[2] == ()

    def test_syntax_error_reports_position(self):
        with pytest.raises(GoalSyntaxError) as err:
            parse_goal("num_ranks 2\nrank 0 { l1: send 16 to 1 }")
        assert err.value.line == 2

    def test_dangling_dependency_label(self):
        with pytest.raises(GoalSyntaxError, match="dangling"):
            parse_goal("num_ranks 1\nrank 0 { a: calc 1\n a requires ghost }")

    def test_duplicate_label(self):
        with pytest.raises(GoalSyntaxError, match="duplicate"):
            parse_goal("num_ranks 1\nrank 0 { a: calc 1\n a: calc 2 }")

    def test_peer_out_of_range(self):
        with pytest.raises(GoalSyntaxError, match="out of range"):
            parse_goal("num_ranks 2\nrank 0 { a: send 4b to 5 }")

    def test_peer_self(self):
        with pytest.raises(GoalSyntaxError, match="own rank"):
            parse_goal("num_ranks 2\nrank 0 { a: send 4b to 0 }")

    def test_unmatched_send_is_validation_error_not_syntax(self):
        with pytest.raises(ScheduleValidationError):
            parse_goal("num_ranks 2\nrank 0 { a: send 4b to 1 }")

    def test_cycle_is_validation_error(self):
        with pytest.raises(ScheduleValidationError, match="cycle"):
            parse_goal(
                "num_ranks 1\nrank 0 { a: calc 1\n b: calc 2\n"
                " a requires b\n b requires a }"
            )

    def test_garbage_rejected(self):
        with pytest.raises(GoalSyntaxError):
            parse_goal("num_ranks 2\nrank 0 { $$$ }")


class TestEmit:
    def test_empty_rank_block(self):
        s = Schedule(nranks=2, ops=(
            (ScheduleOp(0, SEND, 1, 4), ScheduleOp(1, RECV, 1, 4)),
            (ScheduleOp(0, SEND, 0, 4), ScheduleOp(1, RECV, 0, 4)),
        ))
        text = emit_goal(Schedule(nranks=3, ops=(*s.ops, ())))
        assert "rank 2 { }" in text

    def test_calc_emission(self):
        s = Schedule(nranks=1, ops=((ScheduleOp(0, CALC, None, 5000),),))
        assert "o0: calc 5000" in emit_goal(s)

    @pytest.mark.parametrize("nranks", range(2, 10))
    def test_roundtrip_dissemination(self, nranks):
        s = gen_dissemination(nranks, 16)
        assert parse_goal(emit_goal(s)) == s

    @pytest.mark.parametrize("nranks", range(2, 10))
    def test_roundtrip_ring(self, nranks):
        s = gen_ring_allreduce(nranks, 64 * nranks, reduce_cost_per_chunk=500)
        assert parse_goal(emit_goal(s)) == s

    @pytest.mark.parametrize("pattern", ["dissemination", "ring"])
    def test_roundtrip_compute_collective(self, pattern):
        for nranks in range(2, 10):
            s = gen_compute_collective(nranks, 2000, pattern, 16 * nranks, 3)
            assert parse_goal(emit_goal(s)) == s


class TestValidate:
    def test_unmatched_send_one_violation(self):
        s = Schedule(nranks=2, ops=((ScheduleOp(0, SEND, 1, 4),), ()))
        assert len(validate(s)) == 1

    def test_cycle_one_violation(self):
        s = Schedule(nranks=1, ops=((
            ScheduleOp(0, CALC, None, 1, frozenset({1})),
            ScheduleOp(1, CALC, None, 1, frozenset({0})),
        ),))
        assert len(validate(s)) == 1

    def test_size_mismatch_detected(self):
        s = Schedule(nranks=2, ops=(
            (ScheduleOp(0, SEND, 1, 4),),
            (ScheduleOp(0, RECV, 0, 8),),
        ))
        assert len(validate(s)) == 2  # both triples unmatched

    @pytest.mark.parametrize("nranks", [2, 3, 5, 8, 16, 33, 64])
    def test_generator_outputs_are_clean(self, nranks):
        assert validate(gen_dissemination(nranks, 16)) == []
        assert validate(gen_ring_allreduce(nranks, 4 * nranks, 100)) == []
        assert validate(gen_compute_collective(nranks, 10, "dissemination", 8, 2)) == []


class TestDissemination:
    def test_two_ranks_single_round(self):
        s = gen_dissemination(2, 16)
        for rank_ops in s.ops:
            assert [op.kind for op in rank_ops] == [SEND, RECV]
        assert s.ops[0][0].peer == 1
        assert s.ops[1][0].peer == 0

    def test_eight_ranks_three_rounds(self):
        s = gen_dissemination(8, 16)
        assert all(len(r) == 6 for r in s.ops)

    def test_five_ranks_modular_partner(self):
        s = gen_dissemination(5, 16)
        assert all(len(r) == 6 for r in s.ops)  # ceil(log2 5) = 3 rounds
        # round 2 (k=2): rank 4 sends to (4+4) mod 5 = 3
        assert s.ops[4][4].kind == SEND
        assert s.ops[4][4].peer == 3

    @pytest.mark.parametrize("nranks", [2, 3, 4, 7, 16, 39, 64])
    def test_round_count_and_coupling(self, nranks):
        s = gen_dissemination(nranks, 8)
        rounds = math.ceil(math.log2(nranks))
        for rank_ops in s.ops:
            assert sum(1 for op in rank_ops if op.kind == SEND) == rounds
            assert sum(1 for op in rank_ops if op.kind == RECV) == rounds
            for k in range(1, rounds):
                # both round-k ops require the round-(k-1) send and recv
                expected = frozenset({2 * k - 2, 2 * k - 1})
                assert rank_ops[2 * k].requires == expected
                assert rank_ops[2 * k + 1].requires == expected


class TestRingAllreduce:
    def test_step_count(self):
        s = gen_ring_allreduce(4, 512, 0)
        for rank_ops in s.ops:
            assert sum(1 for op in rank_ops if op.kind == SEND) == 6
            assert sum(1 for op in rank_ops if op.kind == RECV) == 6

    def test_chunk_size_512mib_over_4(self):
        s = gen_ring_allreduce(4, 512 * 2**20, 0)
        assert s.metadata["chunk_bytes"] == 128 * 2**20
        assert s.ops[0][0].size == 128 * 2**20

    @pytest.mark.parametrize("nranks,size", [(2, 2), (4, 512), (5, 103), (8, 4096)])
    def test_total_bytes_identity(self, nranks, size):
        s = gen_ring_allreduce(nranks, size, 0)
        chunk = math.ceil(size / nranks)
        for rank_ops in s.ops:
            sent = sum(op.size for op in rank_ops if op.kind == SEND)
            assert sent == 2 * (nranks - 1) * chunk

    def test_calc_ops_present_only_with_cost(self):
        with_cost = gen_ring_allreduce(4, 512, 100)
        without = gen_ring_allreduce(4, 512, 0)
        for rank_ops in with_cost.ops:
            assert sum(1 for op in rank_ops if op.kind == CALC) == 3  # P-1
        for rank_ops in without.ops:
            assert all(op.kind != CALC for op in rank_ops)

    def test_send_requires_previous_recv_and_calc(self):
        s = gen_ring_allreduce(3, 300, 50)
        ops = s.ops[0]
        # layout per reduce-scatter step: send, recv, calc
        assert [op.kind for op in ops[:6]] == [SEND, RECV, CALC, SEND, RECV, CALC]
        assert ops[0].requires == frozenset()
        assert ops[3].requires == frozenset({1, 2})
        assert ops[2].requires == frozenset({1})  # calc reduces what was received

    def test_size_below_ranks_rejected(self):
        with pytest.raises(ValueError):
            gen_ring_allreduce(8, 7)


class TestComputeCollective:
    def test_iteration_chaining(self):
        s = gen_compute_collective(2, 1000, "dissemination", 16, 2)
        ops = s.ops[0]
        assert ops[0].kind == CALC and ops[0].requires == frozenset()
        # collective roots wait on the calc
        assert ops[1].requires == frozenset({0})
        assert ops[2].requires == frozenset({0})
        # next iteration's calc waits on the previous collective's sinks
        assert ops[3].kind == CALC
        assert ops[3].requires == frozenset({1, 2})

    def test_bad_pattern(self):
        with pytest.raises(ValueError):
            gen_compute_collective(2, 0, "alltoall", 16, 1)

    def test_zero_iterations_rejected(self):
        with pytest.raises(ValueError):
            gen_compute_collective(2, 0, "ring", 16, 0)


class TestJson:
    @pytest.mark.parametrize("make", [
        lambda: gen_dissemination(5, 16),
        lambda: gen_ring_allreduce(4, 512, 7),
        lambda: gen_compute_collective(3, 11, "ring", 30, 2),
    ])
    def test_roundtrip(self, make):
        s = make()
        assert schedule_from_json(schedule_to_json(s)) == s

    def test_metadata_retained(self):
        s = gen_dissemination(4, 16)
        back = schedule_from_json(schedule_to_json(s))
        assert dict(back.metadata) == dict(s.metadata)

    def test_bad_schema_rejected(self):
        with pytest.raises(ValueError):
            schedule_from_json('{"schema": "nope", "num_ranks": 1, "ranks": [[]]}')


@settings(max_examples=60, deadline=None)
@given(
    nranks=st.integers(2, 12),
    size=st.integers(1, 10**6),
)
def test_dissemination_property_clean_and_roundtrips(nranks, size):
    s = gen_dissemination(nranks, size)
    assert validate(s) == []
    assert parse_goal(emit_goal(s)) == s
