import itertools
from collections import deque

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxsem.partition import (MAX_ENUM_DIM, Partition, PartitionUniverse, bell_number, canonicalize,
                              enumerate_partitions, gibbs_moves, iter_assignments)


def bell_via_stirling(n):
    # independent oracle: sum of Stirling numbers of the second kind
    S = [[0] * (n + 1) for _ in range(n + 1)]
    S[0][0] = 1
    for i in range(1, n + 1):
        for k in range(1, i + 1):
            S[i][k] = k * S[i - 1][k] + S[i - 1][k - 1]
    return sum(S[n])


def brute_partitions(dim):
    return {canonicalize(lab) for lab in itertools.product(range(dim), repeat=dim)}


class TestCanonicalize:
    def test_examples(self):
        p = canonicalize([5, 5, 2])
        assert p.assignment == (0, 0, 1)
        assert p.blocks == ((0, 1), (2,))
        assert canonicalize([0]).assignment == (0,)
        assert canonicalize([1, 0, 1, 0]).assignment == (0, 1, 0, 1)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            canonicalize([])

    @given(st.lists(st.integers(-5, 5), min_size=1, max_size=10))
    def test_preserves_blocks_and_is_idempotent(self, labels):
        p = canonicalize(labels)
        assert canonicalize(p.assignment) == p
        for i, j in itertools.combinations(range(len(labels)), 2):
            assert (labels[i] == labels[j]) == (p.assignment[i] == p.assignment[j])
        assert 1 <= p.size <= p.dim


class TestPartition:
    def test_rejects_non_canonical(self):
        with pytest.raises(ValueError):
            Partition((1, 0))
        with pytest.raises(ValueError):
            Partition((0, 2))
        with pytest.raises(ValueError):
            Partition(())

    def test_from_blocks_and_string(self):
        p = Partition.from_blocks([[2], [0, 1]])
        assert p.assignment == (0, 0, 1)
        assert Partition.from_string(str(p)) == p
        assert p.masks == (0b011, 0b100)
        assert p.block_matrix().tolist() == [[True, True, False], [False, False, True]]
        with pytest.raises(ValueError):
            Partition.from_blocks([[0, 1], [1]])
        with pytest.raises(ValueError):
            Partition.from_blocks([[0]], dim=2)

    def test_special_partitions(self):
        assert Partition.singletons(3).size == 3
        assert Partition.one_block(3).size == 1
        assert len(Partition.one_block(4)) == 1


class TestEnumeration:
    @pytest.mark.parametrize("dim", range(0, 16))
    def test_bell_triangle_matches_stirling(self, dim):
        assert bell_number(dim) == bell_via_stirling(dim)

    @pytest.mark.parametrize("dim", range(1, 9))
    def test_counts_and_uniqueness(self, dim):
        parts = list(enumerate_partitions(dim))
        assert len(parts) == bell_number(dim) == len(set(parts))
        assert PartitionUniverse(dim).count == len(parts)

    @pytest.mark.parametrize("dim", range(1, 7))
    def test_matches_brute_force_relabeling(self, dim):
        assert set(enumerate_partitions(dim)) == brute_partitions(dim)

    def test_examples(self):
        assert len(list(enumerate_partitions(1))) == 1
        assert len(list(enumerate_partitions(3))) == 5

    def test_lexicographic_order(self):
        a = list(iter_assignments(6))
        assert a == sorted(a)

    @pytest.mark.parametrize("dim", [0, MAX_ENUM_DIM + 1])
    def test_guard(self, dim):
        with pytest.raises(ValueError):
            next(enumerate_partitions(dim))


class TestGibbsMoves:
    def test_examples(self):
        assert gibbs_moves(Partition.one_block(2), 1) == [Partition((0, 0)), Partition((0, 1))]
        assert len(gibbs_moves(Partition.singletons(3), 2)) == 3
        p = Partition.from_blocks([[0, 1], [2, 3, 4]])
        expected = {Partition.from_blocks(b, 5) for b in
                    ([[0, 1], [2, 3, 4]], [[1], [0, 2, 3, 4]], [[0], [1], [2, 3, 4]])}
        moves = gibbs_moves(p, 0)
        assert len(moves) == 3 and set(moves) == expected

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            gibbs_moves(Partition.singletons(3), 3)

    @pytest.mark.parametrize("dim", [3, 4, 5])
    def test_exhaustive_against_filtered_enumeration(self, dim):
        parts = list(enumerate_partitions(dim))

        def reduced(p, site):
            return frozenset(frozenset(b) - {site} for b in p.blocks) - {frozenset()}

        for p in parts:
            for site in range(dim):
                moves = gibbs_moves(p, site)
                want = {q for q in parts if reduced(q, site) == reduced(p, site)}
                assert set(moves) == want
                assert len(moves) == len(want)
                assert p in moves
                assert len(moves) <= len(reduced(p, site)) + 1

    def test_moves_connect_all_partitions(self):
        dim = 5
        start = Partition.singletons(dim)
        seen = {start}
        queue = deque([start])
        while queue:
            p = queue.popleft()
            for site in range(dim):
                for q in gibbs_moves(p, site):
                    if q not in seen:
                        seen.add(q)
                        queue.append(q)
        assert len(seen) == bell_number(dim)

    @settings(max_examples=50)
    @given(st.lists(st.integers(0, 3), min_size=1, max_size=8), st.data())
    def test_candidates_are_canonical_and_distinct(self, labels, data):
        p = canonicalize(labels)
        site = data.draw(st.integers(0, p.dim - 1))
        moves = gibbs_moves(p, site)
        assert len(set(moves)) == len(moves)
        for q in moves:
            Partition(q.assignment)  # validates canonical form
