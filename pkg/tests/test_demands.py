import numpy as np
import pytest

from routelab.demands import (
    BimodalParams,
    DemandError,
    gen_bimodal_dm,
    gen_cyclical_sequence,
    sequence_from_json,
    sequence_to_json,
)


class TestBimodal:
    def test_zero_diagonal_and_nonnegative(self):
        dm = gen_bimodal_dm(6, BimodalParams(), np.random.default_rng(0))
        assert dm.shape == (6, 6)
        assert np.all(np.diag(dm) == 0)
        assert np.all(dm >= 0)

    def test_monte_carlo_mean(self):
        # threshold 0.8 sends 20% of entries to the low mode: 0.2*400 + 0.8*800
        rng = np.random.default_rng(42)
        total, count = 0.0, 0
        for _ in range(100):
            dm = gen_bimodal_dm(34, BimodalParams(), rng)
            off = dm[~np.eye(34, dtype=bool)]
            total += off.sum()
            count += off.size
        assert total / count == pytest.approx(720.0, abs=5.0)

    def test_degenerate_stds(self):
        params = BimodalParams(low_std=0.0, high_std=0.0)
        dm = gen_bimodal_dm(5, params, np.random.default_rng(1))
        off = dm[~np.eye(5, dtype=bool)]
        assert set(np.unique(off)) <= {400.0, 800.0}

    def test_seed_determinism_and_variation(self):
        a = gen_bimodal_dm(4, BimodalParams(), np.random.default_rng(9))
        b = gen_bimodal_dm(4, BimodalParams(), np.random.default_rng(9))
        c = gen_bimodal_dm(4, BimodalParams(), np.random.default_rng(10))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_v_count_precondition(self):
        with pytest.raises(DemandError):
            gen_bimodal_dm(1, BimodalParams(), np.random.default_rng(0))

    def test_invalid_params(self):
        with pytest.raises(DemandError):
            BimodalParams(low_mean=-1.0)
        with pytest.raises(DemandError):
            BimodalParams(high_prob_threshold=1.5)


class TestCyclicalSequence:
    def test_cycle_structure(self):
        seq = gen_cyclical_sequence(4, BimodalParams(), 10, 60, np.random.default_rng(0))
        assert len(seq) == 60
        distinct = {m.tobytes() for m in seq.matrices}
        assert len(distinct) == 10
        for i in range(60):
            assert np.array_equal(seq.matrices[i], seq.matrices[i % 10])

    def test_single_cycle(self):
        seq = gen_cyclical_sequence(3, BimodalParams(), 1, 5, np.random.default_rng(0))
        assert all(np.array_equal(m, seq.matrices[0]) for m in seq.matrices)

    def test_length_equals_cycle(self):
        seq = gen_cyclical_sequence(3, BimodalParams(), 3, 3, np.random.default_rng(0))
        assert len(seq) == 3
        assert len({m.tobytes() for m in seq.matrices}) == 3

    def test_json_roundtrip(self):
        seq = gen_cyclical_sequence(4, BimodalParams(), 3, 7, np.random.default_rng(5))
        back = sequence_from_json(sequence_to_json(seq))
        assert back.cycle_length == 3
        assert len(back) == 7
        for a, b in zip(seq.matrices, back.matrices):
            assert np.array_equal(a, b)
