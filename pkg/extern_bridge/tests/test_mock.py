import pytest

from extern_bridge import MockAdapter, mock_average_macs

ADAPTER = MockAdapter()


def _request(segments, total_steps, mode="cache", **extra):
    payload = {
        "type": "eval_request",
        "id": 1,
        "genome": {"mode": mode, "total_steps": total_steps, "segments": segments},
        "n_images": 64,
        "seed": 0,
        "metric": "rfid",
    }
    payload.update(extra)
    return payload


class TestScores:
    def test_deterministic(self):
        a = ADAPTER.evaluate(_request([[1, 2], [2, 3]], 10))
        b = ADAPTER.evaluate(_request([[1, 2], [2, 3]], 10))
        assert a == b

    def test_genome_sensitive(self):
        a = ADAPTER.evaluate(_request([[1, 2]], 10))
        b = ADAPTER.evaluate(_request([[1, 3]], 10))
        assert a["rfid"] != b["rfid"]

    def test_seed_sensitive(self):
        a = ADAPTER.evaluate(_request([[1, 2]], 10, seed=0))
        b = ADAPTER.evaluate(_request([[1, 2]], 10, seed=1))
        assert a["rfid"] != b["rfid"]

    def test_scores_are_unit_interval(self):
        for n in range(1, 20):
            reply = ADAPTER.evaluate(_request([[1 + n % 3, 1 + n % 4]], 40, seed=n))
            assert 0.0 <= reply["rfid"] < 1.0

    def test_mse_metric_switches_field(self):
        reply = ADAPTER.evaluate(_request([[1, 2]], 10, metric="mse"))
        assert "mse" in reply and "rfid" not in reply


class TestStructure:
    def test_nfe_from_plan(self):
        reply = ADAPTER.evaluate(_request([[1, 2], [1, 3], [2, 9]], 10))
        assert reply["nfe"] == 8

    def test_uniform_average(self):
        # 5 segments of span 2, interval 2, branch 1: half full, half partial
        reply = ADAPTER.evaluate(_request([[1, 2]] * 5, 10))
        assert reply["avg_macs"] == pytest.approx((5 * 1.0 + 5 * 0.15) / 10, abs=1e-12)

    def test_nulls_are_free(self):
        sparse = ADAPTER.evaluate(_request([[1, 1]] * 2, 10))
        assert sparse["nfe"] == 2
        assert sparse["avg_macs"] == 2 * 1.0 / 10

    def test_solver_order_billing(self):
        reply = ADAPTER.evaluate(_request([[2, 3]], 10, mode="solver_order"))
        assert reply["nfe"] == 3
        assert reply["avg_macs"] == (1.0 + 2 * 0.30) / 3

    def test_average_never_exceeds_full(self):
        for segments, total in [([[3, 9]], 9), ([[1, 1], [3, 5]], 8)]:
            genome = {"mode": "cache", "total_steps": total, "segments": segments}
            assert 0.0 < mock_average_macs(genome) <= 1.0
