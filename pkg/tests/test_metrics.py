import pytest

from stepcascade.controller import CascadeConfig, EpisodeRecord
from stepcascade.harness import run_suite
from stepcascade.metrics import (
    AccountingError,
    FailureSignatures,
    PriceEntry,
    action_repetition_rate,
    cascade_stats,
    compute_cost,
    failure_signatures,
    mark_pareto,
    render_report_table,
    report_rows_to_csv,
    sweep_frontier,
)
from stepcascade.synthenv import build_suite
from stepcascade.trace import (
    Action,
    ActionKind,
    Episode,
    EpisodeOutcome,
    PolicyId,
    PolicyTier,
    Step,
    TaskSpec,
)

SMALL = PolicyId("s", PolicyTier.SMALL)
LARGE = PolicyId("l", PolicyTier.LARGE)


def _episode(actions, outcome=EpisodeOutcome.FAILURE, tiers=None, tokens=None):
    task = TaskSpec("t", "goal", max(len(actions), 1))
    steps = tuple(
        Step(
            index=i,
            rationale=f"r{i}",
            action=a,
            policy=(tiers[i - 1] if tiers else SMALL),
            observation_digest=f"o{i}",
            prompt_tokens=tokens[i - 1][0] if tokens else None,
            completion_tokens=tokens[i - 1][1] if tokens else None,
        )
        for i, a in enumerate(actions, start=1)
    )
    terminal = steps[-1].action if steps and steps[-1].action.kind is ActionKind.DONE else None
    return Episode(task=task, steps=steps, outcome=outcome, terminal_action=terminal)


def _record(episode, verifier_calls=0, monitor_calls=0):
    return EpisodeRecord(episode=episode, verifier_calls=verifier_calls,
                         monitor_calls=monitor_calls, config_digest="c", seed=0)


def click(x, y=0):
    return Action(ActionKind.CLICK, {"x": x, "y": y})


class TestRepetitionRate:
    def test_all_same(self):
        assert action_repetition_rate(_episode([click(0)] * 4)) == 1.0

    def test_all_distinct(self):
        assert action_repetition_rate(_episode([click(40 * i) for i in range(6)])) == 0.0

    def test_aba_pattern(self):
        e = _episode([click(0), click(40), click(0)])
        assert action_repetition_rate(e, lookback=3) == pytest.approx(0.5)

    def test_lookback_limits_matching(self):
        # A . . . A with lookback 3: the fifth step's match is out of range
        e = _episode([click(0), click(40), click(80), click(120), click(0)])
        assert action_repetition_rate(e, lookback=3) == 0.0

    def test_short_episode_is_zero(self):
        assert action_repetition_rate(_episode([click(0)])) == 0.0

    def test_matches_brute_force(self, rng):
        for _ in range(100):
            n = rng.randint(2, 15)
            lookback = rng.choice([1, 2, 3, 5])
            actions = [click(rng.choice([0, 40, 80])) for _ in range(n)]
            e = _episode(actions)
            keys = [(a.kind, a.args["x"]) for a in actions]
            hits = sum(
                1
                for t in range(1, n)
                if any(keys[t] == keys[j] for j in range(max(0, t - lookback), t))
            )
            assert action_repetition_rate(e, lookback) == pytest.approx(hits / (n - 1))


class TestFailureSignatures:
    def test_mixed_population(self):
        episodes = [
            _episode([click(40 * i) for i in range(5)], EpisodeOutcome.SUCCESS),
            _episode([click(0)] * 10, EpisodeOutcome.BUDGET_EXHAUSTED),
            _episode([click(0)] * 9 + [Action(ActionKind.DONE)], EpisodeOutcome.FAILURE),
        ]
        sig = failure_signatures(episodes)
        assert sig.avg_steps_success == 5
        assert sig.avg_steps_failed == 10
        assert sig.step_ratio == pytest.approx(2.0)
        assert sig.done_but_failed_rate == pytest.approx(0.5)

    def test_all_success_leaves_failure_fields_absent(self):
        episodes = [_episode([click(0)], EpisodeOutcome.SUCCESS)]
        sig = failure_signatures(episodes)
        assert sig.rep_rate_failed is None
        assert sig.done_but_failed_rate is None

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            failure_signatures([])

    def test_ratio_rendering_matches_report_style(self):
        sig = FailureSignatures(
            episodes=2, successes=1, failures=1,
            avg_steps_success=12.4, avg_steps_failed=35.1,
            rep_rate_success=0.05, rep_rate_failed=0.2,
            done_but_failed_rate=0.36,
        )
        assert "2.8x" in sig.render()


class TestComputeCost:
    def test_per_call_arithmetic(self):
        # 10 small at $0.001 + 2 large at $0.010 + 1 verifier at $0.010 = $0.040
        episode = _episode([click(40 * i) for i in range(12)],
                           tiers=[SMALL] * 10 + [LARGE] * 2)
        prices = {
            "small": PriceEntry(per_call=1000),
            "large": PriceEntry(per_call=10000),
            "verifier": PriceEntry(per_call=10000),
        }
        assert compute_cost(_record(episode, verifier_calls=1), prices) == 40000

    def test_zero_price_table(self):
        episode = _episode([click(0)])
        prices = {"small": PriceEntry(), "large": PriceEntry()}
        assert compute_cost(_record(episode), prices) == 0

    def test_token_rated_entry(self):
        # 2000 prompt tokens at $0.005/1k = $0.010
        episode = _episode([click(0)], tokens=[(2000, 0)])
        prices = {"small": PriceEntry(per_call=0, per_1k_prompt_tokens=5000)}
        assert compute_cost(_record(episode), prices) == 10000

    def test_missing_entry_names_policy(self):
        episode = _episode([click(0)], tiers=[LARGE])
        with pytest.raises(AccountingError, match="'l'"):
            compute_cost(_record(episode), {"small": PriceEntry()})

    def test_conservation_over_random_records(self, rng):
        prices = {
            "small": PriceEntry(per_call=800, per_1k_prompt_tokens=300),
            "large": PriceEntry(per_call=6400, per_1k_completion_tokens=900),
            "monitor": PriceEntry(per_call=4),
            "verifier": PriceEntry(per_call=1600),
        }
        records = []
        for _ in range(50):
            n = rng.randint(1, 10)
            episode = _episode(
                [click(rng.randint(0, 10) * 40) for _ in range(n)],
                tiers=[rng.choice([SMALL, LARGE]) for _ in range(n)],
                tokens=[(rng.randint(0, 3000), rng.randint(0, 500)) for _ in range(n)],
            )
            records.append(_record(episode, verifier_calls=rng.randint(0, 4),
                                   monitor_calls=rng.randint(0, 2 * n)))
        total = sum(compute_cost(r, prices) for r in records)
        # independent recount, call by call
        expected = 0
        for r in records:
            for s in r.episode.steps:
                entry = prices[s.policy.tier.value]
                expected += entry.per_call
                expected += (s.prompt_tokens or 0) * entry.per_1k_prompt_tokens // 1000
                expected += (s.completion_tokens or 0) * entry.per_1k_completion_tokens // 1000
            expected += r.monitor_calls * prices["monitor"].per_call
            expected += r.verifier_calls * prices["verifier"].per_call
        assert total == expected


class TestCascadeStats:
    def test_hand_counted_example(self):
        records = [
            _record(_episode([click(40 * i) for i in range(5)], EpisodeOutcome.SUCCESS)),
            _record(_episode([click(40 * i) for i in range(5)], EpisodeOutcome.FAILURE,
                             tiers=[SMALL, SMALL, SMALL, LARGE, LARGE])),
        ]
        report = cascade_stats(records)
        assert report.switched_count == 1
        assert report.switched_fraction == pytest.approx(0.5)
        assert report.a1_share == pytest.approx(8 / 10)
        assert report.a2_share == pytest.approx(2 / 10)
        assert report.accuracy == pytest.approx(0.5)

    def test_all_small(self):
        report = cascade_stats([_record(_episode([click(0)] * 3))])
        assert report.switched_count == 0 and report.a2_share == 0.0

    def test_always_large(self):
        report = cascade_stats([_record(_episode([click(0)] * 3, tiers=[LARGE] * 3))])
        assert report.a2_share == 1.0

    def test_share_law(self, rng):
        records = []
        for _ in range(20):
            n = rng.randint(1, 8)
            records.append(_record(_episode(
                [click(40 * i) for i in range(n)],
                tiers=[rng.choice([SMALL, LARGE]) for _ in range(n)],
            )))
        report = cascade_stats(records)
        assert report.a1_share + report.a2_share == pytest.approx(1.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            cascade_stats([])

    def test_render_table(self):
        report = cascade_stats([_record(_episode([click(0)] * 3))])
        text = render_report_table([("sim-small", "sim-large", report)])
        assert "Cost/Task" in text and "A1 Share" in text
        assert "policy-executed steps" in text


@pytest.fixture(scope="module")
def manifest():
    return build_suite(55, num_tasks=30, max_steps=40)


class TestFrontier:
    def test_grid_sweep_shape_and_pareto(self, manifest):
        prices = {"small": PriceEntry(per_call=800), "large": PriceEntry(per_call=6400),
                  "monitor": PriceEntry(per_call=4), "verifier": PriceEntry(per_call=1600)}

        def runner(theta_s, theta_m):
            cfg = CascadeConfig(theta_s=theta_s, theta_m=theta_m)
            return run_suite(manifest, cfg, prices=prices)

        grid = [(s, m) for s in (0.5, 1.5) for m in (0.5, 1.5)]
        points = sweep_frontier(grid, runner, prices)
        assert len(points) == 4
        assert any(p.pareto for p in points)
        costs = [p.report.total_cost for p in points]
        assert costs == sorted(costs)
        csv_text = report_rows_to_csv([p.to_row() for p in points])
        assert csv_text.count("\n") == 5  # header + 4 rows

    def test_degenerate_thresholds_match_small_only(self, manifest):
        cascade = run_suite(manifest, CascadeConfig(theta_s=1.5, theta_m=1.5))
        small = run_suite(manifest, CascadeConfig(), run_mode="small-only")
        a = cascade_stats(cascade)
        b = cascade_stats(small)
        assert a.accuracy == b.accuracy
        assert a.avg_steps == b.avg_steps
        assert a.a2_share == 0.0 and a.verifier_calls_per_task == 0.0

    def test_lowering_theta_s_never_reduces_large_steps(self, manifest):
        def large_steps(theta_s):
            records = run_suite(manifest, CascadeConfig(theta_s=theta_s, theta_m=1.5))
            return sum(
                sum(1 for s in r.episode.steps if s.policy.tier is PolicyTier.LARGE)
                for r in records
            )

        counts = [large_steps(t) for t in (1.5, 0.5, 0.0)]
        assert counts[0] <= counts[1] <= counts[2]

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            sweep_frontier([], lambda a, b: [])

    def test_mark_pareto_logic(self):
        from stepcascade.metrics import FrontierPoint, RunReport

        def rep(cost, acc):
            return RunReport(tasks=1, accuracy=acc, avg_steps=1, total_cost=cost,
                             cost_per_task=cost / 1e6, latency_per_request=0,
                             switched_count=0, switched_fraction=0,
                             a1_share=1, a2_share=0, verifier_calls_per_task=0)

        points = [FrontierPoint(0.1, 0.1, rep(100, 0.5)),
                  FrontierPoint(0.2, 0.2, rep(200, 0.4)),  # dominated
                  FrontierPoint(0.3, 0.3, rep(300, 0.9))]
        flagged = {(p.theta_s): p.pareto for p in mark_pareto(points)}
        assert flagged[0.1] and flagged[0.3] and not flagged[0.2]
