import pytest

from stepcascade.controller import (
    CascadeConfig,
    ControllerState,
    EpisodeRunner,
    apply_verdict,
    decide_route,
    on_step_end,
    parse_record,
    periodic_should_check,
)
from stepcascade.harness import (
    oracle_milestone_factory,
    oracle_stuck_factory,
    oracle_verifier_factory,
    run_suite,
    run_suite_episode,
)
from stepcascade.policies import AlwaysDonePolicy
from stepcascade.synthenv import FailureProfile, SynthEnv, build_suite, generate_task, make_sim_policies
from stepcascade.trace import (
    ActionKind,
    EpisodeOutcome,
    PolicyTier,
    StepEvent,
    TaskSpec,
    Window,
)

W = Window(entries=(), end_index=1)  # on_step_end ignores window content


class TestDecideRoute:
    @pytest.mark.parametrize(
        "p_stuck,expected",
        [(0.7, PolicyTier.LARGE), (0.5, PolicyTier.LARGE), (0.49, PolicyTier.SMALL)],
    )
    def test_basic_indicator(self, p_stuck, expected):
        cfg = CascadeConfig(theta_s=0.5, theta_m=0.5)
        state = ControllerState()
        on_step_end(state, cfg, W, p_stuck=p_stuck, p_mile=0.0, t=1)
        assert decide_route(state, cfg, t=2) is expected

    def test_forced_escalation_window(self):
        cfg = CascadeConfig()
        state = ControllerState(forced_escalation_until=3)
        assert decide_route(state, cfg, t=3) is PolicyTier.LARGE
        assert decide_route(state, cfg, t=4) is PolicyTier.SMALL


class TestOnStepEnd:
    def test_stuck_only(self):
        decision = on_step_end(ControllerState(), CascadeConfig(), W, 0.9, 0.1, t=1)
        assert decision.set_escalation and not decision.trigger_verification

    def test_milestone_only(self):
        decision = on_step_end(ControllerState(), CascadeConfig(), W, 0.1, 0.9, t=1)
        assert not decision.set_escalation and decision.trigger_verification

    def test_basic_is_memoryless(self):
        cfg, state = CascadeConfig(), ControllerState()
        on_step_end(state, cfg, W, 0.9, 0.0, t=1)
        assert state.escalated
        on_step_end(state, cfg, W, 0.1, 0.0, t=2)
        assert not state.escalated

    def test_hysteresis_needs_m_consecutive_fires(self):
        # enumerate the 2-step score sequences against the automaton
        cfg = CascadeConfig(mode="hysteresis", fires_to_escalate=2)
        for first, second, expect in [
            (0.9, 0.9, True),   # two consecutive fires
            (0.9, 0.1, False),  # broken streak resets
            (0.1, 0.9, False),  # single fire
            (0.1, 0.1, False),
        ]:
            state = ControllerState()
            d1 = on_step_end(state, cfg, W, first, 0.0, t=1)
            assert not d1.set_escalation
            d2 = on_step_end(state, cfg, W, second, 0.0, t=2)
            assert d2.set_escalation is expect

    def test_hysteresis_deescalates_after_r_calm_large_steps(self):
        cfg = CascadeConfig(mode="hysteresis", min_large_steps=2, deescalate_gap=0.1)
        state = ControllerState()
        on_step_end(state, cfg, W, 0.9, 0.0, t=1)
        assert state.escalated
        # one calm large step is not enough
        on_step_end(state, cfg, W, 0.2, 0.0, t=2, acted_tier=PolicyTier.LARGE)
        assert state.escalated
        # score inside the gap band (>= theta_s - delta) resets calm count
        on_step_end(state, cfg, W, 0.45, 0.0, t=3, acted_tier=PolicyTier.LARGE)
        assert state.escalated
        on_step_end(state, cfg, W, 0.2, 0.0, t=4, acted_tier=PolicyTier.LARGE)
        on_step_end(state, cfg, W, 0.2, 0.0, t=5, acted_tier=PolicyTier.LARGE)
        assert not state.escalated

    def test_budget_blocks_new_escalations(self):
        cfg = CascadeConfig(mode="hysteresis", recovery_budget=1, fires_to_escalate=1,
                            min_large_steps=1, deescalate_gap=0.0)
        state = ControllerState()
        on_step_end(state, cfg, W, 0.9, 0.0, t=1)
        assert state.escalated and state.escalations_used == 1
        on_step_end(state, cfg, W, 0.0, 0.0, t=2, acted_tier=PolicyTier.LARGE)
        assert not state.escalated
        on_step_end(state, cfg, W, 0.9, 0.0, t=3)
        assert not state.escalated  # budget exhausted: small regardless of scores
        assert state.escalations_used == 1


class TestApplyVerdict:
    def test_pass_commits_tau(self):
        state = ControllerState()
        apply_verdict(state, CascadeConfig(), success=True, t=9)
        assert state.tau == 9

    def test_fail_forces_escalation_window(self):
        cfg = CascadeConfig(verification_fail_steps=3)
        state = ControllerState()
        apply_verdict(state, cfg, success=False, t=9)
        assert state.tau == 0
        for t in (10, 11, 12):
            assert decide_route(state, cfg, t) is PolicyTier.LARGE
        assert decide_route(state, cfg, 13) is PolicyTier.SMALL

    def test_later_fail_keeps_committed_tau(self):
        cfg = CascadeConfig()
        state = ControllerState()
        apply_verdict(state, cfg, success=True, t=5)
        apply_verdict(state, cfg, success=False, t=9)
        assert state.tau == 5


class TestPeriodicRule:
    def test_examples(self):
        assert periodic_should_check(6, 3)
        assert not periodic_should_check(7, 3)
        assert all(periodic_should_check(t, 1) for t in range(1, 10))

    def test_bad_k(self):
        with pytest.raises(ValueError):
            periodic_should_check(5, 0)


PROFILE = FailureProfile()


def _oracle_runner(cfg, run_mode="cascade", **kwargs):
    return EpisodeRunner(cfg, run_mode=run_mode, **kwargs)


class TestRunEpisode:
    def test_always_done_policy_single_step_success(self):
        task = TaskSpec("t", "finish", 10)
        runner = EpisodeRunner(CascadeConfig(), run_mode="small-only")
        policy = AlwaysDonePolicy()
        record = runner.run_episode(task, {PolicyTier.SMALL: policy, PolicyTier.LARGE: policy},
                                    seed=1, initial_digest="obs-0")
        assert len(record.episode.steps) == 1
        assert record.episode.outcome is EpisodeOutcome.SUCCESS
        assert record.episode.terminal_action.kind is ActionKind.DONE

    def test_escalation_fires_step_after_stall(self):
        # find a task whose first stall lands mid-episode, then check timing
        for seed in range(100):
            task = generate_task(seed, 3, max_steps=40)
            env = SynthEnv(task, PROFILE)
            runner = EpisodeRunner(
                CascadeConfig(),
                stuck_monitor=oracle_stuck_factory(task),
                milestone_monitor=oracle_milestone_factory(task),
                verifier=oracle_verifier_factory(task),
            )
            record = runner.run_episode(task.task, make_sim_policies(env), seed=seed, env=env)
            stall_steps = [s for s, t in sorted(record.truth.items()) if t.in_stuck_region]
            if not stall_steps:
                continue
            s = stall_steps[0]
            episode = record.episode
            if s >= len(episode.steps):
                continue
            assert episode.steps[s - 1].stuck_score == 1.0
            next_step = episode.steps[s]
            assert next_step.policy.tier is PolicyTier.LARGE
            assert StepEvent.ESCALATED in next_step.events
            # and no step before the stall was escalated
            assert all(StepEvent.ESCALATED not in st.events for st in episode.steps[:s])
            return
        pytest.fail("no stall found in 100 seeds")

    def test_periodic_calls_match_cadence(self):
        clean = FailureProfile(p_stall=0.0, p_drift=0.0, p_correct_small=1.0, p_correct_large=1.0)
        task = generate_task(5, 6, max_steps=30)
        env = SynthEnv(task, clean)
        cfg = CascadeConfig(periodic_k=3)
        runner = EpisodeRunner(cfg, run_mode="periodic", verifier=oracle_verifier_factory(task))
        record = runner.run_episode(task.task, make_sim_policies(env), seed=5, env=env)
        used = len(record.episode.steps)
        assert record.verifier_calls == used // 3

    def test_theta_zero_forces_large_from_step_two(self):
        task = generate_task(3, 3, max_steps=15)
        env = SynthEnv(task, PROFILE)
        cfg = CascadeConfig(theta_s=0.0, theta_m=2.0)
        runner = EpisodeRunner(cfg, stuck_monitor=oracle_stuck_factory(task),
                               milestone_monitor=oracle_milestone_factory(task))
        record = runner.run_episode(task.task, make_sim_policies(env), seed=3, env=env)
        tiers = [s.policy.tier for s in record.episode.steps]
        assert tiers[0] is PolicyTier.SMALL
        assert all(t is PolicyTier.LARGE for t in tiers[1:])

    def test_committed_tau_strictly_increasing(self):
        manifest = build_suite(21, num_tasks=10, max_steps=40)
        records = run_suite(manifest, CascadeConfig())
        for record in records:
            commits = [s.index for s in record.episode.steps if StepEvent.MILESTONE_COMMITTED in s.events]
            assert commits == sorted(set(commits))

    def test_record_round_trip(self):
        manifest = build_suite(33, num_tasks=3, max_steps=30)
        record = run_suite_episode(manifest, 0, CascadeConfig())
        parsed = parse_record(record.serialize())
        assert parsed.episode == record.episode
        assert parsed.verifier_calls == record.verifier_calls
        assert parsed.monitor_calls == record.monitor_calls
        assert parsed.seed == record.seed
        assert parsed.truth == record.truth

    def test_determinism_byte_identical(self):
        manifest = build_suite(44, num_tasks=5, max_steps=40)
        first = [r.serialize() for r in run_suite(manifest, CascadeConfig())]
        second = [r.serialize() for r in run_suite(manifest, CascadeConfig())]
        assert first == second

    def test_jobs_preserve_order_and_content(self):
        manifest = build_suite(44, num_tasks=8, max_steps=40)
        serial = [r.serialize() for r in run_suite(manifest, CascadeConfig(), jobs=1)]
        parallel = [r.serialize() for r in run_suite(manifest, CascadeConfig(), jobs=4)]
        assert serial == parallel

    def test_policy_error_aborts_with_partial_record(self):
        from stepcascade.policies import Policy, PolicyError
        from stepcascade.trace import PolicyId

        class Exploding(Policy):
            def __init__(self):
                super().__init__(PolicyId("boom", PolicyTier.SMALL))
                self.calls = 0

            def next_step(self, request):
                self.calls += 1
                if self.calls >= 3:
                    raise PolicyError("endpoint unreachable")
                from stepcascade.policies import PolicyResponse
                from stepcascade.trace import Action

                return PolicyResponse("r", Action(ActionKind.WAIT))

        task = TaskSpec("t", "goal", 10)
        policy = Exploding()
        runner = EpisodeRunner(CascadeConfig(), run_mode="small-only")
        record = runner.run_episode(task, {PolicyTier.SMALL: policy, PolicyTier.LARGE: policy},
                                    seed=1, initial_digest="obs-0")
        assert record.episode.outcome is EpisodeOutcome.FAILURE
        assert record.abort_reason == "endpoint unreachable"
        assert len(record.episode.steps) == 2


class TestConfig:
    def test_thresholds_above_one_allowed(self):
        cfg = CascadeConfig(theta_s=1.5, theta_m=1.5)
        assert cfg.theta_s == 1.5

    def test_hysteresis_gap_invariant(self):
        with pytest.raises(ValueError):
            CascadeConfig(mode="hysteresis", theta_s=0.05, deescalate_gap=0.1)

    def test_digest_stable(self):
        assert CascadeConfig().digest() == CascadeConfig().digest()
        assert CascadeConfig().digest() != CascadeConfig(theta_s=0.6).digest()
