import math

import pytest

from stepcascade.harness import baseline_factories, run_suite
from stepcascade.labeling import (
    Consensus,
    LabelKind,
    OracleTeacher,
    RemoteTeacher,
    aggregate_consensus,
    consensus_label_episode,
    export_dataset,
    extract_windows,
    load_dataset,
    run_teacher,
)
from stepcascade.controller import CascadeConfig
from stepcascade.synthenv import build_suite
from stub_server import StubServer


@pytest.fixture(scope="module")
def sim_records():
    manifest = build_suite(777, num_tasks=12, max_steps=40)
    return run_suite(manifest, CascadeConfig(), run_mode="small-only",
                     **baseline_factories("small-only"))


class TestExtractWindows:
    def test_one_candidate_per_step(self, sim_records):
        episode = sim_records[0].episode
        candidates = extract_windows(episode, LabelKind.STUCK)
        assert len(candidates) == len(episode.steps)

    def test_context_truncation(self, sim_records):
        episode = sim_records[0].episode
        assert len(episode.steps) >= 8
        candidates = extract_windows(episode, LabelKind.STUCK)
        assert len(candidates[1].entries) == 2  # step 2: itself plus one predecessor
        assert len(candidates[7].entries) == 6  # step 8: five context plus current

    def test_milestone_candidates_carry_instruction(self, sim_records):
        episode = sim_records[0].episode
        for c in extract_windows(episode, LabelKind.MILESTONE):
            assert c.task_instruction == episode.task.instruction
        for c in extract_windows(episode, LabelKind.STUCK):
            assert c.task_instruction == ""

    def test_empty_episode_rejected(self):
        from stepcascade.trace import Episode, EpisodeOutcome, TaskSpec

        empty = Episode(task=TaskSpec("t", "g", 5), steps=(), outcome=EpisodeOutcome.FAILURE)
        with pytest.raises(ValueError):
            extract_windows(empty, LabelKind.STUCK)


class TestConsensus:
    def test_exhaustive_three_of_five(self):
        expected = {
            0: Consensus.NEGATIVE,
            1: Consensus.DISCARD,
            2: Consensus.DISCARD,
            3: Consensus.POSITIVE,
            4: Consensus.POSITIVE,
            5: Consensus.POSITIVE,
        }
        for votes, verdict in expected.items():
            assert aggregate_consensus(votes, 5) is verdict

    def test_generalized_rule(self):
        # positive iff votes >= ceil(runs * 3 / 5)
        for runs in (3, 5, 7, 10):
            threshold = math.ceil(runs * 3 / 5)
            for votes in range(runs + 1):
                got = aggregate_consensus(votes, runs)
                if votes >= threshold:
                    assert got is Consensus.POSITIVE
                elif votes == 0:
                    assert got is Consensus.NEGATIVE
                else:
                    assert got is Consensus.DISCARD

    def test_votes_out_of_range(self):
        with pytest.raises(ValueError):
            aggregate_consensus(6, 5)


class TestOracleTeacher:
    def test_noise_free_runs_match_ground_truth(self, sim_records):
        record = sim_records[0]
        teacher = OracleTeacher(record.truth, noise=0.0)
        results = run_teacher(teacher, record.episode, runs=5)
        assert len(results) == 5
        truth_stuck = frozenset(s for s, t in record.truth.items() if t.in_stuck_region)
        truth_mile = frozenset(s for s, t in record.truth.items() if t.completes_milestone)
        for r in results:
            assert r.stuck_steps == truth_stuck
            assert r.milestone_steps == truth_mile

    def test_noisy_consensus_recovers_positive_majority_of_seeds(self, sim_records):
        # ground truth: with eps=0.4 a true-positive keeps its vote with
        # p=0.6 per run; P(Bin(5, 0.6) >= 3) computed by enumeration
        tail = sum(
            math.comb(5, k) * 0.6**k * 0.4 ** (5 - k) for k in range(3, 6)
        )
        assert tail == pytest.approx(0.68256)

        record = next(r for r in sim_records
                      if any(t.in_stuck_region for t in r.truth.values()))
        positive_step = next(s for s, t in sorted(record.truth.items()) if t.in_stuck_region)
        recovered = 0
        seeds = 400
        for seed in range(seeds):
            teacher = OracleTeacher(record.truth, noise=0.4, seed=seed)
            results = run_teacher(teacher, record.episode, runs=5)
            votes = sum(1 for r in results if positive_step in r.stuck_steps)
            if aggregate_consensus(votes, 5) is Consensus.POSITIVE:
                recovered += 1
        # Monte-Carlo frequency should sit near the binomial tail
        assert recovered / seeds == pytest.approx(tail, abs=0.08)
        assert recovered / seeds > 0.5

    def test_consensus_labels_drop_discards(self, sim_records):
        record = sim_records[0]
        teacher = OracleTeacher(record.truth, noise=0.3, seed=9)
        results = run_teacher(teacher, record.episode, runs=5)
        kept = consensus_label_episode(record.episode, results, LabelKind.STUCK)
        assert len(kept) <= len(record.episode.steps)
        for sample in kept:
            assert aggregate_consensus(sample.provenance.votes, 5) in (
                Consensus.POSITIVE, Consensus.NEGATIVE,
            )
            assert sample.label is (aggregate_consensus(sample.provenance.votes, 5) is Consensus.POSITIVE)


class TestRemoteTeacher:
    def _episode(self, sim_records):
        return sim_records[0].episode

    def test_valid_labeling_responses(self, sim_records):
        stuck_payload = {"is_stuck": True, "stuck_steps": [3, 4], "reasons": ["loop"],
                         "severity": "medium", "summary": "looping"}
        mile_payload = {"milestones": [{"step": 2, "reasoning": "finished the form"}]}

        def label(body):
            return 200, stuck_payload if body["kind"] == "stuck" else mile_payload

        with StubServer({("POST", "/label"): label}) as stub:
            result = RemoteTeacher(stub.url).label_episode(self._episode(sim_records), 0)
        assert result.valid
        assert result.stuck_steps == frozenset({3, 4})
        assert result.milestone_steps == frozenset({2})

    def test_prose_response_flagged_empty(self, sim_records):
        with StubServer({("POST", "/label"): lambda b: (200, '"just some prose, not the schema"')}) as stub:
            result = RemoteTeacher(stub.url).label_episode(self._episode(sim_records), 0)
        assert not result.valid
        assert result.stuck_steps == frozenset()

    def test_schema_violation_flagged(self, sim_records):
        bad = {"is_stuck": "yes", "stuck_steps": [], "reasons": [], "severity": "none", "summary": ""}

        def label(body):
            if body["kind"] == "stuck":
                return 200, bad
            return 200, {"milestones": []}

        with StubServer({("POST", "/label"): label}) as stub:
            result = RemoteTeacher(stub.url).label_episode(self._episode(sim_records), 0)
        assert not result.valid

    def test_run_params_recorded(self, sim_records):
        def label(body):
            if body["kind"] == "stuck":
                return 200, {"is_stuck": False, "stuck_steps": [], "reasons": [],
                             "severity": "none", "summary": "fine"}
            return 200, {"milestones": []}

        params = [{"temperature": 0.2}, {"temperature": 0.9}]
        with StubServer({("POST", "/label"): label}) as stub:
            teacher = RemoteTeacher(stub.url, run_params=params)
            results = run_teacher(teacher, self._episode(sim_records), runs=2)
        assert [r.params for r in results] == params


class TestExport:
    def _samples(self, sim_records, kind=LabelKind.STUCK):
        samples = []
        for record in sim_records:
            teacher = OracleTeacher(record.truth, noise=0.0)
            results = run_teacher(teacher, record.episode, runs=5)
            samples.extend(consensus_label_episode(record.episode, results, kind))
        return samples

    def test_trajectory_level_split(self, sim_records, tmp_path):
        samples = self._samples(sim_records)
        summary = export_dataset(samples, tmp_path, split=0.8, seed=3)
        train = load_dataset(summary.train_path)
        evaluation = load_dataset(summary.eval_path)
        train_ids = {r["provenance"]["trajectory_id"] for r in train}
        eval_ids = {r["provenance"]["trajectory_id"] for r in evaluation}
        assert not train_ids & eval_ids
        assert len(train_ids) == round(0.8 * 12)

    def test_same_seed_identical_files(self, sim_records, tmp_path):
        samples = self._samples(sim_records)
        a = export_dataset(samples, tmp_path / "a", split=0.8, seed=3)
        b = export_dataset(samples, tmp_path / "b", split=0.8, seed=3)
        assert a.train_path.read_bytes() == b.train_path.read_bytes()
        assert a.eval_path.read_bytes() == b.eval_path.read_bytes()

    def test_single_trajectory_warns(self, sim_records, tmp_path):
        record = sim_records[0]
        teacher = OracleTeacher(record.truth, noise=0.0)
        results = run_teacher(teacher, record.episode, runs=5)
        samples = consensus_label_episode(record.episode, results, LabelKind.STUCK)
        summary = export_dataset(samples, tmp_path, split=0.8, seed=3)
        assert any("single trajectory" in w for w in summary.warnings)

    def test_milestone_records_carry_task(self, sim_records, tmp_path):
        samples = self._samples(sim_records, LabelKind.MILESTONE)
        summary = export_dataset(samples, tmp_path, split=0.8, seed=3, prefix="milestone")
        for row in load_dataset(summary.train_path):
            assert row["kind"] == "milestone"
            assert row["task"]

    def test_no_samples_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            export_dataset([], tmp_path)
