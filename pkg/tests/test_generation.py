import sys
import textwrap

import numpy as np
import pytest

from fairrag.collection import Item, Query, SyntheticSpec, generate_synthetic
from fairrag.generation import (
    CachingGenerator,
    ExternalProcessGenerator,
    GeneratorProcessError,
    GeneratorTimeout,
    MetricConfigError,
    PromptTemplate,
    ProtocolError,
    SyntheticGenerator,
    UtilityMetricSpec,
    build_prompt,
    empirical_max_utility,
    expected_utility,
    label_utilities,
    normalize_eu,
    string_utility,
)
from fairrag.retrievers import RankedList


def _query(query_id="q1", texts=("alpha text", "beta text", "gamma text")):
    corpus = tuple(
        Item(item_id=f"d{i}", text=text) for i, text in enumerate(texts, start=1)
    )
    return Query(
        query_id=query_id, input_text="the question", target_output="t", corpus=corpus
    )


class TestPromptTemplate:
    def test_placeholders_required_exactly_once(self):
        with pytest.raises(ValueError, match=r"\{input\}"):
            PromptTemplate(template="no placeholders")
        with pytest.raises(ValueError, match=r"\{items\}"):
            PromptTemplate(template="{input} {items} {items}")

    def test_empty_ranking_gives_empty_items_section(self):
        template = PromptTemplate(template="I:{items};Q:{input}")
        query = _query()
        prompt = build_prompt(query, RankedList("q1", (), 0), template)
        assert prompt == "I:;Q:the question"

    def test_single_item_is_its_text(self):
        template = PromptTemplate(template="I:{items};Q:{input}")
        prompt = build_prompt(_query(), RankedList("q1", ("d2",), 1), template)
        assert prompt == "I:beta text;Q:the question"

    def test_order_is_preserved(self):
        template = PromptTemplate(template="{items}|{input}")
        forward = build_prompt(_query(), RankedList("q1", ("d1", "d3"), 2), template)
        backward = build_prompt(_query(), RankedList("q1", ("d3", "d1"), 2), template)
        assert forward != backward

    def test_unresolved_item_rejected(self):
        template = PromptTemplate()
        with pytest.raises(Exception, match="unknown item_id"):
            build_prompt(_query(), RankedList("q1", ("zz",), 1), template)


class TestSyntheticGenerator:
    def test_payload_tokens_in_canonical_order(self):
        generator = SyntheticGenerator()
        out = generator.generate("noise @t3 words @t1 and @t3 again")
        assert out == "@t1 @t3"

    def test_no_payload_gives_empty_output(self):
        assert SyntheticGenerator().generate("plain text only") == ""

    def test_deterministic(self):
        generator = SyntheticGenerator()
        prompt = "@b @a something"
        assert generator.generate(prompt) == generator.generate(prompt)


class TestStringUtility:
    def test_exact_match(self):
        metric = UtilityMetricSpec("exact_match")
        assert string_utility(metric, "abc", "abc") == 1.0
        assert string_utility(metric, "abc", " abc ") == 1.0
        assert string_utility(metric, "abc", "abd") == 0.0

    def test_token_f1_identity_and_disjoint(self):
        metric = UtilityMetricSpec("token_f1")
        assert string_utility(metric, "a b c", "a b c") == 1.0
        assert string_utility(metric, "a b", "x y") == 0.0

    def test_token_f1_half_overlap(self):
        metric = UtilityMetricSpec("token_f1")
        assert string_utility(metric, "a b", "a c") == pytest.approx(0.5)

    def test_token_f1_symmetry(self):
        metric = UtilityMetricSpec("token_f1")
        rng = np.random.default_rng(2)
        vocabulary = ["tok%d" % j for j in range(12)]
        for _ in range(100):
            left = " ".join(rng.choice(vocabulary, size=rng.integers(0, 8)))
            right = " ".join(rng.choice(vocabulary, size=rng.integers(0, 8)))
            assert string_utility(metric, left, right) == pytest.approx(
                string_utility(metric, right, left)
            )

    def test_rouge1_ignores_punctuation(self):
        metric = UtilityMetricSpec("rouge1_f")
        assert string_utility(metric, "Hello, world!", "hello world") == 1.0

    def test_mae_inverted_rating_scale(self):
        metric = UtilityMetricSpec("mae_inverted", upper_bound=4.0)
        assert string_utility(metric, "5", "3") == 2.0
        assert string_utility(metric, "5", "5") == 4.0

    def test_mae_inverted_non_numeric_output_scores_zero(self):
        metric = UtilityMetricSpec("mae_inverted", upper_bound=4.0)
        assert string_utility(metric, "5", "not a number") == 0.0

    def test_mae_inverted_non_numeric_target_is_config_error(self):
        metric = UtilityMetricSpec("mae_inverted", upper_bound=4.0)
        with pytest.raises(MetricConfigError, match="not numeric"):
            string_utility(metric, "five", "3")

    def test_mae_inverted_floor_at_zero(self):
        metric = UtilityMetricSpec("mae_inverted", upper_bound=4.0)
        assert string_utility(metric, "1", "100") == 0.0

    def test_mae_requires_upper_bound(self):
        with pytest.raises(MetricConfigError, match="upper_bound"):
            UtilityMetricSpec("mae_inverted")

    def test_parse_with_bound(self):
        metric = UtilityMetricSpec.parse("mae_inverted:4")
        assert metric.upper_bound == 4.0
        assert UtilityMetricSpec.parse("token_f1").name == "token_f1"

    def test_unknown_metric(self):
        with pytest.raises(MetricConfigError, match="unknown metric"):
            UtilityMetricSpec("bleu")


class TestExpectedUtility:
    def test_mean(self):
        assert expected_utility([0.5, 0.7, 0.6]) == pytest.approx(0.6)

    def test_constant(self):
        assert expected_utility([0.25] * 7) == 0.25

    def test_single_sample(self):
        assert expected_utility([0.42]) == 0.42

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            expected_utility([])


class TestEmpiricalMax:
    def test_singleton(self):
        assert empirical_max_utility([0.3]) == 0.3

    def test_oracle_carries_max(self):
        sweep = [0.1, 0.4, 0.2]
        oracle = [0.9, 0.5]
        assert empirical_max_utility(sweep + oracle) == 0.9

    def test_five_groups(self):
        rng = np.random.default_rng(0)
        groups = [list(rng.uniform(0, 1, 100)) for _ in range(5)]
        flat = [u for group in groups for u in group]
        assert empirical_max_utility(flat) == max(flat)


class TestNormalizeEU:
    def test_self_normalization(self):
        assert normalize_eu(0.8, 0.8) == 1.0

    def test_zero(self):
        assert normalize_eu(0.0, 0.5) == 0.0

    def test_zero_ceiling_defined_as_zero(self):
        assert normalize_eu(0.0, 0.0) == 0.0

    def test_clamped(self):
        assert normalize_eu(1.2, 1.0) == 1.0


class _StubAdapter:
    """Canned outputs keyed by substring of the prompt."""

    name = "stub"

    def __init__(self, rules, default=""):
        self.rules = rules
        self.default = default

    def generate(self, prompt):
        for needle, output in self.rules:
            if needle in prompt:
                return output
        return self.default

    def generate_many(self, prompts):
        return [self.generate(p) for p in prompts]

    def close(self):
        pass


class _CountingAdapter:
    name = "counting"

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def generate(self, prompt):
        self.calls += 1
        return self.inner.generate(prompt)

    def generate_many(self, prompts):
        self.calls += len(prompts)
        return self.inner.generate_many(prompts)

    def close(self):
        pass


class TestCaching:
    def test_repeated_prompts_hit_cache(self):
        counting = _CountingAdapter(SyntheticGenerator())
        cached = CachingGenerator(counting)
        prompts = ["@a one", "@b two", "@a one", "@a one"]
        outputs = cached.generate_many(prompts)
        assert outputs[0] == outputs[2] == outputs[3]
        assert counting.calls == 2


class TestLabelUtilities:
    def _collection_one_query(self):
        query = Query(
            query_id="q1",
            input_text="question",
            target_output="gold answer tokens here",
            corpus=(
                Item(item_id="good", text="useful doc"),
                Item(item_id="flat", text="neutral doc"),
                Item(item_id="bad", text="harmful doc"),
            ),
        )
        from fairrag.collection import TestCollection

        return TestCollection(queries=(query,))

    def test_gain_sign_rule(self):
        # baseline 0.4; useful item lifts to 0.55; neutral stays; bad drops
        adapter = _StubAdapter(
            rules=[
                ("useful doc", "gold answer tokens extra1"),  # f1 ~ higher
                ("neutral doc", "gold answer"),  # same as baseline
                ("harmful doc", "nothing relevant at all"),
            ],
            default="gold answer",  # baseline prompt has no item text
        )
        labels = label_utilities(
            self._collection_one_query(),
            adapter,
            UtilityMetricSpec("token_f1"),
            PromptTemplate(),
        )
        assert labels.label("q1", "good") == 1
        assert labels.gain("q1", "good") > 0
        assert labels.label("q1", "flat") == 0
        assert labels.gain("q1", "flat") == 0.0
        assert labels.label("q1", "bad") == 0
        assert labels.gain("q1", "bad") < 0

    def test_planted_synthetic_signs(self):
        spec = SyntheticSpec(
            query_count=5,
            n_range=(8, 14),
            pct_useful=0.3,
            score_gap=1.0,
            noise=0.2,
            seed=21,
            pct_neutral=0.2,
        )
        collection, _, gains = generate_synthetic(spec)
        labels = label_utilities(
            collection,
            SyntheticGenerator(),
            UtilityMetricSpec("token_f1"),
            PromptTemplate(),
        )
        for (qid, iid), gain in gains.items():
            assert labels.label(qid, iid) == (1 if gain > 0 else 0)
            if gain == 0.0:
                assert labels.gain(qid, iid) == 0.0

    def test_checkpoint_resume_skips_completed_queries(self, tmp_path):
        spec = SyntheticSpec(
            query_count=3,
            n_range=(6, 6),
            pct_useful=0.5,
            score_gap=1.0,
            noise=0.2,
            seed=4,
        )
        collection, _, _ = generate_synthetic(spec)
        checkpoint = tmp_path / "ckpt.jsonl"
        first = label_utilities(
            collection,
            SyntheticGenerator(),
            UtilityMetricSpec("token_f1"),
            PromptTemplate(),
            checkpoint_path=checkpoint,
        )
        assert checkpoint.exists()
        counting = _CountingAdapter(SyntheticGenerator())
        second = label_utilities(
            collection,
            counting,
            UtilityMetricSpec("token_f1"),
            PromptTemplate(),
            checkpoint_path=checkpoint,
        )
        assert counting.calls == 0
        assert second.entries == first.entries


WORKER_ECHO = textwrap.dedent(
    """
    import json, sys
    print(json.dumps({"ready": True}), flush=True)
    for line in sys.stdin:
        req = json.loads(line)
        print(json.dumps({"id": req["id"], "output": req["prompt"]}), flush=True)
    """
)

WORKER_OUT_OF_ORDER = textwrap.dedent(
    """
    import json, sys
    print(json.dumps({"ready": True}), flush=True)
    pending = []
    for line in sys.stdin:
        pending.append(json.loads(line))
        if len(pending) == 2:
            for req in reversed(pending):
                print(json.dumps({"id": req["id"], "output": req["prompt"].upper()}), flush=True)
            pending = []
    for req in pending:
        print(json.dumps({"id": req["id"], "output": req["prompt"].upper()}), flush=True)
    """
)

WORKER_BAD_ID = textwrap.dedent(
    """
    import json, sys
    print(json.dumps({"ready": True}), flush=True)
    for line in sys.stdin:
        req = json.loads(line)
        print(json.dumps({"id": req["id"] + 1000, "output": "x"}), flush=True)
    """
)

WORKER_NO_READY = 'print("hello, not json", flush=True)\nimport time; time.sleep(30)\n'

WORKER_EXIT_AFTER_READY = textwrap.dedent(
    """
    import json, sys
    print(json.dumps({"ready": True}), flush=True)
    sys.stdin.readline()
    sys.exit(3)
    """
)

WORKER_SLOW = textwrap.dedent(
    """
    import json, sys, time
    print(json.dumps({"ready": True}), flush=True)
    for line in sys.stdin:
        time.sleep(5)
        req = json.loads(line)
        print(json.dumps({"id": req["id"], "output": "late"}), flush=True)
    """
)


def _worker(tmp_path, source, name):
    path = tmp_path / name
    path.write_text(source)
    return [sys.executable, str(path)]


class TestExternalProcessGenerator:
    def test_echo_roundtrip(self, tmp_path):
        command = _worker(tmp_path, WORKER_ECHO, "echo.py")
        with ExternalProcessGenerator(command, timeout=10) as generator:
            assert generator.generate("hello world") == "hello world"
            assert generator.generate_many(["a", "b", "c"]) == ["a", "b", "c"]

    def test_out_of_order_responses_matched_by_id(self, tmp_path):
        command = _worker(tmp_path, WORKER_OUT_OF_ORDER, "ooo.py")
        with ExternalProcessGenerator(command, timeout=10) as generator:
            assert generator.generate_many(["aa", "bb"]) == ["AA", "BB"]

    def test_mismatched_id_is_protocol_error(self, tmp_path):
        command = _worker(tmp_path, WORKER_BAD_ID, "badid.py")
        with ExternalProcessGenerator(command, timeout=10) as generator:
            with pytest.raises(ProtocolError, match="does not match"):
                generator.generate("x")

    def test_missing_ready_announcement(self, tmp_path):
        command = _worker(tmp_path, WORKER_NO_READY, "noready.py")
        with ExternalProcessGenerator(command, timeout=10) as generator:
            with pytest.raises(ProtocolError, match="readiness"):
                generator.generate("x")

    def test_worker_exit_surfaces_request_id(self, tmp_path):
        command = _worker(tmp_path, WORKER_EXIT_AFTER_READY, "exits.py")
        with ExternalProcessGenerator(command, timeout=10) as generator:
            with pytest.raises(GeneratorProcessError, match="request 0"):
                generator.generate("x")

    def test_timeout(self, tmp_path):
        command = _worker(tmp_path, WORKER_SLOW, "slow.py")
        with ExternalProcessGenerator(command, timeout=0.3) as generator:
            with pytest.raises(GeneratorTimeout, match="request"):
                generator.generate("x")
