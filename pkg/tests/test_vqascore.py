import math

import numpy as np
import pytest
from PIL import Image

from pairforge.harness import CapabilityError, vqascore_eval, yes_probability_from_response
from pairforge.harness.vqascore import VQA_QUESTION_TEMPLATE, human_accuracy_by_item
from pairforge.stats import kendall_tau_b, pearson_r

from harness_helpers import mk_manifest, mk_trial


@pytest.fixture()
def vqa_manifest(tmp_path):
    m = mk_manifest(8)
    for it in m.items:
        d = tmp_path / it.pair_id
        d.mkdir()
        for name in ("view1.png", "view2.png", "view2_clean.png", "view1_labeled.png"):
            Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(d / name)
        it.image_edited = str(d / "view2.png")
        it.image_labeled = str(d / "view1_labeled.png")
    return m


def captioner(path):
    return "a simple room"


class TestPairwise:
    def test_judge_prefers_consistent(self, vqa_manifest):
        def judge(images, question):
            assert question == VQA_QUESTION_TEMPLATE.format(caption="a simple room")
            return 0.9 if images[1].endswith("view2_clean.png") else 0.1

        out = vqascore_eval(vqa_manifest, judge, captioner)
        assert out["pairwise_acc"] == 1.0

    def test_ties_count_half(self, vqa_manifest):
        out = vqascore_eval(vqa_manifest, lambda i, q: 0.5, captioner)
        assert out["pairwise_acc"] == 0.5

    def test_judge_prefers_edited_scores_zero(self, vqa_manifest):
        def judge(images, question):
            return 0.1 if images[1].endswith("view2_clean.png") else 0.9

        out = vqascore_eval(vqa_manifest, judge, captioner)
        assert out["pairwise_acc"] == 0.0


class TestCorrelations:
    def test_matches_stats_functions(self, vqa_manifest):
        rng = np.random.default_rng(4)
        edited_scores = {it.pair_id: float(rng.uniform(0, 1)) for it in vqa_manifest.items}

        def judge(images, question):
            for pid, s in edited_scores.items():
                if pid in images[1]:
                    return 0.99 if images[1].endswith("view2_clean.png") else s
            raise AssertionError("unknown image")

        human = []
        acc_by_item = {}
        for k, it in enumerate(vqa_manifest.items):
            correct_flags = [bool(rng.random() < 0.7) for _ in range(3)]
            acc_by_item[it.pair_id] = sum(correct_flags) / 3
            for j, c in enumerate(correct_flags):
                human.append(mk_trial(it.pair_id, f"human:h{j}", "A" if c else "B", c))

        out = vqascore_eval(vqa_manifest, judge, captioner, human_trials=human)
        xs = [edited_scores[it.pair_id] for it in vqa_manifest.items]
        ys = [acc_by_item[it.pair_id] for it in vqa_manifest.items]
        assert out["pearson_r"] == pytest.approx(pearson_r(xs, ys), abs=1e-12)
        assert out["kendall_tau"] == pytest.approx(kendall_tau_b(xs, ys), abs=1e-12)

    def test_absent_without_human_trials(self, vqa_manifest):
        out = vqascore_eval(vqa_manifest, lambda i, q: 0.4, captioner)
        assert out["pearson_r"] is None and out["kendall_tau"] is None

    def test_human_accuracy_aggregation(self):
        trials = [
            mk_trial("p1", "human:a", "A", True),
            mk_trial("p1", "human:b", "B", False),
            mk_trial("p2", "human:a", "A", True),
        ]
        assert human_accuracy_by_item(trials) == {"p1": 0.5, "p2": 1.0}


class TestJudgeEndpoint:
    def test_http_judge_reads_logprobs(self, vqa_manifest):
        import httpx

        from pairforge.harness.client import ModelEndpoint
        from pairforge.harness.vqascore import judge_from_endpoint

        def handler(request):
            import json as j

            body = j.loads(request.read())
            assert body["logprobs"] is True and body["max_tokens"] == 1
            return httpx.Response(200, json={
                "choices": [{"logprobs": {"content": [{"top_logprobs": [
                    {"token": "Yes", "logprob": math.log(0.7)},
                    {"token": "No", "logprob": math.log(0.3)},
                ]}]}}]
            })

        ep = ModelEndpoint(name="judge", base_url="http://judge/v1", model_id="j")
        judge = judge_from_endpoint(ep, client=httpx.Client(transport=httpx.MockTransport(handler)))
        it = vqa_manifest.items[0]
        got = judge([it.image_edited, it.image_edited], "Does this video show it?")
        assert got == pytest.approx(0.7)

    def test_http_judge_without_logprobs_names_gap(self, vqa_manifest):
        import httpx

        from pairforge.harness import CapabilityError
        from pairforge.harness.client import ModelEndpoint
        from pairforge.harness.vqascore import judge_from_endpoint

        def handler(request):
            return httpx.Response(200, json={"choices": [{"message": {"content": "Yes"}}]})

        ep = ModelEndpoint(name="judge", base_url="http://judge/v1", model_id="j")
        judge = judge_from_endpoint(ep, client=httpx.Client(transport=httpx.MockTransport(handler)))
        it = vqa_manifest.items[0]
        with pytest.raises(CapabilityError, match="logprobs"):
            judge([it.image_edited], "q")


class TestYesProbability:
    def response(self, top):
        return {"choices": [{"logprobs": {"content": [{"top_logprobs": top}]}}]}

    def test_reads_yes_token(self):
        data = self.response([
            {"token": "Yes", "logprob": math.log(0.8)},
            {"token": "No", "logprob": math.log(0.2)},
        ])
        assert yes_probability_from_response(data) == pytest.approx(0.8)

    def test_case_and_whitespace_insensitive(self):
        data = self.response([{"token": " yes", "logprob": math.log(0.3)}])
        assert yes_probability_from_response(data) == pytest.approx(0.3)

    def test_absent_yes_token_is_zero(self):
        data = self.response([{"token": "Maybe", "logprob": math.log(0.9)}])
        assert yes_probability_from_response(data) == 0.0

    def test_missing_logprobs_names_capability_gap(self):
        with pytest.raises(CapabilityError, match="logprobs"):
            yes_probability_from_response({"choices": [{"message": {"content": "Yes"}}]})
