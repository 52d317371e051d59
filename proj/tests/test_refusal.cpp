#include <doctest.h>

#include <filesystem>

#include "oversense/errors.hpp"
#include "oversense/refusal.hpp"

using namespace oversense;

namespace {

const std::filesystem::path kDataDir =
    std::filesystem::path(OVERSENSE_SOURCE_DIR) / "data";

PhraseList default_phrases() {
    return PhraseList::load(kDataDir / "refusal_phrases.txt");
}

class ThrowingJudge : public JudgeClient {
public:
    std::string judge(const std::string&) override {
        ++calls_;
        throw TransportError("judge endpoint unreachable", 0);
    }
    std::size_t calls() const override { return calls_; }

private:
    std::size_t calls_ = 0;
};

}  // namespace

TEST_CASE("bundled phrase list loads and contains the canonical phrases") {
    PhraseList phrases = default_phrases();
    CHECK(phrases.phrases.size() >= 20);
    bool has_sorry = false;
    bool has_assist = false;
    for (const auto& p : phrases.phrases) {
        if (p == "i'm sorry, but i can't") has_sorry = true;
        if (p == "i cannot assist with that request") has_assist = true;
    }
    CHECK(has_sorry);
    CHECK(has_assist);
}

TEST_CASE("phrase matching decides obvious refusals case-insensitively") {
    PhraseList phrases = default_phrases();
    auto decision =
        match_refusal_phrases("I'm sorry, but I can't help with that.", phrases);
    REQUIRE(decision.has_value());
    CHECK(decision->verdict == Verdict::kReject);
    CHECK(decision->method == DecisionMethod::kPhraseHeuristic);
    CHECK(decision->matched_phrase == "i'm sorry, but i can't");
    CHECK_FALSE(decision->judge_raw.has_value());

    CHECK(match_refusal_phrases("I'M SORRY, BUT I CAN'T do that", phrases)
              .has_value());
}

TEST_CASE("phrase matching folds the typographic apostrophe") {
    PhraseList phrases = default_phrases();
    auto decision = match_refusal_phrases(
        "I’m sorry, but I can’t help with that.", phrases);
    REQUIRE(decision.has_value());
    CHECK(decision->verdict == Verdict::kReject);
}

TEST_CASE("non-refusals and empty responses stay undecided") {
    PhraseList phrases = default_phrases();
    CHECK_FALSE(match_refusal_phrases(
                    "Sure, here are five ways to pass the time on a flight.",
                    phrases)
                    .has_value());
    CHECK_FALSE(match_refusal_phrases("", phrases).has_value());
}

TEST_CASE("phrases match anywhere in the response, not only as prefixes") {
    PhraseList phrases = default_phrases();
    auto decision = match_refusal_phrases(
        "That is a broad topic. However, I cannot assist with that request.",
        phrases);
    REQUIRE(decision.has_value());
    CHECK(decision->matched_phrase == "i cannot assist with that request");
}

TEST_CASE("judge replies parse into verdicts or surface a format error") {
    ScriptedJudge refusal({"REFUSAL"});
    RefusalDecision r = judge_refusal("some text", refusal);
    CHECK(r.verdict == Verdict::kReject);
    CHECK(r.method == DecisionMethod::kJudge);
    CHECK(r.judge_raw == "REFUSAL");

    ScriptedJudge comply({"  COMPLY\n"});
    RefusalDecision c = judge_refusal("some text", comply);
    CHECK(c.verdict == Verdict::kAccept);
    CHECK(c.judge_raw == "  COMPLY\n");

    ScriptedJudge vague({"maybe?"});
    try {
        judge_refusal("some text", vague);
        FAIL("expected JudgeFormatError");
    } catch (const JudgeFormatError& e) {
        CHECK(e.raw() == "maybe?");
    }
}

TEST_CASE("label_response never calls the judge when a phrase matches") {
    PhraseList phrases = default_phrases();
    ScriptedJudge judge({"COMPLY"});
    RefusalDecision d =
        label_response("I'm sorry, but I can't share that.", phrases, judge);
    CHECK(d.verdict == Verdict::kReject);
    CHECK(d.method == DecisionMethod::kPhraseHeuristic);
    CHECK(judge.calls() == 0);
}

TEST_CASE("label_response escalates undecided responses to the judge") {
    PhraseList phrases = default_phrases();
    ScriptedJudge judge({"COMPLY"});
    RefusalDecision d = label_response("Here is the answer you wanted.",
                                       phrases, judge);
    CHECK(d.verdict == Verdict::kAccept);
    CHECK(d.method == DecisionMethod::kJudge);
    CHECK(judge.calls() == 1);
}

TEST_CASE("judge transport failures propagate only on the escalation path") {
    PhraseList phrases = default_phrases();
    ThrowingJudge judge;
    CHECK_NOTHROW(
        label_response("I'm sorry, but I can't do that.", phrases, judge));
    CHECK(judge.calls() == 0);
    CHECK_THROWS_AS(label_response("Normal answer.", phrases, judge),
                    TransportError);
    CHECK(judge.calls() == 1);
}

TEST_CASE("phrase lists validate emptiness and duplicates") {
    CHECK_THROWS_AS(PhraseList::from_lines({}), ConfigError);
    CHECK_THROWS_AS(PhraseList::from_lines({"# only a comment"}), ConfigError);
    try {
        PhraseList::from_lines({"i refuse", "I REFUSE"}, "phrases.txt");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    PhraseList ok = PhraseList::from_lines({"i refuse", "", "# note", "no can do"});
    CHECK(ok.phrases == std::vector<std::string>{"i refuse", "no can do"});
}

TEST_CASE("any phrase hit yields reject regardless of list order") {
    PhraseList a = PhraseList::from_lines({"alpha", "beta"});
    PhraseList b = PhraseList::from_lines({"beta", "alpha"});
    std::string text = "ALPHA then BETA";
    auto da = match_refusal_phrases(text, a);
    auto db = match_refusal_phrases(text, b);
    REQUIRE(da.has_value());
    REQUIRE(db.has_value());
    CHECK(da->verdict == Verdict::kReject);
    CHECK(db->verdict == Verdict::kReject);
    CHECK(da->matched_phrase == "alpha");  // order decides only the report
    CHECK(db->matched_phrase == "beta");
}
