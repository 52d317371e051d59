#pragma once

#include <cstddef>
#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace oversense {

enum class Verdict { kReject, kAccept };

enum class DecisionMethod { kPhraseHeuristic, kJudge, kImported };

/// How a response was classified. matched_phrase is present exactly when the
/// phrase heuristic decided; judge_raw is present exactly when the judge did.
struct RefusalDecision {
    Verdict verdict = Verdict::kAccept;
    DecisionMethod method = DecisionMethod::kImported;
    std::optional<std::string> matched_phrase;
    std::optional<std::string> judge_raw;
};

/// Ordered list of lowercase refusal phrases; file format is one phrase per
/// line, `#` comments and blank lines skipped.
struct PhraseList {
    std::vector<std::string> phrases;

    static PhraseList load(const std::filesystem::path& path);
    static PhraseList from_lines(const std::vector<std::string>& lines,
                                 const std::string& origin = "<memory>");

    void validate() const;  // non-empty, lowercase, no duplicates
};

/// Minimal judge interface: given a response text, return the judge model's
/// raw reply. calls() makes the two-stage short-circuit observable.
class JudgeClient {
public:
    virtual ~JudgeClient() = default;
    virtual std::string judge(const std::string& response_text) = 0;
    virtual std::size_t calls() const = 0;
};

/// Test double replaying canned replies in order.
class ScriptedJudge : public JudgeClient {
public:
    explicit ScriptedJudge(std::vector<std::string> replies);
    std::string judge(const std::string& response_text) override;
    std::size_t calls() const override { return calls_; }

private:
    std::deque<std::string> replies_;
    std::size_t calls_ = 0;
};

/// Offline stand-in for an LLM judge: replies REFUSAL when any phrase from
/// its list matches, COMPLY otherwise. Deterministic and network-free.
class PhraseJudge : public JudgeClient {
public:
    explicit PhraseJudge(PhraseList phrases);
    std::string judge(const std::string& response_text) override;
    std::size_t calls() const override { return calls_; }

private:
    PhraseList phrases_;
    std::size_t calls_ = 0;
};

/// Stage one: case-insensitive substring match, phrases tried in list order.
/// Returns the reject decision for the first hit, or nullopt (undecided).
std::optional<RefusalDecision> match_refusal_phrases(const std::string& response,
                                                     const PhraseList& phrases);

/// Stage two: asks the judge; the reply must be exactly REFUSAL or COMPLY
/// after trimming whitespace, else JudgeFormatError carrying the raw text.
RefusalDecision judge_refusal(const std::string& response, JudgeClient& judge);

/// Full protocol: phrase heuristic first; the judge runs only when stage one
/// is undecided.
RefusalDecision label_response(const std::string& response,
                               const PhraseList& phrases, JudgeClient& judge);

}  // namespace oversense
