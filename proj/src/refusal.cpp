#include "oversense/refusal.hpp"

#include <algorithm>
#include <unordered_set>

#include "oversense/errors.hpp"
#include "oversense/util.hpp"

namespace oversense {

namespace {

// Lowercases ASCII and folds the common UTF-8 right single quote to the
// ASCII apostrophe, so "I’m sorry" matches a phrase spelled "i'm sorry".
std::string normalize_for_match(const std::string& text) {
    std::string out = ascii_lower(text);
    const std::string curly = "\xe2\x80\x99";
    std::size_t pos = 0;
    while ((pos = out.find(curly, pos)) != std::string::npos) {
        out.replace(pos, curly.size(), "'");
        ++pos;
    }
    return out;
}

}  // namespace

PhraseList PhraseList::load(const std::filesystem::path& path) {
    return from_lines(split_lines(read_file(path)), path.string());
}

PhraseList PhraseList::from_lines(const std::vector<std::string>& lines,
                                  const std::string& origin) {
    PhraseList list;
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::string phrase = ascii_lower(line);
        if (!seen.insert(phrase).second) {
            throw ParseError(origin, static_cast<int>(i + 1),
                             "duplicate phrase: \"" + phrase + "\"");
        }
        list.phrases.push_back(std::move(phrase));
    }
    list.validate();
    return list;
}

void PhraseList::validate() const {
    if (phrases.empty()) {
        throw ConfigError("phrase list is empty");
    }
    std::unordered_set<std::string> seen;
    for (const std::string& p : phrases) {
        if (p.empty()) {
            throw ConfigError("phrase list contains an empty phrase");
        }
        if (!seen.insert(p).second) {
            throw ConfigError("phrase list contains duplicate: \"" + p + "\"");
        }
    }
}

ScriptedJudge::ScriptedJudge(std::vector<std::string> replies)
    : replies_(replies.begin(), replies.end()) {}

std::string ScriptedJudge::judge(const std::string&) {
    ++calls_;
    if (replies_.empty()) {
        throw ConfigError("scripted judge ran out of replies");
    }
    std::string reply = replies_.front();
    replies_.pop_front();
    return reply;
}

std::optional<RefusalDecision> match_refusal_phrases(const std::string& response,
                                                     const PhraseList& phrases) {
    std::string haystack = normalize_for_match(response);
    for (const std::string& phrase : phrases.phrases) {
        if (haystack.find(phrase) != std::string::npos) {
            RefusalDecision decision;
            decision.verdict = Verdict::kReject;
            decision.method = DecisionMethod::kPhraseHeuristic;
            decision.matched_phrase = phrase;
            return decision;
        }
    }
    return std::nullopt;
}

PhraseJudge::PhraseJudge(PhraseList phrases) : phrases_(std::move(phrases)) {
    phrases_.validate();
}

std::string PhraseJudge::judge(const std::string& response_text) {
    ++calls_;
    return match_refusal_phrases(response_text, phrases_) ? "REFUSAL" : "COMPLY";
}

RefusalDecision judge_refusal(const std::string& response, JudgeClient& judge) {
    std::string raw = judge.judge(response);
    std::string answer = trim(raw);
    RefusalDecision decision;
    decision.method = DecisionMethod::kJudge;
    decision.judge_raw = raw;
    if (answer == "REFUSAL") {
        decision.verdict = Verdict::kReject;
    } else if (answer == "COMPLY") {
        decision.verdict = Verdict::kAccept;
    } else {
        throw JudgeFormatError(raw);
    }
    return decision;
}

RefusalDecision label_response(const std::string& response,
                               const PhraseList& phrases, JudgeClient& judge) {
    if (auto decision = match_refusal_phrases(response, phrases)) {
        return *decision;
    }
    return judge_refusal(response, judge);
}

}  // namespace oversense
