#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace oversense {

/// A prompt broken into tokens plus the vocabulary ids for each token.
/// tokens and token_ids always have the same length; ids of tokens outside
/// the vocabulary are the reserved unknown id.
struct TokenizedPrompt {
    std::string prompt_id;
    std::vector<std::string> tokens;
    std::vector<std::size_t> token_ids;

    bool empty() const { return tokens.empty(); }
    std::size_t size() const { return tokens.size(); }
};

/// Deterministic word tokenizer: ASCII lowercasing, splits on Unicode
/// whitespace and punctuation, keeps letters (including non-ASCII), digits,
/// and everything else that is not a separator. Total function: any input,
/// including empty, yields a (possibly empty) token list.
std::vector<std::string> tokenize(std::string_view text);

/// Token string <-> contiguous index map with a reserved unknown sentinel at
/// index 0. Immutable after construction.
class Vocabulary {
public:
    static constexpr const char* kUnknownToken = "<unk>";

    /// Builds from a corpus of texts: keeps every token occurring at least
    /// min_count times, ordered by descending count then lexicographically.
    /// Throws ConfigError on an empty corpus or non-positive min_count.
    static Vocabulary build(const std::vector<std::string>& corpus,
                            std::size_t min_count = 1);

    /// One token per line, line number = index, line 0 = unknown sentinel.
    static Vocabulary load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    std::string serialize() const;
    static Vocabulary deserialize(const std::string& content,
                                  const std::string& origin = "<memory>");

    std::size_t size() const { return id_to_token_.size(); }
    std::size_t unknown_id() const { return 0; }

    /// Index of the token, or the unknown id when absent.
    std::size_t id_of(const std::string& token) const;
    const std::string& token_of(std::size_t id) const;
    bool contains(const std::string& token) const;

    /// Tokenizes text and resolves ids in one pass.
    TokenizedPrompt encode(const std::string& prompt_id,
                           std::string_view text) const;

    /// Fingerprint of the serialized form; stored in checkpoints so stale
    /// pairings are detected on load.
    std::uint64_t hash() const;

    bool operator==(const Vocabulary& other) const {
        return id_to_token_ == other.id_to_token_;
    }

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, std::size_t> token_to_id_;

    void rebuild_index();
};

/// Relative unigram frequencies in (0, 1] with a strictly positive floor for
/// unseen tokens, so downstream division never sees zero.
class FrequencyTable {
public:
    static constexpr double kDefaultFloor = 1e-8;

    /// Loads a UTF-8 `token<TAB>count` file. Lines starting with `#` and
    /// blank lines are skipped. Counts are normalized to relative
    /// frequencies; tokens are lowercased.
    static FrequencyTable load(const std::filesystem::path& path,
                               double floor = kDefaultFloor);

    /// Derives the table from raw texts using the bundled tokenizer.
    static FrequencyTable from_corpus(const std::vector<std::string>& texts,
                                      double floor = kDefaultFloor);

    /// Builds directly from token -> relative frequency. Frequencies must be
    /// in (0, 1].
    static FrequencyTable from_frequencies(
        const std::map<std::string, double>& freqs,
        double floor = kDefaultFloor);

    /// Stored frequency, or the floor for absent tokens. Never zero.
    double lookup(const std::string& token) const;

    double floor() const { return floor_; }
    std::size_t size() const { return freq_.size(); }

private:
    std::unordered_map<std::string, double> freq_;
    double floor_ = kDefaultFloor;
};

}  // namespace oversense
