#include "oversense/corpus.hpp"

#include <algorithm>
#include <cstdlib>

#include "oversense/errors.hpp"
#include "oversense/util.hpp"

namespace oversense {

namespace {

// Decodes one UTF-8 code point starting at `i`; advances `i` past it.
// Malformed bytes are consumed one at a time and returned as-is, which keeps
// the tokenizer total over arbitrary byte strings.
char32_t next_code_point(std::string_view s, std::size_t& i) {
    unsigned char b0 = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    char32_t cp = b0;
    if (b0 >= 0xF0) {
        len = 4;
        cp = b0 & 0x07u;
    } else if (b0 >= 0xE0) {
        len = 3;
        cp = b0 & 0x0Fu;
    } else if (b0 >= 0xC0) {
        len = 2;
        cp = b0 & 0x1Fu;
    }
    if (len == 1) {
        ++i;
        return cp;
    }
    if (i + len > s.size()) {
        ++i;
        return b0;
    }
    for (std::size_t k = 1; k < len; ++k) {
        unsigned char bk = static_cast<unsigned char>(s[i + k]);
        if ((bk & 0xC0u) != 0x80u) {
            ++i;
            return b0;
        }
        cp = (cp << 6) | (bk & 0x3Fu);
    }
    i += len;
    return cp;
}

bool is_separator(char32_t cp) {
    if (cp < 0x80) {
        char c = static_cast<char>(cp);
        bool alnum = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                     (c >= '0' && c <= '9');
        return !alnum;
    }
    // Unicode whitespace.
    switch (cp) {
        case 0x0085: case 0x00A0: case 0x1680: case 0x2028: case 0x2029:
        case 0x202F: case 0x205F: case 0x3000:
            return true;
        default:
            break;
    }
    if (cp >= 0x2000 && cp <= 0x200A) {
        return true;
    }
    // Common punctuation blocks: Latin-1 punctuation/symbols and General
    // Punctuation (curly quotes, dashes, ellipsis).
    if ((cp >= 0x00A1 && cp <= 0x00BF) || cp == 0x00D7 || cp == 0x00F7) {
        return true;
    }
    if (cp >= 0x2010 && cp <= 0x2027) {
        return true;
    }
    if (cp >= 0x2030 && cp <= 0x205E) {
        return true;
    }
    // Everything else (accented letters, CJK, ...) is token material.
    return false;
}

void append_code_point(std::string& out, std::string_view src,
                       std::size_t begin, std::size_t end, char32_t cp) {
    if (cp < 0x80) {
        char c = static_cast<char>(cp);
        if (c >= 'A' && c <= 'Z') {
            c = static_cast<char>(c - 'A' + 'a');
        }
        out.push_back(c);
    } else {
        out.append(src.substr(begin, end - begin));
    }
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t begin = i;
        char32_t cp = next_code_point(text, i);
        if (is_separator(cp)) {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
        } else {
            append_code_point(current, text, begin, i, cp);
        }
    }
    if (!current.empty()) {
        tokens.push_back(std::move(current));
    }
    return tokens;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus,
                             std::size_t min_count) {
    if (corpus.empty()) {
        throw ConfigError("vocabulary: corpus is empty");
    }
    if (min_count == 0) {
        throw ConfigError("vocabulary: min_count must be positive");
    }
    std::unordered_map<std::string, std::size_t> counts;
    for (const std::string& text : corpus) {
        for (std::string& tok : tokenize(text)) {
            ++counts[std::move(tok)];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    kept.reserve(counts.size());
    for (auto& [tok, count] : counts) {
        if (count >= min_count) {
            kept.emplace_back(tok, count);
        }
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });

    Vocabulary vocab;
    vocab.id_to_token_.reserve(kept.size() + 1);
    vocab.id_to_token_.push_back(kUnknownToken);
    for (auto& [tok, count] : kept) {
        vocab.id_to_token_.push_back(std::move(tok));
    }
    vocab.rebuild_index();
    return vocab;
}

void Vocabulary::rebuild_index() {
    token_to_id_.clear();
    token_to_id_.reserve(id_to_token_.size());
    for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
        auto [it, inserted] = token_to_id_.emplace(id_to_token_[i], i);
        if (!inserted) {
            throw IntegrityError("vocabulary: duplicate token \"" +
                                 id_to_token_[i] + "\"");
        }
    }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    return deserialize(read_file(path), path.string());
}

Vocabulary Vocabulary::deserialize(const std::string& content,
                                   const std::string& origin) {
    std::vector<std::string> lines = split_lines(content);
    if (lines.empty()) {
        throw ParseError(origin, 1, "vocabulary file is empty");
    }
    if (lines[0] != kUnknownToken) {
        throw ParseError(origin, 1,
                         std::string("line 0 must be the unknown sentinel ") +
                             kUnknownToken);
    }
    Vocabulary vocab;
    vocab.id_to_token_ = std::move(lines);
    vocab.rebuild_index();
    return vocab;
}

std::string Vocabulary::serialize() const {
    std::string out;
    for (const std::string& tok : id_to_token_) {
        out += tok;
        out += '\n';
    }
    return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    atomic_write(path, serialize());
}

std::size_t Vocabulary::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? unknown_id() : it->second;
}

const std::string& Vocabulary::token_of(std::size_t id) const {
    if (id >= id_to_token_.size()) {
        throw IntegrityError("vocabulary: id " + std::to_string(id) +
                             " out of range (size " +
                             std::to_string(id_to_token_.size()) + ")");
    }
    return id_to_token_[id];
}

bool Vocabulary::contains(const std::string& token) const {
    return token_to_id_.count(token) != 0;
}

TokenizedPrompt Vocabulary::encode(const std::string& prompt_id,
                                   std::string_view text) const {
    TokenizedPrompt prompt;
    prompt.prompt_id = prompt_id;
    prompt.tokens = tokenize(text);
    prompt.token_ids.reserve(prompt.tokens.size());
    for (const std::string& tok : prompt.tokens) {
        prompt.token_ids.push_back(id_of(tok));
    }
    return prompt;
}

std::uint64_t Vocabulary::hash() const {
    return fnv1a(serialize());
}

FrequencyTable FrequencyTable::load(const std::filesystem::path& path,
                                    double floor) {
    if (floor <= 0.0) {
        throw ConfigError("frequency table: floor must be positive");
    }
    std::string content = read_file(path);
    std::vector<std::string> lines = split_lines(content);

    std::unordered_map<std::string, double> counts;
    double total = 0.0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) {
            throw ParseError(path.string(), static_cast<int>(i + 1),
                             "expected token<TAB>count");
        }
        std::string token = ascii_lower(line.substr(0, tab));
        const char* begin = line.c_str() + tab + 1;
        char* end = nullptr;
        double count = std::strtod(begin, &end);
        if (end == begin || *end != '\0' || !(count > 0.0)) {
            throw ParseError(path.string(), static_cast<int>(i + 1),
                             "count must be a positive number");
        }
        counts[token] += count;
        total += count;
    }
    if (counts.empty()) {
        throw ConfigError("frequency table has no entries: " + path.string());
    }

    FrequencyTable table;
    table.floor_ = floor;
    table.freq_.reserve(counts.size());
    for (const auto& [token, count] : counts) {
        table.freq_[token] = count / total;
    }
    return table;
}

FrequencyTable FrequencyTable::from_corpus(const std::vector<std::string>& texts,
                                           double floor) {
    if (floor <= 0.0) {
        throw ConfigError("frequency table: floor must be positive");
    }
    std::unordered_map<std::string, double> counts;
    double total = 0.0;
    for (const std::string& text : texts) {
        for (std::string& tok : tokenize(text)) {
            counts[std::move(tok)] += 1.0;
            total += 1.0;
        }
    }
    if (counts.empty()) {
        throw ConfigError("frequency table: corpus produced no tokens");
    }
    FrequencyTable table;
    table.floor_ = floor;
    table.freq_.reserve(counts.size());
    for (const auto& [token, count] : counts) {
        table.freq_[token] = count / total;
    }
    return table;
}

FrequencyTable FrequencyTable::from_frequencies(
    const std::map<std::string, double>& freqs, double floor) {
    if (floor <= 0.0) {
        throw ConfigError("frequency table: floor must be positive");
    }
    FrequencyTable table;
    table.floor_ = floor;
    for (const auto& [token, f] : freqs) {
        if (!(f > 0.0) || f > 1.0) {
            throw ConfigError("frequency table: frequency for \"" + token +
                              "\" outside (0, 1]");
        }
        table.freq_[ascii_lower(token)] = f;
    }
    return table;
}

double FrequencyTable::lookup(const std::string& token) const {
    auto it = freq_.find(token);
    return it == freq_.end() ? floor_ : it->second;
}

}  // namespace oversense
