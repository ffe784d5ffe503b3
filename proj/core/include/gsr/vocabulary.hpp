#pragma once

#include <gsr/kg_store.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace gsr {

using TokenId = std::uint32_t;

enum class Task : std::uint8_t { index, retrieval };

// Token table shared by encoder and decoder.
//
// Layout: four control tokens, the two task prefixes, one atomic token per
// relation (catalog order), then question words in lexicographic order.
// The decoder predicts only over the "target space": relation tokens plus
// the end token, addressed by target index (relation index, or
// relation_count() for end).
class Vocabulary {
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kUnknown = 1;
    static constexpr TokenId kBegin = 2;
    static constexpr TokenId kEnd = 3;
    static constexpr TokenId kIndexPrefix = 4;
    static constexpr TokenId kRetrievalPrefix = 5;
    static constexpr TokenId kFirstRelation = 6;

    Vocabulary() = default;
    Vocabulary(std::vector<std::string> relation_labels, std::vector<std::string> words);

    std::size_t size() const noexcept { return tokens_.size(); }
    std::size_t relation_count() const noexcept { return relations_.size(); }
    std::size_t word_count() const noexcept { return words_.size(); }

    std::size_t target_size() const noexcept { return relation_count() + 1; }
    std::size_t end_target() const noexcept { return relation_count(); }

    TokenId relation_token(std::size_t relation_index) const;
    std::optional<std::size_t> relation_index(std::string_view label) const;
    const std::string& relation_label(std::size_t relation_index) const;
    const std::vector<std::string>& relation_labels() const noexcept { return relations_; }
    const std::vector<std::string>& words() const noexcept { return words_; }

    // Word id, or kUnknown.
    TokenId word_token(std::string_view word) const;
    const std::string& token_text(TokenId id) const { return tokens_.at(id); }

    static TokenId task_prefix(Task task) noexcept {
        return task == Task::index ? kIndexPrefix : kRetrievalPrefix;
    }

    // FNV-1a over the token table; ties checkpoints to their token layout.
    std::uint64_t hash() const noexcept { return hash_; }

    void save(std::ostream& out) const;
    static Vocabulary load(std::istream& in);
    void save_file(const std::filesystem::path& path) const;
    static Vocabulary load_file(const std::filesystem::path& path);

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
        return a.relations_ == b.relations_ && a.words_ == b.words_;
    }

private:
    std::vector<std::string> relations_;
    std::vector<std::string> words_;
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> relation_index_;
    std::unordered_map<std::string, TokenId> word_index_;
    std::uint64_t hash_ = 0;
};

// Lowercase (ASCII) and split on whitespace.
std::vector<std::string> tokenize(std::string_view text);

// Words with frequency >= min_frequency over all question texts; one
// relation token per catalog entry whether or not it appears in a chain.
Vocabulary build_vocab(std::span<const std::string> questions,
                       std::span<const RelationStat> catalog, int min_frequency);

// [task prefix] + word tokens, at most max_question_tokens words.
std::vector<TokenId> encode_input(const Vocabulary& vocab, Task task, std::string_view question,
                                  std::size_t max_question_tokens);

} // namespace gsr
