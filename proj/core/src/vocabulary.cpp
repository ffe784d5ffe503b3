#include <gsr/vocabulary.hpp>

#include <gsr/error.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

namespace gsr {

namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(std::uint64_t h, std::string_view s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= kFnvPrime;
    }
    // Separator so ["ab","c"] and ["a","bc"] hash differently.
    h ^= 0xff;
    h *= kFnvPrime;
    return h;
}

} // namespace

Vocabulary::Vocabulary(std::vector<std::string> relation_labels, std::vector<std::string> words)
    : relations_(std::move(relation_labels)), words_(std::move(words)) {
    tokens_ = {"<pad>", "<unk>", "<s>", "</s>", "[Index]", "[Retrieval]"};
    for (std::size_t i = 0; i < relations_.size(); ++i) {
        if (!relation_index_.emplace(relations_[i], i).second) {
            throw Error("duplicate relation label in vocabulary: " + relations_[i]);
        }
        tokens_.push_back("<rel:" + relations_[i] + ">");
    }
    for (const auto& w : words_) {
        const auto id = static_cast<TokenId>(tokens_.size());
        if (!word_index_.emplace(w, id).second) {
            throw Error("duplicate word in vocabulary: " + w);
        }
        tokens_.push_back(w);
    }
    hash_ = kFnvOffset;
    for (const auto& t : tokens_) hash_ = fnv1a(hash_, t);
}

TokenId Vocabulary::relation_token(std::size_t relation_index) const {
    if (relation_index >= relations_.size()) {
        throw LookupError("relation index " + std::to_string(relation_index) + " out of range");
    }
    return kFirstRelation + static_cast<TokenId>(relation_index);
}

std::optional<std::size_t> Vocabulary::relation_index(std::string_view label) const {
    if (auto it = relation_index_.find(std::string(label)); it != relation_index_.end()) {
        return it->second;
    }
    return std::nullopt;
}

const std::string& Vocabulary::relation_label(std::size_t relation_index) const {
    if (relation_index >= relations_.size()) {
        throw LookupError("relation index " + std::to_string(relation_index) + " out of range");
    }
    return relations_[relation_index];
}

TokenId Vocabulary::word_token(std::string_view word) const {
    if (auto it = word_index_.find(std::string(word)); it != word_index_.end()) return it->second;
    return kUnknown;
}

// Text format:
//   gsr-vocab 1
//   relations <N>
//   <label> x N
//   words <M>
//   <word> x M
void Vocabulary::save(std::ostream& out) const {
    out << "gsr-vocab 1\n";
    out << "relations " << relations_.size() << '\n';
    for (const auto& r : relations_) out << r << '\n';
    out << "words " << words_.size() << '\n';
    for (const auto& w : words_) out << w << '\n';
}

Vocabulary Vocabulary::load(std::istream& in) {
    std::string line;
    auto next = [&]() -> std::string& {
        if (!std::getline(in, line)) throw FormatError("vocabulary: truncated input");
        return line;
    };
    if (next() != "gsr-vocab 1") throw FormatError("vocabulary: bad header \"" + line + "\"");
    auto read_count = [&](std::string_view key) {
        const std::string& l = next();
        if (l.rfind(std::string(key) + " ", 0) != 0) {
            throw FormatError("vocabulary: expected \"" + std::string(key) + " <n>\"");
        }
        return static_cast<std::size_t>(std::stoull(l.substr(key.size() + 1)));
    };
    std::vector<std::string> relations(read_count("relations"));
    for (auto& r : relations) r = next();
    std::vector<std::string> words(read_count("words"));
    for (auto& w : words) w = next();
    return Vocabulary(std::move(relations), std::move(words));
}

void Vocabulary::save_file(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write vocabulary " + path.string());
    save(out);
}

Vocabulary Vocabulary::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open vocabulary " + path.string());
    return load(in);
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

Vocabulary build_vocab(std::span<const std::string> questions,
                       std::span<const RelationStat> catalog, int min_frequency) {
    if (catalog.empty()) throw Error("build_vocab: relation catalog is empty");
    std::map<std::string, std::size_t> freq;
    for (const auto& q : questions) {
        for (auto& t : tokenize(q)) ++freq[std::move(t)];
    }
    std::vector<std::string> words;
    for (const auto& [w, n] : freq) {
        if (static_cast<long long>(n) >= min_frequency) words.push_back(w);
    }
    std::vector<std::string> relations;
    relations.reserve(catalog.size());
    for (const auto& r : catalog) relations.push_back(r.label);
    return Vocabulary(std::move(relations), std::move(words));
}

std::vector<TokenId> encode_input(const Vocabulary& vocab, Task task, std::string_view question,
                                  std::size_t max_question_tokens) {
    std::vector<TokenId> out{Vocabulary::task_prefix(task)};
    for (const auto& w : tokenize(question)) {
        if (out.size() - 1 >= max_question_tokens) break;
        out.push_back(vocab.word_token(w));
    }
    return out;
}

} // namespace gsr
