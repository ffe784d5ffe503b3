#include <gsr/data_forge.hpp>

#include <gsr/error.hpp>
#include <gsr/prompts.hpp>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace gsr {

using nlohmann::json;

std::string_view to_string(Tier tier) {
    switch (tier) {
        case Tier::raw: return "raw";
        case Tier::filtered: return "filtered";
        case Tier::selected: return "selected";
    }
    return "raw";
}

Tier tier_from_string(std::string_view s) {
    if (s == "raw") return Tier::raw;
    if (s == "filtered") return Tier::filtered;
    if (s == "selected") return Tier::selected;
    throw ParseError("unknown tier \"" + std::string(s) + "\"");
}

LabeledChain label_hops(const KnowledgeGraph& graph, std::span<const DirectedHop> hops) {
    LabeledChain out;
    out.reserve(hops.size());
    for (const auto& h : hops) out.push_back({graph.relation_label(h.relation), h.direction});
    return out;
}

HopSequence resolve_hops(const KnowledgeGraph& graph, const LabeledChain& chain) {
    HopSequence out;
    out.reserve(chain.size());
    for (const auto& h : chain) {
        auto r = graph.find_relation(h.relation);
        if (!r) throw LookupError("relation \"" + h.relation + "\" not in graph");
        out.push_back({*r, h.direction});
    }
    return out;
}

// --- retrieval data -------------------------------------------------------

MiningResult mine_raw_retrieval(const KnowledgeGraph& graph, std::span<const QAExample> examples,
                                int max_hops) {
    if (max_hops < 1) throw ConfigError("mine_raw_retrieval: max_hops must be >= 1");
    MiningResult result;
    auto skip = [&](const QAExample& ex, std::string reason) {
        spdlog::info("mine: skipping example {}: {}", ex.id, reason);
        result.skipped.push_back({ex.id, std::move(reason)});
    };

    for (const QAExample& ex : examples) {
        std::vector<EntityId> answers;
        for (const auto& a : ex.answers) {
            if (auto id = graph.find_entity(a)) answers.push_back(*id);
        }
        if (answers.empty()) {
            skip(ex, "no answer entity resolves in graph");
            continue;
        }
        bool any_topic = false;
        bool any_sample = false;
        for (const auto& topic_label : ex.topic_entities) {
            auto topic = graph.find_entity(topic_label);
            if (!topic) continue;
            any_topic = true;

            ShortestPathTree tree(graph, *topic, max_hops);
            std::set<HopSequence> chains;
            for (EntityId a : answers) {
                for (auto& seq : tree.sequences_to(a)) chains.insert(std::move(seq));
            }
            if (chains.empty()) continue;

            RetrievalSample sample;
            sample.example_id = ex.id;
            sample.question = ex.question;
            sample.topic = topic_label;
            sample.tier = Tier::raw;
            for (const auto& c : chains) sample.chains.push_back(label_hops(graph, c));
            result.samples.push_back(std::move(sample));
            any_sample = true;
        }
        if (!any_topic) {
            skip(ex, "no topic entity resolves in graph");
        } else if (!any_sample) {
            skip(ex, "no answer within " + std::to_string(max_hops) + " hops");
        }
    }
    return result;
}

std::vector<RetrievalSample> filter_forward_only(std::span<const RetrievalSample> samples) {
    std::vector<RetrievalSample> out;
    for (const RetrievalSample& s : samples) {
        RetrievalSample f = s;
        f.tier = Tier::filtered;
        f.chains.clear();
        for (const auto& c : s.chains) {
            const bool forward = std::all_of(c.begin(), c.end(), [](const ChainHop& h) {
                return h.direction == Direction::forward;
            });
            if (forward) f.chains.push_back(c);
        }
        if (!f.chains.empty()) out.push_back(std::move(f));
    }
    return out;
}

std::string render_candidate_list(std::span<const LabeledChain> candidates) {
    std::string out;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (i > 0) out += '\n';
        out += std::to_string(i + 1) + ". ";
        const auto& chain = candidates[i];
        for (std::size_t h = 0; h < chain.size(); ++h) {
            if (h > 0) out += " -> ";
            out += chain[h].relation;
            if (chain[h].direction == Direction::inverse) out += " (inverse)";
        }
    }
    return out;
}

std::string LlmChainSelector::choose(std::string_view question,
                                     std::span<const LabeledChain> candidates) {
    const std::string prompt =
        prompts::selection_prompt(render_candidate_list(candidates), question);
    return client_.complete(prompt).text;
}

std::string MockChainSelector::choose(std::string_view /*question*/,
                                      std::span<const LabeledChain> candidates) {
    std::string out;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        bool keep = false;
        switch (policy_) {
            case Policy::reject_repeated: keep = !has_repeated_relation(candidates[i]); break;
            case Policy::first: keep = (i == 0); break;
            case Policy::all: keep = true; break;
        }
        if (!keep) continue;
        if (!out.empty()) out += ", ";
        out += std::to_string(i + 1);
    }
    return out;
}

IndexListParse parse_index_list(std::string_view reply, std::size_t candidate_count) {
    IndexListParse result;
    std::set<std::size_t> picked;
    std::size_t start = 0;
    while (start <= reply.size()) {
        auto end = reply.find_first_of(",\n", start);
        if (end == std::string_view::npos) end = reply.size();
        std::string_view item = reply.substr(start, end - start);
        while (!item.empty() && std::isspace(static_cast<unsigned char>(item.front()))) {
            item.remove_prefix(1);
        }
        while (!item.empty() && (std::isspace(static_cast<unsigned char>(item.back())) ||
                                 item.back() == '.')) {
            item.remove_suffix(1);
        }
        if (!item.empty()) {
            std::size_t value = 0;
            auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
            if (ec == std::errc{} && ptr == item.data() + item.size() && value >= 1 &&
                value <= candidate_count) {
                picked.insert(value - 1);
            } else {
                result.ignored.emplace_back(item);
            }
        }
        start = end + 1;
    }
    result.indexes.assign(picked.begin(), picked.end());
    return result;
}

SelectionResult select_with_llm(std::span<const RetrievalSample> raw, ChainSelector& selector) {
    SelectionResult result;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const RetrievalSample& s = raw[i];
        if (s.tier != Tier::raw) {
            throw Error("select_with_llm expects raw-tier samples, got " +
                        std::string(to_string(s.tier)) + " for " + s.example_id);
        }
        RetrievalSample out = s;
        out.tier = Tier::selected;
        out.chains.clear();
        try {
            const std::string reply = selector.choose(s.question, s.chains);
            const IndexListParse parsed = parse_index_list(reply, s.chains.size());
            for (const auto& bad : parsed.ignored) {
                spdlog::warn("select: example {}: ignoring index \"{}\"", s.example_id, bad);
            }
            result.ignored_indexes += parsed.ignored.size();
            for (std::size_t idx : parsed.indexes) out.chains.push_back(s.chains[idx]);
        } catch (const ChatError& e) {
            if (e.transport_failure()) {
                throw SelectionAborted(std::string("selector unreachable after ") +
                                           std::to_string(i) + " of " +
                                           std::to_string(raw.size()) + " examples: " + e.what(),
                                       std::move(result), i);
            }
            spdlog::warn("select: example {}: selector failed ({}); using filtered chains",
                         s.example_id, e.what());
            ++result.fallbacks;
            for (const auto& c : s.chains) {
                if (std::all_of(c.begin(), c.end(), [](const ChainHop& h) {
                        return h.direction == Direction::forward;
                    })) {
                    out.chains.push_back(c);
                }
            }
        }
        if (out.chains.empty()) {
            ++result.empty_selections;
            continue;
        }
        result.samples.push_back(std::move(out));
    }
    return result;
}

// --- indexing data --------------------------------------------------------

std::string relation_phrase(std::string_view relation) {
    const auto dot = relation.rfind('.');
    std::string_view last = dot == std::string_view::npos ? relation : relation.substr(dot + 1);
    std::string out(last);
    std::replace(out.begin(), out.end(), '_', ' ');
    return out;
}

std::vector<std::string> OfflineTemplateGenerator::generate(std::string_view relation,
                                                            std::string_view /*triple_example*/) {
    const std::string w = relation_phrase(relation);
    return {
        "what is the " + w + " of [SUBJECT]?",
        "what " + w + " does [SUBJECT] have?",
        "who or what is the " + w + " of [SUBJECT]?",
        "which entity is the " + w + " of [SUBJECT]?",
        "tell me the " + w + " of [SUBJECT].",
        "what is [SUBJECT]'s " + w + "?",
        "name the " + w + " of [SUBJECT].",
        "[SUBJECT] has which " + w + "?",
        "can you give the " + w + " for [SUBJECT]?",
        "what is known as the " + w + " of [SUBJECT]?",
    };
}

std::vector<std::string> split_generated_lines(std::string_view reply) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start < reply.size()) {
        auto end = reply.find('\n', start);
        if (end == std::string_view::npos) end = reply.size();
        std::string_view line = reply.substr(start, end - start);
        start = end + 1;

        auto trim = [](std::string_view v) {
            while (!v.empty() && std::isspace(static_cast<unsigned char>(v.front()))) v.remove_prefix(1);
            while (!v.empty() && std::isspace(static_cast<unsigned char>(v.back()))) v.remove_suffix(1);
            return v;
        };
        line = trim(line);
        // "1." / "1)" / "-" / "*" list markers
        std::size_t digits = 0;
        while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) {
            ++digits;
        }
        if (digits > 0 && digits < line.size() && (line[digits] == '.' || line[digits] == ')')) {
            line.remove_prefix(digits + 1);
        } else if (!line.empty() && (line.front() == '-' || line.front() == '*')) {
            line.remove_prefix(1);
        }
        line = trim(line);
        if (line.size() >= 2 && line.front() == '"' && line.back() == '"') {
            line = line.substr(1, line.size() - 2);
        }
        if (!line.empty()) out.emplace_back(line);
    }
    return out;
}

std::vector<std::string> LlmTemplateGenerator::generate(std::string_view relation,
                                                        std::string_view triple_example) {
    const std::string prompt = prompts::template_prompt(relation, triple_example);
    return split_generated_lines(client_.complete(prompt).text);
}

std::size_t count_placeholders(std::string_view text) {
    std::size_t n = 0;
    for (auto pos = text.find(kSubjectPlaceholder); pos != std::string_view::npos;
         pos = text.find(kSubjectPlaceholder, pos + kSubjectPlaceholder.size())) {
        ++n;
    }
    return n;
}

std::vector<QuestionTemplate> generate_templates(std::string_view relation,
                                                 std::string_view triple_example,
                                                 TemplateGenerator& generator) {
    std::vector<QuestionTemplate> out;
    for (auto& text : generator.generate(relation, triple_example)) {
        if (count_placeholders(text) != 1) {
            spdlog::debug("templates: dropping \"{}\" for {}", text, relation);
            continue;
        }
        out.push_back({std::string(relation), std::move(text)});
        if (out.size() == kTemplatesPerRelation) break;
    }
    return out;
}

std::string triple_example(const KnowledgeGraph& graph, RelationId relation) {
    for (const Triple& t : graph.triples()) {
        if (t.relation == relation) {
            return "(" + graph.entity_label(t.subject) + ", " + graph.relation_label(relation) +
                   ", " + graph.entity_label(t.object) + ")";
        }
    }
    return {};
}

std::vector<QuestionTemplate> generate_all_templates(const KnowledgeGraph& graph,
                                                     TemplateGenerator& generator) {
    std::vector<QuestionTemplate> out;
    for (const RelationStat& stat : graph.relation_catalog()) {
        auto ts = generate_templates(stat.label, triple_example(graph, stat.id), generator);
        out.insert(out.end(), std::make_move_iterator(ts.begin()),
                   std::make_move_iterator(ts.end()));
    }
    return out;
}

std::vector<IndexingSample> build_indexing_samples(const KnowledgeGraph& graph,
                                                   std::span<const QuestionTemplate> templates,
                                                   int per_template, std::uint64_t seed) {
    if (per_template < 1) throw ConfigError("build_indexing_samples: per_template must be >= 1");

    std::unordered_map<std::uint32_t, std::vector<EntityId>> subjects;
    for (const Triple& t : graph.triples()) subjects[t.relation.value].push_back(t.subject);

    std::mt19937_64 rng(seed);
    std::vector<IndexingSample> out;
    std::unordered_map<std::string, std::unordered_set<std::string>> seen;
    for (const QuestionTemplate& tmpl : templates) {
        const auto rel = graph.find_relation(tmpl.relation);
        if (!rel) continue;
        auto it = subjects.find(rel->value);
        if (it == subjects.end() || it->second.empty()) continue;
        if (count_placeholders(tmpl.text) != 1) continue;

        const auto& pool = it->second;
        auto& used = seen[tmpl.relation];
        const auto at = tmpl.text.find(kSubjectPlaceholder);
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        for (int k = 0; k < per_template; ++k) {
            if (used.size() >= kPseudoQuestionsPerRelation) break;
            const std::string& subject = graph.entity_label(pool[pick(rng)]);
            std::string q = tmpl.text;
            q.replace(at, kSubjectPlaceholder.size(), subject);
            if (!used.insert(q).second) continue;
            out.push_back({std::move(q), tmpl.relation});
        }
    }
    return out;
}

// --- diagnostics ----------------------------------------------------------

bool has_repeated_relation(const LabeledChain& chain) {
    for (std::size_t i = 0; i < chain.size(); ++i) {
        for (std::size_t j = i + 1; j < chain.size(); ++j) {
            if (chain[i].relation == chain[j].relation) return true;
        }
    }
    return false;
}

DataStats data_stats(std::span<const RetrievalSample> samples) {
    DataStats st;
    st.example_count = samples.size();
    std::size_t total_len = 0;
    std::size_t repeated = 0;
    std::size_t inverse = 0;
    for (const auto& s : samples) {
        for (const auto& c : s.chains) {
            ++st.chain_count;
            total_len += c.size();
            if (has_repeated_relation(c)) ++repeated;
            if (std::any_of(c.begin(), c.end(),
                            [](const ChainHop& h) { return h.direction == Direction::inverse; })) {
                ++inverse;
            }
        }
    }
    if (st.chain_count > 0) {
        const auto n = static_cast<double>(st.chain_count);
        st.mean_chain_length = static_cast<double>(total_len) / n;
        st.repeated_relation_fraction = static_cast<double>(repeated) / n;
        st.inverse_chain_fraction = static_cast<double>(inverse) / n;
    }
    return st;
}

// --- JSONL ----------------------------------------------------------------

namespace {

template <class F>
void for_each_json_line(std::istream& in, std::string_view what, F&& f) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            f(json::parse(line));
        } catch (const json::exception& e) {
            throw ParseError(std::string(what) + " line " + std::to_string(line_no) + ": " +
                             e.what());
        }
    }
}

json chain_to_json(const LabeledChain& chain) {
    json arr = json::array();
    for (const auto& h : chain) {
        arr.push_back({{"relation", h.relation},
                       {"direction", h.direction == Direction::forward ? "f" : "i"}});
    }
    return arr;
}

LabeledChain chain_from_json(const json& j) {
    LabeledChain chain;
    for (const auto& h : j) {
        const auto dir = h.at("direction").get<std::string>();
        if (dir != "f" && dir != "i") throw ParseError("direction must be \"f\" or \"i\"");
        chain.push_back({h.at("relation").get<std::string>(),
                         dir == "f" ? Direction::forward : Direction::inverse});
    }
    return chain;
}

} // namespace

std::vector<QAExample> read_qa_examples(std::istream& in) {
    std::vector<QAExample> out;
    for_each_json_line(in, "qa examples", [&](const json& j) {
        QAExample ex;
        ex.id = j.at("id").get<std::string>();
        ex.question = j.at("question").get<std::string>();
        ex.topic_entities = j.at("topic_entities").get<std::vector<std::string>>();
        ex.answers = j.at("answers").get<std::vector<std::string>>();
        if (ex.topic_entities.empty()) {
            throw ParseError("example " + ex.id + " has no topic entities");
        }
        out.push_back(std::move(ex));
    });
    return out;
}

void write_qa_examples(std::ostream& out, std::span<const QAExample> examples) {
    for (const auto& ex : examples) {
        json j = {{"id", ex.id},
                  {"question", ex.question},
                  {"topic_entities", ex.topic_entities},
                  {"answers", ex.answers}};
        out << j.dump() << '\n';
    }
}

std::vector<RetrievalSample> read_retrieval_samples(std::istream& in) {
    std::vector<RetrievalSample> out;
    for_each_json_line(in, "retrieval samples", [&](const json& j) {
        RetrievalSample s;
        s.example_id = j.at("example_id").get<std::string>();
        s.question = j.at("question").get<std::string>();
        s.topic = j.at("topic").get<std::string>();
        s.tier = tier_from_string(j.at("tier").get<std::string>());
        for (const auto& c : j.at("chains")) s.chains.push_back(chain_from_json(c));
        out.push_back(std::move(s));
    });
    return out;
}

void write_retrieval_samples(std::ostream& out, std::span<const RetrievalSample> samples) {
    for (const auto& s : samples) {
        json chains = json::array();
        for (const auto& c : s.chains) chains.push_back(chain_to_json(c));
        json j = {{"example_id", s.example_id}, {"question", s.question}, {"topic", s.topic},
                  {"tier", to_string(s.tier)},  {"chains", std::move(chains)}};
        out << j.dump() << '\n';
    }
}

std::vector<IndexingSample> read_indexing_samples(std::istream& in) {
    std::vector<IndexingSample> out;
    for_each_json_line(in, "indexing samples", [&](const json& j) {
        out.push_back({j.at("pseudo_question").get<std::string>(),
                       j.at("relation").get<std::string>()});
    });
    return out;
}

void write_indexing_samples(std::ostream& out, std::span<const IndexingSample> samples) {
    for (const auto& s : samples) {
        json j = {{"pseudo_question", s.pseudo_question}, {"relation", s.relation}};
        out << j.dump() << '\n';
    }
}

} // namespace gsr
