#include <gsr/synth.hpp>

#include <gsr/error.hpp>
#include <gsr/path_engine.hpp>

#include <algorithm>
#include <array>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <unordered_set>

namespace gsr::synth {

namespace {

constexpr std::array<std::string_view, 24> kRelationWords = {
    "mentor",   "capital", "spouse",   "employer", "birthplace", "sibling",
    "founder",  "currency", "language", "neighbor", "author",     "rival",
    "coach",    "owner",   "producer", "director", "leader",     "genre",
    "teammate", "editor",  "sponsor",  "landlord", "tutor",      "partner"};

constexpr std::string_view kHubRelation = "kb.person.gender";
constexpr std::array<std::string_view, 2> kHubValues = {"male", "female"};

constexpr std::array<std::string_view, 4> kOneHop = {
    "what is the {w} of {s}", "who is the {w} of {s}", "{s} has which {w}",
    "name the {w} of {s}"};
constexpr std::array<std::string_view, 3> kTwoHop = {
    "what is the {w2} of the {w1} of {s}", "name the {w2} of the {w1} of {s}",
    "who is the {w2} of {s} 's {w1}"};

std::string fill(std::string_view pattern, std::string_view s, std::string_view w1,
                 std::string_view w2) {
    std::string out;
    for (std::size_t i = 0; i < pattern.size();) {
        if (pattern.substr(i, 4) == "{w1}") {
            out += w1;
            i += 4;
        } else if (pattern.substr(i, 4) == "{w2}") {
            out += w2;
            i += 4;
        } else if (pattern.substr(i, 3) == "{w}") {
            out += w1;
            i += 3;
        } else if (pattern.substr(i, 3) == "{s}") {
            out += s;
            i += 3;
        } else {
            out += pattern[i++];
        }
    }
    return out;
}

std::string make_name(std::mt19937_64& rng) {
    static constexpr std::string_view consonants = "bdfgklmnprstvz";
    static constexpr std::string_view vowels = "aeiou";
    std::uniform_int_distribution<std::size_t> c(0, consonants.size() - 1);
    std::uniform_int_distribution<std::size_t> v(0, vowels.size() - 1);
    std::string name;
    for (int i = 0; i < 3; ++i) {
        name += consonants[c(rng)];
        name += vowels[v(rng)];
    }
    return name;
}

template <class T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
    return v[d(rng)];
}

} // namespace

Corpus make_corpus(const CorpusSpec& spec) {
    const int regular_relations = spec.relations - 1;
    const int regular_entities = spec.entities - static_cast<int>(kHubValues.size());
    if (regular_relations < 2 || regular_relations > static_cast<int>(kRelationWords.size())) {
        throw ConfigError("synth: relations must be in [3, " +
                          std::to_string(kRelationWords.size() + 1) + "]");
    }
    if (regular_entities < 10) throw ConfigError("synth: too few entities");
    if (spec.train_questions > spec.questions) {
        throw ConfigError("synth: more train questions than questions");
    }

    std::mt19937_64 rng(spec.seed);

    std::vector<std::string> names;
    std::unordered_set<std::string> used{std::string(kHubValues[0]), std::string(kHubValues[1])};
    while (static_cast<int>(names.size()) < regular_entities) {
        std::string n = make_name(rng);
        if (used.insert(n).second) names.push_back(std::move(n));
    }
    std::vector<std::string> relations;
    for (int r = 0; r < regular_relations; ++r) {
        relations.push_back("kb.rel." + std::string(kRelationWords[static_cast<std::size_t>(r)]));
    }

    // (subject, relation, object) by index; hub values get indexes after
    // the regular entities.
    std::set<std::tuple<int, int, int>> edges;
    std::vector<std::tuple<int, int, int>> order;
    const int per_relation =
        std::max(1, (spec.triples - regular_entities) / regular_relations);
    std::uniform_int_distribution<int> any_entity(0, regular_entities - 1);
    for (int r = 0; r < regular_relations; ++r) {
        int added = 0;
        for (int attempt = 0; added < per_relation && attempt < per_relation * 20; ++attempt) {
            const int s = any_entity(rng);
            const int o = any_entity(rng);
            if (s == o) continue;
            if (edges.emplace(s, r, o).second) {
                order.emplace_back(s, r, o);
                ++added;
            }
        }
    }
    std::bernoulli_distribution coin(0.75);
    for (int e = 0; e < regular_entities; ++e) {
        const int value = regular_entities + (coin(rng) ? 1 : 0);
        order.emplace_back(e, regular_relations, value);
    }

    Corpus corpus;
    auto entity_label = [&](int e) -> std::string {
        return e < regular_entities
                   ? names[static_cast<std::size_t>(e)]
                   : std::string(kHubValues[static_cast<std::size_t>(e - regular_entities)]);
    };
    auto relation_label = [&](int r) -> std::string {
        return r < regular_relations ? relations[static_cast<std::size_t>(r)]
                                     : std::string(kHubRelation);
    };
    GraphBuilder builder;
    for (int e = 0; e < regular_entities + static_cast<int>(kHubValues.size()); ++e) {
        builder.add_entity(entity_label(e));
    }
    for (int r = 0; r <= regular_relations; ++r) builder.add_relation(relation_label(r));
    for (const auto& [s, r, o] : order) {
        builder.add(entity_label(s), relation_label(r), entity_label(o));
    }
    corpus.graph = std::move(builder).build();
    const KnowledgeGraph& g = corpus.graph;
    for (const auto& [s, r, o] : order) {
        corpus.triples.push_back({*g.find_entity(entity_label(s)),
                                  *g.find_relation(relation_label(r)),
                                  *g.find_entity(entity_label(o))});
    }

    auto word_of = [&](int r) { return kRelationWords[static_cast<std::size_t>(r)]; };
    auto forward_terminals = [&](EntityId s, const std::vector<int>& chain) {
        std::vector<EntityId> frontier{s};
        for (int r : chain) {
            std::set<EntityId> next;
            for (EntityId e : frontier) {
                for (EntityId n : g.neighbors(e, RelationId{static_cast<std::uint32_t>(r)},
                                              Direction::forward)) {
                    next.insert(n);
                }
            }
            frontier.assign(next.begin(), next.end());
        }
        return frontier;
    };

    // Two-hop relation pairs that compose somewhere in the graph.
    std::vector<std::pair<int, int>> combos;
    {
        std::vector<std::pair<int, int>> feasible;
        for (int a = 0; a < regular_relations; ++a) {
            for (int b = 0; b < regular_relations; ++b) {
                if (a != b) feasible.emplace_back(a, b);
            }
        }
        std::shuffle(feasible.begin(), feasible.end(), rng);
        for (const auto& [a, b] : feasible) {
            if (static_cast<int>(combos.size()) >= spec.chain_combos) break;
            int subjects = 0;
            for (int e = 0; e < regular_entities && subjects < 4; ++e) {
                if (!forward_terminals(EntityId{static_cast<std::uint32_t>(e)}, {a, b}).empty()) {
                    ++subjects;
                }
            }
            if (subjects >= 4) combos.emplace_back(a, b);
        }
    }

    std::set<std::pair<int, std::vector<int>>> asked;
    auto make_question = [&](int hops, Question& q) {
        for (int attempt = 0; attempt < 1000; ++attempt) {
            std::vector<int> chain;
            if (hops == 1) {
                chain = {std::uniform_int_distribution<int>(0, regular_relations - 1)(rng)};
            } else {
                const auto& [a, b] = pick(combos, rng);
                chain = {a, b};
            }
            const int s = any_entity(rng);
            if (asked.count({s, chain})) continue;
            const EntityId sid{static_cast<std::uint32_t>(s)};
            auto answers = forward_terminals(sid, chain);
            if (answers.empty() || answers.size() > 4) continue;
            if (std::find(answers.begin(), answers.end(), sid) != answers.end()) continue;
            if (hops == 2) {
                ShortestPathTree tree(g, sid, 2);
                const bool exact = std::all_of(answers.begin(), answers.end(), [&](EntityId a) {
                    return tree.distance(a) == 2;
                });
                if (!exact) continue;
            }
            asked.emplace(s, chain);
            const std::string subject = entity_label(s);
            if (hops == 1) {
                q.example.question = fill(pick(std::vector<std::string_view>(kOneHop.begin(),
                                                                             kOneHop.end()),
                                               rng),
                                          subject, word_of(chain[0]), "");
            } else {
                q.example.question = fill(pick(std::vector<std::string_view>(kTwoHop.begin(),
                                                                             kTwoHop.end()),
                                               rng),
                                          subject, word_of(chain[0]), word_of(chain[1]));
            }
            q.example.topic_entities = {subject};
            for (EntityId a : answers) q.example.answers.push_back(g.entity_label(a));
            q.hops = hops;
            for (int r : chain) q.chain.push_back(relation_label(r));
            return true;
        }
        return false;
    };

    // Stratified: half one-hop, half two-hop in both splits.
    const int held = spec.questions - spec.train_questions;
    auto fill_split = [&](std::vector<Question>& out, int count, std::string_view prefix) {
        const int one = (count + 1) / 2;
        for (int i = 0; i < count; ++i) {
            Question q;
            if (!make_question(i < one ? 1 : 2, q)) {
                throw Error("synth: could not generate enough distinct questions");
            }
            out.push_back(std::move(q));
        }
        std::shuffle(out.begin(), out.end(), rng);
        for (std::size_t i = 0; i < out.size(); ++i) {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%04zu", i);
            out[i].example.id = std::string(prefix) + buf;
        }
    };
    fill_split(corpus.train, spec.train_questions, "train-");
    fill_split(corpus.held_out, held, "test-");
    return corpus;
}

std::vector<QAExample> examples_of(const std::vector<Question>& questions) {
    std::vector<QAExample> out;
    out.reserve(questions.size());
    for (const auto& q : questions) out.push_back(q.example);
    return out;
}

void write_triples(std::ostream& out, const Corpus& corpus) {
    const KnowledgeGraph& g = corpus.graph;
    for (const auto& t : corpus.triples) {
        out << g.entity_label(t.subject) << '\t' << g.relation_label(t.relation) << '\t'
            << g.entity_label(t.object) << '\n';
    }
}

} // namespace gsr::synth
