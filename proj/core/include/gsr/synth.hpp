#pragma once

#include <gsr/data_forge.hpp>
#include <gsr/kg_store.hpp>

#include <cstdint>
#include <vector>

namespace gsr::synth {

struct CorpusSpec {
    int entities = 200;   // including the two hub values
    int relations = 20;   // including the hub relation
    int triples = 1500;   // approximate
    int questions = 400;
    int train_questions = 300;
    int chain_combos = 24; // distinct two-hop relation pairs used by questions
    std::uint64_t seed = 7;
};

struct Question {
    QAExample example;
    int hops = 1;
    std::vector<std::string> chain; // relation labels, all forward
};

struct Corpus {
    KnowledgeGraph graph;
    std::vector<Triple> triples; // generation order, for TSV output
    std::vector<Question> train;
    std::vector<Question> held_out;
};

// Every regular entity carries one of two hub values through a shared
// relation, so raw mining sees many two-hop chains that reuse it. Questions
// never ask about the hub relation. Two-hop answers sit at exactly two hops
// from the subject in the undirected graph.
Corpus make_corpus(const CorpusSpec& spec = {});

std::vector<QAExample> examples_of(const std::vector<Question>& questions);

// Tab-separated triples.
void write_triples(std::ostream& out, const Corpus& corpus);

} // namespace gsr::synth
