#pragma once

#include <gsr/chat_client.hpp>
#include <gsr/kg_store.hpp>
#include <gsr/path_engine.hpp>
#include <gsr/prompts.hpp>

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gsr {

struct SubgraphRendering {
    SubgraphFormat format = SubgraphFormat::paths;
    std::string text; // lines joined by '\n', no trailing newline
    std::size_t token_estimate = 0;
    std::size_t dropped_lines = 0; // removed by the token budget
};

inline constexpr std::size_t kDefaultTokenBudget = 4096;

std::size_t whitespace_tokens(std::string_view text);

// One line per distinct path: "a -> r -> b <- s <- c". Subgraphs in the
// given (rank) order, paths in discovery order.
SubgraphRendering serialize_paths(const KnowledgeGraph& graph,
                                  std::span<const PathConstrainedSubgraph> subgraphs);

// One "s, r, o" line per distinct triple in stored orientation, in order of
// first occurrence.
SubgraphRendering serialize_triples(const KnowledgeGraph& graph,
                                    std::span<const PathConstrainedSubgraph> subgraphs);

SubgraphRendering serialize(SubgraphFormat format, const KnowledgeGraph& graph,
                            std::span<const PathConstrainedSubgraph> subgraphs);

// Drops whole lines from the end until the estimate fits.
void apply_token_budget(SubgraphRendering& rendering, std::size_t budget);

struct ReaderAnswer {
    std::string raw;
    std::vector<std::string> answers;
    std::size_t prompt_chars = 0;
    std::size_t response_chars = 0;
};

// JSON array, then a bracketed list, then lines (or commas on a single
// line). Never throws.
std::vector<std::string> parse_answer_list(std::string_view raw);

// Fills the reader prompt for the rendering's format and sends it once
// (the client handles retries).
ReaderAnswer ask_reader(ChatClient& client, std::string_view question,
                        const SubgraphRendering& rendering);

// {"id", "raw", "answers"} per line.
void write_reader_answer(std::ostream& out, std::string_view id, const ReaderAnswer& answer);

// Hermetic reader: answers with the terminal entities of every path line
// (the text after the last arrow), as a JSON array.
std::string stub_reader_reply(const std::string& prompt);

} // namespace gsr
