#include <gsr/reader.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <ostream>
#include <set>
#include <unordered_set>

namespace gsr {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::string_view strip_quotes(std::string_view s) {
    s = trim(s);
    while (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
        s = trim(s.substr(1, s.size() - 2));
    }
    return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        out.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

void push_clean(std::vector<std::string>& out, std::string_view item) {
    item = strip_quotes(item);
    if (!item.empty()) out.emplace_back(item);
}

SubgraphRendering finish(SubgraphFormat format, const std::vector<std::string>& lines) {
    SubgraphRendering r;
    r.format = format;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (i) r.text += '\n';
        r.text += lines[i];
    }
    r.token_estimate = whitespace_tokens(r.text);
    return r;
}

} // namespace

std::size_t whitespace_tokens(std::string_view text) {
    std::size_t n = 0;
    bool in_token = false;
    for (char c : text) {
        const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
        if (!space && !in_token) ++n;
        in_token = !space;
    }
    return n;
}

SubgraphRendering serialize_paths(const KnowledgeGraph& graph,
                                  std::span<const PathConstrainedSubgraph> subgraphs) {
    std::vector<std::string> lines;
    std::unordered_set<std::string> seen;
    for (const auto& sub : subgraphs) {
        for (const auto& path : sub.paths) {
            std::string line = graph.entity_label(path.entities.front());
            for (std::size_t i = 0; i < path.hops.size(); ++i) {
                const auto& rel = graph.relation_label(path.hops[i].relation);
                const bool fwd = path.hops[i].direction == Direction::forward;
                line += fwd ? " -> " : " <- ";
                line += rel;
                line += fwd ? " -> " : " <- ";
                line += graph.entity_label(path.entities[i + 1]);
            }
            if (seen.insert(line).second) lines.push_back(std::move(line));
        }
    }
    return finish(SubgraphFormat::paths, lines);
}

SubgraphRendering serialize_triples(const KnowledgeGraph& graph,
                                    std::span<const PathConstrainedSubgraph> subgraphs) {
    std::vector<std::string> lines;
    std::set<Triple> seen;
    for (const auto& sub : subgraphs) {
        for (const auto& path : sub.paths) {
            for (std::size_t i = 0; i < path.hops.size(); ++i) {
                const auto& hop = path.hops[i];
                Triple t{path.entities[i], hop.relation, path.entities[i + 1]};
                if (hop.direction == Direction::inverse) std::swap(t.subject, t.object);
                if (!seen.insert(t).second) continue;
                lines.push_back(graph.entity_label(t.subject) + ", " +
                                graph.relation_label(t.relation) + ", " +
                                graph.entity_label(t.object));
            }
        }
    }
    return finish(SubgraphFormat::triples, lines);
}

SubgraphRendering serialize(SubgraphFormat format, const KnowledgeGraph& graph,
                            std::span<const PathConstrainedSubgraph> subgraphs) {
    return format == SubgraphFormat::paths ? serialize_paths(graph, subgraphs)
                                           : serialize_triples(graph, subgraphs);
}

void apply_token_budget(SubgraphRendering& rendering, std::size_t budget) {
    while (rendering.token_estimate > budget && !rendering.text.empty()) {
        const std::size_t cut = rendering.text.rfind('\n');
        rendering.text.erase(cut == std::string::npos ? 0 : cut);
        rendering.token_estimate = whitespace_tokens(rendering.text);
        ++rendering.dropped_lines;
    }
}

std::vector<std::string> parse_answer_list(std::string_view raw) {
    std::vector<std::string> out;
    const std::string_view text = trim(raw);
    if (text.empty()) return out;

    if (text.front() == '[') {
        const auto parsed = nlohmann::json::parse(text, nullptr, false);
        if (!parsed.is_discarded() && parsed.is_array()) {
            for (const auto& item : parsed) {
                if (item.is_string()) {
                    push_clean(out, item.get<std::string>());
                } else if (!item.is_null()) {
                    push_clean(out, item.dump());
                }
            }
            return out;
        }
        if (text.back() == ']') {
            for (auto part : split(text.substr(1, text.size() - 2), ',')) push_clean(out, part);
            return out;
        }
    }

    std::vector<std::string_view> lines;
    for (auto line : split(text, '\n')) {
        if (!trim(line).empty()) lines.push_back(line);
    }
    if (lines.size() > 1) {
        for (auto line : lines) push_clean(out, line);
    } else {
        for (auto part : split(text, ',')) push_clean(out, part);
    }
    if (out.empty()) out.emplace_back(text);
    return out;
}

ReaderAnswer ask_reader(ChatClient& client, std::string_view question,
                        const SubgraphRendering& rendering) {
    const std::string prompt = prompts::reader_prompt(rendering.format, rendering.text, question);
    ChatReply reply = client.complete(prompt);
    ReaderAnswer answer;
    answer.answers = parse_answer_list(reply.text);
    answer.raw = std::move(reply.text);
    answer.prompt_chars = reply.prompt_chars;
    answer.response_chars = reply.response_chars;
    return answer;
}

void write_reader_answer(std::ostream& out, std::string_view id, const ReaderAnswer& answer) {
    const nlohmann::json line = {
        {"id", id}, {"raw", answer.raw}, {"answers", answer.answers}};
    out << line.dump() << '\n';
}

std::string stub_reader_reply(const std::string& prompt) {
    std::string_view body = prompt;
    std::string_view marker;
    for (std::string_view m : {"Reasoning Paths: ", "KG Triples: "}) {
        if (body.find(m) != std::string_view::npos) {
            marker = m;
            break;
        }
    }
    nlohmann::json answers = nlohmann::json::array();
    if (marker.empty()) return answers.dump();
    body = body.substr(body.find(marker) + marker.size());
    body = body.substr(0, body.rfind("\n\nQuestion: "));

    std::unordered_set<std::string> seen;
    for (auto line : split(body, '\n')) {
        std::string_view answer;
        if (marker.front() == 'R') {
            const std::size_t a = line.rfind(" -> ");
            const std::size_t b = line.rfind(" <- ");
            std::size_t pos = std::string_view::npos;
            if (a != std::string_view::npos) pos = a;
            if (b != std::string_view::npos && (pos == std::string_view::npos || b > pos)) pos = b;
            if (pos == std::string_view::npos) continue;
            answer = line.substr(pos + 4);
        } else {
            const std::size_t pos = line.rfind(", ");
            if (pos == std::string_view::npos) continue;
            answer = line.substr(pos + 2);
        }
        answer = trim(answer);
        if (!answer.empty() && seen.emplace(answer).second) answers.push_back(std::string(answer));
    }
    return answers.dump();
}

} // namespace gsr
