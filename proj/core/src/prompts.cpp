#include <gsr/prompts.hpp>

namespace gsr::prompts {

std::string fill(std::string_view tmpl,
                 const std::vector<std::pair<std::string_view, std::string_view>>& vars) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            bool matched = false;
            for (const auto& [name, value] : vars) {
                const std::size_t len = name.size() + 2;
                if (tmpl.size() - i >= len && tmpl[i + len - 1] == '}' &&
                    tmpl.substr(i + 1, name.size()) == name) {
                    out.append(value);
                    i += len;
                    matched = true;
                    break;
                }
            }
            if (matched) continue;
        }
        out.push_back(tmpl[i++]);
    }
    return out;
}

std::string selection_prompt(std::string_view path_list, std::string_view question) {
    return fill(select_paths_template(), {{"path_list", path_list}, {"question", question}});
}

std::string template_prompt(std::string_view relation, std::string_view triple_example) {
    return fill(question_templates_template(),
                {{"relation", relation}, {"triple_example", triple_example}});
}

std::string reader_prompt(SubgraphFormat format, std::string_view context,
                          std::string_view question) {
    if (format == SubgraphFormat::paths) {
        return fill(reader_paths_template(),
                    {{"reasoning_paths", context}, {"question", question}});
    }
    return fill(reader_triples_template(), {{"subgraph_triples", context}, {"question", question}});
}

} // namespace gsr::prompts
