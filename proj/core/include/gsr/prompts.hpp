#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gsr {

enum class SubgraphFormat : std::uint8_t { paths, triples };

namespace prompts {

// Raw templates, embedded at build time from core/assets/prompts/*.txt.
std::string_view select_paths_template();
std::string_view question_templates_template();
std::string_view reader_paths_template();
std::string_view reader_triples_template();

// Single left-to-right pass: each "{name}" placeholder is replaced by its
// value; substituted text is never rescanned.
std::string fill(std::string_view tmpl,
                 const std::vector<std::pair<std::string_view, std::string_view>>& vars);

std::string selection_prompt(std::string_view path_list, std::string_view question);
std::string template_prompt(std::string_view relation, std::string_view triple_example);
std::string reader_prompt(SubgraphFormat format, std::string_view context,
                          std::string_view question);

} // namespace prompts
} // namespace gsr
