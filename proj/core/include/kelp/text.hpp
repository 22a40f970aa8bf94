#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace kelp {

// Splits text into tokens with per-script rules: ideographs (CJK unified
// blocks) each become their own token, everything else splits on ASCII and
// Unicode whitespace. A string mixing both scripts gets both treatments.
std::vector<std::string> tokenize(std::string_view text);

// Inverse-ish of tokenize for display: joins with single spaces.
std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace kelp
