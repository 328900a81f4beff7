#pragma once

#include <string>
#include <vector>

namespace sparsedyn::cli {

// Exit codes: 0 ok, 2 usage/config, 3 data/format, 4 numerical failure.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

} // namespace sparsedyn::cli
