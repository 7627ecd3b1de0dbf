#pragma once

#include <filesystem>
#include <iosfwd>

namespace fewfed {

/// Entry point of the fewfed tool. Returns the process exit code: 0 success,
/// 1 runtime failure, 2 configuration or validation failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Relative output paths resolve against FEWFED_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output(const std::filesystem::path& path);

}  // namespace fewfed
