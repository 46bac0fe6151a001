#pragma once

// The fseg command line tool as a library, so tests can drive it in-process.

#include <iosfwd>
#include <string>
#include <vector>

namespace fseg::cli {

inline constexpr const char* kManifestName = "run_manifest.json";

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;    // runtime error (missing file, bad data, ...)
inline constexpr int kUsage = 2;      // bad flags or config
inline constexpr int kDiverged = 3;   // training stopped on a non-finite loss

// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fseg::cli
