#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace zhoi {

/// Exit codes of the command line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one command. `args` excludes the program name. Normal output goes to
/// `out`; on failure a single JSON line {"error": kind, "code": n, "message": m}
/// is written to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Writes a little-endian float64 .npy array (C order).
void write_npy(const std::string& path, const std::vector<double>& values, std::size_t rows, std::size_t cols);

}  // namespace zhoi
