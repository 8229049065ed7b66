#pragma once
// Runs the compiled mseg binary in a scratch directory.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#ifndef MSEG_CLI
#error "MSEG_CLI must name the mseg executable"
#endif

namespace cli {

namespace fs = std::filesystem;

struct Run {
  int code = -1;
  std::string out;  // captured stdout
};

inline fs::path scratch(const std::string& tag) {
  const auto dir = fs::temp_directory_path() / ("mseg_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// `args` is appended verbatim to the command line; stderr is discarded.
inline Run run(const std::string& args, const fs::path& dir) {
  const auto capture = dir / ".stdout";
  const std::string cmd = std::string("\"") + MSEG_CLI + "\" " + args + " > \"" + capture.string() +
                          "\" 2>/dev/null";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(capture);
  fs::remove(capture);
  return r;
}

}  // namespace cli
