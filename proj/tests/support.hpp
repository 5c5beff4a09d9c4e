#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>

#include <sys/wait.h>
#include <unistd.h>

#include "ergorisk/pose_io.hpp"
#include "ergorisk/rng.hpp"

namespace testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ergorisk_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void spit(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

struct CommandResult {
  int exit_code = -1;
  std::string output;
};

// Runs a shell command, capturing stdout and stderr together.
inline CommandResult run_command(const std::string& cmd) {
  CommandResult r;
  FILE* pipe = ::popen((cmd + " 2>&1").c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// Hand-placed upright figure in a 100x200 frame: vertical torso and head,
// arms hanging straight at the sides, straight legs.
inline ergorisk::Skeleton upright_skeleton(const std::string& id = "upright") {
  ergorisk::Skeleton s;
  s.id = id;
  s.image_width = 100;
  s.image_height = 200;
  const auto put = [&](std::size_t i, double x, double y) { s.landmarks[i] = ergorisk::Landmark{x, y, 1.0}; };
  put(0, 0.50, 0.06);
  put(7, 0.46, 0.08);
  put(8, 0.54, 0.08);
  put(11, 0.40, 0.20);
  put(12, 0.60, 0.20);
  put(13, 0.40, 0.35);
  put(14, 0.60, 0.35);
  put(15, 0.40, 0.48);
  put(16, 0.60, 0.48);
  put(19, 0.40, 0.52);
  put(20, 0.60, 0.52);
  put(23, 0.42, 0.55);
  put(24, 0.58, 0.55);
  put(25, 0.42, 0.75);
  put(26, 0.58, 0.75);
  put(27, 0.42, 0.95);
  put(28, 0.58, 0.95);
  return s;
}

}  // namespace testing
