#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cnfik {

inline constexpr const char* kToolVersion = "0.1.0";

/// FNV-1a 64-bit hash of a file's bytes. Throws FormatError if unreadable.
uint64_t fnv1a64File(const std::string& path);

std::string hashHex(uint64_t h);

/// Written beside every command's outputs before long-running work begins,
/// so a run can be traced back to the exact inputs that produced it. Contains
/// no timestamps: a repeated run writes identical bytes.
struct RunManifest {
  std::string command;
  std::vector<std::pair<std::string, std::string>> inputs; // label -> file hash
  uint64_t seed = 0;
  std::vector<std::string> artifacts;
};

/// Writes the manifest as JSON. If a manifest already exists at `path` with
/// different input hashes, a warning naming the changed inputs goes to
/// stderr. Returns true when such a mismatch was found.
bool writeManifest(const RunManifest& manifest, const std::string& path);

}  // namespace cnfik
