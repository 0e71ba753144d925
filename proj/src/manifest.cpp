#include "cnfik/manifest.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "cnfik/errors.hpp"

namespace cnfik {

using json = nlohmann::ordered_json;

uint64_t fnv1a64File(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open file for hashing: " + path);
  uint64_t h = 1469598103934665603ull;
  char buf[65536];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    const std::streamsize n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!in) break;
  }
  return h;
}

std::string hashHex(uint64_t h) {
  char buf[17];
  snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool writeManifest(const RunManifest& manifest, const std::string& path) {
  bool warned = false;
  std::ifstream prev(path, std::ios::binary);
  if (prev) {
    try {
      json old = json::parse(prev);
      for (const auto& [label, hash] : manifest.inputs) {
        if (old.contains("inputs") && old["inputs"].contains(label)) {
          const std::string oldHash = old["inputs"][label].get<std::string>();
          if (oldHash != hash) {
            std::cerr << "warning: input '" << label
                      << "' changed since the previous run recorded in " << path
                      << " (" << oldHash << " -> " << hash << ")\n";
            warned = true;
          }
        }
      }
    } catch (const json::exception&) {
      std::cerr << "warning: existing manifest " << path
                << " is unreadable; overwriting\n";
      warned = true;
    }
  }
  prev.close();

  json j;
  j["command"] = manifest.command;
  json inputs;
  for (const auto& [label, hash] : manifest.inputs) inputs[label] = hash;
  j["inputs"] = std::move(inputs);
  j["seed"] = manifest.seed;
  j["artifacts"] = manifest.artifacts;
  j["tool_version"] = kToolVersion;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write manifest: " + path);
  out << j.dump(1) << '\n';
  return warned;
}

}  // namespace cnfik
