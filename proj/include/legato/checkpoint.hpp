#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "legato/params.hpp"

namespace legato {

// Checkpoint file layout:
//   bytes 0..7   magic "LGTCKPT1"
//   bytes 8..15  little-endian u64, manifest length in bytes
//   manifest     JSON: {"schema_version":1, "schema":{...}, "params":[
//                  {"name", "shape", "offset", "trainable"}, ...]}
//   data         raw little-endian float64, offsets relative to data start
// Round-trips are bit-exact.

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store,
                     const nlohmann::json& schema);

struct LoadedCheckpoint {
  nlohmann::json schema;
  nlohmann::json manifest;
};

/// Load values into an existing store; every entry must match by name and
/// shape. Returns the schema header.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, ParameterStore& store);

/// Read only the schema header.
nlohmann::json read_checkpoint_schema(const std::filesystem::path& path);

}  // namespace legato
