#ifndef PNR_PIPELINE_HPP
#define PNR_PIPELINE_HPP

#include <optional>
#include <string>

#include <json.hpp>

#include "pnr/simulator.hpp"

namespace pnr {

struct PipelineRun {
  int exit_code = 0;          // 0 ok, 1 runtime failure, 2 config error
  nlohmann::json report;      // report.json contents on success
  nlohmann::json error;       // {"error": {code, message}} on failure
};

/// Executes the staged config (keys: seed, out_dir, stages) in order,
/// writing every stage's artifacts plus run.json (resolved config and
/// artifact hashes) and report.json (results; wall-clock data lives only
/// under the top-level "timing" and "created_utc" keys, so stripping those
/// two makes reruns byte-identical). Unknown config keys are a hard error.
PipelineRun run_pipeline(const nlohmann::json& config, const std::string& out_dir,
                         std::optional<uint64_t> seed_override = std::nullopt);

/// Strict parsers shared with the CLI; unknown keys raise CONFIG_ERROR.
/// sat_scale accepts a positive number, the string "inf", or null (= inf).
PulseShape pulse_shape_from_json(const nlohmann::json& j);
SourceModel source_from_json(const nlohmann::json& j);

/// FNV-1a64 of a file's bytes, as "fnv1a64:<hex>"; run.json uses this.
std::string hash_file(const std::string& path);

}  // namespace pnr

#endif
