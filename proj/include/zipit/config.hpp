#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "zipit/eval.hpp"
#include "zipit/theorem.hpp"

namespace zipit {

inline constexpr int64_t kStopFull = -1;
inline constexpr int64_t kStopPartial = -2;

// Everything a CLI command can read from a config file. Sections:
//   task     classes_per_task input_dim image samples_per_class test_per_class
//            probe_size data_seed seeds
//   train    arch lr epochs batch_size weight_decay momentum
//   match    algorithm alpha beta repeat_matches seed
//   zip      stop ("full", "partial" or an index)
//   sweep    kind grid
//   theorem  widths d seeds redundancy probes alpha_points dist sigma beta_a beta_b
//   out      output directory
struct RunConfig {
    ExperimentConfig experiment;
    int64_t stop = kStopFull;
    std::string sweep_kind = "beta";
    std::vector<double> sweep_grid;  // empty: the default grid for the kind
    std::vector<int64_t> theorem_widths{8, 32, 128, 512};
    TrendConfig theorem;
    std::string out = ".";

    RunConfig();
    void validate() const;
};

// Unknown keys and ill-typed values throw ConfigError.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

std::string stop_name(int64_t stop);
int64_t parse_stop(const std::string& text);

}  // namespace zipit
