#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "crumb/stream_data.hpp"
#include "crumb/trainer.hpp"

namespace crumb {

// Everything a run needs; echoed verbatim into the output directory so a run
// folder is self-describing.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string mode = "crumb";
    std::string protocol = "class_iid";
    std::string dataset = "synthetic";  // synthetic | manifest
    std::string manifest_path;
    std::string manifest_test_path;

    SynthConfig data;                    // data.seed is derived from `seed`
    std::size_t pretrain_classes = 8;

    NetSpecConfig net;

    TrainConfig train;
    std::size_t classes_per_task = 2;
    std::size_t stop_after_task = 0;  // 0 = run all tasks

    std::size_t eval_batch = 100;
    std::uint64_t eval_partition_seed = 9001;  // shared across runs being compared
    bool report_filter = false;
};

// All recognized keys, in echo order.
const std::vector<std::string>& config_keys();

// Both throw ConfigError naming the key.
void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_key(const RunConfig& cfg, const std::string& key);

// key=value lines with optional [section] headers; '#' comments. Unknown keys
// are rejected with a line diagnostic.
void parse_config_stream(RunConfig& cfg, std::istream& is, const std::string& source_name);
RunConfig load_config_file(const std::filesystem::path& path, RunConfig base = {});
void write_config(const RunConfig& cfg, const std::filesystem::path& path);

// Materializes the typed sub-configs that carry the run seed.
TrainConfig resolved_train_config(const RunConfig& cfg);
SynthConfig resolved_stream_data_config(const RunConfig& cfg);
SynthConfig resolved_pretrain_data_config(const RunConfig& cfg);

}  // namespace crumb
