#ifndef CONVCAPS_CONFIG_HPP
#define CONVCAPS_CONFIG_HPP

#include <string>
#include <utility>
#include <vector>

#include "convcaps/model.hpp"
#include "convcaps/pipeline.hpp"

namespace convcaps {

// Everything a run needs: model and training hyperparameters plus paths and
// the architecture tag. Parsed from flat key=value text (one pair per line,
// '#' comments, later assignments win), so command-line overrides are just
// extra assignments applied after the file.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string arch = kArchConvCaps;
    std::string data_dir = "data";
    std::string checkpoint = "checkpoint.bin";
    std::string log = "train_log.csv";

    void validate() const;
};

// One key=value assignment. Unknown keys and malformed values -> usage_error.
// "preset" applies a named bundle (tiny|default) immediately; "arch" accepts
// "baseline" as shorthand for the canonical conv_baseline tag.
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Canonical echo: every key in a fixed order with its current value. Feeding
// the result back through parse_config reproduces the config exactly.
std::string echo_config(const RunConfig& cfg);

// (key, "default -- description") rows for help output.
std::vector<std::pair<std::string, std::string>> config_docs();

}  // namespace convcaps

#endif
