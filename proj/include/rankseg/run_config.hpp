#pragma once

#include <string>
#include <vector>

#include "rankseg/experiment.hpp"

namespace rankseg {

// Flat "key = value" config text; '#' starts a comment. Unknown keys are
// configuration errors naming the key. The full key list is documented in
// the README.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig config_from_file(const std::string& path,
                                  const std::vector<std::string>& overrides = {});
void apply_config_kv(ExperimentConfig& cfg, const std::string& key, const std::string& value);

}  // namespace rankseg
