// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0
//
// INI-style config files: [model] / [train] / [data] sections, key = value
// lines, '#' comments. Unknown keys are errors; flags override files.

#ifndef FETR_CONFIG_HPP
#define FETR_CONFIG_HPP

#include <string>

#include "fetr/backbone.hpp"
#include "fetr/training.hpp"

namespace fetr {

struct DataConfig {
  std::string root;
  double split_ratio = 0.8;
};

struct Config {
  NetworkSpec model;
  TrainConfig train;
  DataConfig data;
};

/// Defaults only (Adam, lr 1e-4, wd 1e-5, 100 epochs, batch 48, cosine,
/// warmup 0; width-16 depths-1,1,1,1 model on 32x32 inputs).
Config default_config();

/// Parse a single "section.key" assignment into cfg; throws ConfigError on
/// unknown keys or unparsable values. Exposed for CLI flag overrides.
void apply_config_value(Config& cfg, const std::string& section, const std::string& key,
                        const std::string& value, int line_no);

Config parse_config_text(const std::string& text);
Config parse_config(const std::string& path);

}  // namespace fetr

#endif  // FETR_CONFIG_HPP
