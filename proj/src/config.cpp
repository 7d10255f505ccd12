// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0

#include "fetr/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fetr {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

[[noreturn]] void fail(int line_no, const std::string& msg) {
  throw ConfigError("config line " + std::to_string(line_no) + ": " + msg);
}

long parse_int(const std::string& v, int line_no) {
  char* end = nullptr;
  const long x = std::strtol(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0') fail(line_no, "expected integer, got '" + v + "'");
  return x;
}

double parse_double(const std::string& v, int line_no) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0') fail(line_no, "expected number, got '" + v + "'");
  return x;
}

bool parse_bool(const std::string& v, int line_no) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(line_no, "expected boolean, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& v, int line_no) {
  std::vector<int> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(parse_int(trim(item), line_no)));
  return out;
}

}  // namespace

Config default_config() { return Config{}; }

void apply_config_value(Config& cfg, const std::string& section, const std::string& key,
                        const std::string& value, int line_no) {
  if (section == "model") {
    if (key == "base_width") cfg.model.base_width = static_cast<int>(parse_int(value, line_no));
    else if (key == "depths") {
      const auto d = parse_int_list(value, line_no);
      if (d.size() != 4) fail(line_no, "depths must list exactly 4 integers");
      for (size_t i = 0; i < 4; ++i) cfg.model.stage_depths[i] = d[i];
    } else if (key == "num_classes") cfg.model.num_classes = static_cast<int>(parse_int(value, line_no));
    else if (key == "dca_stages") cfg.model.dca_stages = parse_int_list(value, line_no);
    else if (key == "se_reduction") cfg.model.se_reduction = static_cast<int>(parse_int(value, line_no));
    else if (key == "input_size") {
      const int s = static_cast<int>(parse_int(value, line_no));
      cfg.model.input_h = cfg.model.input_w = s;
    } else if (key == "stylerm") cfg.model.with_stylerm = parse_bool(value, line_no);
    else if (key == "se") cfg.model.with_se = parse_bool(value, line_no);
    else fail(line_no, "unknown key '" + key + "' in [model]");
  } else if (section == "train") {
    if (key == "epochs") cfg.train.epochs = static_cast<int>(parse_int(value, line_no));
    else if (key == "batch_size") cfg.train.batch_size = static_cast<int>(parse_int(value, line_no));
    else if (key == "optimizer") {
      if (value == "adam") cfg.train.optimizer = OptimizerKind::kAdam;
      else if (value == "sgd") cfg.train.optimizer = OptimizerKind::kSgd;
      else fail(line_no, "optimizer must be 'adam' or 'sgd', got '" + value + "'");
    } else if (key == "lr") cfg.train.base_lr = parse_double(value, line_no);
    else if (key == "weight_decay") cfg.train.weight_decay = parse_double(value, line_no);
    else if (key == "warmup_epochs") cfg.train.warmup_epochs = static_cast<int>(parse_int(value, line_no));
    else if (key == "lr_schedule") cfg.train.lr_schedule = value;
    else if (key == "seed") cfg.train.seed = static_cast<uint64_t>(parse_int(value, line_no));
    else if (key == "augment") cfg.train.augment = parse_bool(value, line_no);
    else fail(line_no, "unknown key '" + key + "' in [train]");
  } else if (section == "data") {
    if (key == "root") cfg.data.root = value;
    else if (key == "split_ratio") cfg.data.split_ratio = parse_double(value, line_no);
    else fail(line_no, "unknown key '" + key + "' in [data]");
  } else {
    fail(line_no, "unknown section '" + section + "'");
  }
}

Config parse_config_text(const std::string& text) {
  Config cfg = default_config();
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const size_t hash = raw.find('#');
    std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(line_no, "empty key");
    if (section.empty()) fail(line_no, "key '" + key + "' outside any section");
    apply_config_value(cfg, section, key, value, line_no);
  }
  return cfg;
}

Config parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace fetr
