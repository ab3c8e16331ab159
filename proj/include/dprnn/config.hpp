// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

/**
 * Flat key=value configuration. Built-in defaults are the published
 * operating point; a named profile switches the per-dataset values
 * (learning rate and object self-attention temperature). Precedence is
 * command-line flag > config file > built-in default.
 */

#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "dprnn/error.hpp"
#include "dprnn/matching.hpp"

namespace dprnn {

struct Config {
  std::string profile = "flickr30k";  // flickr30k | mscoco

  // Model dimensions.
  std::size_t h = 1024;   // shared embedding width
  std::size_t q = 300;    // word embedding width
  std::size_t k = 36;     // objects per image
  std::size_t dim = 2048; // object descriptor width

  // Matching temperatures.
  double lambda1 = 9.0;
  double lambda2 = 4.0;
  double beta_w = 0.3;
  double beta_o = 0.3;

  // Training.
  double gamma = 0.2;          // triplet margin
  std::size_t d = 10;          // early-selection width
  double lr = 0.0002;          // divided by 10 every 10 epochs
  std::size_t batch_size = 128;
  std::size_t epochs = 30;
  std::uint64_t seed = 42;
  std::string objective = "word";  // word | object | ensemble
  bool use_rve = true;             // false = identity probe (no recurrent pass)
  double grad_clip = 2.0;          // global norm; 0 disables
  std::size_t shuffle_block = 1;   // shuffle granularity in corresponding pairs

  Objective objective_enum() const { return objective_from_string(objective); }

  /// Apply one key. `profile` immediately rewrites its dependent values,
  /// so later explicit keys win.
  void set(const std::string& key, const std::string& value) {
    auto as_size = [&](const std::string& v) -> std::size_t {
      return static_cast<std::size_t>(std::stoull(v));
    };
    if (key == "profile") {
      if (value == "flickr30k") {
        lr = 0.0002;
        beta_o = 0.3;
      } else if (value == "mscoco") {
        lr = 0.0005;
        beta_o = 0.0;
      } else {
        throw ValidationError("config: unknown profile '" + value + "'");
      }
      profile = value;
    } else if (key == "h") {
      h = as_size(value);
    } else if (key == "q") {
      q = as_size(value);
    } else if (key == "k") {
      k = as_size(value);
    } else if (key == "dim") {
      dim = as_size(value);
    } else if (key == "lambda1") {
      lambda1 = std::stod(value);
    } else if (key == "lambda2") {
      lambda2 = std::stod(value);
    } else if (key == "beta_w") {
      beta_w = std::stod(value);
    } else if (key == "beta_o") {
      beta_o = std::stod(value);
    } else if (key == "gamma") {
      gamma = std::stod(value);
    } else if (key == "d") {
      d = as_size(value);
    } else if (key == "lr") {
      lr = std::stod(value);
    } else if (key == "batch_size") {
      batch_size = as_size(value);
    } else if (key == "epochs") {
      epochs = as_size(value);
    } else if (key == "seed") {
      seed = std::stoull(value);
    } else if (key == "objective") {
      objective_from_string(value);  // validate
      objective = value;
    } else if (key == "use_rve") {
      use_rve = (value == "1" || value == "true");
    } else if (key == "grad_clip") {
      grad_clip = std::stod(value);
    } else if (key == "shuffle_block") {
      shuffle_block = as_size(value);
    } else {
      throw ValidationError("config: unknown key '" + key + "'");
    }
  }

  /// Parse `key=value` lines; '#' starts a comment, blank lines skipped.
  void apply_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      // trim
      const auto b = line.find_first_not_of(" \t\r");
      if (b == std::string::npos) continue;
      const auto e = line.find_last_not_of(" \t\r");
      line = line.substr(b, e - b + 1);
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw FormatError(FormatFault::malformed,
                          "config line " + std::to_string(lineno) +
                              ": expected key=value, got '" + line + "'");
      }
      set(line.substr(0, eq), line.substr(eq + 1));
    }
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
      throw FormatError(FormatFault::malformed,
                        "config: cannot open '" + path + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    apply_text(ss.str());
  }

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "profile=" << profile << "\n";
    os << "h=" << h << "\n";
    os << "q=" << q << "\n";
    os << "k=" << k << "\n";
    os << "dim=" << dim << "\n";
    os << "lambda1=" << lambda1 << "\n";
    os << "lambda2=" << lambda2 << "\n";
    os << "beta_w=" << beta_w << "\n";
    os << "beta_o=" << beta_o << "\n";
    os << "gamma=" << gamma << "\n";
    os << "d=" << d << "\n";
    os << "lr=" << lr << "\n";
    os << "batch_size=" << batch_size << "\n";
    os << "epochs=" << epochs << "\n";
    os << "seed=" << seed << "\n";
    os << "objective=" << objective << "\n";
    os << "use_rve=" << (use_rve ? 1 : 0) << "\n";
    os << "grad_clip=" << grad_clip << "\n";
    os << "shuffle_block=" << shuffle_block << "\n";
    return os.str();
  }

  /// Parse a config dump. Keys are applied in file order, so the profile
  /// line (written first) never clobbers explicit values.
  static Config from_text(const std::string& text) {
    Config c;
    c.apply_text(text);
    return c;
  }
};

}  // namespace dprnn
