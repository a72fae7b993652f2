// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lrd/denoiser.hpp"

namespace lrd {

namespace {

constexpr const char* kMagic = "lrd-ckpt";
constexpr const char* kVersion = "v1";

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void save_checkpoint(const DenoiserModel& model, std::ostream& out) {
  const auto& c = model.config();
  out << kMagic << ' ' << kVersion << '\n';
  out << "config i64 1 6\n"
      << c.n_layers << ' ' << c.n_heads << ' ' << c.d << ' ' << c.d_ff << ' ' << c.L_max << ' ' << c.V << '\n';
  out << "config.init f64 1 2\n"
      << format_double(c.token_init_scale) << ' ' << format_double(c.mask_init_ratio) << '\n';
  for (const auto& t : model.tensors()) {
    out << t.name << " f64 " << t.rows << ' ' << t.cols << '\n';
    const auto values = model.view(t);
    for (std::size_t r = 0; r < t.rows; ++r) {
      for (std::size_t col = 0; col < t.cols; ++col) {
        if (col) out << ' ';
        out << format_double(values[r * t.cols + col]);
      }
      out << '\n';
    }
  }
  if (!out) throw Error("save_checkpoint: write failed");
}

void save_checkpoint(const DenoiserModel& model, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("save_checkpoint: cannot open " + path);
  save_checkpoint(model, f);
}

DenoiserModel load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("load_checkpoint: empty input");
  {
    std::istringstream hs(line);
    std::string magic, version;
    hs >> magic >> version;
    if (magic != kMagic) throw Error("load_checkpoint: not an lrd checkpoint");
    if (version != kVersion) throw Error("load_checkpoint: unsupported checkpoint version '" + version + "'");
  }

  auto read_header = [&](const std::string& expect_name, const std::string& expect_dtype, std::size_t rows,
                         std::size_t cols) {
    if (!std::getline(in, line)) throw Error("load_checkpoint: truncated before tensor " + expect_name);
    std::istringstream hs(line);
    std::string name, dtype;
    std::size_t r = 0, c = 0;
    if (!(hs >> name >> dtype >> r >> c)) throw Error("load_checkpoint: malformed header '" + line + "'");
    if (name != expect_name) throw Error("load_checkpoint: expected tensor " + expect_name + ", found " + name);
    if (dtype != expect_dtype) throw Error("load_checkpoint: tensor " + name + " has dtype " + dtype);
    if (r != rows || c != cols) throw Error("load_checkpoint: tensor " + name + " has wrong shape");
  };
  auto read_row = [&](std::size_t cols, auto&& sink) {
    if (!std::getline(in, line)) throw Error("load_checkpoint: truncated tensor data");
    std::istringstream rs(line);
    for (std::size_t j = 0; j < cols; ++j) {
      std::string tok;
      if (!(rs >> tok)) throw Error("load_checkpoint: short row");
      sink(j, tok);
    }
    std::string extra;
    if (rs >> extra) throw Error("load_checkpoint: long row");
  };

  DenoiserConfig cfg;
  read_header("config", "i64", 1, 6);
  std::size_t dims[6] = {};
  read_row(6, [&](std::size_t j, const std::string& tok) { dims[j] = std::stoull(tok); });
  cfg.n_layers = dims[0];
  cfg.n_heads = dims[1];
  cfg.d = dims[2];
  cfg.d_ff = dims[3];
  cfg.L_max = dims[4];
  cfg.V = dims[5];
  read_header("config.init", "f64", 1, 2);
  double init[2] = {};
  read_row(2, [&](std::size_t j, const std::string& tok) { init[j] = std::stod(tok); });
  cfg.token_init_scale = init[0];
  cfg.mask_init_ratio = init[1];

  DenoiserModel model = DenoiserModel::zeros(cfg);
  for (const auto& t : model.tensors()) {
    read_header(t.name, "f64", t.rows, t.cols);
    auto values = model.view(t);
    for (std::size_t r = 0; r < t.rows; ++r) {
      read_row(t.cols, [&](std::size_t j, const std::string& tok) {
        const double v = std::stod(tok);
        if (!std::isfinite(v)) throw Error("load_checkpoint: non-finite value in " + t.name);
        values[r * t.cols + j] = v;
      });
    }
  }
  return model;
}

DenoiserModel load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("load_checkpoint: cannot open " + path);
  return load_checkpoint(f);
}

}  // namespace lrd
