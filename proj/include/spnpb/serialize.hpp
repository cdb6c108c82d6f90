#pragma once

#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "spnpb/model.hpp"
#include "spnpb/text.hpp"

namespace spnpb {

// Model file, version 1. Line oriented text:
//
//   spnpb-model 1
//   config <state_dim> <command_dim> <pb_dim> <tick_period>
//   norm s_mean|s_std|u_mean|u_std <n> <values...>
//   tensor <name> <rows> <cols> <values...>        (column-major)
//   pb <values...> [label]                          (pb_dim values, label = rest of line)
//
// Tensors appear in ModelParams::for_each_tensor order. Reals are written with
// 17 significant digits, which round-trips every finite double exactly.
// Network input order is (u, s, p); LSTM gate blocks are (i, f, o, g);
// normalization uses the population standard deviation.
inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline std::vector<std::string> tensor_names() {
  std::vector<std::string> names;
  for (int i = 0; i < 3; ++i) {
    names.push_back("encoder" + std::to_string(i) + ".weight");
    names.push_back("encoder" + std::to_string(i) + ".bias");
  }
  for (int i = 0; i < 2; ++i) {
    names.push_back("lstm" + std::to_string(i) + ".w_input");
    names.push_back("lstm" + std::to_string(i) + ".w_hidden");
    names.push_back("lstm" + std::to_string(i) + ".bias");
  }
  for (int i = 0; i < 4; ++i) {
    names.push_back("decoder" + std::to_string(i) + ".weight");
    names.push_back("decoder" + std::to_string(i) + ".bias");
  }
  return names;
}

inline void write_values(std::ostream& os, const double* data, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) os << ' ' << text::format_double(data[i]);
}

inline std::string next_token(std::istream& is, const char* context) {
  std::string tok;
  if (!(is >> tok)) throw FormatError(std::string("model file truncated at ") + context);
  return tok;
}

inline void expect_token(std::istream& is, const std::string& want) {
  const std::string got = next_token(is, want.c_str());
  if (got != want) throw FormatError("model file: expected '" + want + "', got '" + got + "'");
}

inline double read_double(std::istream& is, const char* context) {
  return text::parse_double(next_token(is, context));
}

inline long long read_int(std::istream& is, const char* context) {
  return text::parse_int(next_token(is, context));
}

}  // namespace detail

inline void write_model(std::ostream& os, const ModelParams& params) {
  params.validate();
  const ModelConfig& c = params.config;
  os << "spnpb-model " << kModelFormatVersion << '\n';
  os << "config " << c.state_dim << ' ' << c.command_dim << ' ' << c.pb_dim << ' '
     << text::format_double(c.tick_period) << '\n';
  auto norm_line = [&](const char* name, const Vector& v) {
    os << "norm " << name << ' ' << v.size();
    detail::write_values(os, v.data(), v.size());
    os << '\n';
  };
  norm_line("s_mean", params.norm.s_mean);
  norm_line("s_std", params.norm.s_std);
  norm_line("u_mean", params.norm.u_mean);
  norm_line("u_std", params.norm.u_std);

  const auto names = detail::tensor_names();
  std::size_t k = 0;
  params.for_each_tensor([&](const auto& t) {
    os << "tensor " << names[k++] << ' ' << t.rows() << ' ' << t.cols();
    detail::write_values(os, t.data(), t.size());
    os << '\n';
  });

  os << "pb_count " << params.pb_table.size() << '\n';
  for (std::size_t i = 0; i < params.pb_table.size(); ++i) {
    os << "pb";
    detail::write_values(os, params.pb_table[i].data(), params.pb_table[i].size());
    if (i < params.pb_labels.size() && !params.pb_labels[i].empty())
      os << ' ' << params.pb_labels[i];
    os << '\n';
  }
}

inline ModelParams read_model(std::istream& is) {
  detail::expect_token(is, "spnpb-model");
  const long long version = detail::read_int(is, "version");
  if (version != kModelFormatVersion)
    throw FormatError("unsupported model format version " + std::to_string(version));

  detail::expect_token(is, "config");
  ModelConfig cfg;
  cfg.state_dim = static_cast<int>(detail::read_int(is, "state_dim"));
  cfg.command_dim = static_cast<int>(detail::read_int(is, "command_dim"));
  cfg.pb_dim = static_cast<int>(detail::read_int(is, "pb_dim"));
  cfg.tick_period = detail::read_double(is, "tick_period");
  ModelParams params = ModelParams::zeros(cfg);

  auto read_norm = [&](const char* name) {
    detail::expect_token(is, "norm");
    detail::expect_token(is, name);
    const long long n = detail::read_int(is, name);
    if (n < 0 || n > 1 << 20) throw FormatError("model file: bad norm length");
    Vector v(n);
    for (long long i = 0; i < n; ++i) v[i] = detail::read_double(is, name);
    return v;
  };
  Vector sm = read_norm("s_mean");
  Vector ss = read_norm("s_std");
  Vector um = read_norm("u_mean");
  Vector us = read_norm("u_std");
  params.norm.s_mean = std::move(sm);
  params.norm.s_std = std::move(ss);
  params.norm.u_mean = std::move(um);
  params.norm.u_std = std::move(us);

  const auto names = detail::tensor_names();
  std::size_t k = 0;
  params.for_each_tensor([&](auto& t) {
    detail::expect_token(is, "tensor");
    detail::expect_token(is, names[k]);
    const long long rows = detail::read_int(is, "rows");
    const long long cols = detail::read_int(is, "cols");
    if (rows != t.rows() || cols != t.cols())
      throw FormatError("model file: tensor " + names[k] + " has wrong shape");
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = detail::read_double(is, "tensor");
    ++k;
  });

  detail::expect_token(is, "pb_count");
  const long long count = detail::read_int(is, "pb_count");
  if (count < 0) throw FormatError("model file: negative pb_count");
  std::string rest;
  std::getline(is, rest);
  for (long long i = 0; i < count; ++i) {
    std::string line;
    if (!std::getline(is, line)) throw FormatError("model file truncated in PB table");
    std::istringstream ls(line);
    detail::expect_token(ls, "pb");
    Vector p(cfg.pb_dim);
    for (int d = 0; d < cfg.pb_dim; ++d) p[d] = detail::read_double(ls, "pb");
    std::string label;
    std::getline(ls >> std::ws, label);
    params.pb_table.push_back(std::move(p));
    params.pb_labels.push_back(std::move(label));
  }
  params.validate();
  return params;
}

inline void save_model(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_model(os, params);
  if (!os) throw FormatError("write failed: " + path.string());
}

inline ModelParams load_model(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_model(is);
}

}  // namespace spnpb
