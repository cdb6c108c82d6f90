#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "spnpb/model.hpp"
#include "spnpb/text.hpp"

namespace spnpb {

/// One (s_t, u_t) pair at a control tick, in raw units.
struct TimedSample {
  Vector s;
  Vector u;
  std::int64_t tick = 0;
};

/// Consecutive samples collected in one environment.
struct Trial {
  std::vector<TimedSample> samples;
  std::string label;
  int id = 0;

  std::size_t length() const { return samples.size(); }
};

inline bool is_finite(const Vector& v) { return v.allFinite(); }

inline void validate_trial(const Trial& trial) {
  if (trial.samples.size() < 2)
    throw ArgumentError("trial " + std::to_string(trial.id) + " has fewer than 2 samples");
  const auto ns = trial.samples.front().s.size();
  const auto nu = trial.samples.front().u.size();
  for (std::size_t i = 0; i < trial.samples.size(); ++i) {
    const TimedSample& x = trial.samples[i];
    if (x.s.size() != ns || x.u.size() != nu)
      throw ShapeError("trial " + std::to_string(trial.id) + ": inconsistent sample dims");
    if (!is_finite(x.s) || !is_finite(x.u))
      throw ArgumentError("trial " + std::to_string(trial.id) + ": non-finite sample");
    if (i > 0 && x.tick <= trial.samples[i - 1].tick)
      throw ArgumentError("trial " + std::to_string(trial.id) + ": ticks not increasing");
  }
}

/// Pooled per-dimension mean and population std over every sample.
inline NormStats compute_norm_stats(const std::vector<Trial>& trials) {
  std::size_t count = 0;
  Eigen::Index ns = -1, nu = -1;
  for (const Trial& t : trials) {
    for (const TimedSample& x : t.samples) {
      if (ns < 0) {
        ns = x.s.size();
        nu = x.u.size();
      }
      detail::require_shape(x.s.size() == ns && x.u.size() == nu,
                            "compute_norm_stats: inconsistent sample dims");
      ++count;
    }
  }
  if (count == 0) throw ArgumentError("compute_norm_stats: dataset has no samples");

  Vector s_sum = Vector::Zero(ns), u_sum = Vector::Zero(nu);
  for (const Trial& t : trials)
    for (const TimedSample& x : t.samples) {
      s_sum += x.s;
      u_sum += x.u;
    }
  const double n = static_cast<double>(count);
  Vector s_mean = s_sum / n, u_mean = u_sum / n;
  Vector s_sq = Vector::Zero(ns), u_sq = Vector::Zero(nu);
  for (const Trial& t : trials)
    for (const TimedSample& x : t.samples) {
      s_sq += (x.s - s_mean).cwiseAbs2();
      u_sq += (x.u - u_mean).cwiseAbs2();
    }
  return NormStats(s_mean, (s_sq / n).cwiseSqrt(), u_mean, (u_sq / n).cwiseSqrt());
}

// Dataset file, version 1:
//
//   # spnpb-dataset 1 state_dim=<Ns> command_dim=<Nu>
//   trial_id,tick,s0..s{Ns-1},u0..u{Nu-1}
//   <one sample per line>
//
// Sidecar manifest at "<dataset>.manifest":
//
//   # spnpb-manifest 1
//   <trial_id>,<environment label>      (label is everything after the first comma)
inline constexpr int kDatasetFormatVersion = 1;

inline std::filesystem::path manifest_path(const std::filesystem::path& dataset) {
  return std::filesystem::path(dataset.string() + ".manifest");
}

inline void save_dataset(const std::filesystem::path& path, const std::vector<Trial>& trials) {
  if (trials.empty()) throw ArgumentError("save_dataset: no trials");
  const auto ns = trials.front().samples.at(0).s.size();
  const auto nu = trials.front().samples.at(0).u.size();
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os << "# spnpb-dataset " << kDatasetFormatVersion << " state_dim=" << ns
     << " command_dim=" << nu << '\n';
  os << "trial_id,tick";
  for (Eigen::Index i = 0; i < ns; ++i) os << ",s" << i;
  for (Eigen::Index i = 0; i < nu; ++i) os << ",u" << i;
  os << '\n';
  for (const Trial& t : trials) {
    validate_trial(t);
    for (const TimedSample& x : t.samples) {
      detail::require_shape(x.s.size() == ns && x.u.size() == nu, "save_dataset: dims differ");
      os << t.id << ',' << x.tick;
      for (Eigen::Index i = 0; i < ns; ++i) os << ',' << text::format_double(x.s[i]);
      for (Eigen::Index i = 0; i < nu; ++i) os << ',' << text::format_double(x.u[i]);
      os << '\n';
    }
  }
  if (!os) throw FormatError("write failed: " + path.string());

  std::ofstream ms(manifest_path(path));
  if (!ms) throw FormatError("cannot open manifest for writing");
  ms << "# spnpb-manifest " << kDatasetFormatVersion << '\n';
  for (const Trial& t : trials) ms << t.id << ',' << t.label << '\n';
}

/// Loads a dataset and its manifest. Trials keep first-appearance order and
/// are validated (monotone ticks, finite values, at least two samples).
inline std::vector<Trial> load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw FormatError("dataset: empty file");
  int ns = 0, nu = 0, version = 0;
  if (std::sscanf(line.c_str(), "# spnpb-dataset %d state_dim=%d command_dim=%d", &version, &ns,
                  &nu) != 3)
    throw FormatError("dataset: bad header line");
  if (version != kDatasetFormatVersion)
    throw FormatError("dataset: unsupported version " + std::to_string(version));
  if (ns < 1 || nu < 1) throw FormatError("dataset: bad dimensions in header");
  if (!std::getline(is, line)) throw FormatError("dataset: missing column line");

  std::vector<Trial> trials;
  std::map<int, std::size_t> index;
  std::size_t line_no = 2;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto fields = text::split(line, ',');
    if (fields.size() != static_cast<std::size_t>(2 + ns + nu))
      throw FormatError("dataset line " + std::to_string(line_no) + ": wrong field count");
    const int id = static_cast<int>(text::parse_int(fields[0]));
    TimedSample x;
    x.tick = text::parse_int(fields[1]);
    x.s.resize(ns);
    x.u.resize(nu);
    for (int i = 0; i < ns; ++i) x.s[i] = text::parse_double(fields[2 + i]);
    for (int i = 0; i < nu; ++i) x.u[i] = text::parse_double(fields[2 + ns + i]);
    auto [it, inserted] = index.try_emplace(id, trials.size());
    if (inserted) {
      trials.emplace_back();
      trials.back().id = id;
    }
    Trial& t = trials[it->second];
    if (!t.samples.empty() && x.tick <= t.samples.back().tick)
      throw FormatError("dataset line " + std::to_string(line_no) + ": tick not increasing in trial " +
                        std::to_string(id));
    t.samples.push_back(std::move(x));
  }

  std::ifstream ms(manifest_path(path));
  if (ms) {
    while (std::getline(ms, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto comma = line.find(',');
      if (comma == std::string::npos) throw FormatError("manifest: missing comma");
      const int id = static_cast<int>(text::parse_int(std::string_view(line).substr(0, comma)));
      auto it = index.find(id);
      if (it == index.end()) throw FormatError("manifest: unknown trial " + std::to_string(id));
      trials[it->second].label = line.substr(comma + 1);
    }
  }
  for (const Trial& t : trials) validate_trial(t);
  return trials;
}

}  // namespace spnpb
