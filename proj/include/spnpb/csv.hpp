#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "spnpb/error.hpp"
#include "spnpb/text.hpp"

namespace spnpb {

/// Numeric CSV with a versioned schema line:
///
///   # spnpb-csv <schema> <version>
///   col0,col1,...
///
/// Rows are checked against the header width on write.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::string schema, int version,
            std::vector<std::string> columns)
      : os_(path), columns_(std::move(columns)) {
    if (!os_) throw FormatError("cannot open " + path.string() + " for writing");
    if (columns_.empty()) throw ArgumentError("CsvWriter: no columns");
    os_ << "# spnpb-csv " << schema << ' ' << version << '\n';
    for (std::size_t i = 0; i < columns_.size(); ++i) os_ << (i ? "," : "") << columns_[i];
    os_ << '\n';
  }

  void row(const std::vector<double>& values) {
    if (values.size() != columns_.size())
      throw ShapeError("CsvWriter: row has " + std::to_string(values.size()) + " fields, expected " +
                       std::to_string(columns_.size()));
    for (std::size_t i = 0; i < values.size(); ++i)
      os_ << (i ? "," : "") << text::format_double(values[i]);
    os_ << '\n';
    if (!os_) throw FormatError("CsvWriter: write failed");
  }

  const std::vector<std::string>& columns() const { return columns_; }

 private:
  std::ofstream os_;
  std::vector<std::string> columns_;
};

}  // namespace spnpb
