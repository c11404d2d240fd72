// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// CSV output: one header row, '.' as the decimal separator regardless of
// locale, LF line endings. Numbers are rendered with std::to_chars shortest
// round-trip form, so identical values always produce identical bytes and
// traces can be compared with a plain byte diff.

#pragma once

#include <charconv>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include "gramsynth/tensor.hpp"

namespace gramsynth {

inline std::string csv_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string csv_number(long v) {
  char buf[24];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// One CSV cell: numbers via csv_number, everything else verbatim. Field
/// text must not contain commas or newlines; this writer never quotes.
class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw ParseError("cannot open '" + path + "' for writing");
    path_ = path;
  }

  void header(const std::vector<std::string>& names) { line(names); }

  void row(const std::vector<double>& values) {
    std::string text;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) text.push_back(',');
      text += csv_number(values[i]);
    }
    text.push_back('\n');
    write(text);
  }

  void line(const std::vector<std::string>& cells) {
    std::string text;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text.push_back(',');
      text += cells[i];
    }
    text.push_back('\n');
    write(text);
  }

 private:
  void write(const std::string& text) {
    out_.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out_) throw ParseError("failed writing csv file '" + path_ + "'");
  }

  std::ofstream out_;
  std::string path_;
};

}  // namespace gramsynth
