// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "pabdm/batch_ppc.hpp"
#include "pabdm/ppc_decoder.hpp"
#include "pabdm/synth_tasks.hpp"

namespace pabdm {

/// Raised when an input file is missing or malformed.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One JSON line per committing round, then a summary line.
void write_trace_jsonl(std::ostream& os, const DecodeTrace& trace, std::size_t sample);
void write_batch_jsonl(std::ostream& os, const BatchResult& result);

void write_corpus_jsonl(std::ostream& os, const std::vector<Example>& corpus);
std::vector<Example> read_corpus_jsonl(const std::filesystem::path& path);

/// Fixed-precision rendering so CSV cells never depend on locale or on
/// shortest-round-trip formatting.
std::string format_double(double v, int precision = 6);

/// Minimal CSV table: header row plus rows of already formatted cells.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);
  void add_row(std::vector<std::string> cells);
  void write(std::ostream& os) const;
  void save(const std::filesystem::path& path) const;
  std::size_t rows() const { return rows_.size(); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace pabdm
