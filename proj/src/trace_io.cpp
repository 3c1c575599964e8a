// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pabdm/trace_io.hpp"

#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <ostream>

namespace pabdm {

using nlohmann::ordered_json;

void write_trace_jsonl(std::ostream& os, const DecodeTrace& trace, std::size_t sample) {
  for (const RoundRecord& r : trace.rounds) {
    ordered_json j;
    j["sample"] = sample;
    j["round"] = r.round;
    j["forward_index"] = r.forward_index;
    j["start"] = r.start;
    j["m"] = r.decision.confidences.size();
    j["first_low"] = r.decision.first_low ? ordered_json(*r.decision.first_low) : ordered_json();
    j["commit_len"] = r.decision.commit_len;
    j["confidences"] = r.decision.confidences;
    j["candidates"] = r.candidates;
    j["tokens"] = r.tokens;
    j["positions"] = r.positions;
    os << j.dump() << '\n';
  }
  ordered_json s;
  s["sample"] = sample;
  s["summary"] = true;
  s["forward_calls"] = trace.forward_calls;
  s["committed"] = trace.total_committed;
  s["tokens_per_forward"] = trace.tokens_per_forward();
  s["processed_positions"] = trace.processed_positions;
  s["eos_reached"] = trace.eos_reached;
  s["final_sequence"] = trace.final_sequence;
  s["error"] = trace.error ? ordered_json(*trace.error) : ordered_json();
  os << s.dump() << '\n';
}

void write_batch_jsonl(std::ostream& os, const BatchResult& result) {
  for (const BatchRound& r : result.rounds) {
    ordered_json j;
    j["batch_round"] = r.round;
    j["target_len"] = r.target_len;
    j["samples"] = r.samples;
    j["prefix_lens"] = r.prefix_lens;
    j["mask_counts"] = r.mask_counts;
    j["active"] = r.active;
    os << j.dump() << '\n';
  }
  for (std::size_t i = 0; i < result.traces.size(); ++i) write_trace_jsonl(os, result.traces[i], i);
}

void write_corpus_jsonl(std::ostream& os, const std::vector<Example>& corpus) {
  for (const Example& ex : corpus) {
    ordered_json j;
    j["prompt"] = ex.prompt;
    j["target"] = ex.target;
    j["text"] = vocab::render(ex.target);
    os << j.dump() << '\n';
  }
}

std::vector<Example> read_corpus_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file: " + path.string());
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("prompt").get<TokenSeq>(), j.at("target").get<TokenSeq>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw DataError("corpus file is empty: " + path.string());
  return out;
}

std::string format_double(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

void CsvTable::add_row(std::vector<std::string> cells) {
  if (cells.size() != header_.size()) throw DomainError("CsvTable: row width mismatch");
  rows_.push_back(std::move(cells));
}

void CsvTable::write(std::ostream& os) const {
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << '\n';
  };
  line(header_);
  for (const auto& r : rows_) line(r);
}

void CsvTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write(out);
}

}  // namespace pabdm
