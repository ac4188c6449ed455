// SPDX-License-Identifier: Apache-2.0
#include "kopt/csv_log.hpp"

#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include "json.hpp"
#include <sstream>

#include "kopt/error.hpp"
#include "kopt/metrics.hpp"

extern char** environ;

namespace kopt {

const std::vector<std::string> kFixedColumns = {"kernel_name", "backend",        "level",   "flop",
                                                "tflops",      "bytes",          "bandwidth_gbps",
                                                "time_us",     "input_dims",     "note"};

namespace {

constexpr std::array<std::pair<Backend, std::string_view>, 5> kBackends = {{
    {Backend::pytorch, "pytorch"},
    {Backend::pytorch_compile, "pytorch_compile"},
    {Backend::triton, "triton"},
    {Backend::helion, "helion"},
    {Backend::mlir, "mlir"},
}};

std::string with_marker(double v, bool estimated) {
  std::string s = format_number(v);
  if (estimated) s += kEstimatedMarker;
  return s;
}

double read_number(std::string field, bool* estimated, const std::string& column) {
  bool est = field.size() >= kEstimatedMarker.size() &&
             field.compare(field.size() - kEstimatedMarker.size(), kEstimatedMarker.size(), kEstimatedMarker) == 0;
  if (est) field.resize(field.size() - kEstimatedMarker.size());
  if (estimated) *estimated = est;
  double v = 0.0;
  auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || p != field.data() + field.size())
    throw CsvError("column '" + column + "': not a number: '" + field + "'");
  return v;
}

std::string read_header_line(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  if (text.empty()) return {};
  auto rows = parse_csv(text);
  if (rows.empty()) return {};
  return format_csv_row(rows.front());
}

}  // namespace

std::string_view backend_name(Backend b) {
  for (const auto& [k, v] : kBackends)
    if (k == b) return v;
  return "triton";
}

Backend backend_from_name(std::string_view name) {
  for (const auto& [k, v] : kBackends)
    if (v == name || (name == "pytorch-compile" && k == Backend::pytorch_compile)) return k;
  throw CsvError("unknown backend '" + std::string(name) + "'");
}

std::string format_number(double v) {
  std::array<char, 64> buf{};
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw CsvError("cannot format number");
  return std::string(buf.data(), p);
}

std::string dims_json(const Bindings& dims) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : dims) j[k] = v;
  return j.dump();
}

BenchRecord make_record(std::string kernel_name, Backend backend, int level, double flop, double bytes,
                        double time_us, const Bindings& dims, std::string note) {
  Throughput t = derive_metrics(flop, bytes, time_us);
  BenchRecord r;
  r.kernel_name = std::move(kernel_name);
  r.backend = backend;
  r.level = level;
  r.flop = flop;
  r.bytes = bytes;
  r.time_us = time_us;
  r.tflops = t.tflops;
  r.bandwidth_gbps = t.bandwidth_gbps;
  r.input_dims = dims_json(dims);
  r.note = std::move(note);
  r.env_columns = capture_aibench_env();
  return r;
}

std::map<std::string, std::string> capture_aibench_env(char** envp) {
  std::map<std::string, std::string> out;
  for (char** e = envp ? envp : environ; e && *e; ++e) {
    std::string_view kv(*e);
    if (kv.rfind("AIBENCH_", 0) != 0) continue;
    auto eq = kv.find('=');
    if (eq == std::string_view::npos) continue;
    out.emplace(std::string(kv.substr(0, eq)), std::string(kv.substr(eq + 1)));
  }
  return out;
}

std::vector<std::string> columns_for(const BenchRecord& rec) {
  std::vector<std::string> cols = kFixedColumns;
  for (const auto& [k, _] : rec.env_columns) cols.push_back(k);
  return cols;
}

std::vector<std::string> row_for(const BenchRecord& rec) {
  std::vector<std::string> row = {rec.kernel_name,
                                  std::string(backend_name(rec.backend)),
                                  std::to_string(rec.level),
                                  with_marker(rec.flop, rec.flop_estimated),
                                  with_marker(rec.tflops, rec.flop_estimated),
                                  with_marker(rec.bytes, rec.bytes_estimated),
                                  with_marker(rec.bandwidth_gbps, rec.bytes_estimated),
                                  format_number(rec.time_us),
                                  rec.input_dims,
                                  rec.note};
  for (const auto& [_, v] : rec.env_columns) row.push_back(v);
  return row;
}

std::string format_csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    const std::string& f = fields[i];
    if (f.find_first_of(",\"\r\n") == std::string::npos) {
      out += f;
      continue;
    }
    out += '"';
    for (char c : f) {
      if (c == '"') out += '"';
      out += c;
    }
    out += '"';
  }
  return out;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  std::size_t i = 0;
  auto end_row = [&] {
    row.push_back(std::move(field));
    field.clear();
    rows.push_back(std::move(row));
    row.clear();
    any = false;
  };
  while (i < text.size()) {
    char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          i += 2;
          continue;
        }
        quoted = false;
      } else {
        field += c;
      }
      ++i;
      continue;
    }
    any = true;
    if (c == '"' && field.empty()) {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      end_row();
      ++i;
    } else if (c == '\n') {
      end_row();
    } else {
      field += c;
    }
    ++i;
  }
  if (quoted) throw CsvError("unterminated quoted field");
  if (any) end_row();
  return rows;
}

void log_record(const BenchRecord& rec, const std::string& path) {
  const std::string header = format_csv_row(columns_for(rec));
  const std::string existing = read_header_line(path);
  if (!existing.empty() && existing != header)
    throw CsvError("column set of '" + path + "' differs from this record: file has [" + existing + "], record has [" +
                   header + "]");
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw CsvError("cannot open '" + path + "' for appending");
  if (existing.empty()) out << header << "\n";
  out << format_csv_row(row_for(rec)) << "\n";
  out.flush();
  if (!out) throw CsvError("write to '" + path + "' failed");
}

BenchRecord record_from_row(const std::vector<std::string>& header, const std::vector<std::string>& row) {
  if (header.size() != row.size()) throw CsvError("row has " + std::to_string(row.size()) + " fields, header has " +
                                                  std::to_string(header.size()));
  if (header.size() < kFixedColumns.size() || !std::equal(kFixedColumns.begin(), kFixedColumns.end(), header.begin()))
    throw CsvError("header does not start with the fixed benchmark columns");
  BenchRecord r;
  r.kernel_name = row[0];
  r.backend = backend_from_name(row[1]);
  r.level = static_cast<int>(read_number(row[2], nullptr, "level"));
  r.flop = read_number(row[3], &r.flop_estimated, "flop");
  r.tflops = read_number(row[4], nullptr, "tflops");
  r.bytes = read_number(row[5], &r.bytes_estimated, "bytes");
  r.bandwidth_gbps = read_number(row[6], nullptr, "bandwidth_gbps");
  r.time_us = read_number(row[7], nullptr, "time_us");
  r.input_dims = row[8];
  r.note = row[9];
  for (std::size_t i = kFixedColumns.size(); i < header.size(); ++i) r.env_columns[header[i]] = row[i];
  return r;
}

std::vector<BenchRecord> read_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CsvError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  auto rows = parse_csv(ss.str());
  std::vector<BenchRecord> out;
  for (std::size_t i = 1; i < rows.size(); ++i) out.push_back(record_from_row(rows[0], rows[i]));
  return out;
}

}  // namespace kopt
