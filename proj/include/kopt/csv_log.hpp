// SPDX-License-Identifier: Apache-2.0
//
// Benchmark result rows appended to a CSV file. The fixed columns come first,
// followed by one column per captured AIBENCH_* environment variable in name
// order. A file's header is written once; appending a record whose column set
// differs from the existing header is an error.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kopt/formula.hpp"

namespace kopt {

enum class Backend { pytorch, pytorch_compile, triton, helion, mlir };
std::string_view backend_name(Backend b);
Backend backend_from_name(std::string_view name);  // throws CsvError

struct BenchRecord {
  std::string kernel_name;
  Backend backend = Backend::triton;
  int level = 1;
  double flop = 0.0;
  double tflops = 0.0;
  double bytes = 0.0;
  double bandwidth_gbps = 0.0;
  double time_us = 0.0;
  bool flop_estimated = false;
  bool bytes_estimated = false;
  std::string input_dims;  // JSON object text
  std::string note;
  std::map<std::string, std::string> env_columns;
};

// Builds a record from counts and a mean time, deriving tflops and bandwidth.
BenchRecord make_record(std::string kernel_name, Backend backend, int level, double flop, double bytes,
                        double time_us, const Bindings& dims, std::string note = {});

extern const std::vector<std::string> kFixedColumns;
inline constexpr std::string_view kEstimatedMarker = " ⚠";

// Every AIBENCH_-prefixed variable in the process environment (or in `envp`).
std::map<std::string, std::string> capture_aibench_env(char** envp = nullptr);

std::string dims_json(const Bindings& dims);
// Shortest text that reads back as the same double.
std::string format_number(double v);

std::vector<std::string> columns_for(const BenchRecord& rec);
std::vector<std::string> row_for(const BenchRecord& rec);

// Appends one row, writing the header first when the file is new or empty.
void log_record(const BenchRecord& rec, const std::string& path);

std::vector<std::vector<std::string>> parse_csv(std::string_view text);
std::string format_csv_row(const std::vector<std::string>& fields);
BenchRecord record_from_row(const std::vector<std::string>& header, const std::vector<std::string>& row);
std::vector<BenchRecord> read_records(const std::string& path);

}  // namespace kopt
