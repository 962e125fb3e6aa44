#pragma once

// Derived parallelism metrics, suite normalization for Kiviat plots and the
// report file formats.

#include "aiwc/metrics.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace aiwc::report {

inline constexpr std::string_view kReportSchema = "aiwc-report/1";
inline constexpr std::string_view kKiviatSchema = "aiwc-kiviat/1";

/// Inverse parallelism values. A value is empty when its denominator is zero.
struct DerivedMetrics {
  std::optional<double> granularity;              // 1 / work_items
  std::optional<double> barriers_per_instruction; // 1 / mean ITB
  std::optional<double> instructions_per_operand; // 1 / sum of SIMD widths
  std::uint64_t load_imbalance = 0;               // max IPT - min IPT

  friend bool operator==(const DerivedMetrics &, const DerivedMetrics &) = default;
};

DerivedMetrics derive(const metrics::AiwcReport &report);

/// A finalized report together with its derived values, as stored on disk.
struct ReportDocument {
  metrics::AiwcReport report;
  DerivedMetrics derived;
};

ReportDocument make_document(const metrics::AiwcReport &report);

enum class Format { json, csv };

/// JSON: one object with fixed key order, reals printed with 12 significant
/// digits, non-finite values as null next to a flag. CSV: header + one row.
std::string emit_report(const ReportDocument &doc, Format format);

/// Parses the JSON form. Throws SchemaMismatch naming the offending field.
ReportDocument report_from_json(std::string_view text);

/// CSV header columns in emission order.
std::vector<std::string> csv_columns();

/// Accumulator-level merge followed by finalization, so the result equals
/// finalizing the concatenated streams.
metrics::AiwcReport merge_reports(std::span<const metrics::KernelAccumulator> runs,
                                  bool allow_mixed_kernels = false,
                                  const metrics::FinalizeOptions &options = {});

// ---- Kiviat ----

enum class Category { parallelism, compute, memory, control };
std::string_view to_string(Category c);

struct Spoke {
  std::string name;
  Category category;
};

/// Spokes grouped by category, each group in metric-table order.
const std::vector<Spoke> &kiviat_spokes();

/// Raw spoke values for one report, aligned with kiviat_spokes().
std::vector<double> spoke_values(const ReportDocument &doc);

struct SuiteEntry {
  std::string id;
  ReportDocument doc;
};

struct KiviatRow {
  std::string id;
  std::string kernel;
  std::vector<double> values;
};

struct KiviatTable {
  std::vector<Spoke> metrics;
  std::vector<KiviatRow> kernels;
  std::vector<double> maxima; // +inf allowed
  /// Spokes whose suite maximum was zero; every kernel maps to 0 there.
  std::vector<std::string> zero_max;
};

/// value = raw / suite max. Infinite raws map to 1 against an infinite max
/// and finite raws to 0. Throws EmptySuite.
KiviatTable normalize_suite(std::span<const SuiteEntry> suite);

std::string kiviat_to_json(const KiviatTable &table);
KiviatTable kiviat_from_json(std::string_view text);

} // namespace aiwc::report
