#include "aiwc/report.hpp"

#include "aiwc/error.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <limits>
#include <variant>

namespace aiwc::report {

using metrics::AiwcReport;
using nlohmann::json;

DerivedMetrics derive(const AiwcReport &r) {
  DerivedMetrics d;
  if (r.work_items > 0)
    d.granularity = 1.0 / static_cast<double>(r.work_items);
  if (r.mean_itb > 0.0)
    d.barriers_per_instruction = 1.0 / r.mean_itb;
  if (r.simd_width_sum > 0)
    d.instructions_per_operand = 1.0 / static_cast<double>(r.simd_width_sum);
  d.load_imbalance = r.max_ipt - r.min_ipt;
  return d;
}

ReportDocument make_document(const AiwcReport &report) { return {report, derive(report)}; }

// ---------------------------------------------------------------------------
// Field tables shared by the JSON and CSV encoders and the decoder.

namespace {

using U64Field = std::uint64_t AiwcReport::*;
using RealField = double AiwcReport::*;
struct LmaeField {};
using FieldRef = std::variant<U64Field, RealField, LmaeField>;

struct MetricField {
  const char *name;
  FieldRef ref;
};

// Metric-table order.
const std::vector<MetricField> &metric_fields() {
  static const std::vector<MetricField> fields = {
      {"opcode", &AiwcReport::opcode},
      {"total_instruction_count", &AiwcReport::total_instruction_count},
      {"work_items", &AiwcReport::work_items},
      {"total_barriers_hit", &AiwcReport::total_barriers_hit},
      {"min_itb", &AiwcReport::min_itb},
      {"max_itb", &AiwcReport::max_itb},
      {"median_itb", &AiwcReport::median_itb},
      {"min_ipt", &AiwcReport::min_ipt},
      {"max_ipt", &AiwcReport::max_ipt},
      {"median_ipt", &AiwcReport::median_ipt},
      {"max_simd_width", &AiwcReport::max_simd_width},
      {"mean_simd_width", &AiwcReport::mean_simd_width},
      {"sd_simd_width", &AiwcReport::sd_simd_width},
      {"total_memory_footprint", &AiwcReport::total_memory_footprint},
      {"footprint_90", &AiwcReport::footprint_90},
      {"unique_reads", &AiwcReport::unique_reads},
      {"unique_writes", &AiwcReport::unique_writes},
      {"unique_rw_ratio", &AiwcReport::unique_rw_ratio},
      {"total_reads", &AiwcReport::total_reads},
      {"total_writes", &AiwcReport::total_writes},
      {"reread_ratio", &AiwcReport::reread_ratio},
      {"rewrite_ratio", &AiwcReport::rewrite_ratio},
      {"gmae", &AiwcReport::gmae},
      {"lmae", LmaeField{}},
      {"total_unique_branch_instructions", &AiwcReport::total_unique_branch_instructions},
      {"branch_90", &AiwcReport::branch_90},
      {"yokota_entropy", &AiwcReport::yokota_entropy},
      {"linear_entropy", &AiwcReport::linear_entropy},
  };
  return fields;
}

using BoolFlag = bool metrics::ReportFlags::*;
const std::vector<std::pair<const char *, BoolFlag>> &bool_flags() {
  static const std::vector<std::pair<const char *, BoolFlag>> flags = {
      {"no_branches", &metrics::ReportFlags::no_branches},
      {"warmup_excessive", &metrics::ReportFlags::warmup_excessive},
      {"unique_rw_ratio_infinite", &metrics::ReportFlags::unique_rw_ratio_infinite},
      {"no_reads", &metrics::ReportFlags::no_reads},
      {"no_writes", &metrics::ReportFlags::no_writes},
      {"no_memory", &metrics::ReportFlags::no_memory},
      {"no_itb_samples", &metrics::ReportFlags::no_itb_samples},
  };
  return flags;
}

using DerivedField = std::optional<double> DerivedMetrics::*;
const std::vector<std::pair<const char *, DerivedField>> &derived_fields() {
  static const std::vector<std::pair<const char *, DerivedField>> fields = {
      {"granularity", &DerivedMetrics::granularity},
      {"barriers_per_instruction", &DerivedMetrics::barriers_per_instruction},
      {"instructions_per_operand", &DerivedMetrics::instructions_per_operand},
  };
  return fields;
}

std::string real(double v) {
  if (!std::isfinite(v))
    return "null";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string real_csv(double v) { return std::isfinite(v) ? real(v) : std::string(); }

std::string quoted(const std::string &s) { return json(s).dump(); }

std::string lmae_array(const std::array<double, entropy::kMaxSkip> &a) {
  std::string out = "[";
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i)
      out += ", ";
    out += real(a[i]);
  }
  return out + "]";
}

// Writes `"key": value` lines with consistent separators.
class ObjectWriter {
public:
  ObjectWriter(std::string &out, int indent) : out_(out), pad_(indent, ' ') { out_ += "{\n"; }
  void field(const std::string &key, const std::string &raw_value) {
    if (!first_)
      out_ += ",\n";
    first_ = false;
    out_ += pad_ + "  " + quoted(key) + ": " + raw_value;
  }
  void close() { out_ += "\n" + pad_ + "}"; }

private:
  std::string &out_;
  std::string pad_;
  bool first_ = true;
};

std::string emit_json(const ReportDocument &doc) {
  const AiwcReport &r = doc.report;
  std::string out;
  ObjectWriter top(out, 0);
  top.field("schema", quoted(std::string(kReportSchema)));
  top.field("kernel", quoted(r.kernel));
  {
    std::string inv = "[";
    for (std::size_t i = 0; i < r.invocations.size(); ++i)
      inv += (i ? ", " : "") + std::to_string(r.invocations[i]);
    top.field("invocations", inv + "]");
  }

  std::string body;
  ObjectWriter m(body, 2);
  for (const auto &f : metric_fields()) {
    std::visit(
        [&](auto ref) {
          using T = decltype(ref);
          if constexpr (std::is_same_v<T, U64Field>)
            m.field(f.name, std::to_string(r.*ref));
          else if constexpr (std::is_same_v<T, RealField>)
            m.field(f.name, real(r.*ref));
          else
            m.field(f.name, lmae_array(r.lmae));
        },
        f.ref);
  }
  m.close();
  top.field("metrics", body);

  body.clear();
  ObjectWriter d(body, 2);
  for (const auto &[name, ref] : derived_fields()) {
    const auto &v = doc.derived.*ref;
    d.field(name, v ? real(*v) : "null");
  }
  d.field("load_imbalance", std::to_string(doc.derived.load_imbalance));
  d.close();
  top.field("derived", body);

  body.clear();
  ObjectWriter a(body, 2);
  a.field("mean_itb", real(r.mean_itb));
  a.field("itb_sample_count", std::to_string(r.itb_sample_count));
  a.field("simd_width_sum", std::to_string(r.simd_width_sum));
  {
    std::string per = "[";
    for (std::size_t i = 0; i < r.lmae_per_invocation.size(); ++i)
      per += (i ? ", " : "") + lmae_array(r.lmae_per_invocation[i]);
    a.field("lmae_per_invocation", per + "]");
  }
  a.close();
  top.field("auxiliary", body);

  body.clear();
  ObjectWriter fl(body, 2);
  for (const auto &[name, ref] : bool_flags())
    fl.field(name, r.flags.*ref ? "true" : "false");
  fl.field("warmup_excluded_fraction", real(r.flags.warmup_excluded_fraction));
  for (const auto &[name, ref] : derived_fields())
    fl.field(std::string(name) + "_undefined", (doc.derived.*ref) ? "false" : "true");
  fl.close();
  top.field("flags", body);
  top.close();
  out += "\n";
  return out;
}

std::vector<std::string> set_flags(const ReportDocument &doc) {
  std::vector<std::string> out;
  for (const auto &[name, ref] : bool_flags())
    if (doc.report.flags.*ref)
      out.emplace_back(name);
  for (const auto &[name, ref] : derived_fields())
    if (!(doc.derived.*ref))
      out.push_back(std::string(name) + "_undefined");
  return out;
}

std::string csv_escape(const std::string &s) {
  if (s.find_first_of(",\"\n") == std::string::npos)
    return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"')
      out += '"';
    out += c;
  }
  return out + "\"";
}

std::string emit_csv(const ReportDocument &doc) {
  const AiwcReport &r = doc.report;
  const auto columns = csv_columns();
  std::vector<std::string> row;
  row.push_back(csv_escape(r.kernel));
  for (const auto &f : metric_fields()) {
    std::visit(
        [&](auto ref) {
          using T = decltype(ref);
          if constexpr (std::is_same_v<T, U64Field>)
            row.push_back(std::to_string(r.*ref));
          else if constexpr (std::is_same_v<T, RealField>)
            row.push_back(real_csv(r.*ref));
          else
            for (double v : r.lmae)
              row.push_back(real_csv(v));
        },
        f.ref);
  }
  for (const auto &[name, ref] : derived_fields()) {
    const auto &v = doc.derived.*ref;
    row.push_back(v ? real_csv(*v) : std::string());
  }
  row.push_back(std::to_string(doc.derived.load_imbalance));
  std::string flags;
  for (const auto &f : set_flags(doc))
    flags += (flags.empty() ? "" : ";") + f;
  row.push_back(flags);

  std::string out;
  for (std::size_t i = 0; i < columns.size(); ++i)
    out += (i ? "," : "") + columns[i];
  out += "\n";
  for (std::size_t i = 0; i < row.size(); ++i)
    out += (i ? "," : "") + row[i];
  out += "\n";
  return out;
}

// ---- decoding ----

[[noreturn]] void mismatch(const std::string &path, const std::string &what) {
  throw SchemaMismatch(path + ": " + what);
}

const json &member(const json &obj, const std::string &key, const std::string &path) {
  if (!obj.is_object())
    mismatch(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end())
    mismatch(path + "." + key, "missing");
  return *it;
}

std::uint64_t as_u64(const json &v, const std::string &path) {
  if (!v.is_number_unsigned())
    mismatch(path, "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

double as_real(const json &v, const std::string &path, bool nullable, double null_value) {
  if (v.is_null()) {
    if (!nullable)
      mismatch(path, "null not allowed");
    return null_value;
  }
  if (!v.is_number())
    mismatch(path, "expected a number");
  return v.get<double>();
}

bool as_bool(const json &v, const std::string &path) {
  if (!v.is_boolean())
    mismatch(path, "expected a boolean");
  return v.get<bool>();
}

std::array<double, entropy::kMaxSkip> as_lmae(const json &v, const std::string &path) {
  if (!v.is_array() || v.size() != entropy::kMaxSkip)
    mismatch(path, "expected an array of 10 numbers");
  std::array<double, entropy::kMaxSkip> out{};
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = as_real(v[i], path + "[" + std::to_string(i) + "]", false, 0.0);
  return out;
}

json parse_json(std::string_view text) {
  json j = json::parse(text.begin(), text.end(), nullptr, false);
  if (j.is_discarded())
    mismatch("$", "not valid JSON");
  return j;
}

void check_schema(const json &j, std::string_view expected) {
  const json &s = member(j, "schema", "$");
  if (!s.is_string() || s.get<std::string>() != expected)
    mismatch("$.schema", "expected \"" + std::string(expected) + "\", got " + s.dump());
}

} // namespace

std::vector<std::string> csv_columns() {
  std::vector<std::string> cols{"kernel"};
  for (const auto &f : metric_fields()) {
    if (std::holds_alternative<LmaeField>(f.ref))
      for (int n = 1; n <= entropy::kMaxSkip; ++n)
        cols.push_back("lmae_skip" + std::to_string(n));
    else
      cols.emplace_back(f.name);
  }
  for (const auto &[name, ref] : derived_fields())
    cols.emplace_back(name);
  cols.emplace_back("load_imbalance");
  cols.emplace_back("flags");
  return cols;
}

std::string emit_report(const ReportDocument &doc, Format format) {
  return format == Format::json ? emit_json(doc) : emit_csv(doc);
}

ReportDocument report_from_json(std::string_view text) {
  const json j = parse_json(text);
  check_schema(j, kReportSchema);
  ReportDocument doc;
  AiwcReport &r = doc.report;

  const json &kernel = member(j, "kernel", "$");
  if (!kernel.is_string())
    mismatch("$.kernel", "expected a string");
  r.kernel = kernel.get<std::string>();
  const json &inv = member(j, "invocations", "$");
  if (!inv.is_array())
    mismatch("$.invocations", "expected an array");
  for (std::size_t i = 0; i < inv.size(); ++i)
    r.invocations.push_back(as_u64(inv[i], "$.invocations[" + std::to_string(i) + "]"));

  const json &flags = member(j, "flags", "$");
  for (const auto &[name, ref] : bool_flags())
    r.flags.*ref = as_bool(member(flags, name, "$.flags"), std::string("$.flags.") + name);
  r.flags.warmup_excluded_fraction = as_real(member(flags, "warmup_excluded_fraction", "$.flags"),
                                             "$.flags.warmup_excluded_fraction", false, 0.0);

  const json &m = member(j, "metrics", "$");
  for (const auto &f : metric_fields()) {
    const std::string path = std::string("$.metrics.") + f.name;
    const json &v = member(m, f.name, "$.metrics");
    std::visit(
        [&](auto ref) {
          using T = decltype(ref);
          if constexpr (std::is_same_v<T, U64Field>) {
            r.*ref = as_u64(v, path);
          } else if constexpr (std::is_same_v<T, RealField>) {
            const bool inf_ok = ref == &AiwcReport::unique_rw_ratio && r.flags.unique_rw_ratio_infinite;
            r.*ref = as_real(v, path, inf_ok, std::numeric_limits<double>::infinity());
          } else {
            r.lmae = as_lmae(v, path);
          }
        },
        f.ref);
  }

  const json &d = member(j, "derived", "$");
  for (const auto &[name, ref] : derived_fields()) {
    const json &v = member(d, name, "$.derived");
    if (v.is_null())
      doc.derived.*ref = std::nullopt;
    else
      doc.derived.*ref = as_real(v, std::string("$.derived.") + name, false, 0.0);
  }
  doc.derived.load_imbalance =
      as_u64(member(d, "load_imbalance", "$.derived"), "$.derived.load_imbalance");

  const json &a = member(j, "auxiliary", "$");
  r.mean_itb = as_real(member(a, "mean_itb", "$.auxiliary"), "$.auxiliary.mean_itb", false, 0.0);
  r.itb_sample_count =
      as_u64(member(a, "itb_sample_count", "$.auxiliary"), "$.auxiliary.itb_sample_count");
  r.simd_width_sum =
      as_u64(member(a, "simd_width_sum", "$.auxiliary"), "$.auxiliary.simd_width_sum");
  const json &per = member(a, "lmae_per_invocation", "$.auxiliary");
  if (!per.is_array())
    mismatch("$.auxiliary.lmae_per_invocation", "expected an array");
  for (std::size_t i = 0; i < per.size(); ++i)
    r.lmae_per_invocation.push_back(
        as_lmae(per[i], "$.auxiliary.lmae_per_invocation[" + std::to_string(i) + "]"));
  return doc;
}

metrics::AiwcReport merge_reports(std::span<const metrics::KernelAccumulator> runs,
                                  bool allow_mixed_kernels,
                                  const metrics::FinalizeOptions &options) {
  if (runs.empty())
    throw EmptySuite();
  metrics::KernelAccumulator merged = runs.front();
  for (std::size_t i = 1; i < runs.size(); ++i)
    merged.merge(runs[i], allow_mixed_kernels);
  return metrics::finalize(merged, options);
}

// ---------------------------------------------------------------------------
// Kiviat

std::string_view to_string(Category c) {
  switch (c) {
  case Category::parallelism:
    return "parallelism";
  case Category::compute:
    return "compute";
  case Category::memory:
    return "memory";
  case Category::control:
    return "control";
  }
  return "?";
}

namespace {

std::optional<Category> category_from(std::string_view s) {
  for (auto c : {Category::parallelism, Category::compute, Category::memory, Category::control})
    if (to_string(c) == s)
      return c;
  return std::nullopt;
}

} // namespace

const std::vector<Spoke> &kiviat_spokes() {
  static const std::vector<Spoke> spokes = [] {
    std::vector<Spoke> s{
        {"granularity", Category::parallelism},
        {"barriers_per_instruction", Category::parallelism},
        {"load_imbalance", Category::parallelism},
        {"instructions_per_operand", Category::parallelism},
        {"opcode", Category::compute},
        {"total_instruction_count", Category::compute},
    };
    for (const char *name :
         {"total_memory_footprint", "footprint_90", "unique_reads", "unique_writes",
          "unique_rw_ratio", "total_reads", "total_writes", "reread_ratio", "rewrite_ratio",
          "gmae"})
      s.push_back({name, Category::memory});
    for (int n = 1; n <= entropy::kMaxSkip; ++n)
      s.push_back({"lmae_skip" + std::to_string(n), Category::memory});
    for (const char *name :
         {"total_unique_branch_instructions", "branch_90", "yokota_entropy", "linear_entropy"})
      s.push_back({name, Category::control});
    return s;
  }();
  return spokes;
}

std::vector<double> spoke_values(const ReportDocument &doc) {
  const AiwcReport &r = doc.report;
  const DerivedMetrics &d = doc.derived;
  auto u = [](std::uint64_t v) { return static_cast<double>(v); };
  std::vector<double> v{
      d.granularity.value_or(0.0),
      d.barriers_per_instruction.value_or(0.0),
      u(d.load_imbalance),
      d.instructions_per_operand.value_or(0.0),
      u(r.opcode),
      u(r.total_instruction_count),
      u(r.total_memory_footprint),
      u(r.footprint_90),
      u(r.unique_reads),
      u(r.unique_writes),
      r.flags.unique_rw_ratio_infinite ? std::numeric_limits<double>::infinity()
                                       : r.unique_rw_ratio,
      u(r.total_reads),
      u(r.total_writes),
      r.reread_ratio,
      r.rewrite_ratio,
      r.gmae,
  };
  v.insert(v.end(), r.lmae.begin(), r.lmae.end());
  v.insert(v.end(), {u(r.total_unique_branch_instructions), u(r.branch_90), r.yokota_entropy,
                     r.linear_entropy});
  return v;
}

KiviatTable normalize_suite(std::span<const SuiteEntry> suite) {
  if (suite.empty())
    throw EmptySuite();
  KiviatTable t;
  t.metrics = kiviat_spokes();
  const std::size_t n = t.metrics.size();
  std::vector<std::vector<double>> raw;
  for (const auto &e : suite)
    raw.push_back(spoke_values(e.doc));
  t.maxima.assign(n, 0.0);
  for (const auto &row : raw)
    for (std::size_t k = 0; k < n; ++k)
      t.maxima[k] = std::max(t.maxima[k], row[k]);
  for (std::size_t k = 0; k < n; ++k)
    if (t.maxima[k] == 0.0)
      t.zero_max.push_back(t.metrics[k].name);
  for (std::size_t i = 0; i < suite.size(); ++i) {
    KiviatRow row{suite[i].id, suite[i].doc.report.kernel, std::vector<double>(n, 0.0)};
    for (std::size_t k = 0; k < n; ++k) {
      const double x = raw[i][k], mx = t.maxima[k];
      if (mx == 0.0)
        row.values[k] = 0.0;
      else if (std::isinf(mx))
        row.values[k] = std::isinf(x) ? 1.0 : 0.0;
      else
        row.values[k] = x / mx;
    }
    t.kernels.push_back(std::move(row));
  }
  return t;
}

std::string kiviat_to_json(const KiviatTable &t) {
  std::string out = "{\n  \"schema\": " + quoted(std::string(kKiviatSchema)) + ",\n";
  out += "  \"metrics\": [\n";
  for (std::size_t i = 0; i < t.metrics.size(); ++i)
    out += "    {\"name\": " + quoted(t.metrics[i].name) + ", \"category\": \"" +
           std::string(to_string(t.metrics[i].category)) + "\"}" +
           (i + 1 < t.metrics.size() ? ",\n" : "\n");
  out += "  ],\n  \"kernels\": [\n";
  for (std::size_t i = 0; i < t.kernels.size(); ++i) {
    const auto &row = t.kernels[i];
    out += "    {\"id\": " + quoted(row.id) + ", \"kernel\": " + quoted(row.kernel) +
           ", \"values\": [";
    for (std::size_t k = 0; k < row.values.size(); ++k)
      out += (k ? ", " : "") + real(row.values[k]);
    out += std::string("]}") + (i + 1 < t.kernels.size() ? ",\n" : "\n");
  }
  out += "  ],\n  \"maxima\": [";
  for (std::size_t k = 0; k < t.maxima.size(); ++k)
    out += (k ? ", " : "") + real(t.maxima[k]);
  out += "],\n  \"flags\": {\"zero_max\": [";
  for (std::size_t k = 0; k < t.zero_max.size(); ++k)
    out += (k ? ", " : "") + quoted(t.zero_max[k]);
  out += "]}\n}\n";
  return out;
}

KiviatTable kiviat_from_json(std::string_view text) {
  const json j = parse_json(text);
  check_schema(j, kKiviatSchema);
  KiviatTable t;
  const json &metrics = member(j, "metrics", "$");
  if (!metrics.is_array())
    mismatch("$.metrics", "expected an array");
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    const std::string path = "$.metrics[" + std::to_string(i) + "]";
    const json &name = member(metrics[i], "name", path);
    const json &cat = member(metrics[i], "category", path);
    if (!name.is_string())
      mismatch(path + ".name", "expected a string");
    auto c = cat.is_string() ? category_from(cat.get<std::string>()) : std::nullopt;
    if (!c)
      mismatch(path + ".category", "unknown category");
    t.metrics.push_back({name.get<std::string>(), *c});
  }
  const json &kernels = member(j, "kernels", "$");
  if (!kernels.is_array())
    mismatch("$.kernels", "expected an array");
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    const std::string path = "$.kernels[" + std::to_string(i) + "]";
    KiviatRow row;
    const json &id = member(kernels[i], "id", path);
    const json &kernel = member(kernels[i], "kernel", path);
    if (!id.is_string() || !kernel.is_string())
      mismatch(path, "id and kernel must be strings");
    row.id = id.get<std::string>();
    row.kernel = kernel.get<std::string>();
    const json &values = member(kernels[i], "values", path);
    if (!values.is_array() || values.size() != t.metrics.size())
      mismatch(path + ".values", "expected one value per metric");
    for (std::size_t k = 0; k < values.size(); ++k)
      row.values.push_back(
          as_real(values[k], path + ".values[" + std::to_string(k) + "]", false, 0.0));
    t.kernels.push_back(std::move(row));
  }
  const json &maxima = member(j, "maxima", "$");
  if (!maxima.is_array() || maxima.size() != t.metrics.size())
    mismatch("$.maxima", "expected one value per metric");
  for (std::size_t k = 0; k < maxima.size(); ++k)
    t.maxima.push_back(as_real(maxima[k], "$.maxima[" + std::to_string(k) + "]", true,
                               std::numeric_limits<double>::infinity()));
  const json &zm = member(member(j, "flags", "$"), "zero_max", "$.flags");
  if (!zm.is_array())
    mismatch("$.flags.zero_max", "expected an array");
  for (const auto &z : zm) {
    if (!z.is_string())
      mismatch("$.flags.zero_max", "expected strings");
    t.zero_max.push_back(z.get<std::string>());
  }
  return t;
}

} // namespace aiwc::report
