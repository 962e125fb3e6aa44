#include "aiwc/cli.hpp"

#include "aiwc/buffer_init.hpp"
#include "aiwc/error.hpp"
#include "aiwc/kernel.hpp"
#include "aiwc/metrics.hpp"
#include "aiwc/report.hpp"
#include "aiwc/simulator.hpp"
#include "aiwc/trace.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <ostream>
#include <sstream>

namespace aiwc::cli {

namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string &path, const std::string &content) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw ConfigError("cannot write '" + path + "'");
  out << content;
  if (!out.flush())
    throw ConfigError("write to '" + path + "' failed");
}

trace::Dim3 parse_dims(const std::string &text, const char *what) {
  trace::Dim3 d{1, 1, 1};
  std::size_t dim = 0, start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    const std::string part =
        text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (dim == 3)
      throw ConfigError(std::string(what) + " takes at most three dimensions");
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc{} || p != part.data() + part.size() || part.empty() || v == 0)
      throw ConfigError(std::string(what) + " must be positive integers like 64 or 64,1,1; got '" +
                        text + "'");
    d[dim++] = v;
    if (comma == std::string::npos)
      break;
    start = comma + 1;
  }
  return d;
}

report::Format parse_format(const std::string &f) {
  if (f == "json")
    return report::Format::json;
  if (f == "csv")
    return report::Format::csv;
  throw ConfigError("unknown format '" + f + "' (expected json or csv)");
}

metrics::Limits limits_for(const std::optional<std::uint64_t> &mem_cap) {
  metrics::Limits limits = metrics::limits_from_env();
  if (mem_cap)
    limits.memory_cap_bytes = *mem_cap;
  return limits;
}

// Output goes to `path`, or to `out` when the path is empty or "-".
void emit(const std::string &path, const std::string &content, std::ostream &out) {
  if (path.empty() || path == "-")
    out << content;
  else
    write_file(path, content);
}

// Streams a trace file into a consumer. Violations are reported with the
// line number of the offending event.
metrics::KernelAccumulator analyze_file(const std::string &path, const metrics::Limits &limits) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ConfigError("cannot open '" + path + "'");
  metrics::Consumer consumer(limits);
  trace::read_trace(in, [&](const trace::TraceEvent &e, std::size_t line) {
    try {
      consumer.on_event(e);
    } catch (const InvalidStream &ex) {
      throw InvalidStream(path + ": line " + std::to_string(line) + ": " + ex.what());
    }
  });
  try {
    return consumer.finish();
  } catch (const InvalidStream &ex) {
    throw InvalidStream(path + ": at end of file: " + ex.what());
  }
}

struct SimulateArgs {
  std::string kernel;
  std::string global = "1";
  std::string local = "1";
  std::vector<std::string> buffers;
  std::uint64_t seed = 0;
  std::string emit_trace;
  bool analyze = false;
  std::string output;
  std::string format = "json";
  std::uint64_t step_limit = sim::kDefaultStepLimit;
  std::optional<std::uint64_t> mem_cap;
  std::uint64_t invocation = 0;
  double linear_scale = 1.0;
};

int cmd_simulate(const SimulateArgs &a, std::ostream &out) {
  if (a.emit_trace.empty() && !a.analyze)
    throw ConfigError("simulate needs --emit-trace and/or --analyze");
  const auto format = parse_format(a.format);
  const auto program = kernel::parse_kernel(read_file(a.kernel));

  sim::NDRangeConfig cfg;
  cfg.global_size = parse_dims(a.global, "--global");
  cfg.local_size = parse_dims(a.local, "--local");
  for (const auto &text : a.buffers) {
    const auto spec = sim::parse_buffer_spec(text);
    if (cfg.buffers.count(spec.name))
      throw ConfigError("buffer '" + spec.name + "' given twice");
    cfg.buffers[spec.name] = sim::make_buffer(spec, a.seed);
  }
  sim::validate_config(cfg);

  sim::SimOptions options;
  options.step_limit = a.step_limit;
  options.invocation = a.invocation;

  std::vector<trace::EventSink *> sinks;
  std::ofstream trace_out;
  std::optional<trace::TraceWriter> writer;
  if (!a.emit_trace.empty()) {
    trace_out.open(a.emit_trace, std::ios::binary);
    if (!trace_out)
      throw ConfigError("cannot write '" + a.emit_trace + "'");
    writer.emplace(trace_out);
    sinks.push_back(&*writer);
  }
  std::optional<metrics::Consumer> consumer;
  if (a.analyze) {
    consumer.emplace(limits_for(a.mem_cap));
    sinks.push_back(&*consumer);
  }
  trace::TeeSink tee(sinks);
  sim::simulate(program, cfg, tee, options);
  if (writer && !trace_out.flush())
    throw ConfigError("write to '" + a.emit_trace + "' failed");

  if (consumer) {
    const auto report =
        metrics::finalize(consumer->finish(), metrics::FinalizeOptions{a.linear_scale});
    emit(a.output, report::emit_report(report::make_document(report), format), out);
  }
  return kExitOk;
}

struct AnalyzeArgs {
  std::vector<std::string> traces;
  bool merge = false;
  bool allow_mixed = false;
  std::string output;
  std::string format = "json";
  std::optional<std::uint64_t> mem_cap;
  double linear_scale = 1.0;
};

int cmd_analyze(const AnalyzeArgs &a, std::ostream &out) {
  const auto format = parse_format(a.format);
  const auto limits = limits_for(a.mem_cap);

  // Each file runs its own single-threaded pipeline; results are gathered
  // in argument order.
  std::vector<std::future<metrics::KernelAccumulator>> jobs;
  for (const auto &path : a.traces)
    jobs.push_back(std::async(std::launch::async, analyze_file, path, limits));
  std::vector<metrics::KernelAccumulator> runs;
  for (auto &j : jobs)
    runs.push_back(j.get());

  const metrics::FinalizeOptions fo{a.linear_scale};
  const std::string ext = format == report::Format::json ? ".json" : ".csv";
  if (a.merge || runs.size() == 1) {
    const auto report = report::merge_reports(runs, a.allow_mixed, fo);
    emit(a.output, report::emit_report(report::make_document(report), format), out);
    return kExitOk;
  }
  if (a.output.empty() || a.output == "-") {
    for (const auto &run : runs)
      out << report::emit_report(report::make_document(metrics::finalize(run, fo)), format);
    return kExitOk;
  }
  fs::create_directories(a.output);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto name = fs::path(a.traces[i]).stem().string() + ext;
    write_file((fs::path(a.output) / name).string(),
               report::emit_report(report::make_document(metrics::finalize(runs[i], fo)), format));
  }
  return kExitOk;
}

int cmd_compare(const std::vector<std::string> &reports, const std::string &output,
                std::ostream &out) {
  std::vector<report::SuiteEntry> suite;
  for (const auto &path : reports) {
    try {
      suite.push_back({fs::path(path).stem().string(), report::report_from_json(read_file(path))});
    } catch (const SchemaMismatch &e) {
      throw SchemaMismatch(path + ": " + e.what());
    }
  }
  emit(output, report::kiviat_to_json(report::normalize_suite(suite)), out);
  return kExitOk;
}

int cmd_validate(const std::vector<std::string> &traces, std::ostream &out) {
  bool all_ok = true;
  for (const auto &path : traces) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
      throw ConfigError("cannot open '" + path + "'");
    trace::StreamValidator validator;
    std::vector<std::size_t> lines;
    trace::read_trace(in, [&](const trace::TraceEvent &e, std::size_t line) {
      lines.push_back(line);
      validator.observe(e);
    });
    const auto report = validator.finish();
    if (report.ok()) {
      out << path << ": ok (" << lines.size() << " events)\n";
      continue;
    }
    all_ok = false;
    for (const auto &v : report.violations) {
      out << path << ":";
      if (v.event_index < lines.size())
        out << lines[v.event_index] << ":";
      else
        out << "end:";
      out << " " << trace::to_string(v.rule) << ": " << v.detail << "\n";
    }
  }
  return all_ok ? kExitOk : kExitInput;
}

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Architecture-independent workload characterization of data-parallel kernels",
               "aiwc"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "aiwc 1.0");

  SimulateArgs sa;
  auto *simulate = app.add_subcommand("simulate", "Run a kernel and trace and/or analyze it");
  simulate->add_option("kernel", sa.kernel, "Kernel file (.aiwck)")->required();
  simulate->add_option("--global", sa.global, "Global size, e.g. 64 or 64,1,1");
  simulate->add_option("--local", sa.local, "Work-group size, e.g. 16 or 16,1,1");
  simulate->add_option("--buf", sa.buffers,
                       "Buffer initializer name=kind[:param][:n=N][:seed=S][:base=B]; "
                       "kinds: zeros, iota, const:V, bernoulli:P[:pack=K], file:PATH");
  simulate->add_option("--seed", sa.seed, "Default seed for random buffers");
  simulate->add_option("--emit-trace", sa.emit_trace, "Write the event trace here");
  simulate->add_flag("--analyze", sa.analyze, "Compute the metric report in-process");
  simulate->add_option("-o,--output", sa.output, "Report path (default stdout)");
  simulate->add_option("--format", sa.format, "json or csv");
  simulate->add_option("--step-limit", sa.step_limit, "Maximum executed instructions");
  simulate->add_option("--mem-cap", sa.mem_cap, "Metric memory cap in bytes");
  simulate->add_option("--invocation", sa.invocation, "Invocation number recorded in the trace");
  simulate->add_option("--linear-scale", sa.linear_scale,
                       "Multiplier for linear branch entropy (1 or 2)");

  AnalyzeArgs aa;
  auto *analyze = app.add_subcommand("analyze", "Compute metric reports from trace files");
  analyze->add_option("traces", aa.traces, "Trace files (.aiwctrace)")->required();
  analyze->add_flag("--merge", aa.merge, "Sum all traces into one report");
  analyze->add_flag("--allow-mixed", aa.allow_mixed, "Permit merging different kernels");
  analyze->add_option("-o,--output", aa.output,
                      "Report path, or a directory when several unmerged traces are given");
  analyze->add_option("--format", aa.format, "json or csv");
  analyze->add_option("--mem-cap", aa.mem_cap, "Metric memory cap in bytes");
  analyze->add_option("--linear-scale", aa.linear_scale,
                      "Multiplier for linear branch entropy (1 or 2)");

  std::vector<std::string> compare_inputs;
  std::string compare_output;
  auto *compare = app.add_subcommand("compare", "Normalize reports into a Kiviat table");
  compare->add_option("reports", compare_inputs, "Report JSON files")->required();
  compare->add_option("-o,--output", compare_output, "Kiviat JSON path (default stdout)");

  std::vector<std::string> validate_inputs;
  auto *validate = app.add_subcommand("validate", "Check trace files against the stream rules");
  validate->add_option("traces", validate_inputs, "Trace files")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*simulate)
      return cmd_simulate(sa, out);
    if (*analyze)
      return cmd_analyze(aa, out);
    if (*compare)
      return cmd_compare(compare_inputs, compare_output, out);
    return cmd_validate(validate_inputs, out);
  } catch (const KernelParseError &e) {
    err << "aiwc: kernel parse error: " << e.what() << "\n";
    return kExitInput;
  } catch (const SimulationFault &e) {
    err << "aiwc: simulation fault: " << e.what() << "\n";
    return kExitFault;
  } catch (const CapExceeded &e) {
    err << "aiwc: limit exceeded: " << e.what() << "\n";
    return kExitCap;
  } catch (const MalformedEvent &e) {
    err << "aiwc: malformed trace: " << e.what() << "\n";
    return kExitInput;
  } catch (const InvalidStream &e) {
    err << "aiwc: invalid trace: " << e.what() << "\n";
    return kExitInput;
  } catch (const SchemaMismatch &e) {
    err << "aiwc: schema mismatch: " << e.what() << "\n";
    return kExitInput;
  } catch (const Error &e) {
    err << "aiwc: error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception &e) {
    err << "aiwc: internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

} // namespace aiwc::cli
