// tmimi: weight generation, decoding, latency benchmark and precision sweep.
//
// Exit codes: 0 success, 1 usage, 2 data/validation, 3 I/O.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#ifdef __linux__
#include <sched.h>
#endif

#include "tmimi/bench.hpp"
#include "tmimi/frames_io.hpp"
#include "tmimi/report_json.hpp"
#include "tmimi/wav.hpp"
#include "tmimi/weight_store.hpp"

namespace {

using tmimi::Error;
using tmimi::ErrorKind;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitIo = 3;

// A plan string given on the command line is a usage error when malformed.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

tmimi::PrecisionPlan parse_plan_flag(const std::string& text) {
  try {
    return tmimi::PrecisionPlan::parse(text);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

tmimi::DecoderConfig resolve_config(const std::string& spec) {
  if (std::filesystem::exists(spec)) {
    std::ifstream in(spec);
    if (!in) tmimi::fail(ErrorKind::Io, "cannot open " + spec);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      tmimi::fail(ErrorKind::Format, "config file " + spec + ": " + e.what());
    }
    return tmimi::config_from_json(j);
  }
  try {
    return tmimi::preset(spec);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string millions(std::uint64_t n) { return fixed(static_cast<double>(n) / 1e6, 1) + "M"; }

// Frames from --frames PATH, or --random N frames of tokens drawn from --seed.
struct FrameSource {
  std::string path;
  std::size_t random = 0;
  std::uint64_t seed = 0;

  void add_options(CLI::App* cmd, std::size_t default_random) {
    random = default_random;
    auto* f = cmd->add_option("--frames", path, "TMFR frames file");
    cmd->add_option("--random", random, "generate N random token frames instead of reading --frames")->excludes(f);
    cmd->add_option("--frame-seed", seed, "seed for --random frames");
  }

  std::vector<tmimi::FrameInput> load(const tmimi::DecoderConfig& c) const {
    if (!path.empty()) return tmimi::read_frames(path, c);
    if (random == 0) throw UsageError("need --frames PATH or --random N");
    return tmimi::random_frames(c, random, seed);
  }
};

void print_config(const tmimi::DecoderConfig& c) {
  std::cout << "layers            " << c.num_layers << "\n"
            << "model_dim         " << c.model_dim << "\n"
            << "ffn_dim           " << c.ffn_dim << "\n"
            << "heads             " << c.num_heads << "\n"
            << "attention_window  " << c.attention_window << " frames\n"
            << "head_hidden_dim   " << c.head_hidden_dim << "\n"
            << "samples/frame     " << c.samples_per_frame << " (" << c.sample_rate << " Hz / " << c.frame_rate
            << " Hz)\n"
            << "codebooks         " << c.num_codebooks << " x " << c.codebook_size << "\n";
}

int cmd_init_weights(const std::string& config_spec, std::uint64_t seed, const std::string& plan_text,
                     const std::string& out) {
  const tmimi::DecoderConfig c = resolve_config(config_spec);
  const tmimi::PrecisionPlan plan =
      plan_text.empty() ? tmimi::PrecisionPlan::uniform(c.num_layers, tmimi::QuantScheme::fp32()) : parse_plan_flag(plan_text);
  try {
    plan.validate(c);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const auto weights = tmimi::init_random(c, seed);
  tmimi::save(weights, plan, out);
  std::cout << "params ≈ " << millions(tmimi::param_count(c)) << " (" << tmimi::param_count(c) << ", embeddings "
            << tmimi::embedding_param_count(c) << " more)\n"
            << "plan " << plan.to_string() << "\n"
            << "storage " << fixed(tmimi::to_mb(tmimi::storage_bytes(plan, c)), 1) << " MB (fp32 "
            << fixed(tmimi::to_mb(tmimi::storage_bytes(tmimi::PrecisionPlan::uniform(c.num_layers, tmimi::QuantScheme::fp32()), c)), 1)
            << " MB)\n"
            << "wrote " << out << " (" << std::filesystem::file_size(out) << " bytes)\n";
  return 0;
}

int cmd_make_frames(const std::string& config_spec, const std::string& weights_path, std::size_t n, std::uint64_t seed,
                    const std::string& out) {
  const tmimi::DecoderConfig c = weights_path.empty() ? resolve_config(config_spec) : tmimi::load(weights_path).weights.config;
  if (n == 0) throw UsageError("--random must be at least 1");
  tmimi::write_frames(out, tmimi::random_frames(c, n, seed), c);
  std::cout << "wrote " << n << " frames to " << out << "\n";
  return 0;
}

int cmd_decode(const std::string& weights_path, const FrameSource& source, const std::string& plan_text,
               const std::string& out) {
  const auto loaded = tmimi::load(weights_path);
  const auto& c = loaded.weights.config;
  const tmimi::PrecisionPlan plan = plan_text.empty() ? loaded.plan : parse_plan_flag(plan_text);
  const auto frames = source.load(c);
  if (frames.empty()) tmimi::fail(ErrorKind::Format, "frames file holds no frames");
  auto state = tmimi::new_stream(loaded.weights, plan);
  const auto samples = tmimi::decode_streaming(state, frames);
  tmimi::write_wav(out, samples, c.sample_rate);
  std::cout << "decoded " << frames.size() << " frames -> " << samples.size() << " samples (" << out << ")\n";
  return 0;
}

void pin_to_core(int core) {
#ifdef __linux__
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(core, &set);
  if (sched_setaffinity(0, sizeof(set), &set) != 0) std::cerr << "warning: could not pin to core " << core << "\n";
#else
  (void)core;
  std::cerr << "warning: core pinning is only supported on Linux\n";
#endif
}

int cmd_stream_bench(const std::string& weights_path, const std::string& config_spec, std::uint64_t weight_seed,
                     const std::string& plan_text, const tmimi::BenchOptions& opt, bool json, int pin_core) {
  tmimi::DecoderWeights weights;
  tmimi::PrecisionPlan plan;
  if (!weights_path.empty()) {
    auto loaded = tmimi::load(weights_path);
    weights = std::move(loaded.weights);
    plan = loaded.plan;
  } else {
    weights = tmimi::init_random(resolve_config(config_spec), weight_seed);
    plan = tmimi::PrecisionPlan::uniform(weights.config.num_layers, tmimi::QuantScheme::fp32());
  }
  if (!plan_text.empty()) plan = parse_plan_flag(plan_text);
  if (pin_core >= 0) pin_to_core(pin_core);
  const auto r = tmimi::run_stream_bench(weights, plan, opt);
  if (json) {
    std::cout << tmimi::to_json(r).dump(2) << "\n";
    return 0;
  }
  std::cout << "head              " << r.head << (r.head == "deconv" ? " (context " + std::to_string(r.context_frames) + ")" : "")
            << "\nplan              " << r.plan << "\nchunks            " << r.chunks << " (+" << r.warmup
            << " warmup discarded)\nlatency mean      " << fixed(r.mean_ms, 3) << " ms\nlatency p50/95/99  "
            << fixed(r.p50_ms, 3) << " / " << fixed(r.p95_ms, 3) << " / " << fixed(r.p99_ms, 3)
            << " ms\nreal-time factor  " << fixed(r.real_time_factor, 4) << " (chunk " << fixed(r.chunk_ms, 1)
            << " ms)\nMACs per frame    " << r.flops_per_frame << "\nparams            " << millions(r.params)
            << "\nstorage           " << fixed(tmimi::to_mb(r.storage_bytes), 1) << " MB\n";
  return 0;
}

std::vector<tmimi::PrecisionPlan> load_plans(const std::string& spec, std::size_t num_layers) {
  if (spec == "builtin-table2") return tmimi::builtin_table2_plans(num_layers);
  std::ifstream in(spec);
  if (!in) tmimi::fail(ErrorKind::Io, "cannot open plans file " + spec);
  std::vector<tmimi::PrecisionPlan> plans;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    plans.push_back(tmimi::PrecisionPlan::parse(line.substr(first, last - first + 1)));
  }
  if (plans.empty()) tmimi::fail(ErrorKind::Format, "plans file " + spec + " lists no plans");
  return plans;
}

int cmd_quant_sweep(const std::string& weights_path, const std::string& plans_spec, const FrameSource& source, bool json) {
  const auto loaded = tmimi::load(weights_path);
  const auto& c = loaded.weights.config;
  const auto plans = load_plans(plans_spec, c.num_layers);
  const auto frames = source.load(c);
  if (frames.empty()) tmimi::fail(ErrorKind::Format, "frames file holds no frames");
  const auto r = tmimi::run_quant_sweep(loaded.weights, plans, frames);
  if (json) {
    std::cout << tmimi::to_json(r).dump(2) << "\n";
    return 0;
  }
  std::cout << std::left << std::setw(44) << "plan" << std::right << std::setw(12) << "storage MB" << std::setw(14)
            << "+scales MB" << std::setw(12) << "SI-SDR dB" << std::setw(10) << "mel L1" << "\n";
  for (const auto& row : r.rows) {
    std::cout << std::left << std::setw(44) << row.plan << std::right << std::setw(12) << fixed(row.storage_mb, 1)
              << std::setw(14) << fixed(row.storage_mb_with_scales, 1) << std::setw(12) << fixed(row.si_sdr_db, 2)
              << std::setw(10) << (row.mel_l1 ? fixed(*row.mel_l1, 4) : std::string("n/a")) << "\n";
  }
  return 0;
}

nlohmann::json info_json(const std::string& path) {
  const auto loaded = tmimi::load(path);
  const auto& c = loaded.weights.config;
  const auto fp32 = tmimi::PrecisionPlan::uniform(c.num_layers, tmimi::QuantScheme::fp32());
  return {
      {"path", path},
      {"file_bytes", std::filesystem::file_size(path)},
      {"config", tmimi::to_json(c)},
      {"plan", loaded.plan.to_string()},
      {"params", tmimi::param_count(c)},
      {"embedding_params", tmimi::embedding_param_count(c)},
      {"storage_mb", tmimi::to_mb(tmimi::storage_bytes(loaded.plan, c))},
      {"storage_mb_with_scales", tmimi::to_mb(tmimi::storage_bytes(loaded.plan, c, true))},
      {"storage_mb_fp32", tmimi::to_mb(tmimi::storage_bytes(fp32, c))},
      {"flops_per_frame", tmimi::flops_per_frame(c)},
      {"samples_per_frame", c.samples_per_frame},
      {"frame_ms", c.frame_ms()},
  };
}

int cmd_info(const std::string& path, bool json) {
  const auto j = info_json(path);
  if (json) {
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  print_config(tmimi::config_from_json(j["config"]));
  std::cout << "plan              " << j["plan"].get<std::string>() << "\n"
            << "params            " << millions(j["params"].get<std::uint64_t>()) << " ("
            << j["params"].get<std::uint64_t>() << ", embeddings " << j["embedding_params"].get<std::uint64_t>()
            << " more)\n"
            << "storage           " << fixed(j["storage_mb"].get<double>(), 1) << " MB under plan, "
            << fixed(j["storage_mb_fp32"].get<double>(), 1) << " MB at fp32\n"
            << "MACs per frame    " << j["flops_per_frame"].get<std::uint64_t>() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming transformer codec decoder: weights, decoding, latency and precision sweeps"};
  app.require_subcommand(1);

  std::string config_spec = "t-mimi-12x2048";
  std::string plan_text;
  std::string out;
  std::string weights_path;
  std::uint64_t seed = 0;
  bool json = false;

  auto* init = app.add_subcommand("init-weights", "write randomly initialized weights");
  init->add_option("--config", config_spec, "preset name or JSON config file")->capture_default_str();
  init->add_option("--seed", seed, "initialization seed");
  init->add_option("--plan", plan_text, "precision plan, e.g. T1-10:int8,T11-12:fp32,L:fp32 (default all fp32)");
  init->add_option("--out", out, "output weight file")->required();

  std::size_t n_frames = 10;
  auto* make = app.add_subcommand("make-frames", "write a TMFR file of random token frames");
  make->add_option("--config", config_spec, "preset name or JSON config file");
  make->add_option("--weights", weights_path, "take the config from a weight file");
  make->add_option("--random", n_frames, "number of frames")->capture_default_str();
  make->add_option("--seed", seed, "frame seed");
  make->add_option("--out", out, "output frames file")->required();

  FrameSource decode_frames;
  auto* decode = app.add_subcommand("decode", "decode frames to a 16-bit mono WAV");
  decode->add_option("--weights", weights_path, "weight file")->required();
  decode_frames.add_options(decode, 0);
  decode->add_option("--plan", plan_text, "override the file's precision plan");
  decode->add_option("--out", out, "output WAV")->required();

  tmimi::BenchOptions bench_opt;
  std::string head = "transformer";
  int pin_core = -1;
  auto* bench = app.add_subcommand("stream-bench", "time step() over random frames");
  bench->add_option("--weights", weights_path, "weight file (otherwise --config/--seed weights are generated)");
  bench->add_option("--config", config_spec, "preset or JSON config when no --weights is given");
  bench->add_option("--seed", seed, "weight seed when no --weights is given");
  bench->add_option("--plan", plan_text, "override the precision plan");
  bench->add_option("--chunks", bench_opt.chunks, "measured chunks")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--warmup", bench_opt.warmup, "discarded warmup chunks")->capture_default_str();
  bench->add_option("--head", head, "transformer or deconv")->check(CLI::IsMember({"transformer", "deconv"}));
  bench->add_option("--context", bench_opt.context_frames, "deconv context window in frames")->capture_default_str();
  bench->add_option("--frame-seed", bench_opt.seed, "seed for the random frames");
  bench->add_option("--pin-core", pin_core, "pin the process to one CPU core");
  bench->add_flag("--json", json, "emit JSON");

  std::string plans_spec = "builtin-table2";
  FrameSource sweep_frames;
  auto* sweep = app.add_subcommand("quant-sweep", "compare precision plans against the fp32 output");
  sweep->add_option("--weights", weights_path, "weight file")->required();
  sweep->add_option("--plans", plans_spec, "plans file (one per line) or builtin-table2")->capture_default_str();
  sweep_frames.add_options(sweep, 8);
  sweep->add_flag("--json", json, "emit JSON");

  auto* info = app.add_subcommand("info", "summarize a weight file");
  info->add_option("--weights", weights_path, "weight file")->required();
  info->add_flag("--json", json, "emit JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (init->parsed()) return cmd_init_weights(config_spec, seed, plan_text, out);
    if (make->parsed()) return cmd_make_frames(config_spec, weights_path, n_frames, seed, out);
    if (decode->parsed()) return cmd_decode(weights_path, decode_frames, plan_text, out);
    if (bench->parsed()) {
      bench_opt.head = head == "deconv" ? tmimi::HeadKind::Deconv : tmimi::HeadKind::Transformer;
      return cmd_stream_bench(weights_path, config_spec, seed, plan_text, bench_opt, json, pin_core);
    }
    if (sweep->parsed()) return cmd_quant_sweep(weights_path, plans_spec, sweep_frames, json);
    if (info->parsed()) return cmd_info(weights_path, json);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::Io ? kExitIo : kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
