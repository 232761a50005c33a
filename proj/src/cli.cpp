// Copyright (c) 2026 The ParNet Engine Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "parnet/cli.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"
#include "parnet/analysis.hpp"
#include "parnet/builder.hpp"
#include "parnet/checkpoint.hpp"
#include "parnet/config_io.hpp"
#include "parnet/executor.hpp"
#include "parnet/reparam.hpp"
#include "parnet/trainer.hpp"

namespace parnet {

namespace {

class CliError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const GraphError*>(&e)) return "graph";
  if (dynamic_cast<const BlockError*>(&e)) return "block";
  if (dynamic_cast<const ReparamError*>(&e)) return "reparam";
  if (dynamic_cast<const ExecutionError*>(&e)) return "execution";
  if (dynamic_cast<const TrainingError*>(&e)) return "training";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  if (dynamic_cast<const CliError*>(&e)) return "input";
  if (dynamic_cast<const std::invalid_argument*>(&e) || dynamic_cast<const std::out_of_range*>(&e)) return "input";
  return "internal";
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

// Shortest scientific form: 1e-3, 2.5e-4.
std::string short_sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  std::string s(buf);
  const auto e = s.find('e');
  std::string mant = s.substr(0, e), exp = s.substr(e + 1);
  while (mant.back() == '0') mant.pop_back();
  if (mant.back() == '.') mant.pop_back();
  std::string sign;
  if (exp[0] == '-' || exp[0] == '+') {
    if (exp[0] == '-') sign = "-";
    exp = exp.substr(1);
  }
  while (exp.size() > 1 && exp[0] == '0') exp = exp.substr(1);
  return mant + "e" + sign + exp;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Trainable or deployed graph matching the checkpoint's fused flag.
ModelGraph load_graph(const ModelConfig& cfg, const std::string& checkpoint) {
  const ModelGraph g = build_model(cfg);
  return load_checkpoint(checkpoint, checkpoint_is_fused(checkpoint) ? deployed_topology(g) : g);
}

std::pair<std::int64_t, std::int64_t> parse_resolution(const std::string& s) {
  std::int64_t h = 0, w = 0;
  char x = 0;
  std::istringstream in(s);
  in >> h;
  if (in && !(in >> x)) return {h, h};
  if (x != 'x' || !(in >> w) || !in.eof() || h <= 0 || w <= 0) {
    throw CliError("resolution must be N or HxW, got '" + s + "'");
  }
  return {h, w};
}

struct Common {
  std::string config;
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::string out;
};

ModelConfig config_or_toy(const std::string& path) { return path.empty() ? toy_config() : load_config(path); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw CliError("cannot write " + path);
  f << text;
  if (!f) throw CliError("write failed for " + path);
}

int cmd_describe(const Common& c, const std::string& resolution, std::ostream& out) {
  ModelConfig cfg = load_config(c.config);
  if (!resolution.empty()) std::tie(cfg.height, cfg.width) = parse_resolution(resolution);
  const ModelGraph g = build_model(cfg);
  const auto shapes = infer_shapes(g, cfg.height, cfg.width);
  out << "variant " << to_string(cfg.variant) << "\n";
  out << "dataset " << to_string(cfg.dataset) << "\n";
  out << "streams " << cfg.num_streams << "\n";
  out << "resolution " << cfg.height << "x" << cfg.width << "\n";
  out << "depth " << compute_depth(g) << "\n";
  out << "blocks " << g.nodes.size() << "\n";
  const auto p_train = count_params(g, CountForm::kAsBuilt);
  const auto p_fold = count_params(g, CountForm::kFolded);
  const auto f_train = count_flops(g, cfg.height, cfg.width, CountForm::kAsBuilt);
  const auto f_fold = count_flops(g, cfg.height, cfg.width, CountForm::kFolded);
  const auto fused = fusion_absorption(g);
  out << "params_trainable " << p_train << " (" << fmt("%.2f", p_train / 1e6) << "M)\n";
  out << "params_folded " << p_fold << " (" << fmt("%.2f", p_fold / 1e6) << "M)\n";
  out << "params_deployed " << p_train - fused.total() << " (" << fmt("%.2f", (p_train - fused.total()) / 1e6)
      << "M)\n";
  out << "flops_trainable " << f_train << " (" << fmt("%.2f", f_train / 1e9) << "B)\n";
  out << "flops_folded " << f_fold << " (" << fmt("%.2f", f_fold / 1e9) << "B)\n";
  out << "\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-14s %-13s %-6s %6s %6s %3s %3s %5s %-14s %12s\n", "node", "kind", "role",
                "c_in", "c_out", "s", "g", "lane", "output", "params");
  out << line;
  for (const auto& n : g.nodes) {
    const auto& o = shapes[static_cast<size_t>(n.id)];
    const std::string shape =
        std::to_string(o.channels) + "x" + std::to_string(o.height) + "x" + std::to_string(o.width);
    std::snprintf(line, sizeof line, "%-14s %-13s %-6s %6lld %6lld %3d %3d %5d %-14s %12lld\n", n.name.c_str(),
                  to_string(n.spec.kind), to_string(n.role), static_cast<long long>(n.spec.c_in),
                  static_cast<long long>(n.spec.c_out), n.spec.stride, static_cast<int>(n.spec.groups), n.lane,
                  shape.c_str(), static_cast<long long>(count_block_params(n.spec)));
    out << line;
  }
  return 0;
}

int cmd_init(const Common& c, bool randomized, std::ostream& out) {
  const ModelConfig cfg = load_config(c.config);
  const ModelGraph g =
      init_weights(build_model(cfg), c.seed, randomized ? InitStyle::kRandomized : InitStyle::kTraining);
  save_checkpoint(g, c.out);
  out << "wrote " << c.out << " params " << count_stored_params(g) << "\n";
  return 0;
}

int cmd_fuse(const Common& c, std::ostream& out) {
  const ModelConfig cfg = load_config(c.config);
  const ModelGraph g = load_checkpoint(c.checkpoint, build_model(cfg));
  const ModelGraph f = fuse_model(g);
  save_checkpoint(f, c.out);
  out << "wrote " << c.out << " params " << count_stored_params(g) << " -> " << count_stored_params(f) << "\n";
  return 0;
}

int cmd_verify(const Common& c, const std::string& fused_path, int trials, double tol, std::int64_t batch,
               std::ostream& out) {
  const ModelConfig cfg = load_config(c.config);
  const ModelGraph topo = build_model(cfg);
  const ModelGraph g = c.checkpoint.empty() ? init_weights(topo, c.seed, InitStyle::kRandomized)
                                            : load_checkpoint(c.checkpoint, topo);
  const ModelGraph f = fused_path.empty() ? fuse_model(g) : load_checkpoint(fused_path, deployed_topology(topo));
  const auto r = verify_equivalence(g, f, trials, tol, c.seed, batch);
  if (r.pass) {
    out << "PASS max_diff<" << short_sci(tol) << " (max_diff=" << fmt("%.3e", r.max_diff) << ", trials=" << trials
        << ")\n";
    return 0;
  }
  out << "FAIL max_diff=" << fmt("%.3e", r.max_diff) << " >= " << short_sci(tol) << " (trials=" << trials << ")\n";
  throw ReparamError("fused model differs from trainable model by " + fmt("%.3e", r.max_diff));
}

int cmd_infer(const Common& c, const std::string& input, int workers, std::ostream& out) {
  const ModelConfig cfg = load_config(c.config);
  const ModelGraph g = load_graph(cfg, c.checkpoint);
  const RawTensor in = read_raw_tensor(input);
  if (in.dims.size() != 4) throw CliError("input must have dims [N, 3, H, W]");
  const Tensor x(Shape(std::span<const std::int64_t>(in.dims)), in.data);
  const Tensor y = workers == 1 ? run_sequential(g, x) : run_parallel(g, plan_execution(g, workers), x);
  if (!c.out.empty()) {
    write_raw_tensor(c.out, {{y.dim(0), y.dim(1)}, std::vector<float>(y.data().begin(), y.data().end())});
    out << "wrote " << c.out << " dims [" << y.dim(0) << "," << y.dim(1) << "]\n";
    return 0;
  }
  for (std::int64_t i = 0; i < y.dim(0); ++i) {
    for (std::int64_t k = 0; k < y.dim(1); ++k) {
      out << (k ? "," : "") << fmt("%.9g", y.data()[static_cast<size_t>(i * y.dim(1) + k)]);
    }
    out << "\n";
  }
  return 0;
}

int cmd_bench(const Common& c, const std::string& resolution, int workers, std::int64_t batch, int iters, int warmup, bool fused, bool no_header,
              std::ostream& out) {
  ModelConfig cfg = load_config(c.config);
  if (!resolution.empty()) std::tie(cfg.height, cfg.width) = parse_resolution(resolution);
  ModelGraph g = c.checkpoint.empty() ? init_weights(build_model(cfg), c.seed) : load_graph(cfg, c.checkpoint);
  if (fused && g.form() == GraphForm::kTrainable) g = fuse_model(g);
  if (!fused && g.form() == GraphForm::kDeployed) throw CliError("checkpoint is fused; pass --fused");
  const auto r = benchmark(g, plan_execution(g, workers), batch, iters, warmup, c.seed);
  const std::string row = bench_csv_row(r);
  if (!no_header) out << bench_csv_header() << "\n";
  out << row << "\n";
  if (!c.out.empty()) {
    const bool fresh = !std::filesystem::exists(c.out) || std::filesystem::file_size(c.out) == 0;
    std::ofstream f(c.out, std::ios::app);
    if (!f) throw CliError("cannot write " + c.out);
    if (fresh) f << bench_csv_header() << "\n";
    f << row << "\n";
  }
  return 0;
}

int cmd_train_toy(const Common& c, ToyOptions opts, const std::string& save, std::ostream& out) {
  opts.seed = c.seed;
  const ModelConfig cfg = config_or_toy(c.config);
  const ToyResult r = train_toy(cfg, opts);
  std::ostringstream csv;
  csv << train_csv_header() << "\n";
  for (const auto& row : r.log) csv << train_csv_row(row) << "\n";
  if (c.out.empty()) {
    out << csv.str();
  } else {
    write_text(c.out, csv.str());
    out << "wrote " << c.out << " final_accuracy " << fmt("%.4f", r.final_accuracy) << "\n";
  }
  if (!save.empty()) save_checkpoint(r.model, save);
  return 0;
}

int cmd_gradcheck(const Common& c, double delta, double threshold, std::ostream& out) {
  const auto cases = run_gradcheck_suite(delta, threshold, c.seed);
  std::ostringstream csv;
  csv << "case,max_rel_error,coordinates,pass\n";
  int failed = 0;
  for (const auto& k : cases) {
    csv << k.name << "," << fmt("%.3e", k.result.max_rel_error) << "," << k.result.coordinates << ","
        << (k.pass ? "yes" : "no") << "\n";
    failed += k.pass ? 0 : 1;
  }
  if (c.out.empty()) {
    out << csv.str();
  } else {
    write_text(c.out, csv.str());
  }
  if (failed) throw NumericError(std::to_string(failed) + " gradcheck case(s) above threshold " + short_sci(threshold));
  return 0;
}

int cmd_scale(const Common& c, int streams, double mult, double budget, const std::string& resolution,
              std::ostream& out) {
  const ModelConfig base = load_config(c.config);
  auto [h, w] = resolution.empty() ? std::pair{base.height, base.width} : parse_resolution(resolution);
  if ((mult > 0) == (budget > 0)) throw CliError("pass exactly one of --width-mult and --budget");
  const ModelConfig cfg = mult > 0 ? scale_config(base, streams, mult, h, w)
                                   : match_param_budget(base, streams, static_cast<std::int64_t>(budget), h, w);
  const std::string text = config_to_json(cfg);
  if (c.out.empty()) {
    out << text;
  } else {
    write_text(c.out, text);
    out << "wrote " << c.out << " params " << count_params(build_model(cfg)) << "\n";
  }
  return 0;
}

}  // namespace

RawTensor read_raw_tensor(const std::string& path) {
  std::ifstream meta(path + ".json");
  if (!meta) throw CliError("missing sidecar " + path + ".json");
  nlohmann::json j;
  try {
    meta >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CliError("bad sidecar " + path + ".json: " + e.what());
  }
  if (!j.is_object() || !j.contains("dims") || !j["dims"].is_array()) {
    throw CliError("sidecar " + path + ".json needs a \"dims\" array");
  }
  RawTensor t;
  std::int64_t numel = 1;
  for (const auto& d : j["dims"]) {
    if (!d.is_number_integer() || d.get<std::int64_t>() <= 0) throw CliError("dims must be positive integers");
    t.dims.push_back(d.get<std::int64_t>());
    numel *= t.dims.back();
  }
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CliError("cannot open " + path);
  const std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (static_cast<std::int64_t>(bytes.size()) != 4 * numel) {
    throw CliError(path + " has " + std::to_string(bytes.size()) + " bytes, dims need " + std::to_string(4 * numel));
  }
  t.data.resize(static_cast<size_t>(numel));
  for (size_t i = 0; i < t.data.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    t.data[i] = std::bit_cast<float>(u);
  }
  return t;
}

void write_raw_tensor(const std::string& path, const RawTensor& t) {
  std::vector<char> bytes(4 * t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(t.data[i]);
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>(u >> (8 * b));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CliError("cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  write_text(path + ".json", nlohmann::json{{"dims", t.dims}}.dump() + "\n");
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ParNet engine: build, fuse, run and train parallel-stream networks", "parnet"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  Common c;
  auto common = [&c](CLI::App* s, bool config, bool checkpoint, bool seed, bool out_flag) {
    if (config) s->add_option("--config", c.config, "Model config JSON");
    if (checkpoint) s->add_option("--checkpoint", c.checkpoint, "Checkpoint file");
    if (seed) s->add_option("--seed", c.seed, "Random seed");
    if (out_flag) s->add_option("--out", c.out, "Output path");
  };

  std::string resolution;
  auto* describe = app.add_subcommand("describe", "Depth, parameter and FLOP table");
  common(describe, true, false, false, false);
  describe->get_option("--config")->required();
  describe->add_option("--resolution", resolution, "Override input size (N or HxW)");

  bool randomized = false;
  auto* init = app.add_subcommand("init", "Write a freshly initialized checkpoint");
  common(init, true, false, true, true);
  init->get_option("--config")->required();
  init->get_option("--out")->required();
  init->add_flag("--randomized", randomized, "Random BN statistics, gates and head");

  auto* fuse = app.add_subcommand("fuse", "Trainable checkpoint -> deployed checkpoint");
  common(fuse, true, true, false, true);
  for (const char* o : {"--config", "--checkpoint", "--out"}) fuse->get_option(o)->required();

  std::string fused_path;
  int trials = 5;
  double tol = 1e-3;
  std::int64_t verify_batch = 1;
  auto* verify = app.add_subcommand("verify", "Compare trainable and fused outputs");
  common(verify, true, true, true, false);
  verify->get_option("--config")->required();
  verify->add_option("--fused-checkpoint", fused_path, "Fused checkpoint (default: fuse in memory)");
  verify->add_option("--trials", trials, "Random inputs")->check(CLI::PositiveNumber);
  verify->add_option("--tol", tol, "Max abs logit difference")->check(CLI::PositiveNumber);
  verify->add_option("--batch", verify_batch, "Batch per trial")->check(CLI::PositiveNumber);

  std::string input;
  int workers = 1;
  auto* infer = app.add_subcommand("infer", "Logits for a raw f32 input tensor");
  common(infer, true, true, false, true);
  infer->get_option("--config")->required();
  infer->get_option("--checkpoint")->required();
  infer->add_option("--input", input, "Raw f32 file with <input>.json sidecar")->required();
  infer->add_option("--workers", workers, "Executor workers")->check(CLI::PositiveNumber);

  std::int64_t batch = 1;
  int iters = 20, warmup = 3;
  bool fused = false, no_header = false;
  auto* bench = app.add_subcommand("bench", "Latency and throughput CSV");
  common(bench, true, true, true, true);
  bench->get_option("--config")->required();
  bench->add_option("--workers", workers, "Executor workers")->check(CLI::PositiveNumber);
  bench->add_option("--batch", batch, "Batch size")->check(CLI::PositiveNumber);
  bench->add_option("--iters", iters, "Timed iterations")->check(CLI::PositiveNumber);
  bench->add_option("--warmup", warmup, "Untimed iterations")->check(CLI::NonNegativeNumber);
  bench->add_option("--resolution", resolution, "Override input size (N or HxW)");
  bench->add_flag("--fused", fused, "Benchmark the deployed form");
  bench->add_flag("--no-header", no_header, "Omit the CSV header on stdout");

  ToyOptions toy;
  std::string save;
  auto* train = app.add_subcommand("train-toy", "Train on the synthetic two-class task");
  common(train, true, false, true, true);
  train->add_option("--steps", toy.steps, "SGD steps")->check(CLI::PositiveNumber);
  train->add_option("--batch", toy.batch, "Batch size")->check(CLI::PositiveNumber);
  train->add_option("--lr", toy.lr, "Base learning rate")->check(CLI::PositiveNumber);
  train->add_option("--dataset-size", toy.dataset_size, "Synthetic images")->check(CLI::PositiveNumber);
  train->add_option("--eval-every", toy.eval_every, "Steps between accuracy evaluations")->check(CLI::PositiveNumber);
  train->add_option("--save", save, "Write the trained checkpoint here");

  double delta = 1e-3, threshold = 1e-3;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  std::uint64_t gc_seed = 1;
  common(gradcheck, false, false, false, true);
  gradcheck->add_option("--seed", gc_seed, "Random seed");
  gradcheck->add_option("--delta", delta, "Central difference step")->check(CLI::PositiveNumber);
  gradcheck->add_option("--threshold", threshold, "Max relative error")->check(CLI::PositiveNumber);

  int streams = 3;
  double mult = 0, budget = 0;
  auto* scale = app.add_subcommand("scale", "Emit a scaled config");
  common(scale, true, false, false, true);
  scale->get_option("--config")->required();
  scale->add_option("--streams", streams, "Stream count (1-4)")->required();
  scale->add_option("--width-mult", mult, "Width multiplier");
  scale->add_option("--budget", budget, "Target trainable parameter count");
  scale->add_option("--resolution", resolution, "Input size (N or HxW)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << one_line(e.what()) << "\n";
    out << app.help();
    return 2;
  }
  if (gradcheck->parsed()) c.seed = gc_seed;

  try {
    if (describe->parsed()) return cmd_describe(c, resolution, out);
    if (init->parsed()) return cmd_init(c, randomized, out);
    if (fuse->parsed()) return cmd_fuse(c, out);
    if (verify->parsed()) return cmd_verify(c, fused_path, trials, tol, verify_batch, out);
    if (infer->parsed()) return cmd_infer(c, input, workers, out);
    if (bench->parsed()) return cmd_bench(c, resolution, workers, batch, iters, warmup, fused, no_header, out);
    if (train->parsed()) return cmd_train_toy(c, toy, save, out);
    if (gradcheck->parsed()) return cmd_gradcheck(c, delta, threshold, out);
    if (scale->parsed()) return cmd_scale(c, streams, mult, budget, resolution, out);
  } catch (const std::exception& e) {
    err << "error: " << error_kind(e) << ": " << one_line(e.what()) << "\n";
    return 1;
  }
  return 2;
}

}  // namespace parnet
