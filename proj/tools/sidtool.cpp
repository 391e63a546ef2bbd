// sidtool: batch front end for preparing data, fitting and compiling bundles,
// running programs and reproducing evaluation and latency reports.
//
// Exit codes: 0 success, 2 validation error, 3 capacity error, 4 dataset error.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "sid/assembler.hpp"
#include "sid/bundle.hpp"
#include "sid/codegen.hpp"
#include "sid/data.hpp"
#include "sid/evaluation.hpp"
#include "sid/synthetic.hpp"

namespace fs = std::filesystem;
using namespace sid;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitCapacity = 3;
constexpr int kExitDataset = 4;

int exit_code(const Error& e) {
  switch (category_of(e.code())) {
    case ErrorCategory::Capacity: return kExitCapacity;
    case ErrorCategory::Dataset: return kExitDataset;
    default: return kExitValidation;
  }
}

std::string bundle_file_name(ModelKind kind, std::uint32_t user) {
  return std::string(to_string(kind)) + "_user" + std::to_string(user) + ".sidb";
}

/// Overrides the PED rejection thresholds for a different significance level.
void apply_alpha(ModelBundle& b, std::optional<double> alpha) {
  if (!alpha) return;
  b.alpha = *alpha;
  for (auto& r : b.references) r.threshold = scaled_threshold(r.n, r.m, *alpha);
}

std::map<std::uint32_t, ModelBundle> load_bundles(const fs::path& dir, std::optional<ModelKind>& kind,
                                                  const std::vector<std::uint32_t>& users) {
  if (!fs::is_directory(dir)) fail(ErrorCode::MissingBundle, "bundle directory '" + dir.string() + "' does not exist");
  if (!kind) {
    std::set<ModelKind> seen;
    const std::regex pattern(R"(([a-z_]+)_user(\d+)\.sidb)");
    for (const auto& e : fs::directory_iterator(dir)) {
      std::smatch m;
      const std::string name = e.path().filename().string();
      if (std::regex_match(name, m, pattern)) seen.insert(model_kind_from_string(m[1].str()));
    }
    if (seen.size() != 1)
      fail(ErrorCode::MissingBundle, "bundle directory holds " + std::to_string(seen.size()) + " model kinds; pass --kind");
    kind = *seen.begin();
  }
  std::map<std::uint32_t, ModelBundle> out;
  for (auto u : users) {
    const fs::path p = dir / bundle_file_name(*kind, u);
    if (!fs::exists(p)) fail(ErrorCode::MissingBundle, "missing bundle '" + p.string() + "'");
    out.emplace(u, read_bundle(p.string()));
  }
  return out;
}

MachineConfig machine_config(std::uint32_t tracks) {
  MachineConfig mc;
  mc.n_tracks = tracks;
  return mc;
}

void write_outputs(const std::string& text, const std::string& kv, const std::string& kv_path, bool quiet) {
  if (!quiet) std::cout << text;
  if (kv_path.empty()) std::cout << kv;
  else detail::write_text_file(kv_path, kv);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SID impostor-detection toolkit: simulator, compiler and evaluation front end"};
  app.require_subcommand(1);

  // prepare
  std::string dataset_dir, out_dir, dataset_file, split_file, bundles_dir, kind_name, mode_name = "reference";
  std::uint64_t seed = 1;
  std::size_t window = 64, registered = 25, unregistered = 5;
  auto* prepare = app.add_subcommand("prepare", "Load a HAPT raw-data directory into a cached dataset and a user split");
  prepare->add_option("--dataset", dataset_dir, "HAPT directory (containing labels.txt or RawData/)")->required();
  prepare->add_option("--out", out_dir, "Output directory for dataset.sidd and split.json")->required();
  prepare->add_option("--seed", seed, "Split seed");
  prepare->add_option("--window", window, "Window size")->check(CLI::IsMember({64, 200}) | CLI::Range(2, 16383));
  prepare->add_option("--registered", registered, "Registered users");
  prepare->add_option("--unregistered", unregistered, "Unregistered users");

  // synth-hapt
  std::uint32_t users = 30;
  std::size_t walk_rows = 600;
  auto* synth_hapt = app.add_subcommand("synth-hapt", "Write a synthetic dataset in the HAPT raw layout");
  synth_hapt->add_option("--out", out_dir, "Output directory")->required();
  synth_hapt->add_option("--users", users, "Number of users");
  synth_hapt->add_option("--seed", seed, "Generator seed");
  synth_hapt->add_option("--walk-rows", walk_rows, "Readings per WALK interval");

  // fit
  synth::SynthConfig fit_cfg;
  std::vector<std::size_t> mlp_hidden;
  auto* fit = app.add_subcommand("fit", "Closed-form quick fit of one bundle per registered user (trainer stand-in)");
  fit->add_option("--dataset", dataset_file, "Cached dataset (.sidd)")->required();
  fit->add_option("--split", split_file, "Split file")->required();
  fit->add_option("--kind", kind_name, "mlp | svm | ocsvm | lstm_th | ped_lstm_vote")->required();
  fit->add_option("--bundles", bundles_dir, "Output bundle directory")->required();
  fit->add_option("--hidden", fit_cfg.hidden, "LSTM hidden size");
  fit->add_option("--mlp-hidden", mlp_hidden, "MLP hidden layer sizes");
  fit->add_option("--support-vectors", fit_cfg.support_vectors, "SVM support vectors");
  fit->add_option("--alpha", fit_cfg.alpha, "KS significance level");
  fit->add_option("--seed", fit_cfg.seed, "Fit seed");

  // synth-bundle
  std::string out_file;
  synth::SynthConfig syn_cfg;
  std::vector<std::size_t> syn_mlp_hidden;
  std::string error_norm = "l2";
  auto* synth_bundle = app.add_subcommand("synth-bundle", "Fit a bundle on a generated user population");
  synth_bundle->add_option("--kind", kind_name, "Model kind")->required();
  synth_bundle->add_option("--out", out_file, "Output .sidb path")->required();
  synth_bundle->add_option("--window", syn_cfg.window, "Window size");
  synth_bundle->add_option("--hidden", syn_cfg.hidden, "LSTM hidden size");
  synth_bundle->add_option("--mlp-hidden", syn_mlp_hidden, "MLP hidden layer sizes");
  synth_bundle->add_option("--support-vectors", syn_cfg.support_vectors, "SVM support vectors");
  synth_bundle->add_option("--references", syn_cfg.references, "PED references");
  synth_bundle->add_option("--alpha", syn_cfg.alpha, "KS significance level");
  synth_bundle->add_option("--error-norm", error_norm, "l2 | l2sq (ped_lstm_vote)");
  synth_bundle->add_option("--user", syn_cfg.user, "User id");
  synth_bundle->add_option("--seed", syn_cfg.seed, "Population seed");
  synth_bundle->add_option("--train-readings", syn_cfg.train_readings, "Training readings");

  // evaluate
  std::uint32_t tracks = 4;
  std::optional<std::size_t> pair_limit;
  std::optional<double> alpha;
  std::optional<std::size_t> expect_window;
  unsigned threads = default_threads();
  bool whole_window = false, quiet = false;
  std::string kv_path;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Run all evaluation pairs in reference or simulated mode");
  evaluate_cmd->add_option("--dataset", dataset_file, "Cached dataset (.sidd)")->required();
  evaluate_cmd->add_option("--split", split_file, "Split file")->required();
  evaluate_cmd->add_option("--bundles", bundles_dir, "Bundle directory")->required();
  evaluate_cmd->add_option("--kind", kind_name, "Model kind (inferred when the directory holds one)");
  evaluate_cmd->add_option("--mode", mode_name, "reference | simulated")->check(CLI::IsMember({"reference", "simulated"}));
  evaluate_cmd->add_option("--tracks", tracks, "Parallel tracks")->check(CLI::Range(1, 1024));
  evaluate_cmd->add_option("--pairs", pair_limit, "Evaluate only the first N pairs");
  evaluate_cmd->add_option("--alpha", alpha, "Override the KS significance level");
  evaluate_cmd->add_option("--window", expect_window, "Expected window size");
  evaluate_cmd->add_option("--threads", threads, "Worker threads")->check(CLI::Range(1, 1024));
  evaluate_cmd->add_flag("--whole-window", whole_window, "Compile LSTM kinds as whole-window programs");
  evaluate_cmd->add_option("--kv", kv_path, "Write key=value lines to this file instead of stdout");
  evaluate_cmd->add_flag("--quiet", quiet, "Suppress the table");

  // bench
  std::string bundle_file;
  std::vector<std::uint32_t> track_list = {1, 2, 4, 8};
  bool vector_bench = false;
  auto* bench_cmd = app.add_subcommand("bench", "Cycle counts and latency per track count");
  bench_cmd->add_option("--bundle", bundle_file, "Bundle file");
  bench_cmd->add_option("--tracks", track_list, "Track counts")->delimiter(',');
  bench_cmd->add_flag("--vector", vector_bench, "Also run the L=1000 vector microbench");
  bench_cmd->add_flag("--whole-window", whole_window, "Compile LSTM kinds as whole-window programs");
  bench_cmd->add_option("--alpha", alpha, "Override the KS significance level");

  // compile
  std::string prefix;
  auto* compile_cmd = app.add_subcommand("compile", "Compile a bundle into a program, memory image and symbol map");
  compile_cmd->add_option("--bundle", bundle_file, "Bundle file")->required();
  compile_cmd->add_option("--out", prefix, "Output prefix (.sidp, .mem, .sym)")->required();
  compile_cmd->add_flag("--whole-window", whole_window, "Compile LSTM kinds as whole-window programs");
  compile_cmd->add_option("--alpha", alpha, "Override the KS significance level");

  // run
  std::string program_file;
  std::uint32_t entry = 0;
  std::uint64_t max_cycles = std::numeric_limits<std::uint64_t>::max();
  std::vector<std::string> dumps;
  auto* run_cmd = app.add_subcommand("run", "Execute a binary program and report cycles");
  run_cmd->add_option("program", program_file, "Program file (.sidp)")->required();
  run_cmd->add_option("--tracks", tracks, "Parallel tracks")->check(CLI::Range(1, 1024));
  run_cmd->add_option("--entry", entry, "Start instruction index");
  run_cmd->add_option("--max-cycles", max_cycles, "Cycle budget");
  run_cmd->add_option("--dump", dumps, "ADDRESS:WORDS ranges to print after the run");

  // asm / disasm
  std::string in_file;
  auto* asm_cmd = app.add_subcommand("asm", "Assemble a text program into the binary format");
  asm_cmd->add_option("input", in_file, "Assembly source (.sas)")->required();
  asm_cmd->add_option("-o,--out", out_file, "Output program (.sidp)")->required();
  auto* disasm_cmd = app.add_subcommand("disasm", "Disassemble a binary program");
  disasm_cmd->add_option("input", in_file, "Program file (.sidp)")->required();
  disasm_cmd->add_option("-o,--out", out_file, "Output text file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*prepare) {
      const HaptDataset ds = load_hapt(dataset_dir);
      SplitConfig cfg;
      cfg.window = window;
      cfg.registered = registered;
      cfg.unregistered = unregistered;
      const UserSplit split = build_split(ds, seed, cfg);
      fs::create_directories(out_dir);
      write_dataset(ds, (fs::path(out_dir) / "dataset.sidd").string());
      write_split(split, (fs::path(out_dir) / "split.json").string());
      std::size_t intervals = 0, readings = 0;
      for (const auto& [u, s] : ds.streams) {
        intervals += s.size();
        readings += ds.readings(u);
      }
      std::cout << "users=" << ds.streams.size() << "\nintervals=" << intervals << "\nreadings=" << readings
                << "\nregistered=" << split.registered.size() << "\nunregistered=" << split.unregistered.size()
                << "\npairs=" << evaluation_pairs(split).size() << "\nwindow=" << window << "\nseed=" << seed << "\n";
    } else if (*synth_hapt) {
      synth::write_synthetic_hapt(out_dir, users, seed, walk_rows);
      std::cout << "users=" << users << "\nwalk_rows=" << walk_rows << "\nout=" << out_dir << "\n";
    } else if (*fit) {
      const HaptDataset ds = read_dataset(dataset_file);
      const UserSplit split = read_split(split_file);
      fit_cfg.kind = model_kind_from_string(kind_name);
      fit_cfg.window = split.config.window;
      if (!mlp_hidden.empty()) fit_cfg.mlp_hidden = mlp_hidden;
      const bool two = fit_cfg.kind == ModelKind::Mlp || fit_cfg.kind == ModelKind::Svm;
      fs::create_directories(bundles_dir);
      for (auto u : split.registered) {
        auto cfg = fit_cfg;
        cfg.user = u;
        const ModelBundle b = synth::fit_bundle(synth::fit_data(ds, split, u, two), cfg);
        const auto path = fs::path(bundles_dir) / bundle_file_name(b.kind, u);
        write_bundle(b, path.string());
        std::cout << "bundle=" << path.string() << "\n";
      }
    } else if (*synth_bundle) {
      syn_cfg.kind = model_kind_from_string(kind_name);
      syn_cfg.error_norm = error_norm_from_string(error_norm);
      if (!syn_mlp_hidden.empty()) syn_cfg.mlp_hidden = syn_mlp_hidden;
      const ModelBundle b = synth::synth_bundle(syn_cfg);
      write_bundle(b, out_file);
      std::cout << "bundle=" << out_file << "\nkind=" << to_string(b.kind) << "\nwindow=" << b.window << "\n";
    } else if (*evaluate_cmd) {
      const HaptDataset ds = read_dataset(dataset_file);
      const UserSplit split = read_split(split_file);
      if (expect_window && *expect_window != split.config.window)
        fail(ErrorCode::DimensionMismatch, "split uses W=" + std::to_string(split.config.window) + ", --window asks for " +
                                               std::to_string(*expect_window));
      std::optional<ModelKind> kind;
      if (!kind_name.empty()) kind = model_kind_from_string(kind_name);
      auto pairs = evaluation_pairs(split);
      if (pair_limit) pairs.resize(std::min(pairs.size(), *pair_limit));
      std::vector<std::uint32_t> targets;
      for (const auto& p : pairs)
        if (std::find(targets.begin(), targets.end(), p.target) == targets.end()) targets.push_back(p.target);
      auto bundles = pairs.empty() ? std::map<std::uint32_t, ModelBundle>{} : load_bundles(bundles_dir, kind, targets);
      for (auto& [u, b] : bundles) apply_alpha(b, alpha);
      const auto rep = evaluate(bundles, ds, split, pairs, eval_mode_from_string(mode_name), machine_config(tracks),
                                threads, CompileOptions{!whole_window});
      write_outputs(rep.table(), rep.key_values(), kv_path, quiet);
    } else if (*bench_cmd) {
      if (vector_bench) {
        const auto v = vector_microbench(1000);
        std::cout << "vector_length=" << v.length << "\nvector_cycles_1=" << v.cycles_1 << "\nvector_cycles_4="
                  << v.cycles_4 << "\nvector_ratio=" << v.ratio() << "\n";
      }
      if (!bundle_file.empty()) {
        ModelBundle b = read_bundle(bundle_file);
        apply_alpha(b, alpha);
        const auto rep = bench(b, track_list, MachineConfig{}, CompileOptions{!whole_window});
        std::cout << rep.table() << rep.key_values();
        if (!rep.within_period()) {
          std::cerr << "error: latency exceeds the sensor period\n";
          return kExitCapacity;
        }
      } else if (!vector_bench) {
        fail(ErrorCode::InvalidArgument, "bench needs --bundle or --vector");
      }
    } else if (*compile_cmd) {
      ModelBundle b = read_bundle(bundle_file);
      apply_alpha(b, alpha);
      const auto p = compile(b, MachineConfig{}, CompileOptions{!whole_window});
      detail::write_file(prefix + ".sidp", to_bytes(p.to_image()));
      detail::write_file(prefix + ".mem", p.image);
      detail::write_text_file(prefix + ".sym", p.symbol_map());
      std::cout << "instructions=" << p.instructions.size() << "\nworkspace_end=" << p.workspace_end
                << "\nconstant_bytes=" << p.constant_bytes << "\nlut_bytes=" << p.lut_bytes
                << "\nimage_bytes=" << p.image_bytes() << "\nverdict_address=" << p.verdict_address
                << "\nstreaming=" << p.streaming << "\n";
      for (const auto& [name, pc] : p.entry_points) std::cout << "entry." << name << "=" << pc << "\n";
    } else if (*run_cmd) {
      const ProgramImage image = program_from_bytes(detail::read_file(program_file));
      Machine m(machine_config(tracks));
      m.load_program(image);
      m.set_pc(entry);
      const RunResult r = m.run(max_cycles);
      std::cout << r.to_report();
      for (const auto& d : dumps) {
        const auto colon = d.find(':');
        if (colon == std::string::npos) fail(ErrorCode::InvalidArgument, "--dump expects ADDRESS:WORDS, got '" + d + "'");
        const auto addr = static_cast<std::uint32_t>(std::stoul(d.substr(0, colon), nullptr, 0));
        const auto count = std::stoul(d.substr(colon + 1), nullptr, 0);
        const auto words = m.read_words(addr, count);
        for (std::size_t k = 0; k < words.size(); ++k)
          std::cout << "mem[0x" << std::hex << addr + 4 * k << std::dec << "]=" << words[k].to_real() << "\n";
      }
    } else if (*asm_cmd) {
      const auto src = detail::read_file(in_file);
      const auto prog = assemble(std::string(src.begin(), src.end()));
      detail::write_file(out_file, to_bytes(prog.image));
      std::cout << "instructions=" << prog.image.instructions.size() << "\ndata_bytes=" << prog.image.data.size() << "\n";
    } else if (*disasm_cmd) {
      const auto text = disassemble(program_from_bytes(detail::read_file(in_file)));
      if (out_file.empty()) std::cout << text;
      else detail::write_text_file(out_file, text);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return 0;
}
