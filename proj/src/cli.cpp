#include "karat/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "karat/accounting.hpp"
#include "karat/analysis.hpp"
#include "karat/checkpoint.hpp"
#include "karat/config.hpp"
#include "karat/error.hpp"
#include "karat/harness.hpp"
#include "karat/simplex.hpp"
#include "karat/threading.hpp"

namespace karat::cli {

namespace fs = std::filesystem;
using train::format_number;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "karat-out";
  std::optional<std::uint64_t> seed;
};

config::Entries overrides_from(const std::vector<std::string>& extras) {
  config::Entries out;
  for (const auto& arg : extras) {
    const auto eq = arg.find('=');
    if (!arg.starts_with("--") || eq == std::string::npos || eq == 2) {
      throw ConfigError("unrecognized argument '" + arg + "' (overrides take the form --key=value)");
    }
    out.emplace_back(arg.substr(2, eq - 2), arg.substr(eq + 1));
  }
  return out;
}

config::RunConfig load_run_config(const CommonArgs& common, const std::vector<std::string>& extras) {
  config::Entries entries;
  if (!common.config_path.empty()) entries = config::read_config_file(common.config_path);
  for (auto& e : overrides_from(extras)) entries.push_back(std::move(e));
  if (common.seed) entries.emplace_back("train.seed", std::to_string(*common.seed));
  return config::resolve(entries);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

std::string require(const std::string& value, const std::string& key) {
  if (value.empty()) throw ConfigError(key + " is required");
  return value;
}

vit::VisionTransformer load_model(const config::RunConfig& cfg, const std::string& checkpoint) {
  vit::VisionTransformer model(cfg.model, cfg.train.seed);
  model.load_state(load_checkpoint(checkpoint));
  return model;
}

void print_final(std::ostream& out, const train::RunResult& res) {
  const auto& m = res.metrics.back();
  out << "final epoch=" << m.epoch << " step=" << m.step << " train_loss=" << format_number(m.train_loss)
      << " train_top1=" << format_number(res.train_accuracy);
  if (m.top1) out << " top1=" << format_number(*m.top1) << " top5=" << format_number(*m.top5);
  out << '\n';
}

std::vector<std::size_t> parse_layers(const std::string& list, std::size_t depth) {
  if (list.empty()) return {depth - 1};
  std::vector<std::size_t> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t v = 0;
    const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (res.ec != std::errc() || res.ptr != item.data() + item.size()) {
      throw ConfigError("analysis.layers: bad layer index '" + item + "'");
    }
    out.push_back(v);
  }
  return out;
}

std::vector<fs::path> trajectory_paths(const std::string& spec) {
  std::vector<fs::path> out;
  if (!spec.empty() && fs::is_directory(spec)) {
    for (const auto& entry : fs::directory_iterator(spec)) {
      const auto name = entry.path().filename().string();
      if (name.starts_with("epoch_") && entry.path().extension() == ".ckpt") out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
  }
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.emplace_back(item);
  }
  return out;
}

const data::Dataset& analysis_split(const train::Datasets& data) {
  return data.test.size() > 0 ? data.test : data.train;
}

int cmd_train(const CommonArgs& common, const std::vector<std::string>& extras, std::ostream& out) {
  const auto cfg = load_run_config(common, extras);
  cfg.train.validate();
  const fs::path dir = common.out_dir;
  fs::create_directories(dir);
  write_text(dir / "config.resolved", config::render(cfg));
  const auto data = train::load_datasets(cfg.train.data, cfg.train.seed);
  vit::VisionTransformer model(cfg.model, cfg.train.seed);
  const auto res = train::train(model, data, cfg.train, dir);
  print_final(out, res);
  return 0;
}

int cmd_eval(const CommonArgs& common, const std::vector<std::string>& extras, std::ostream& out) {
  const auto cfg = load_run_config(common, extras);
  const std::string ckpt = require(cfg.eval_checkpoint, "eval.checkpoint");
  cfg.train.data.validate();
  const auto model = load_model(cfg, ckpt);
  const auto data = train::load_datasets(cfg.train.data, cfg.train.seed);
  const auto acc = train::evaluate(model, analysis_split(data));
  out << "top1=" << format_number(acc.top1) << " top5=" << format_number(acc.top5) << " samples=" << acc.samples
      << '\n';
  return 0;
}

int cmd_transfer(const CommonArgs& common, const std::vector<std::string>& extras, std::ostream& out) {
  const auto cfg = load_run_config(common, extras);
  cfg.train.validate();
  const std::string teacher_ckpt = require(cfg.transfer.teacher_checkpoint, "transfer.teacher_checkpoint");
  const std::string teacher_cfg_path = require(cfg.transfer.teacher_config, "transfer.teacher_config");
  const auto teacher_cfg = config::resolve(config::read_config_file(teacher_cfg_path));
  const auto teacher = load_model(teacher_cfg, teacher_ckpt);
  const fs::path dir = common.out_dir;
  fs::create_directories(dir);
  write_text(dir / "config.resolved", config::render(cfg));
  const auto data = train::load_datasets(cfg.train.data, cfg.train.seed);
  vit::VisionTransformer student(cfg.model, cfg.train.seed);
  const auto res = train::attention_transfer_train(teacher, student, data, cfg.train, dir);
  print_final(out, res);
  return 0;
}

int cmd_count(const vit::ViTConfig& model, const std::string& label,
              const std::optional<accounting::ReferenceFigures>& ref, std::ostream& out) {
  const auto acc = accounting::count_params_flops(model);
  out << accounting::format_report(acc, model, label, ref);
  return 0;
}

int cmd_count_flags(const std::string& preset, const std::string& tag, int rank, std::ostream& out) {
  const auto model = accounting::with_attention(vit::preset(preset), tag, rank);
  const auto ref = rank == 12 ? accounting::reference_figures(preset, tag) : std::nullopt;
  return cmd_count(model, preset + " + " + tag, ref, out);
}

int cmd_spectra(const config::RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const auto model = load_model(cfg, require(cfg.analysis.checkpoint, "analysis.checkpoint"));
  const auto data = train::load_datasets(cfg.train.data, cfg.train.seed);
  const auto& split = analysis_split(data);
  std::vector<Tensor> samples;
  for (std::size_t i = 0; i < std::min(cfg.analysis.samples, split.size()); ++i) samples.push_back(split.images[i]);
  const auto layers = parse_layers(cfg.analysis.layers, cfg.model.depth);
  const auto report = analysis::spectral_scan(model, samples, layers);
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "spectra_pre.csv");
    analysis::write_spectra_csv(f, report.pre);
  }
  {
    std::ofstream f(dir / "spectra_post.csv");
    analysis::write_spectra_csv(f, report.post);
  }
  {
    std::ofstream f(dir / "spectra_summary.csv");
    analysis::write_spectra_summary_csv(f, report);
  }
  if (!samples.empty()) {
    save_checkpoint(dir / "attention_sample0.ckpt", vit::attention_entries(model.extract_all_attention(samples[0])));
  }
  auto mean_count = [](const std::vector<analysis::MatrixSpectrum>& list) {
    double total = 0.0;
    for (const auto& s : list) total += static_cast<double>(analysis::scree_count(s.sigma).count);
    return total / static_cast<double>(list.size());
  };
  out << "matrices=" << report.post.size() << " N=" << report.tokens
      << " max_reconstruction_error=" << format_number(report.max_reconstruction_error) << '\n'
      << "rows-sum sanity: max|row_sum-1|=" << format_number(report.max_row_sum_error)
      << " max|norm(A*1)-sqrt(N)|=" << format_number(report.max_ones_norm_error) << '\n'
      << "mean scree count: pre=" << format_number(mean_count(report.pre))
      << " post=" << format_number(mean_count(report.post)) << '\n';
  return 0;
}

int cmd_hist(const config::RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const auto entries = load_checkpoint(require(cfg.analysis.checkpoint, "analysis.checkpoint"));
  const auto hists = analysis::weight_histogram(entries, cfg.analysis.bins, cfg.analysis.range);
  fs::create_directories(dir);
  std::ofstream f(dir / "histograms.csv");
  analysis::write_histogram_csv(f, hists);
  std::size_t total = 0;
  for (const auto& h : hists) {
    out << h.group << " count=" << h.total() << '\n';
    total += h.total();
  }
  out << "total=" << total << " range=" << format_number(hists.empty() ? 0.0 : hists.front().range) << '\n';
  return 0;
}

int cmd_landscape(const config::RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const auto paths = trajectory_paths(require(cfg.analysis.trajectory, "analysis.trajectory"));
  if (paths.size() < 3) {
    throw NumericError("rank-deficient trajectory: " + std::to_string(paths.size()) +
                       " checkpoint(s) give fewer than two independent directions (need >= 3)");
  }
  const auto data = train::load_datasets(cfg.train.data, cfg.train.seed);
  const auto eval = data::take(analysis_split(data), cfg.analysis.eval_samples);
  const vit::VisionTransformer prototype(cfg.model, cfg.train.seed);
  analysis::LandscapeOptions opts;
  opts.resolution = cfg.analysis.resolution;
  opts.extent = cfg.analysis.extent;
  opts.filter_normalize = cfg.analysis.filter_normalize;
  const auto grid = analysis::model_loss_landscape(prototype, paths, eval, opts);
  fs::create_directories(dir);
  std::ofstream f(dir / "landscape.csv");
  analysis::write_landscape_csv(f, grid);
  const auto mid = grid.coords.size() / 2;
  out << "checkpoints=" << paths.size() << " anchor_loss=" << format_number(grid.anchor_loss)
      << " center_loss=" << format_number(grid.at(mid, mid)) << " sigma1=" << format_number(grid.singular_values[0])
      << " sigma2=" << format_number(grid.singular_values[1]) << '\n';
  return 0;
}

int classify(const std::exception& e, std::ostream& err) {
  err << "error: " << e.what() << '\n';
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) return 1;
  return 2;
}

}  // namespace

void project_lines(std::istream& in, std::ostream& out) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::vector<double> values;
    std::string tok;
    while (ss >> tok) {
      double v = 0.0;
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
        throw FormatError("line " + std::to_string(lineno) + ": '" + tok + "' is not a number");
      }
      values.push_back(v);
    }
    if (values.empty()) continue;
    const auto proj = simplex::project_simplex(values);
    for (std::size_t i = 0; i < proj.x_star.size(); ++i) {
      if (i) out << ' ';
      out << format_number(proj.x_star[i]);
    }
    out << '\n';
  }
}

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  configure_threads_from_env();
  CLI::App app{"Learnable-attention vision transformer toolkit", "karat"};
  app.require_subcommand(1);

  CommonArgs common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "Config file of key = value lines");
    sub->add_option("--out", common.out_dir, "Output directory");
    sub->add_option("--seed", common.seed, "Random seed (overrides train.seed)");
    sub->allow_extras();
  };
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint (eval.checkpoint)");
  auto* transfer_cmd = app.add_subcommand("transfer", "Train a student on teacher attention");
  for (auto* sub : {train_cmd, eval_cmd, transfer_cmd}) add_common(sub);

  auto* analyze_cmd = app.add_subcommand("analyze", "Analysis reports");
  analyze_cmd->require_subcommand(1);
  auto* spectra_cmd = analyze_cmd->add_subcommand("spectra", "Singular values of attention matrices");
  auto* hist_cmd = analyze_cmd->add_subcommand("hist", "Weight histograms per parameter group");
  auto* landscape_cmd = analyze_cmd->add_subcommand("landscape", "Loss landscape along trajectory PCA directions");
  auto* analyze_count_cmd = analyze_cmd->add_subcommand("count", "Parameter and FLOP accounting");
  for (auto* sub : {spectra_cmd, hist_cmd, landscape_cmd, analyze_count_cmd}) add_common(sub);

  auto* count_cmd = app.add_subcommand("count", "Parameter and FLOP accounting");
  add_common(count_cmd);
  std::string preset, tag = "none";
  int rank = 12;
  for (auto* sub : {count_cmd, analyze_count_cmd}) {
    sub->add_option("--preset", preset, "vit-micro|vit-mini|vit-tiny|vit-small|vit-base");
    sub->add_option("--attention", tag, "none|g<G>b|g<G>u");
    sub->add_option("--rank", rank, "Hidden rank for KArAt tags");
  }

  std::string input_path;
  auto* project_cmd = app.add_subcommand("project", "Project lines of numbers onto the simplex");
  project_cmd->add_option("--input", input_path, "Input file (default: standard input)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train_cmd) return cmd_train(common, train_cmd->remaining(), out);
    if (*eval_cmd) return cmd_eval(common, eval_cmd->remaining(), out);
    if (*transfer_cmd) return cmd_transfer(common, transfer_cmd->remaining(), out);
    if (*project_cmd) {
      if (input_path.empty()) {
        project_lines(in, out);
      } else {
        std::ifstream f(input_path);
        if (!f) throw FormatError("cannot open " + input_path);
        project_lines(f, out);
      }
      return 0;
    }
    for (auto* sub : {count_cmd, analyze_count_cmd}) {
      if (!*sub) continue;
      if (!preset.empty()) return cmd_count_flags(preset, tag, rank, out);
      const auto cfg = load_run_config(common, sub->remaining());
      return cmd_count(cfg.model, cfg.model_preset, std::nullopt, out);
    }
    CLI::App* chosen = nullptr;
    for (auto* sub : {spectra_cmd, hist_cmd, landscape_cmd}) {
      if (*sub) chosen = sub;
    }
    const auto cfg = load_run_config(common, chosen->remaining());
    if (chosen == spectra_cmd) return cmd_spectra(cfg, common.out_dir, out);
    if (chosen == hist_cmd) return cmd_hist(cfg, common.out_dir, out);
    return cmd_landscape(cfg, common.out_dir, out);
  } catch (const std::exception& e) {
    return classify(e, err);
  }
}

}  // namespace karat::cli
