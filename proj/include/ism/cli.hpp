#pragma once

// Command-line front end: train, sample, analyze-trajectories,
// verify-prop1, probe-guidance, export-dataset.
//
// Failures print one line "error: <category>: <message>" to stderr and
// return the category's exit code.

#include "ism/analysis.hpp"
#include "ism/checkpoint.hpp"
#include "ism/config.hpp"
#include "ism/data.hpp"
#include "ism/log.hpp"
#include "ism/sampler.hpp"
#include "ism/svg.hpp"
#include "ism/trainer.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace ism::cli {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kInternal = 1;
inline constexpr int kUsage = 2;
inline constexpr int kConfig = 3;
inline constexpr int kCheckpoint = 4;
inline constexpr int kIo = 5;
inline constexpr int kTraining = 6;
inline constexpr int kVerification = 7;
}  // namespace exit_code

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VerificationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace fs = std::filesystem;

/// Output directory plus the manifest of everything written into it.
class OutputDir {
 public:
  OutputDir(std::string command, std::string argv_line, const std::string& dir)
      : command_(std::move(command)), argv_(std::move(argv_line)), dir_(dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  void add(const std::string& name) { artifacts_.push_back(name); }
  void note(const std::string& key, const std::string& value) { notes_.emplace_back(key, value); }

  void write_manifest() const {
    const std::string p = path("manifest.txt");
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw IoError("cannot write " + p);
    out << "command=" << command_ << "\nargv=" << argv_ << '\n';
    for (const auto& [k, v] : notes_) out << k << '=' << v << '\n';
    for (const auto& a : artifacts_) out << "artifact=" << a << '\n';
    if (!out) throw IoError("write failed: " + p);
  }

 private:
  std::string command_, argv_;
  fs::path dir_;
  std::vector<std::pair<std::string, std::string>> notes_;
  std::vector<std::string> artifacts_;
};

namespace detail {

inline std::string join_argv(int argc, const char* const* argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

inline std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw UsageError(std::string("invalid ") + what + " list '" + text + "'");
    }
  }
  if (out.empty()) throw UsageError(std::string("empty ") + what + " list");
  return out;
}

inline std::pair<std::string, std::string> split_assignment(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

template <class T>
const VelocityNetParams<T>& pick_params(const TrainState<T>& st, const std::string& which) {
  if (which == "infer") return st.ema.infer;
  if (which == "target") return st.ema.target;
  if (which == "online") return st.online;
  throw UsageError("--params must be infer, target or online");
}

template <class T>
void write_trajectory_csv(const std::string& path, const std::vector<Tensor<T>>& traj) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  const std::size_t n = traj.front().dim(0), dim = traj.front().dim(1);
  out << "step,sample_id";
  if (dim == 2) {
    out << ",x,y";
  } else {
    for (std::size_t k = 0; k < dim; ++k) out << ",c" << k;
  }
  out << '\n';
  out.precision(9);
  for (std::size_t s = 0; s < traj.size(); ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      out << s << ',' << i;
      for (std::size_t k = 0; k < dim; ++k) out << ',' << traj[s][i * dim + k];
      out << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

template <class T>
void write_scatter_svg(const std::string& path, const std::string& title, const Tensor<T>& pts,
                       const std::vector<ClassId>& labels) {
  SvgPlot plot(title);
  for (std::size_t i = 0; i < pts.dim(0); ++i) {
    plot.point(pts[2 * i], pts[2 * i + 1], i < labels.size() ? labels[i].value() : 0);
  }
  plot.write(path);
}

template <class T>
void write_trajectory_svg(const std::string& path, const std::string& title, const std::vector<Tensor<T>>& traj,
                          const std::vector<ClassId>& labels, std::size_t max_paths = 200) {
  SvgPlot plot(title);
  const std::size_t n = std::min(traj.front().dim(0), max_paths);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::array<double, 2>> pts;
    for (const auto& s : traj) pts.push_back({static_cast<double>(s[2 * i]), static_cast<double>(s[2 * i + 1])});
    plot.polyline(pts, i < labels.size() ? labels[i].value() : 0);
  }
  plot.write(path);
}

inline std::string resolve_in(const OutputDir& out, const std::string& p) {
  return fs::path(p).is_absolute() ? p : out.path(p);
}

/// Balanced labels 0,1,...,K-1,0,1,... or one fixed class.
inline std::vector<ClassId> sample_labels(const std::string& which, std::size_t n, std::size_t classes) {
  std::vector<ClassId> out(n);
  if (which == "all") {
    for (std::size_t i = 0; i < n; ++i) out[i] = ClassId(static_cast<int>(i % classes));
  } else if (which == "null") {
    out.assign(n, ClassId::null());
  } else {
    int c = -1;
    try {
      std::size_t pos = 0;
      c = std::stoi(which, &pos);
      if (pos != which.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw UsageError("--class must be an index, 'all' or 'null', got '" + which + "'");
    }
    if (c < 0 || static_cast<std::size_t>(c) >= classes) {
      throw UsageError("--class " + which + " out of range (" + std::to_string(classes) + " classes)");
    }
    out.assign(n, ClassId(c));
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands

struct TrainArgs {
  std::string config_file, out = ".", resume, dataset;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> steps, seed;
};

inline int cmd_train(const TrainArgs& a, const std::string& argv_line) {
  ConfigEntries entries;
  std::optional<LoadedCheckpoint<float>> resumed;
  if (!a.resume.empty()) {
    resumed = load_checkpoint<float>(a.resume);
    std::istringstream in(config_to_text(resumed->config));
    entries = parse_config_entries(in, a.resume);
  }
  if (!a.config_file.empty()) {
    for (auto& e : read_config_entries(a.config_file)) entries.push_back(e);
  }
  for (const auto& s : a.sets) entries.push_back(detail::split_assignment(s));
  if (!a.dataset.empty()) entries.emplace_back("dataset", a.dataset);
  if (a.steps) entries.emplace_back("total_steps", std::to_string(*a.steps));
  if (a.seed) entries.emplace_back("seed", std::to_string(*a.seed));
  TrainConfig config = config_from_entries(entries);

  OutputDir out("train", argv_line, a.out);
  config.checkpoint_path = detail::resolve_in(out, fs::path(config.checkpoint_path).filename().string());
  config.metrics_path = detail::resolve_in(out, fs::path(config.metrics_path).filename().string());
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  std::optional<Trainer<float>> trainer;
  if (resumed) {
    const NetConfig a_net = config.net(), b_net = resumed->config.net();
    if (a_net.input_dim != b_net.input_dim || a_net.hidden_dim != b_net.hidden_dim || a_net.depth != b_net.depth ||
        a_net.num_classes != b_net.num_classes || a_net.embed_dim != b_net.embed_dim ||
        a_net.freq_dim != b_net.freq_dim) {
      throw ConfigError("network shape differs from the resumed checkpoint");
    }
    trainer.emplace(config, std::move(resumed->state));
  } else {
    trainer.emplace(config);
  }

  {
    std::ofstream snap(out.path("config.txt"), std::ios::trunc);
    if (!snap) throw IoError("cannot write " + out.path("config.txt"));
    snap << config_to_text(config);
  }
  out.add("config.txt");
  out.note("seed", std::to_string(config.seed));
  out.note("config", "config.txt");

  log::info("training " + std::to_string(config.total_steps) + " steps on " + format_dataset(config.dataset));
  const auto result = train(config, *trainer, [&](const MetricRow& r) {
    if (r.step % config.log_interval == 0) {
      log::info("step " + std::to_string(r.step) + " loss " + std::to_string(r.loss_total));
    }
  });
  out.add(fs::path(config.metrics_path).filename().string());
  for (const auto& c : result.checkpoints) out.add(fs::path(c).filename().string());
  out.write_manifest();
  std::cout << "trained " << trainer->state().step << " steps; checkpoint " << config.checkpoint_path << '\n';
  return exit_code::kOk;
}

struct SampleArgs {
  std::string ckpt, out = ".", cls = "all", params = "infer";
  int steps = 1;
  double w = 0;
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  bool no_interval = false, external = false, trajectory = false;
};

inline int cmd_sample(const SampleArgs& a, const std::string& argv_line) {
  const auto loaded = load_checkpoint<float>(a.ckpt);
  const auto& params = detail::pick_params(loaded.state, a.params);
  SampleRequest req;
  req.steps = a.steps;
  req.w = a.w;
  req.count = a.n;
  req.seed = a.seed;
  req.use_interval = !a.no_interval;
  req.t_interval = loaded.config.t_interval;
  req.base_steps = loaded.config.base_steps;
  req.w_trained_max = loaded.config.w_max;
  req.record_trajectory = a.trajectory;
  req.labels = detail::sample_labels(a.cls, a.n, loaded.config.dataset.classes);
  try {
    req.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  OutputDir out("sample", argv_line, a.out);
  out.note("seed", std::to_string(a.seed));
  out.note("checkpoint", a.ckpt);
  const auto res = a.external ? external_cfg_sample(params, req) : shortcut_sample(params, req);
  const bool planar = params.config.input_dim == 2;
  if (planar) {
    write_points_csv(out.path("samples.csv"), res.samples, res.labels);
    out.add("samples.csv");
    detail::write_scatter_svg(out.path("samples.svg"), "samples", res.samples, res.labels);
    out.add("samples.svg");
  } else {
    write_tensor_file(out.path("samples.ismt"), res.samples, res.labels);
    out.add("samples.ismt");
  }
  if (a.trajectory) {
    detail::write_trajectory_csv(out.path("trajectory.csv"), res.trajectory);
    out.add("trajectory.csv");
    if (planar) {
      detail::write_trajectory_svg(out.path("trajectory.svg"), "trajectories", res.trajectory, res.labels);
      out.add("trajectory.svg");
    }
  }
  out.write_manifest();
  std::cout << "wrote " << a.n << " samples (nfe " << res.nfe << ")\n";
  return exit_code::kOk;
}

struct AnalyzeArgs {
  std::string dataset = "bimodal", out = ".", ks = "1,8", ckpt;
  std::size_t batch = 64, seeds = 20, n = 256;
  int steps = 128;
  double w = 0;
};

inline int cmd_analyze(const AnalyzeArgs& a, const std::string& argv_line) {
  DatasetSpec spec;
  try {
    spec = parse_dataset(a.dataset);
  } catch (const DatasetError& e) {
    throw UsageError(e.what());
  }
  std::vector<std::size_t> ks;
  for (double k : detail::parse_list(a.ks, "K")) {
    if (k < 1 || k != std::floor(k)) throw UsageError("K values must be positive integers");
    ks.push_back(static_cast<std::size_t>(k));
  }
  OutputDir out("analyze-trajectories", argv_line, a.out);
  const auto rows = pairing_study<double>(spec, a.batch, ks, a.seeds);
  {
    std::ofstream csv(out.path("pairs.csv"), std::ios::trunc);
    if (!csv) throw IoError("cannot write " + out.path("pairs.csv"));
    csv << "method,K,seed,mean_crossings,mean_cost\n";
    for (const auto& r : rows) csv << r.method << ',' << r.k << ',' << r.seed << ',' << r.mean_crossings << ',' << r.mean_cost << '\n';
  }
  out.add("pairs.csv");
  std::map<std::pair<std::string, std::size_t>, std::pair<double, double>> mean;
  for (const auto& r : rows) {
    auto& m = mean[{r.method, r.k}];
    m.first += r.mean_crossings / static_cast<double>(a.seeds);
    m.second += r.mean_cost / static_cast<double>(a.seeds);
  }
  for (const auto& [key, v] : mean) {
    std::cout << key.first << (key.first == "ot" ? " K=" + std::to_string(key.second) : std::string())
              << ": mean crossings " << v.first << ", mean cost " << v.second << '\n';
  }

  // seed-0 pairing pictures
  {
    Rng rng = derive_rng(0, streams::kHeldOut);
    const auto batch = generate<double>(spec, a.batch, rng);
    const auto noise = sample_noise<double>(Shape{a.batch, 2}, rng);
    for (const auto& [name, mode] : {std::pair{"random", PoolMatching::None}, std::pair{"ot", PoolMatching::Global}}) {
      const auto mb = match_pool(noise, {batch}, mode).front();
      SvgPlot plot(std::string(name) + " pairing");
      for (std::size_t i = 0; i < a.batch; ++i) plot.segment(mb.x0[2 * i], mb.x0[2 * i + 1], mb.x1[2 * i], mb.x1[2 * i + 1]);
      const std::string file = std::string("pairs_") + name + ".svg";
      plot.write(out.path(file));
      out.add(file);
    }
  }

  if (!a.ckpt.empty()) {
    const auto loaded = load_checkpoint<float>(a.ckpt);
    if (loaded.config.net().input_dim != 2) throw UsageError("trajectory analysis needs a 2D model");
    SampleRequest req;
    req.steps = a.steps;
    req.w = a.w;
    req.count = a.n;
    req.t_interval = loaded.config.t_interval;
    req.base_steps = loaded.config.base_steps;
    req.record_trajectory = true;
    req.labels = detail::sample_labels("all", a.n, loaded.config.dataset.classes);
    const auto res = shortcut_sample(loaded.state.ema.infer, req);
    Rng rng = derive_rng(0, streams::kHeldOut, 1);
    const auto ref = generate<float>(loaded.config.dataset, a.n, rng);
    const auto st = trajectory_stats(res.trajectory, &ref.x1);
    std::ofstream csv(out.path("trajectory_stats.csv"), std::ios::trunc);
    if (!csv) throw IoError("cannot write " + out.path("trajectory_stats.csv"));
    csv << "steps,crossing_count,mean_curvature,endpoint_energy_distance\n"
        << a.steps << ',' << st.crossing_count << ',' << st.mean_curvature << ',' << st.endpoint_energy_distance << '\n';
    out.add("trajectory_stats.csv");
    detail::write_trajectory_csv(out.path("trajectory.csv"), res.trajectory);
    out.add("trajectory.csv");
    detail::write_trajectory_svg(out.path("trajectory.svg"), "reverse trajectories", res.trajectory, res.labels);
    out.add("trajectory.svg");
    std::cout << "reverse trajectories: crossings " << st.crossing_count << ", mean curvature " << st.mean_curvature
              << ", endpoint energy distance " << st.endpoint_energy_distance << '\n';
  }
  out.write_manifest();
  return exit_code::kOk;
}

struct VerifyArgs {
  int n = 8;
  double w = 1.5;
  std::string base = "constant", out, x0 = "0.1,-0.2";
  std::size_t lattice = 64;
  std::uint64_t seed = 0;
  std::optional<double> tol;
};

inline int cmd_verify(const VerifyArgs& a, const std::string& argv_line) {
  BaseField base;
  Rng rng = derive_rng(a.seed, streams::kInit);
  if (a.base == "constant") {
    std::uniform_real_distribution<double> u(-1, 1);
    base = constant_base({u(rng), u(rng)}, {u(rng), u(rng)});
  } else if (a.base == "affine") {
    base = affine_base(rng);
  } else if (a.base == "smooth") {
    base = smooth_base(rng);
  } else {
    throw UsageError("--base must be constant, affine or smooth");
  }
  const auto xy = detail::parse_list(a.x0, "x0");
  if (xy.size() != 2) throw UsageError("--x0 expects two values");
  IdealModelOptions opt;
  opt.lattice = a.lattice;
  IdealModel model = [&] {
    try {
      return build_ideal_model(a.n, a.w, base, opt);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }();
  const auto rep = verify_prop1(model, {xy[0], xy[1]});
  std::cout.precision(17);
  std::cout << "N=" << a.n << " w=" << a.w << " base=" << a.base << " compounded_w=" << rep.compounded_w << '\n'
            << "lhs=" << rep.lhs[0] << ',' << rep.lhs[1] << '\n'
            << "rhs=" << rep.rhs[0] << ',' << rep.rhs[1] << '\n'
            << "max_abs_err=" << rep.max_abs_err << '\n';
  if (!a.out.empty()) {
    OutputDir out("verify-prop1", argv_line, a.out);
    std::ofstream csv(out.path("prop1.csv"), std::ios::trunc);
    if (!csv) throw IoError("cannot write " + out.path("prop1.csv"));
    csv.precision(17);
    csv << "N,w,base,compounded_w,lhs_x,lhs_y,rhs_x,rhs_y,max_abs_err\n"
        << a.n << ',' << a.w << ',' << a.base << ',' << rep.compounded_w << ',' << rep.lhs[0] << ',' << rep.lhs[1]
        << ',' << rep.rhs[0] << ',' << rep.rhs[1] << ',' << rep.max_abs_err << '\n';
    out.add("prop1.csv");
    out.note("seed", std::to_string(a.seed));
    out.write_manifest();
  }
  if (a.tol && !(rep.max_abs_err <= *a.tol)) {
    throw VerificationFailure("max_abs_err " + std::to_string(rep.max_abs_err) + " exceeds tolerance");
  }
  return exit_code::kOk;
}

struct ProbeArgs {
  std::string ckpt, out = ".", ws = "0,0.5,1,1.5,2";
  int steps = 128;
  std::size_t per_class = 256, seeds = 1;
  bool no_interval = false;
};

inline int cmd_probe(const ProbeArgs& a, const std::string& argv_line) {
  const auto loaded = load_checkpoint<float>(a.ckpt);
  if (loaded.config.dataset.kind != DatasetKind::ClassMixture2D && loaded.config.dataset.kind != DatasetKind::Bimodal2D) {
    throw UsageError("probe-guidance needs a model trained on a labelled 2D mixture");
  }
  const auto ws = detail::parse_list(a.ws, "w");
  OutputDir out("probe-guidance", argv_line, a.out);
  std::ofstream csv(out.path("probe.csv"), std::ios::trunc);
  if (!csv) throw IoError("cannot write " + out.path("probe.csv"));
  csv << "seed,w,mean_distance,mean_std\n";
  std::vector<ProbeRow> mean(ws.size());
  for (std::size_t s = 0; s < a.seeds; ++s) {
    ProbeOptions opt;
    opt.steps = a.steps;
    opt.per_class = a.per_class;
    opt.seed = s;
    opt.base_steps = loaded.config.base_steps;
    opt.t_interval = loaded.config.t_interval;
    opt.use_interval = !a.no_interval;
    const auto rows = guidance_probe(loaded.state.ema.infer, probe_centers(loaded.config.dataset), ws, opt);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      csv << s << ',' << rows[i].w << ',' << rows[i].mean_distance << ',' << rows[i].mean_std << '\n';
      mean[i].w = rows[i].w;
      mean[i].mean_distance += rows[i].mean_distance / static_cast<double>(a.seeds);
      mean[i].mean_std += rows[i].mean_std / static_cast<double>(a.seeds);
    }
  }
  out.add("probe.csv");
  out.write_manifest();
  std::cout << "w,mean_distance,mean_std\n";
  for (const auto& r : mean) std::cout << r.w << ',' << r.mean_distance << ',' << r.mean_std << '\n';
  return exit_code::kOk;
}

struct ExportArgs {
  std::string dataset = "mixture:4", out = ".";
  std::size_t n = 1000;
  std::uint64_t seed = 0;
};

inline int cmd_export(const ExportArgs& a, const std::string& argv_line) {
  DatasetSpec spec;
  try {
    spec = parse_dataset(a.dataset);
  } catch (const DatasetError& e) {
    throw UsageError(e.what());
  }
  OutputDir out("export-dataset", argv_line, a.out);
  out.note("seed", std::to_string(a.seed));
  Rng rng = derive_rng(a.seed, streams::kHeldOut);
  const auto data = generate<float>(spec, a.n, rng);
  if (data_dim(spec) == 2) {
    write_points_csv(out.path("data.csv"), data.x1, data.labels);
    out.add("data.csv");
    detail::write_scatter_svg(out.path("data.svg"), format_dataset(spec), data.x1, data.labels);
    out.add("data.svg");
  } else {
    write_tensor_file(out.path("data.ismt"), data.x1, data.labels);
    out.add("data.ismt");
  }
  out.write_manifest();
  std::cout << "wrote " << a.n << " samples of " << format_dataset(spec) << '\n';
  return exit_code::kOk;
}

// ---------------------------------------------------------------------------

inline int fail(const std::string& category, const std::string& msg, int code) {
  std::cerr << "error: " << category << ": " << msg << '\n';
  return code;
}

inline int run(int argc, const char* const* argv) {
  CLI::App app{"Improved shortcut flow models: training, sampling and analysis"};
  app.require_subcommand(1, 1);
  const std::string argv_line = detail::join_argv(argc, argv);

  TrainArgs train_a;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", train_a.config_file, "key=value config file")->check(CLI::ExistingFile);
  train->add_option("--set", train_a.sets, "override a config key (key=value), repeatable");
  train->add_option("--out", train_a.out, "output directory");
  train->add_option("--resume", train_a.resume, "continue from a checkpoint");
  train->add_option("--dataset", train_a.dataset, "dataset spec, e.g. mixture:4");
  train->add_option("--steps", train_a.steps, "total optimizer steps");
  train->add_option("--seed", train_a.seed, "random seed");

  SampleArgs sample_a;
  auto* sample = app.add_subcommand("sample", "draw samples from a checkpoint");
  sample->add_option("--ckpt", sample_a.ckpt, "checkpoint file")->required();
  sample->add_option("--steps", sample_a.steps, "sampling steps (power of two dividing N)");
  sample->add_option("--w", sample_a.w, "guidance scale");
  sample->add_option("--n", sample_a.n, "number of samples")->check(CLI::PositiveNumber);
  sample->add_option("--class", sample_a.cls, "class index, 'all' (balanced) or 'null'");
  sample->add_option("--seed", sample_a.seed, "noise seed");
  sample->add_option("--params", sample_a.params, "infer | target | online");
  sample->add_option("--out", sample_a.out, "output directory");
  sample->add_flag("--no-interval", sample_a.no_interval, "apply guidance at every t");
  sample->add_flag("--external-cfg", sample_a.external, "two-evaluation guidance baseline");
  sample->add_flag("--trajectory", sample_a.trajectory, "also write every intermediate state");

  AnalyzeArgs analyze_a;
  auto* analyze = app.add_subcommand("analyze-trajectories", "pairing crossings and reverse-trajectory statistics");
  analyze->add_option("--dataset", analyze_a.dataset, "2D dataset spec");
  analyze->add_option("--batch", analyze_a.batch, "pairs per batch (M)");
  analyze->add_option("--K", analyze_a.ks, "comma-separated pool sizes");
  analyze->add_option("--seeds", analyze_a.seeds, "number of seeds");
  analyze->add_option("--ckpt", analyze_a.ckpt, "checkpoint for reverse trajectories");
  analyze->add_option("--steps", analyze_a.steps, "sampling steps for reverse trajectories");
  analyze->add_option("--w", analyze_a.w, "guidance scale for reverse trajectories");
  analyze->add_option("--n", analyze_a.n, "number of reverse trajectories");
  analyze->add_option("--out", analyze_a.out, "output directory");

  VerifyArgs verify_a;
  auto* verify = app.add_subcommand("verify-prop1", "check the compounded-guidance identity on an ideal model");
  verify->add_option("--N", verify_a.n, "smallest-step count (power of two)");
  verify->add_option("--w", verify_a.w, "guidance scale");
  verify->add_option("--base", verify_a.base, "constant | affine | smooth");
  verify->add_option("--lattice", verify_a.lattice, "lattice points per axis");
  verify->add_option("--seed", verify_a.seed, "seed for the base field");
  verify->add_option("--x0", verify_a.x0, "start point x,y");
  verify->add_option("--tol", verify_a.tol, "fail when max_abs_err exceeds this");
  verify->add_option("--out", verify_a.out, "output directory for the report");

  ProbeArgs probe_a;
  auto* probe = app.add_subcommand("probe-guidance", "distance to class centers as a function of w");
  probe->add_option("--ckpt", probe_a.ckpt, "checkpoint file")->required();
  probe->add_option("--w", probe_a.ws, "comma-separated guidance scales");
  probe->add_option("--steps", probe_a.steps, "sampling steps");
  probe->add_option("--per-class", probe_a.per_class, "samples per class");
  probe->add_option("--seeds", probe_a.seeds, "number of sampling seeds");
  probe->add_flag("--no-interval", probe_a.no_interval, "apply guidance at every t");
  probe->add_option("--out", probe_a.out, "output directory");

  ExportArgs export_a;
  auto* exp = app.add_subcommand("export-dataset", "write samples of a synthetic dataset");
  exp->add_option("--dataset", export_a.dataset, "dataset spec");
  exp->add_option("--n", export_a.n, "number of samples")->check(CLI::PositiveNumber);
  exp->add_option("--seed", export_a.seed, "seed");
  exp->add_option("--out", export_a.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), exit_code::kUsage);
  }

  try {
    if (*train) return cmd_train(train_a, argv_line);
    if (*sample) return cmd_sample(sample_a, argv_line);
    if (*analyze) return cmd_analyze(analyze_a, argv_line);
    if (*verify) return cmd_verify(verify_a, argv_line);
    if (*probe) return cmd_probe(probe_a, argv_line);
    if (*exp) return cmd_export(export_a, argv_line);
    return fail("usage", "no subcommand", exit_code::kUsage);
  } catch (const UsageError& e) {
    return fail("usage", e.what(), exit_code::kUsage);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), exit_code::kConfig);
  } catch (const DatasetError& e) {
    return fail("config", e.what(), exit_code::kConfig);
  } catch (const CheckpointError& e) {
    return fail("checkpoint", e.what(), exit_code::kCheckpoint);
  } catch (const IoError& e) {
    return fail("io", e.what(), exit_code::kIo);
  } catch (const TrainingError& e) {
    return fail("training", e.what(), exit_code::kTraining);
  } catch (const VerificationFailure& e) {
    return fail("verification", e.what(), exit_code::kVerification);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), exit_code::kInternal);
  }
}

}  // namespace ism::cli
