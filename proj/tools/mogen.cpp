// mogen: synthesise data, train, generate, evaluate and plot from the command line.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence.
// MOGEN_OUTPUT_DIR overrides run.output_dir from the config file; explicit
// flags and --set overrides take precedence over both.

#include "mogen/checkpoint.hpp"
#include "mogen/config.hpp"
#include "mogen/errors.hpp"
#include "mogen/evaluation.hpp"
#include "mogen/motion_io.hpp"
#include "mogen/synth.hpp"
#include "mogen/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace mogen;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::string> run_id;
};

RunConfig resolve(const Common& common, const std::vector<std::string>& flag_sets = {}) {
  RunConfig c = common.config_path.empty() ? RunConfig::defaults() : load_run_config(common.config_path);
  if (const char* env = std::getenv("MOGEN_OUTPUT_DIR"); env != nullptr && *env != '\0') c.output_dir = env;
  for (const auto& s : common.sets) c.set(s);
  for (const auto& s : flag_sets) c.set(s);
  if (common.seed) c.seed = *common.seed;
  if (common.output_dir) c.output_dir = *common.output_dir;
  if (common.run_id) c.run_id = *common.run_id;
  c.validate();
  return c;
}

fs::path run_dir(const RunConfig& c) {
  const fs::path dir = fs::path(c.output_dir) / c.run_id;
  fs::create_directories(dir);
  return dir;
}

fs::path or_default(const std::string& given, const fs::path& fallback) {
  return given.empty() ? fallback : fs::path(given);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string format_flag(const char* key, double v) {
  std::ostringstream o;
  o << key << '=' << std::setprecision(17) << v;
  return o.str();
}

// ---- synth-data ------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::string json;
  std::optional<std::int64_t> persons, per_class, frames, joints;
  std::optional<std::uint64_t> data_seed;
};

int synth_data(const Common& common, const SynthArgs& a) {
  std::vector<std::string> sets;
  if (a.persons) sets.push_back("data.persons=" + std::to_string(*a.persons));
  if (a.per_class) sets.push_back("data.per_class=" + std::to_string(*a.per_class));
  if (a.frames) sets.push_back("data.frames=" + std::to_string(*a.frames));
  if (a.joints) sets.push_back("data.joints=" + std::to_string(*a.joints));
  if (a.data_seed) sets.push_back("data.seed=" + std::to_string(*a.data_seed));
  const RunConfig c = resolve(common, sets);
  Rng rng(c.data_seed);
  const LabeledDataset data = synth_dataset(c.data, rng);
  const fs::path out = or_default(a.out, run_dir(c) / "data.mseq");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_dataset(data, out);
  if (!a.json.empty()) write_text(a.json, dataset_to_json(data));

  const auto counts = data.class_counts();
  std::cout << "wrote " << out.string() << ": " << data.size() << " sequences, P=" << c.data.persons
            << " T=" << c.data.frames << " J=" << c.data.joints << "\n";
  for (int k = 0; k < data.class_count; ++k) {
    std::cout << "  " << std::setw(3) << k << "  " << std::left << std::setw(20) << data.class_names[k] << std::right
              << std::setw(5) << counts[k] << "\n";
  }
  return 0;
}

// ---- train-gan -------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string resume;
  std::optional<std::int64_t> iterations;
  std::optional<std::int64_t> checkpoint_every;
  std::int64_t progress_every = 100;
};

int train_gan(const Common& common, const TrainArgs& a) {
  std::vector<std::string> sets;
  if (a.iterations) sets.push_back("train.max_iterations=" + std::to_string(*a.iterations));
  if (a.checkpoint_every) sets.push_back("train.checkpoint_every=" + std::to_string(*a.checkpoint_every));
  const RunConfig c = resolve(common, sets);
  const LabeledDataset data = load_dataset(a.data);
  c.check_dataset(data);

  GanTrainer trainer(data, c.generator_for(data), c.discriminator_for(data), c.gp, c.train_config());
  if (!a.resume.empty()) {
    restore_training_state(a.resume, trainer);
    std::cout << "resumed at iteration " << trainer.iteration() << " from " << a.resume << "\n";
  }
  const fs::path dir = run_dir(c);
  write_text(dir / "config.ini", c.text());
  const nlohmann::json provenance = {{"config_hash", c.hash()}, {"dataset_hash", sha256_file(a.data)}};
  const GPConfig gp = trainer.latents().gp_config();

  auto save_all = [&] {
    nlohmann::json extra = provenance;
    extra["iteration"] = trainer.iteration();
    save_training_state(dir / "state.ck", trainer, gp, extra);
    save_generator(dir / "generator.ck", trainer.generator(), c.prior, gp, extra);
    trainer.log().write_csv(dir / "train_log.csv");
  };
  const auto start = std::chrono::steady_clock::now();
  trainer.on_iteration = [&](const GanTrainer& t, const TrainRecord& r) {
    if (c.checkpoint_every > 0 && t.iteration() % c.checkpoint_every == 0) save_all();
    if (a.progress_every > 0 && t.iteration() % a.progress_every == 0) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cerr << "iter " << t.iteration() << "/" << t.planned_iterations() << "  d_loss " << r.d_loss << "  g_loss "
                << r.g_loss << "  gap " << r.gap << "  (" << static_cast<long>(secs) << "s)\n";
    }
  };
  trainer.run();
  save_all();
  std::cout << "trained " << trainer.iteration() << " iterations; wrote " << (dir / "generator.ck").string() << ", "
            << (dir / "state.ck").string() << ", " << (dir / "train_log.csv").string() << "\n";
  return 0;
}

// ---- train-recognizer ------------------------------------------------------

struct RecognizerArgs {
  std::string data;
  std::string out;
  std::optional<std::int64_t> epochs;
};

int train_recognizer_cmd(const Common& common, const RecognizerArgs& a) {
  std::vector<std::string> sets;
  if (a.epochs) sets.push_back("recognizer.epochs=" + std::to_string(*a.epochs));
  const RunConfig c = resolve(common, sets);
  const LabeledDataset data = load_dataset(a.data);
  auto [train, val] = split_dataset(data, c.val_fraction, c.data_seed);
  RecognizerReport report;
  const Recognizer rec = train_recognizer(train, val, c.recognizer_for(data), &report);
  const fs::path out = or_default(a.out, run_dir(c) / "recognizer.ck");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_recognizer(out, rec,
                  {{"config_hash", c.hash()},
                   {"dataset_hash", sha256_file(a.data)},
                   {"train_accuracy", report.train_accuracy},
                   {"validation_accuracy", report.validation_accuracy},
                   {"epoch_loss", report.epoch_loss}});
  std::cout << "recognizer (P=" << rec.config().persons << ", F=" << rec.config().feature_width()
            << "): train accuracy " << report.train_accuracy << ", validation accuracy " << report.validation_accuracy
            << " on " << val.size() << " samples; wrote " << out.string() << "\n";
  return 0;
}

// ---- generate --------------------------------------------------------------

struct GenerateArgs {
  std::string checkpoint;
  int label = 0;
  std::int64_t count = 1;
  std::string out;
  std::string json;
};

int generate_cmd(const Common& common, const GenerateArgs& a) {
  const RunConfig c = resolve(common);
  const GeneratorBundle b = load_generator(a.checkpoint);
  const GeneratorConfig& g = b.generator.config();
  if (a.label < 0 || a.label >= g.class_count) {
    throw ConfigError("--label " + std::to_string(a.label) + " is not a class id of this generator (0.." +
                      std::to_string(g.class_count - 1) + ")");
  }
  if (a.count < 1) throw ConfigError("--count must be positive");
  const LatentSampler latents(g, b.prior, b.gp);
  std::seed_seq seq{static_cast<std::uint32_t>(c.seed), static_cast<std::uint32_t>(c.seed >> 32), 20u};
  Rng rng(seq);
  LabeledDataset out;
  out.class_count = static_cast<int>(g.class_count);
  out.topology = SkeletonTopology::for_joint_count(g.joints);
  {
    ag::NoGradGuard guard;
    const std::vector<int> labels(static_cast<std::size_t>(a.count), a.label);
    out.sequences = b.generator.to_motion(b.generator.forward(latents.batch(a.count, rng), labels));
    out.labels = labels;
  }
  const fs::path path = or_default(a.out, run_dir(c) / ("generated_" + std::to_string(a.label) + ".mseq"));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_dataset(out, path);
  if (!a.json.empty()) write_text(a.json, dataset_to_json(out));
  std::cout << "wrote " << a.count << " sequences of class " << a.label << " to " << path.string() << "\n";
  return 0;
}

// ---- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  std::string generator;
  std::string recognizer;
  std::string single_recognizer;
  std::string data;
  std::string out;
  bool real_vs_real = false;
  std::optional<std::int64_t> per_class;
};

int evaluate_cmd(const Common& common, const EvaluateArgs& a) {
  std::vector<std::string> sets;
  if (a.per_class) sets.push_back("eval.per_class=" + std::to_string(*a.per_class));
  const RunConfig c = resolve(common, sets);
  const LabeledDataset real = load_dataset(a.data);
  if (real.sequences.empty()) throw DataError("evaluation dataset is empty");
  if (real.sequences.front().persons > 1 && a.single_recognizer.empty()) {
    throw ConfigError("multi-person data needs --single-recognizer (a single-person recognizer) for FID^a");
  }
  if (!a.real_vs_real && a.generator.empty()) throw ConfigError("evaluate needs --generator or --real-vs-real");
  const Recognizer whole = load_recognizer(a.recognizer);
  std::optional<Recognizer> single;
  if (!a.single_recognizer.empty()) single = load_recognizer(a.single_recognizer);
  const Recognizer* sp = single ? &*single : nullptr;

  MetricsReport report;
  std::string config_hash = c.hash();
  if (a.real_vs_real) {
    report = evaluate_samples(real, real.sequences, real.labels, whole, sp);
  } else {
    const GeneratorBundle b = load_generator(a.generator);
    if (b.extra.contains("config_hash")) config_hash = b.extra.at("config_hash").get<std::string>();
    const LatentSampler latents(b.generator.config(), b.prior, b.gp);
    report = evaluate(b.generator, latents, whole, sp, real, c.eval);
  }
  report.run_id = c.run_id;
  report.config_hash = config_hash;
  report.recognizer_hash = sha256_file(a.recognizer);
  if (sp != nullptr) report.single_recognizer_hash = sha256_file(a.single_recognizer);
  const fs::path out = or_default(a.out, run_dir(c) / "metrics.json");
  write_text(out, report.to_json() + "\n");
  std::cout << report.to_json() << "\n";
  return 0;
}

// ---- plot ------------------------------------------------------------------

std::string svg_number(double v) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(2) << v;
  return o.str();
}

// Line chart of named series over a shared x axis.
std::string line_chart(const std::string& title, const std::vector<double>& x,
                       const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  const double w = 720, h = 400, left = 60, right = 150, top = 40, bottom = 40;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& [name, ys] : series) {
    for (double y : ys) {
      if (std::isfinite(y)) lo = std::min(lo, y), hi = std::max(hi, y);
    }
  }
  if (!(hi > lo)) hi = lo + 1;
  const double x0 = x.front(), x1 = x.back() > x.front() ? x.back() : x.front() + 1;
  auto px = [&](double v) { return left + (v - x0) / (x1 - x0) * (w - left - right); };
  auto py = [&](double v) { return top + (hi - v) / (hi - lo) * (h - top - bottom); };
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n"
    << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n";
  for (double v : {lo, 0.5 * (lo + hi), hi}) {
    s << "<text x=\"4\" y=\"" << svg_number(py(v) + 4) << "\" font-family=\"sans-serif\" font-size=\"10\">"
      << svg_number(v) << "</text>\n";
  }
  s << "<text x=\"" << left << "\" y=\"" << h - 20 << "\" font-family=\"sans-serif\" font-size=\"10\">" << x0
    << "</text>\n<text x=\"" << w - right - 30 << "\" y=\"" << h - 20
    << "\" font-family=\"sans-serif\" font-size=\"10\">" << x.back() << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& [name, ys] = series[k];
    const char* colour = colours[k % 5];
    s << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1\" points=\"";
    for (std::size_t i = 0; i < ys.size(); ++i) {
      if (std::isfinite(ys[i])) s << svg_number(px(x[i])) << ',' << svg_number(py(ys[i])) << ' ';
    }
    s << "\"/>\n<text x=\"" << w - right + 10 << "\" y=\"" << top + 16 * k + 10 << "\" fill=\"" << colour
      << "\" font-family=\"sans-serif\" font-size=\"12\">" << name << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string bar_chart(const std::string& title, const std::vector<std::pair<std::string, double>>& bars) {
  const double w = 560, h = 320, left = 40, top = 40, bottom = 50, slot = (w - 2 * left) / bars.size();
  double hi = 0;
  for (const auto& b : bars) hi = std::max(hi, b.second);
  if (!(hi > 0)) hi = 1;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double bh = bars[i].second / hi * (h - top - bottom);
    const double x = left + i * slot + slot * 0.15;
    s << "<rect x=\"" << svg_number(x) << "\" y=\"" << svg_number(h - bottom - bh) << "\" width=\""
      << svg_number(slot * 0.7) << "\" height=\"" << svg_number(bh) << "\" fill=\"#1f77b4\"/>\n"
      << "<text x=\"" << svg_number(x) << "\" y=\"" << h - bottom + 16 << "\" font-family=\"sans-serif\" font-size=\"11\">"
      << bars[i].first << "</text>\n"
      << "<text x=\"" << svg_number(x) << "\" y=\"" << svg_number(h - bottom - bh - 4)
      << "\" font-family=\"sans-serif\" font-size=\"10\">" << svg_number(bars[i].second) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

struct PlotArgs {
  std::string input;
  std::string out;
};

int plot_cmd(const Common&, const PlotArgs& a) {
  const std::string text = read_text(a.input);
  std::string svg;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("plot: " + a.input + " is not valid JSON: " + e.what());
    }
    if (!j.contains("metrics")) throw DataError("plot: " + a.input + " has no metrics");
    std::vector<std::pair<std::string, double>> bars;
    for (const auto& [k, v] : j.at("metrics").items()) {
      if (v.is_number()) bars.emplace_back(k, v.get<double>());
    }
    if (bars.empty()) throw DataError("plot: no numeric metrics in " + a.input);
    svg = bar_chart("metrics " + j.value("run_id", std::string()), bars);
  } else {
    const TrainLog log = TrainLog::from_csv(text);
    if (log.records.empty()) throw DataError("plot: training log " + a.input + " has no records");
    std::vector<double> x, d, g, gap, pen;
    for (const auto& r : log.records) {
      x.push_back(static_cast<double>(r.iter));
      d.push_back(r.d_loss);
      g.push_back(r.g_loss);
      gap.push_back(r.gap);
      pen.push_back(r.penalty);
    }
    svg = line_chart("training losses", x, {{"d_loss", d}, {"g_loss", g}, {"gap", gap}, {"penalty", pen}});
  }
  write_text(a.out, svg);
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

// ---- export-json -----------------------------------------------------------

struct ExportArgs {
  std::string input;
  std::string out;
};

int export_json(const Common&, const ExportArgs& a) {
  write_text(a.out, dataset_to_json(load_dataset(a.input)));
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Action-conditioned multi-person motion generation"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config_path, "Run configuration (sectioned key=value file)")
      ->check(CLI::ExistingFile);
  app.add_option("--set", common.sets, "Override a config entry: section.key=value (repeatable)");
  app.add_option("--seed", common.seed, "Run seed (run.seed)");
  app.add_option("--output-dir", common.output_dir, "Output directory (run.output_dir)");
  app.add_option("--run-id", common.run_id, "Run name (run.run_id); outputs go to <output-dir>/<run-id>");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "Write a procedural labelled motion dataset (MSEQ1)");
  s->add_option("--out", synth.out, "Output file (default <run dir>/data.mseq)");
  s->add_option("--json", synth.json, "Also write the JSON mirror here");
  s->add_option("--persons", synth.persons, "Persons per sequence (data.persons)");
  s->add_option("--per-class", synth.per_class, "Samples per class (data.per_class)");
  s->add_option("--frames", synth.frames, "Frames per sequence (data.frames)");
  s->add_option("--joints", synth.joints, "Pose nodes: 5 or 24 (data.joints)");
  s->add_option("--data-seed", synth.data_seed, "Dataset seed (data.seed)");

  TrainArgs train;
  auto* t = app.add_subcommand("train-gan", "Train generator and critic; checkpoints and CSV log in the run dir");
  t->add_option("--data", train.data, "Training dataset (MSEQ1)")->required()->check(CLI::ExistingFile);
  t->add_option("--resume", train.resume, "Continue from a training-state checkpoint")->check(CLI::ExistingFile);
  t->add_option("--iterations", train.iterations, "Generator iterations (train.max_iterations)");
  t->add_option("--checkpoint-every", train.checkpoint_every, "Iterations between checkpoints (train.checkpoint_every)");
  t->add_option("--progress-every", train.progress_every, "Iterations between progress lines (0: quiet)");

  RecognizerArgs rec;
  auto* r = app.add_subcommand("train-recognizer", "Train the evaluation recognizer on a dataset");
  r->add_option("--data", rec.data, "Labelled dataset (MSEQ1)")->required()->check(CLI::ExistingFile);
  r->add_option("--out", rec.out, "Checkpoint file (default <run dir>/recognizer.ck)");
  r->add_option("--epochs", rec.epochs, "Training epochs (recognizer.epochs)");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Sample sequences of one class from a generator checkpoint");
  g->add_option("--checkpoint", gen.checkpoint, "Generator checkpoint")->required()->check(CLI::ExistingFile);
  g->add_option("--label", gen.label, "Class id")->required();
  g->add_option("--count", gen.count, "Number of sequences");
  g->add_option("--out", gen.out, "Output file (default <run dir>/generated_<label>.mseq)");
  g->add_option("--json", gen.json, "Also write the JSON mirror here");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Accuracy, FID_m, FID_w and FID^a of a generator against real data");
  e->add_option("--generator", ev.generator, "Generator checkpoint")->check(CLI::ExistingFile);
  e->add_option("--recognizer", ev.recognizer, "Recognizer matching the data's person count")
      ->required()
      ->check(CLI::ExistingFile);
  e->add_option("--single-recognizer", ev.single_recognizer, "Single-person recognizer for FID^a")
      ->check(CLI::ExistingFile);
  e->add_option("--data", ev.data, "Real dataset (MSEQ1)")->required()->check(CLI::ExistingFile);
  e->add_option("--out", ev.out, "Metrics JSON (default <run dir>/metrics.json)");
  e->add_flag("--real-vs-real", ev.real_vs_real, "Evaluate the real data against itself");
  e->add_option("--per-class", ev.per_class, "Generated samples per class (eval.per_class)");

  PlotArgs plot;
  auto* p = app.add_subcommand("plot", "SVG of a training log (CSV) or a metrics report (JSON)");
  p->add_option("input", plot.input, "train_log.csv or metrics.json")->required()->check(CLI::ExistingFile);
  p->add_option("--out", plot.out, "SVG file")->required();

  ExportArgs ex;
  auto* x = app.add_subcommand("export-json", "Convert an MSEQ1 file to its JSON mirror");
  x->add_option("input", ex.input, "MSEQ1 file")->required()->check(CLI::ExistingFile);
  x->add_option("--out", ex.out, "JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (s->parsed()) return synth_data(common, synth);
    if (t->parsed()) return train_gan(common, train);
    if (r->parsed()) return train_recognizer_cmd(common, rec);
    if (g->parsed()) return generate_cmd(common, gen);
    if (e->parsed()) return evaluate_cmd(common, ev);
    if (p->parsed()) return plot_cmd(common, plot);
    if (x->parsed()) return export_json(common, ex);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return 2;
  } catch (const DivergenceError& err) {
    std::cerr << "diverged: " << err.what() << "\n";
    return 4;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return 3;
  }
  return 2;
}
