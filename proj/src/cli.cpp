#include "ergorisk/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ergorisk/checks.hpp"
#include "ergorisk/errors.hpp"
#include "ergorisk/model.hpp"
#include "ergorisk/reba.hpp"
#include "ergorisk/synth.hpp"
#include "ergorisk/text.hpp"
#include "ergorisk/training.hpp"

namespace ergorisk::cli {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t threads = 1;
  bool json = false;
  int verbosity = 0;
};

RebaConfig resolve_tables(const std::string& flag) {
  if (!flag.empty()) return load_reba_config(flag);
  if (const char* env = std::getenv("ERGORISK_TABLES"); env != nullptr && *env != '\0') {
    return load_reba_config(env);
  }
  return default_reba_config();
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string histogram_text(const std::array<std::size_t, kNumRiskClasses>& h) {
  std::string s;
  for (int c = 1; c <= kNumRiskClasses; ++c) {
    if (c > 1) s += ' ';
    s += std::to_string(c) + ":" + std::to_string(h[c - 1]);
  }
  return s;
}

std::string histogram_json(const std::array<std::size_t, kNumRiskClasses>& h) {
  ordered_json j = ordered_json::object();
  for (int c = 1; c <= kNumRiskClasses; ++c) j[std::to_string(c)] = h[c - 1];
  return j.dump();
}

struct ScoreArgs {
  std::string in;
  std::string tables;
  double vis_threshold = kDefaultVisibilityThreshold;
};

int cmd_score(const ScoreArgs& a, const Globals&, std::ostream& out) {
  const RebaConfig cfg = resolve_tables(a.tables);
  const fs::path in(a.in);
  for (const Skeleton& s : parse_landmark_file(in, format_from_path(in))) {
    out << reba_result_to_json(assess(filter_visibility(s, a.vis_threshold), cfg)) << '\n';
  }
  return kOk;
}

struct AnnotateArgs {
  std::string in;
  std::string out;
  std::string tables;
  std::string overlay_dir;
  double vis_threshold = kDefaultVisibilityThreshold;
};

int cmd_annotate(const AnnotateArgs& a, const Globals& g, std::ostream& out) {
  const RebaConfig cfg = resolve_tables(a.tables);
  AnnotateOptions opts;
  opts.visibility_threshold = a.vis_threshold;
  opts.threads = g.threads;
  const AnnotationSummary summary = annotate_dataset(a.in, a.out, cfg, opts);
  if (!a.overlay_dir.empty()) {
    const fs::path dir(a.overlay_dir);
    fs::create_directories(dir);
    const fs::path in(a.in);
    for (const Skeleton& s : parse_landmark_file(in, format_from_path(in))) {
      write_text(dir / (s.id + ".svg"), overlay_svg(filter_visibility(s, a.vis_threshold)));
    }
  }
  if (g.json) {
    out << summary.to_json() << '\n';
  } else {
    out << "annotated " << summary.accepted << " of " << summary.total << " skeletons, " << summary.rejects.size()
        << " rejected\n";
    out << "classes " << histogram_text(summary.histogram) << '\n';
    for (const auto& r : summary.rejects) out << "rejected " << r.id << ": " << r.reason << '\n';
  }
  return kOk;
}

struct SynthArgs {
  std::size_t n = 0;
  std::string out;
  std::string tables;
  std::size_t image_size = 64;
};

int cmd_synth(const SynthArgs& a, const Globals& g, std::ostream& out) {
  synth::GenOptions opts;
  opts.image_size = a.image_size;
  opts.threads = g.threads;
  const synth::Manifest m = synth::gen_dataset(a.n, g.seed, a.out, resolve_tables(a.tables), opts);
  if (g.json) {
    out << "{\"n\":" << m.entries.size() << ",\"seed\":" << g.seed << ",\"histogram\":" << histogram_json(m.histogram)
        << "}\n";
  } else {
    out << "generated " << m.entries.size() << " samples in " << a.out << '\n';
    out << "classes " << histogram_text(m.histogram) << '\n';
  }
  return kOk;
}

struct TrainArgs {
  std::string data;
  std::string model_cfg;
  std::string train_cfg;
  std::string out;
  std::string log;
};

int cmd_train(const TrainArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  const ViskGatConfig mcfg = load_model_config(a.model_cfg);
  training::TrainConfig tcfg = training::load_train_config(a.train_cfg);
  if (g.seed_given) tcfg.seed = g.seed;
  const auto data = training::load_dataset(a.data, mcfg.image_size);
  std::vector<int> labels;
  labels.reserve(data.size());
  for (const auto& s : data) labels.push_back(s.label);
  const auto split =
      training::stratified_split(labels, tcfg.train_fraction, tcfg.val_fraction, tcfg.test_fraction, tcfg.seed);

  Model model(mcfg, tcfg.seed);
  const auto result = training::train(model, tcfg, data, split, [&](const training::EpochLog& row) {
    if (g.verbosity > 0) {
      err << "epoch " << row.epoch << " loss " << text::format_double(row.train_loss) << " acc "
          << text::format_double(row.train_acc) << '\n';
    }
  });
  import_parameters(model, result.best_parameters);

  const fs::path ckpt(a.out);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_model(model, ckpt);
  write_text(ckpt.string() + ".split.json", training::split_to_json(split));
  const fs::path log = a.log.empty() ? fs::path(ckpt.string() + ".log.csv") : fs::path(a.log);
  write_text(log, training::log_csv(result.log));

  if (g.json) {
    ordered_json j;
    j["epochs"] = result.log.size();
    j["best_epoch"] = result.best_epoch;
    j["best_val_acc"] = std::isnan(result.best_val_acc) ? ordered_json(nullptr) : ordered_json(result.best_val_acc);
    j["final_train_acc"] = result.final_train_acc;
    j["checkpoint"] = ckpt.string();
    out << j.dump() << '\n';
  } else {
    out << "trained " << result.log.size() << " epochs on " << split.train.size() << " samples\n";
    out << "best epoch " << result.best_epoch << ", val acc "
        << (std::isnan(result.best_val_acc) ? std::string("n/a") : text::format_double(result.best_val_acc)) << '\n';
    out << "checkpoint " << ckpt.string() << '\n';
  }
  return kOk;
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string split = "test";
  std::string report;
};

int cmd_eval(const EvalArgs& a, const Globals& g, std::ostream& out) {
  const Model model = load_model(a.ckpt);
  const auto data = training::load_dataset(a.data, model.config().image_size);
  std::vector<std::size_t> indices;
  if (a.split == "all") {
    for (std::size_t i = 0; i < data.size(); ++i) indices.push_back(i);
  } else {
    const fs::path split_path = a.ckpt + ".split.json";
    if (!fs::exists(split_path)) throw ConfigError("no split file " + split_path.string() + "; use --split all");
    const auto split = training::parse_split(read_text(split_path));
    indices = a.split == "train" ? split.train : a.split == "val" ? split.val : split.test;
  }
  for (const auto i : indices) {
    if (i >= data.size()) throw ConfigError("split index " + std::to_string(i) + " outside the dataset");
  }
  const metrics::EvalReport report = training::evaluate(model, data, indices, g.threads);
  if (!a.report.empty()) write_text(a.report, report.to_json() + "\n");
  out << (g.json ? report.to_json() + "\n" : report.to_text());
  return kOk;
}

int cmd_gradcheck(std::size_t seeds, const Globals& g, std::ostream& out) {
  bool ok = true;
  ordered_json rows = ordered_json::array();
  for (std::size_t k = 0; k < seeds; ++k) {
    const std::uint64_t seed = g.seed + k;
    for (const auto& r : checks::gradcheck_suite(seed)) {
      ok = ok && r.passed;
      if (g.json) {
        rows.push_back({{"name", r.name},
                        {"seed", seed},
                        {"max_rel_err", r.max_relative_error},
                        {"checked", r.checked},
                        {"skipped", r.skipped_kinks},
                        {"refined", r.refined},
                        {"passed", r.passed}});
      } else {
        out << (r.passed ? "PASS " : "FAIL ") << r.name << " seed=" << seed
            << " max_rel_err=" << text::format_double(r.max_relative_error) << " checked=" << r.checked
            << " skipped=" << r.skipped_kinks << " refined=" << r.refined << '\n';
      }
    }
  }
  if (g.json) out << rows.dump() << '\n';
  return ok ? kOk : kNumericFault;
}

int cmd_selftest(const Globals& g, std::ostream& out) {
  bool ok = true;
  ordered_json rows = ordered_json::array();
  for (const auto& line : checks::selftest(g.seed)) {
    ok = ok && line.passed;
    if (g.json) {
      rows.push_back({{"check", line.name}, {"passed", line.passed}, {"detail", line.detail}});
    } else {
      out << (line.passed ? "PASS " : "FAIL ") << line.name << ": " << line.detail << '\n';
    }
  }
  if (g.json) out << rows.dump() << '\n';
  return ok ? kOk : kNumericFault;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Posture risk scoring and pose-guided risk classification", "ergorisk"};
  app.require_subcommand(1);
  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker thread cap")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_flag("--json", g.json, "Machine-readable JSON on stdout");
  app.add_flag("-v,--verbose", g.verbosity, "Progress on stderr");

  ScoreArgs score;
  auto* score_cmd = app.add_subcommand("score", "Print one REBA result per skeleton");
  score_cmd->fallthrough();
  score_cmd->add_option("--in", score.in, "Landmark file (.jsonl or .csv)")->required();
  score_cmd->add_option("--tables", score.tables, "REBA tables JSON (default: $ERGORISK_TABLES or built-in)");
  score_cmd->add_option("--vis-threshold", score.vis_threshold, "Visibility threshold")->capture_default_str();

  AnnotateArgs annotate;
  auto* annotate_cmd = app.add_subcommand("annotate", "Label a landmark file with REBA classes");
  annotate_cmd->fallthrough();
  annotate_cmd->add_option("--in", annotate.in, "Landmark file (.jsonl or .csv)")->required();
  annotate_cmd->add_option("--out", annotate.out, "Output label JSONL")->required();
  annotate_cmd->add_option("--tables", annotate.tables, "REBA tables JSON (default: $ERGORISK_TABLES or built-in)");
  annotate_cmd->add_option("--vis-threshold", annotate.vis_threshold, "Visibility threshold")->capture_default_str();
  annotate_cmd->add_option("--overlay-dir", annotate.overlay_dir, "Write one SVG overlay per skeleton");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic stick-figure dataset");
  synth_cmd->fallthrough();
  synth_cmd->add_option("--n", synth_args.n, "Number of samples")->required();
  synth_cmd->add_option("--out", synth_args.out, "Output directory")->required();
  synth_cmd->add_option("--image-size", synth_args.image_size, "Square image side")->capture_default_str();
  synth_cmd->add_option("--tables", synth_args.tables, "REBA tables JSON");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train the classifier on a generated dataset");
  train_cmd->fallthrough();
  train_cmd->add_option("--data", train_args.data, "Dataset directory")->required();
  train_cmd->add_option("--model-cfg", train_args.model_cfg, "Model config JSON")->required();
  train_cmd->add_option("--train-cfg", train_args.train_cfg, "Training config JSON")->required();
  train_cmd->add_option("--out", train_args.out, "Checkpoint path")->required();
  train_cmd->add_option("--log", train_args.log, "Epoch log CSV (default: <out>.log.csv)");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->fallthrough();
  eval_cmd->add_option("--ckpt", eval_args.ckpt, "Checkpoint path")->required();
  eval_cmd->add_option("--data", eval_args.data, "Dataset directory")->required();
  eval_cmd->add_option("--split", eval_args.split, "Which split to score")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  eval_cmd->add_option("--report", eval_args.report, "Write the JSON report here");

  std::size_t gradcheck_seeds = 10;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck_cmd->fallthrough();
  gradcheck_cmd->add_option("--seeds", gradcheck_seeds, "Number of consecutive seeds")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  auto* selftest_cmd = app.add_subcommand("selftest", "Run the bundled invariant checks");
  selftest_cmd->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    if (*score_cmd) return cmd_score(score, g, out);
    if (*annotate_cmd) return cmd_annotate(annotate, g, out);
    if (*synth_cmd) return cmd_synth(synth_args, g, out);
    if (*train_cmd) return cmd_train(train_args, g, out, err);
    if (*eval_cmd) return cmd_eval(eval_args, g, out);
    if (*gradcheck_cmd) return cmd_gradcheck(gradcheck_seeds, g, out);
    if (*selftest_cmd) return cmd_selftest(g, out);
  } catch (const NumericFault& e) {
    err << "numeric fault: " << e.what() << '\n';
    return kNumericFault;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  err << app.help();
  return kUsage;
}

}  // namespace ergorisk::cli
