// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uamt/adapt/pipeline.hpp"
#include "uamt/cli/artifacts.hpp"
#include "uamt/config.hpp"
#include "uamt/evalkit/reports.hpp"
#include "uamt/scenegen/dataset_io.hpp"

namespace uamt::cli {

using pipeline::Split;

// --- output layout ---------------------------------------------------------------

inline fs::path data_file(const fs::path& dir, Split s) { return dir / "data" / (std::string(to_string(s)) + ".jsonl"); }
inline fs::path manifest_file(const fs::path& dir) { return dir / "manifest.json"; }
inline fs::path source_model_file(const fs::path& dir) { return dir / "source" / "model.ckpt"; }
inline fs::path oracle_model_file(const fs::path& dir) { return dir / "oracle" / "model.ckpt"; }
inline fs::path labels_file(const fs::path& dir, int j) {
  return dir / "pseudo" / ("labels_iter" + std::to_string(j) + ".jsonl");
}
inline fs::path round_model_file(const fs::path& dir, int j) {
  return dir / "pseudo" / ("model_iter" + std::to_string(j) + ".ckpt");
}
inline fs::path adapt_dir(const fs::path& dir, const std::string& variant) { return dir / "adapt" / variant; }
inline std::string seed_tag(const RunConfig& cfg) { return "seed" + std::to_string(cfg.seed); }

/// Shared state of one CLI invocation.
struct Context {
  RunConfig cfg;
  fs::path dir;
  bool force = false;
  std::ostream* log = nullptr;

  void note(const std::string& msg) const {
    if (log != nullptr) *log << msg << '\n' << std::flush;
  }
  /// Warnings bypass --quiet.
  void warn(const std::string& msg) const { std::cerr << "warning: " << msg << '\n' << std::flush; }

  ArtifactCheck require(const fs::path& path, Stage stage) const {
    auto c = require_artifact(path, cfg, stage, force);
    if (c.warning) warn(*c.warning);
    return c;
  }
};

inline Context make_context(const RunConfig& cfg, bool force, std::ostream* log) {
  return {cfg, fs::path(cfg.io.out_dir), force, log};
}

// --- shared loaders -------------------------------------------------------------

inline scenegen::Dataset load_split(const Context& ctx, Split s) {
  const auto path = data_file(ctx.dir, s);
  const auto c = ctx.require(path, Stage::Data);
  std::istringstream in(c.bytes);
  return scenegen::read_dataset_stream(in, path.string());
}

inline nnkit::ParamSet load_model(const Context& ctx, const fs::path& path, Stage stage) {
  const auto c = ctx.require(path, stage);
  try {
    return nnkit::decode_checkpoint(c.bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

/// Target-train split with ground truth, regenerated from (config, seed) and
/// checked against the withheld file on disk. Analysis use only.
inline scenegen::Dataset analysis_target_train(const Context& ctx) {
  const auto path = data_file(ctx.dir, Split::TargetTrain);
  const auto c = ctx.require(path, Stage::Data);
  auto ds = pipeline::make_split(ctx.cfg, Split::TargetTrain);
  if (scenegen::dataset_to_string(ds, true) != c.bytes)
    throw ArtifactError("regenerated target-train ground truth does not match '" + path.string() + "'");
  return ds;
}

inline adapt::StepCallback epoch_progress(const Context& ctx, const std::string& stage, int epochs,
                                          std::vector<adapt::TrainLogRow>& rows) {
  return [&ctx, &rows, stage, epochs](const adapt::TrainLogRow& r) {
    if (!rows.empty() && rows.back().epoch != r.epoch) {
      double sum = 0.0;
      std::size_t n = 0;
      for (auto it = rows.rbegin(); it != rows.rend() && it->epoch == rows.back().epoch; ++it, ++n) sum += it->total;
      std::ostringstream os;
      os << stage << ": epoch " << rows.back().epoch + 1 << "/" << epochs << " mean loss " << sum / n;
      ctx.note(os.str());
    }
    rows.push_back(r);
  };
}

inline void write_checkpoint(const Context& ctx, const fs::path& path, const nnkit::ParamSet& params, Stage stage,
                             nlohmann::json extra = nlohmann::json::object()) {
  const auto bytes = nnkit::encode_checkpoint(params);
  extra["checkpoint_hash"] = content_hash(bytes);
  write_artifact(path, bytes, ctx.cfg, stage, extra);
  ctx.note("wrote " + path.string());
}

// --- gen-data -------------------------------------------------------------------

/// Source (labeled), source eval, target train (labels withheld) and target
/// eval (labeled, analysis only) datasets plus a manifest.
inline void cmd_gen_data(const Context& ctx) {
  nlohmann::json files = nlohmann::json::array();
  for (auto split : pipeline::kSplits) {
    scenegen::SampleStats stats;
    const auto ds = pipeline::make_split(ctx.cfg, split, &stats);
    const bool withhold = split == Split::TargetTrain;
    const auto bytes = scenegen::dataset_to_string(ds, withhold);
    const auto path = data_file(ctx.dir, split);
    const nlohmann::json extra = {{"split", to_string(split)},
                                  {"scenes", ds.size()},
                                  {"labels_withheld", withhold},
                                  {"placement_failures", stats.placement_failures}};
    write_artifact(path, bytes, ctx.cfg, Stage::Data, extra);
    if (stats.placement_failures > 0)
      ctx.warn(std::string(to_string(split)) + ": " + std::to_string(stats.placement_failures) +
               " objects could not be placed without overlap");
    auto entry = extra;
    entry["path"] = fs::relative(path, ctx.dir).string();
    entry["content_hash"] = content_hash(bytes);
    files.push_back(entry);
    ctx.note("wrote " + path.string() + " (" + std::to_string(ds.size()) + " scenes)");
  }
  nlohmann::json manifest = {{"stage", to_string(Stage::Data)},
                             {"stage_hash", stage_hash(ctx.cfg, Stage::Data)},
                             {"config", artifact_config(ctx.cfg)},
                             {"seed", ctx.cfg.seed},
                             {"files", files}};
  nnkit::write_file_bytes(manifest_file(ctx.dir).string(), manifest.dump(2) + "\n");
  ctx.note("wrote " + manifest_file(ctx.dir).string());
}

// --- train-source ----------------------------------------------------------------

/// Trains phi^s on the source split. With `oracle`, trains the analysis-only
/// ceiling model on target-train ground truth instead.
inline void cmd_train_source(const Context& ctx, bool oracle) {
  std::vector<adapt::TrainLogRow> rows;
  const int epochs = ctx.cfg.adapt.source_epochs;
  if (oracle) {
    ctx.note("train-source: oracle mode, training on target ground truth (analysis only)");
    const auto target = analysis_target_train(ctx);
    const auto params = pipeline::train_oracle(ctx.cfg, target, epoch_progress(ctx, "oracle", epochs, rows));
    write_checkpoint(ctx, oracle_model_file(ctx.dir), params, Stage::Source, {{"model", "oracle"}, {"analysis_only", true}});
    write_artifact(ctx.dir / "oracle" / "train_log.csv", evalkit::train_log_csv(rows), ctx.cfg, Stage::Source);
    return;
  }
  const auto source = load_split(ctx, Split::SourceTrain);
  const auto params = pipeline::train_source(ctx.cfg, source, epoch_progress(ctx, "train-source", epochs, rows));
  write_checkpoint(ctx, source_model_file(ctx.dir), params, Stage::Source, {{"model", "source"}});
  write_artifact(ctx.dir / "source" / "train_log.csv", evalkit::train_log_csv(rows), ctx.cfg, Stage::Source);
}

// --- pseudo-iter ------------------------------------------------------------------

inline std::string labels_bytes(const Context& ctx, const adapt::PseudoLabelSet& set) {
  const nlohmann::json header = {{"stage", to_string(Stage::Pseudo)},
                                 {"stage_hash", stage_hash(ctx.cfg, Stage::Pseudo)},
                                 {"seed", ctx.cfg.seed},
                                 {"config", artifact_config(ctx.cfg)}};
  return adapt::pseudo_labels_to_string(set, header);
}

/// Algorithm-1 rounds: labels_iter0..J and model_iter1..J.
inline void cmd_pseudo_iter(const Context& ctx) {
  const auto source = load_model(ctx, source_model_file(ctx.dir), Stage::Source);
  const auto target = load_split(ctx, Split::TargetTrain);
  pipeline::pseudo_rounds(ctx.cfg, source, target,
                          [&](int j, const adapt::PseudoLabelSet& set, const nnkit::ParamSet* model) {
                            if (model != nullptr)
                              write_checkpoint(ctx, round_model_file(ctx.dir, j), *model, Stage::Pseudo,
                                               {{"model", "round"}, {"iteration", j}});
                            const auto path = labels_file(ctx.dir, j);
                            write_artifact(path, labels_bytes(ctx, set), ctx.cfg, Stage::Pseudo,
                                           {{"iteration", j}, {"threshold", set.threshold}});
                            std::ostringstream os;
                            os << "pseudo-iter: round " << j << " threshold " << set.threshold << " -> "
                               << set.label_count() << " labels (" << path.string() << ")";
                            ctx.note(os.str());
                          });
}

// --- adapt ---------------------------------------------------------------------------

inline adapt::PseudoLabelSet load_labels(const Context& ctx, int j) {
  const auto path = labels_file(ctx.dir, j);
  ctx.require(path, Stage::Pseudo);
  return adapt::read_pseudo_labels(path.string());
}

/// Algorithm-2 mean-teacher training on the final pseudo-labels. Writes
/// adapt/uamt/ or, with uncertainty off, adapt/mt/.
inline void cmd_adapt(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto source = load_model(ctx, source_model_file(ctx.dir), Stage::Source);
  const auto labels = load_labels(ctx, cfg.adapt.iterations);
  const auto target = load_split(ctx, Split::TargetTrain);
  const std::string variant = pipeline::variant_name(cfg.adapt.uncertainty);
  ctx.note("adapt: variant " + variant + ", " + std::to_string(labels.label_count()) + " pseudo-labels from round " +
           std::to_string(cfg.adapt.iterations));
  const auto res = pipeline::mean_teacher(cfg, source, target, labels);
  const auto out = adapt_dir(ctx.dir, variant);
  const nlohmann::json extra = {{"variant", variant}};
  auto with = [&](const char* model) {
    auto e = extra;
    e["model"] = model;
    return e;
  };
  write_checkpoint(ctx, out / "student.ckpt", res.student, Stage::Adapt, with("student"));
  write_checkpoint(ctx, out / "teacher.ckpt", res.teacher, Stage::Adapt, with("teacher"));
  write_artifact(out / "train_log.csv", evalkit::train_log_csv(res.log), cfg, Stage::Adapt, extra);
  write_artifact(out / "variance_samples.csv", variance_samples_csv(res.snapshots), cfg, Stage::Adapt, extra);
  if (!res.log.empty()) {
    const auto& last = res.log.back();
    std::ostringstream os;
    os << "adapt: final step loss " << last.total << ", mean C " << last.mean_weight << ", lower-clip fraction "
       << last.lower_clip_fraction;
    ctx.note(os.str());
  }
}

// --- eval ----------------------------------------------------------------------------

struct ModelEntry {
  std::string name;
  fs::path path;
  Stage stage;
  bool required = false;
};

/// Models eval and report look for, in a fixed order.
inline std::vector<ModelEntry> known_models(const Context& ctx) {
  std::vector<ModelEntry> m{{"source", source_model_file(ctx.dir), Stage::Source, true},
                            {"oracle", oracle_model_file(ctx.dir), Stage::Source, false}};
  for (int j = 1; j <= ctx.cfg.adapt.iterations; ++j)
    m.push_back({"round" + std::to_string(j), round_model_file(ctx.dir, j), Stage::Pseudo, false});
  for (const char* v : {"uamt", "mt"})
    for (const char* who : {"teacher", "student"})
      m.push_back({std::string(v) + "_" + who, adapt_dir(ctx.dir, v) / (std::string(who) + ".ckpt"), Stage::Adapt,
                   false});
  return m;
}

inline nlohmann::json eval_json(const evalkit::EvalReport& rep, const RunConfig& cfg, const std::string& model,
                                const std::string& split) {
  nlohmann::json tiers = nlohmann::json::array();
  for (const auto& t : rep.tiers) {
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& p : t.curve) curve.push_back({p.recall, p.precision});
    tiers.push_back({{"tier", evalkit::to_string(t.tier)},
                     {"ap", t.ap ? nlohmann::json(*t.ap) : nlohmann::json(nullptr)},
                     {"tp", t.tp},
                     {"fp", t.fp},
                     {"fn", t.fn},
                     {"gt", t.gt},
                     {"pr_curve", curve}});
  }
  return {{"model", model}, {"split", split}, {"scenes", rep.scenes}, {"detections", rep.detections},
          {"tiers", tiers}, {"seed", cfg.seed}, {"config", artifact_config(cfg)}};
}

inline std::string ap_text(const std::optional<double>& ap) {
  if (!ap) return "absent";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *ap);
  return buf;
}

/// Evaluates every model present (the source model is required) on the
/// labeled eval splits. Files: eval/<model>_<split>_seed<s>.{json,csv},
/// eval/<model>_<split>_seed<s>_pr.csv and eval/summary_seed<s>.csv.
inline void cmd_eval(const Context& ctx) {
  const auto target_eval = load_split(ctx, Split::TargetEval);
  std::optional<scenegen::Dataset> source_eval;
  std::string summary = "model,split,easy_ap,moderate_ap,hard_ap\n";
  for (const auto& m : known_models(ctx)) {
    if (!m.required && !fs::exists(m.path)) continue;
    const auto params = load_model(ctx, m.path, m.stage);
    std::vector<std::pair<std::string, const scenegen::Dataset*>> splits;
    if (m.name == "source") {
      source_eval = load_split(ctx, Split::SourceEval);
      splits.emplace_back(to_string(Split::SourceEval), &*source_eval);
    }
    splits.emplace_back(to_string(Split::TargetEval), &target_eval);
    for (const auto& [split, ds] : splits) {
      const auto rep = evalkit::evaluate_model(params, *ds, ctx.cfg.detector, ctx.cfg.eval);
      const auto stem = ctx.dir / "eval" / (m.name + "_" + split + "_" + seed_tag(ctx.cfg));
      write_artifact(stem.string() + ".json", eval_json(rep, ctx.cfg, m.name, split).dump(2) + "\n", ctx.cfg,
                     Stage::Report);
      write_artifact(stem.string() + ".csv", evalkit::eval_csv(rep), ctx.cfg, Stage::Report);
      write_artifact(stem.string() + "_pr.csv", evalkit::pr_csv(rep), ctx.cfg, Stage::Report);
      using evalkit::Difficulty;
      summary += m.name + "," + split + "," + evalkit::detail::fmt_real(rep.tier(Difficulty::Easy).ap.value_or(-1)) +
                 "," + evalkit::detail::fmt_real(rep.tier(Difficulty::Moderate).ap.value_or(-1)) + "," +
                 evalkit::detail::fmt_real(rep.tier(Difficulty::Hard).ap.value_or(-1)) + "\n";
      ctx.note("eval: " + m.name + " on " + split + ": Moderate AP " + ap_text(rep.tier(Difficulty::Moderate).ap));
    }
  }
  write_artifact(ctx.dir / "eval" / ("summary_" + seed_tag(ctx.cfg) + ".csv"), summary, ctx.cfg, Stage::Report);
}

// --- report ----------------------------------------------------------------------------

/// Confidence-density (per pseudo-label round), AP per round and teacher
/// variance CSVs, plus report/summary_seed<s>.json.
inline void cmd_report(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto rdir = ctx.dir / "report";
  const auto tag = seed_tag(cfg);
  const auto source = load_model(ctx, source_model_file(ctx.dir), Stage::Source);
  std::vector<nnkit::ParamSet> rounds;
  for (int j = 1; j <= cfg.adapt.iterations; ++j)
    rounds.push_back(load_model(ctx, round_model_file(ctx.dir, j), Stage::Pseudo));
  const auto target_train = analysis_target_train(ctx);
  const auto target_eval = load_split(ctx, Split::TargetEval);
  const auto source_eval = load_split(ctx, Split::SourceEval);

  nlohmann::json summary = {{"seed", cfg.seed}, {"config_hash", config_hash(cfg)}};
  const auto src_src = evalkit::evaluate_model(source, source_eval, cfg.detector, cfg.eval).moderate_ap();
  const auto src_tgt = evalkit::evaluate_model(source, target_eval, cfg.detector, cfg.eval).moderate_ap();
  summary["source_only"] = {{"source_eval_moderate_ap", src_src},
                            {"target_eval_moderate_ap", src_tgt},
                            {"gap_points", 100.0 * (src_src - src_tgt)}};

  // Confidence vs correctness of every detection of each round's model.
  const auto candidates = pipeline::round_candidates(cfg, source, rounds, target_train);
  const auto density = *evalkit::confidence_density_report(candidates, target_train, cfg.eval.correct_iou);
  write_artifact(rdir / ("fig4_confidence_density_" + tag + ".csv"), evalkit::confidence_density_csv(density), cfg,
                 Stage::Report);

  // Moderate AP per round; iteration 0 is the source model.
  std::vector<evalkit::CurvePoint> curve{{0, src_tgt}};
  for (const auto& p : evalkit::map_over_iterations(rounds, target_eval, cfg.detector, cfg.eval, 1)) curve.push_back(p);
  write_artifact(rdir / ("fig5_map_over_iterations_" + tag + ".csv"), evalkit::curve_csv(curve), cfg, Stage::Report);

  nlohmann::json iters = nlohmann::json::array();
  for (std::size_t j = 0; j < density.size(); ++j) {
    const auto labels = load_labels(ctx, static_cast<int>(j));
    iters.push_back({{"iteration", j},
                     {"threshold", labels.threshold},
                     {"labels", labels.label_count()},
                     {"moderate_ap", curve[j].moderate_ap},
                     {"mean_conf_incorrect", density[j].mean_conf_incorrect},
                     {"mean_conf_correct", density[j].mean_conf_correct},
                     {"incorrect_above_0_8", density[j].incorrect_above_08}});
  }
  summary["iterations"] = iters;
  bool non_decreasing = true;
  for (std::size_t j = 2; j < curve.size(); ++j)
    non_decreasing = non_decreasing && curve[j].moderate_ap >= curve[j - 1].moderate_ap - 0.01;
  summary["trends"]["rounds_non_decreasing_within_1pt"] = non_decreasing;
  summary["trends"]["incorrect_confidence_decreases"] =
      density.size() > 1 && density.back().mean_conf_incorrect < density.front().mean_conf_incorrect;

  // Mean-teacher variants that have been trained.
  nlohmann::json arms = nlohmann::json::object();
  for (const char* v : {"uamt", "mt"}) {
    const auto dir = adapt_dir(ctx.dir, v);
    if (!fs::exists(dir / "teacher.ckpt")) continue;
    const auto teacher = load_model(ctx, dir / "teacher.ckpt", Stage::Adapt);
    const auto student = load_model(ctx, dir / "student.ckpt", Stage::Adapt);
    const auto samples_file = dir / "variance_samples.csv";
    const auto samples = parse_variance_samples(ctx.require(samples_file, Stage::Adapt).bytes, samples_file.string());
    nlohmann::json arm = {
        {"teacher_moderate_ap", evalkit::evaluate_model(teacher, target_eval, cfg.detector, cfg.eval).moderate_ap()},
        {"student_moderate_ap", evalkit::evaluate_model(student, target_eval, cfg.detector, cfg.eval).moderate_ap()}};
    if (!samples.empty()) {
      const auto rows = evalkit::variance_report(samples, target_train, cfg.eval.correct_iou);
      write_artifact(rdir / ("fig6_variance_" + std::string(v) + "_" + tag + ".csv"), evalkit::variance_csv(rows), cfg,
                     Stage::Report);
      nlohmann::json epochs = nlohmann::json::array();
      for (const auto& r : rows)
        epochs.push_back({{"epoch", r.epoch},
                          {"incorrect_rois", r.incorrect},
                          {"median_variance", r.median_variance},
                          {"fraction_below_one", r.fraction_below_one}});
      arm["variance"] = epochs;
      if (rows.size() > 1)
        arm["low_variance_fraction_decreases"] = rows.back().fraction_below_one < rows.front().fraction_below_one;
    }
    arm["gain_over_source_points"] = 100.0 * (arm["teacher_moderate_ap"].get<double>() - src_tgt);
    arms[v] = arm;
  }
  summary["mean_teacher"] = arms;
  if (arms.contains("uamt") && arms.contains("mt"))
    summary["trends"]["uncertainty_gain_points"] = 100.0 * (arms["uamt"]["teacher_moderate_ap"].get<double>() -
                                                            arms["mt"]["teacher_moderate_ap"].get<double>());
  if (fs::exists(oracle_model_file(ctx.dir))) {
    const auto oracle = load_model(ctx, oracle_model_file(ctx.dir), Stage::Source);
    summary["oracle_target_eval_moderate_ap"] =
        evalkit::evaluate_model(oracle, target_eval, cfg.detector, cfg.eval).moderate_ap();
  }
  write_artifact(rdir / ("summary_" + tag + ".json"), summary.dump(2) + "\n", cfg, Stage::Report);
  ctx.note("report: wrote " + rdir.string());
  ctx.note(summary.dump(2));
}

/// All stages in order: gen-data, train-source, pseudo-iter, adapt, eval, report.
inline void run_pipeline(const Context& ctx) {
  cmd_gen_data(ctx);
  cmd_train_source(ctx, false);
  cmd_pseudo_iter(ctx);
  cmd_adapt(ctx);
  cmd_eval(ctx);
  cmd_report(ctx);
}

}  // namespace uamt::cli
