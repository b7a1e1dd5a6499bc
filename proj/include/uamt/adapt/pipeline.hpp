// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "uamt/adapt/pseudo_labels.hpp"
#include "uamt/adapt/training.hpp"
#include "uamt/config.hpp"
#include "uamt/evalkit/evaluate.hpp"
#include "uamt/evalkit/reports.hpp"
#include "uamt/scenegen/augment.hpp"
#include "uamt/scenegen/generator.hpp"

namespace uamt::pipeline {

using adapt::MeanTeacherResult;
using adapt::PseudoLabelSet;
using adapt::PseudoRoundsResult;
using nnkit::ParamSet;
using scenegen::Dataset;

// --- datasets ------------------------------------------------------------------

enum class Split { SourceTrain, SourceEval, TargetTrain, TargetEval };

inline constexpr Split kSplits[] = {Split::SourceTrain, Split::SourceEval, Split::TargetTrain, Split::TargetEval};

inline const char* to_string(Split s) noexcept {
  switch (s) {
    case Split::SourceTrain: return "source_train";
    case Split::SourceEval: return "source_eval";
    case Split::TargetTrain: return "target_train";
    case Split::TargetEval: return "target_eval";
  }
  return "?";
}

inline bool is_target(Split s) noexcept { return s == Split::TargetTrain || s == Split::TargetEval; }

inline constexpr std::uint64_t kSaltRain = 0x5241494E;

/// One split as a pure function of (config, seed). Target splits carry their
/// ground truth here; withholding happens only when written to disk.
inline Dataset make_split(const RunConfig& cfg, Split split, scenegen::SampleStats* stats = nullptr) {
  const auto& sg = cfg.scenegen;
  const auto salt = static_cast<std::uint64_t>(split) + 1;
  const auto& domain = is_target(split) ? sg.target : sg.source;
  const std::size_t n = split == Split::SourceTrain  ? sg.sizes.source_train
                        : split == Split::SourceEval ? sg.sizes.source_eval
                        : split == Split::TargetTrain ? sg.sizes.target_train
                                                      : sg.sizes.target_eval;
  auto ds = scenegen::generate_dataset(domain, n, cfg.seed, salt, stats);
  const std::string prefix = std::string(is_target(split) ? "target" : "source") +
                             (split == Split::SourceTrain || split == Split::TargetTrain ? "-train" : "-eval");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ds[i].scene_id = scenegen::make_scene_id(prefix, i);
    if (is_target(split) && sg.target_rain) {
      const nnkit::RngStream rng(cfg.seed, nnkit::stream_key(kSaltRain, salt, i));
      ds[i] = scenegen::apply_random_rain(ds[i], sg.rain, rng, domain.extent);
    }
  }
  return ds;
}

struct Datasets {
  Dataset source_train;
  Dataset source_eval;
  Dataset target_train;  // ground truth kept for analysis only
  Dataset target_eval;
};

inline Datasets make_datasets(const RunConfig& cfg) {
  return {make_split(cfg, Split::SourceTrain), make_split(cfg, Split::SourceEval), make_split(cfg, Split::TargetTrain),
          make_split(cfg, Split::TargetEval)};
}

inline Dataset without_labels(Dataset ds) {
  for (auto& s : ds) s.gt_boxes.clear();
  return ds;
}

inline std::vector<adapt::TrainItem> labeled_items(const Dataset& ds) {
  std::vector<adapt::TrainItem> items;
  items.reserve(ds.size());
  for (const auto& s : ds) items.push_back({s, s.gt_boxes});
  return items;
}

// --- stages --------------------------------------------------------------------

inline constexpr std::uint64_t kSaltSource = 0x5352;
inline constexpr std::uint64_t kSaltOracle = 0x4F52;
inline constexpr std::uint64_t kSaltMeanTeacher = 0x4D54;

/// Source pre-training schedule: augmentation on, source epoch count.
inline adapt::TrainOptions source_options(const adapt::AdaptConfig& a, std::uint64_t salt = kSaltSource) {
  adapt::TrainOptions opt;
  opt.epochs = a.source_epochs;
  opt.batch_size = a.batch_size;
  opt.lr = a.source_lr;
  opt.seed = a.seed;
  opt.salt = salt;
  opt.augment = true;
  opt.scale_min = a.object_scale_min;
  opt.scale_max = a.object_scale_max;
  opt.student_dropout = a.student_dropout;
  return opt;
}

inline ParamSet initial_params(const RunConfig& cfg) { return detector::init_detector_params(cfg.detector, cfg.seed); }

/// phi^s: supervised training on the labeled source split.
inline ParamSet train_source(const RunConfig& cfg, const Dataset& source_train,
                             const adapt::StepCallback& on_step = {}) {
  const auto items = labeled_items(source_train);
  return adapt::train_detector(items, initial_params(cfg), cfg.detector, source_options(cfg.adapt), on_step);
}

/// Ceiling model trained on target ground truth. Analysis only.
inline ParamSet train_oracle(const RunConfig& cfg, const Dataset& target_train_labeled,
                             const adapt::StepCallback& on_step = {}) {
  const auto items = labeled_items(target_train_labeled);
  return adapt::train_detector(items, initial_params(cfg), cfg.detector, source_options(cfg.adapt, kSaltOracle),
                               on_step);
}

inline PseudoRoundsResult pseudo_rounds(const RunConfig& cfg, const ParamSet& source, const Dataset& target_train,
                                        const adapt::RoundCallback& on_round = {}) {
  try {
    return adapt::iterative_pseudo_rounds(source, without_labels(target_train), cfg.detector, cfg.adapt, on_round);
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("pseudo-iter", e.what());
  }
}

inline MeanTeacherResult mean_teacher(const RunConfig& cfg, const ParamSet& source, const Dataset& target_train,
                                      const PseudoLabelSet& labels) {
  const auto items = adapt::pseudo_training_set(without_labels(target_train), labels);
  try {
    return adapt::mean_teacher_train(source, items, cfg.detector, cfg.adapt, kSaltMeanTeacher);
  } catch (const std::exception& e) {
    throw StageError("adapt", e.what());
  }
}

/// Artifact variant name of the mean-teacher stage.
inline const char* variant_name(bool uncertainty) noexcept { return uncertainty ? "uamt" : "mt"; }

// --- in-memory experiment --------------------------------------------------------

struct ExperimentOptions {
  bool run_mean_teacher = true;
  /// Also train the plain mean-teacher arm (C = 1) for the ablation.
  bool run_plain_arm = false;
  bool run_oracle = false;
};

struct MeanTeacherArm {
  MeanTeacherResult result;
  evalkit::EvalReport student_report;
  evalkit::EvalReport teacher_report;
  std::vector<evalkit::VarianceRow> variance;
};

/// Everything the acceptance checks and the summary report need, computed
/// without touching the filesystem.
struct ExperimentResult {
  Datasets data;
  ParamSet source;
  evalkit::EvalReport source_on_source;
  evalkit::EvalReport source_on_target;
  PseudoRoundsResult rounds;
  /// round_reports[j - 1]: model of round j on the target eval split.
  std::vector<evalkit::EvalReport> round_reports;
  std::vector<evalkit::ConfidenceDensityRow> confidence_density;
  std::optional<MeanTeacherArm> uamt;
  std::optional<MeanTeacherArm> plain;
  std::optional<evalkit::EvalReport> oracle_on_target;
};

/// Model a mean-teacher run hands on: the EMA teacher.
inline const ParamSet& adapted_model(const MeanTeacherResult& r) { return r.teacher; }

inline std::vector<PseudoLabelSet> round_candidates(const RunConfig& cfg, const ParamSet& source,
                                                    const std::vector<ParamSet>& round_models,
                                                    const Dataset& target_train) {
  std::vector<PseudoLabelSet> sets;
  sets.push_back(adapt::infer_candidates(source, target_train, cfg.detector, 0));
  for (std::size_t j = 0; j < round_models.size(); ++j)
    sets.push_back(adapt::infer_candidates(round_models[j], target_train, cfg.detector, static_cast<int>(j + 1)));
  return sets;
}

inline MeanTeacherArm run_arm(const RunConfig& cfg, const ExperimentResult& ex, bool uncertainty) {
  RunConfig c = cfg;
  c.adapt.uncertainty = uncertainty;
  MeanTeacherArm arm;
  arm.result = mean_teacher(c, ex.source, ex.data.target_train, ex.rounds.labels.back());
  arm.student_report = evalkit::evaluate_model(arm.result.student, ex.data.target_eval, c.detector, c.eval);
  arm.teacher_report = evalkit::evaluate_model(arm.result.teacher, ex.data.target_eval, c.detector, c.eval);
  if (!arm.result.snapshots.empty())
    arm.variance = evalkit::variance_report(arm.result.snapshots, ex.data.target_train, c.eval.correct_iou);
  return arm;
}

inline ExperimentResult run_experiment(const RunConfig& cfg, const ExperimentOptions& opt = {}) {
  cfg.validate();
  ExperimentResult ex;
  ex.data = make_datasets(cfg);
  ex.source = train_source(cfg, ex.data.source_train);
  ex.source_on_source = evalkit::evaluate_model(ex.source, ex.data.source_eval, cfg.detector, cfg.eval);
  ex.source_on_target = evalkit::evaluate_model(ex.source, ex.data.target_eval, cfg.detector, cfg.eval);
  ex.rounds = pseudo_rounds(cfg, ex.source, ex.data.target_train);
  for (const auto& m : ex.rounds.models)
    ex.round_reports.push_back(evalkit::evaluate_model(m, ex.data.target_eval, cfg.detector, cfg.eval));
  ex.confidence_density =
      *evalkit::confidence_density_report(round_candidates(cfg, ex.source, ex.rounds.models, ex.data.target_train),
                                          ex.data.target_train, cfg.eval.correct_iou);
  if (opt.run_mean_teacher) ex.uamt = run_arm(cfg, ex, cfg.adapt.uncertainty);
  if (opt.run_plain_arm) ex.plain = run_arm(cfg, ex, false);
  if (opt.run_oracle) {
    const auto oracle = train_oracle(cfg, ex.data.target_train);
    ex.oracle_on_target = evalkit::evaluate_model(oracle, ex.data.target_eval, cfg.detector, cfg.eval);
  }
  return ex;
}

}  // namespace uamt::pipeline
