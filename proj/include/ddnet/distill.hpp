#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddnet/examples.hpp"
#include "ddnet/qa_model.hpp"
#include "ddnet/tokenizer.hpp"

namespace ddnet {

enum class KLDirection { student_first, teacher_first };
enum class HardTarget { student, teacher_literal };

std::string to_string(KLDirection d);
std::string to_string(HardTarget t);
KLDirection parse_kl_direction(std::string_view name);
HardTarget parse_hard_target(std::string_view name);

struct KDConfig {
  double alpha = 0.9;
  double tau = 2.0;
  KLDirection kl_direction = KLDirection::student_first;
  HardTarget hard_target = HardTarget::student;
  double learning_rate = 3e-4;
  int batch_size = 8;
  int max_steps = 1000;
  /// Dev evaluation period in steps; 0 disables it.
  int eval_every = 0;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;

  /// ParameterError on alpha outside [0, 1], tau <= 0 or any other bad field.
  void validate() const;
  bool operator==(const KDConfig&) const = default;
};

nlohmann::json to_json(const KDConfig& c);
KDConfig kd_config_from_json(const nlohmann::json& j);

/// alpha * tau^2 * KL + (1 - alpha) * XE for one head. The teacher logits
/// are detached. The KL term is skipped at alpha == 0, the XE term at 1.
Tensor kd_head_loss(const Tensor& student, const Tensor& teacher, std::size_t target, const KDConfig& cfg);

/// Mean of the start and end head losses. Gold targets are logit slots.
Tensor kd_loss(const SpanLogits& student, const SpanLogits& teacher, std::size_t gold_start_slot,
               std::size_t gold_end_slot, const KDConfig& cfg);

/// Teacher logits (over clean document slots) carried onto the student's ASR
/// slots through the word alignment. Inserted ASR words get the teacher's
/// minimum logit. The sentinel maps to the sentinel.
SpanLogits project_teacher_logits(const SpanLogits& teacher, std::span<const long> asr_to_clean);

/// Adam with global gradient-norm clipping.
class Adam {
 public:
  Adam(NamedParameters params, const KDConfig& cfg);

  /// Clips, updates every parameter from its gradient, then clears the
  /// gradients. Parameters without a gradient are treated as zero-gradient.
  void step();
  long steps() const { return t_; }
  double last_grad_norm() const { return last_norm_; }

  /// Moment buffers as named tensors ("adam.m.<param>", "adam.v.<param>").
  NamedParameters state() const;
  void load_state(const NamedParameters& state, long steps);

 private:
  NamedParameters params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_, weight_decay_, clip_;
  long t_ = 0;
  double last_norm_ = 0.0;
};

struct EvalPoint {
  int step = 0;
  double em = 0.0;
  double f1 = 0.0;
};

struct TrainReport {
  std::string role;
  std::vector<double> losses;  // index = step
  std::vector<EvalPoint> evals;
  std::string checkpoint;
  std::string model_fingerprint;
  nlohmann::json config;
  int steps = 0;
  bool stopped_early = false;
  double wall_clock_seconds = 0.0;

  /// Everything except wall-clock time, which only goes to the log.
  nlohmann::json to_json() const;
};

struct TrainHooks {
  /// Periodic evaluation set (every cfg.eval_every steps and after the last).
  std::span<const Example> dev;
  const Tokenizer* tokenizer = nullptr;
  /// Checked after every step; returning true ends training.
  std::function<bool(const TrainReport&)> stop_when;
  /// Training checkpoint (model, optimizer state, step) written at the end
  /// and every checkpoint_every steps when > 0.
  std::optional<std::filesystem::path> checkpoint_path;
  int checkpoint_every = 0;
  /// Continue from a training checkpoint written by an earlier run.
  std::optional<std::filesystem::path> resume_from;
  int max_answer_len = 30;
};

/// Mean start/end cross-entropy on one view; no distillation term.
TrainReport train_teacher(QAModel& model, std::span<const Example> data, const KDConfig& cfg,
                          const TrainHooks& hooks = {}, View view = View::clean);

/// Student on the ASR view against the frozen teacher's clean-view logits.
TrainReport train_student(QAModel& student, const QAModel& teacher, std::span<const Example> data,
                          const KDConfig& cfg, const TrainHooks& hooks = {});

struct AblationRow {
  std::string grid_key;
  std::string split;
  double em = 0.0;
  double f1 = 0.0;
  int steps = 0;
  std::uint64_t seed = 0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  /// grid_key -> fingerprint of the trained student
  std::vector<std::pair<std::string, std::string>> fingerprints;
  /// Argmax of F1 on the first split; ties go to the earlier grid point.
  std::string best_key;

  /// Header grid_key,split,em,f1,steps,seed; rows in grid order. With a
  /// split name only that split's rows are written.
  std::string to_csv(const std::string& split = "") const;
  std::vector<std::string> splits() const;
};

struct EvalSplit {
  std::string name;
  std::span<const Example> examples;
};

struct AblationSetup {
  QAModelConfig student_config;
  const QAModel* teacher = nullptr;
  std::span<const Example> train;
  std::vector<EvalSplit> eval_splits;
  const Tokenizer* tokenizer = nullptr;
  View eval_view = View::asr;
  /// Per-split CSVs "<prefix>_<split>.csv" rewritten after every grid point
  /// so partial results survive an abort.
  std::optional<std::filesystem::path> csv_prefix;
};

std::string format_tau(double tau);
/// One student per tau, everything else fixed. Best key = argmax F1 with
/// ties to the smaller tau.
AblationResult ablate_temperature(std::span<const double> taus, const KDConfig& base, const AblationSetup& setup);
/// One student per fusion mode, distilled from the same teacher.
AblationResult ablate_fusion(std::span<const FusionMode> modes, const KDConfig& base, const AblationSetup& setup);

inline constexpr double kDefaultTemperatureGrid[] = {1.0, 2.0, 4.0, 6.0, 8.0, 10.0};

}  // namespace ddnet
