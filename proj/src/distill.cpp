#include "ddnet/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ddnet/checkpoint.hpp"
#include "ddnet/errors.hpp"
#include "ddnet/evaluation.hpp"
#include "ddnet/hash.hpp"

namespace ddnet {

std::string to_string(KLDirection d) { return d == KLDirection::student_first ? "student_first" : "teacher_first"; }
std::string to_string(HardTarget t) { return t == HardTarget::student ? "student" : "teacher_literal"; }

KLDirection parse_kl_direction(std::string_view name) {
  if (name == "student_first") return KLDirection::student_first;
  if (name == "teacher_first") return KLDirection::teacher_first;
  throw ConfigError("unknown kl_direction '" + std::string(name) + "'");
}

HardTarget parse_hard_target(std::string_view name) {
  if (name == "student") return HardTarget::student;
  if (name == "teacher_literal") return HardTarget::teacher_literal;
  throw ConfigError("unknown hard_target '" + std::string(name) + "'");
}

void KDConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ParameterError("alpha must lie in [0, 1], got " + std::to_string(alpha));
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ParameterError("tau must be positive, got " + std::to_string(tau));
  if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be positive");
  if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
  if (max_steps < 0) throw ParameterError("max_steps must be >= 0");
  if (eval_every < 0) throw ParameterError("eval_every must be >= 0");
  if (clip_norm < 0.0) throw ParameterError("clip_norm must be >= 0 (0 disables clipping)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ParameterError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ParameterError("adam_eps must be positive");
  if (weight_decay < 0.0) throw ParameterError("weight_decay must be >= 0");
}

nlohmann::json to_json(const KDConfig& c) {
  return {{"alpha", c.alpha},
          {"tau", c.tau},
          {"kl_direction", to_string(c.kl_direction)},
          {"hard_target", to_string(c.hard_target)},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"max_steps", c.max_steps},
          {"eval_every", c.eval_every},
          {"seed", c.seed},
          {"clip_norm", c.clip_norm},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"weight_decay", c.weight_decay}};
}

KDConfig kd_config_from_json(const nlohmann::json& j) {
  KDConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k == "alpha") c.alpha = it->get<double>();
    else if (k == "tau") c.tau = it->get<double>();
    else if (k == "kl_direction") c.kl_direction = parse_kl_direction(it->get<std::string>());
    else if (k == "hard_target") c.hard_target = parse_hard_target(it->get<std::string>());
    else if (k == "learning_rate") c.learning_rate = it->get<double>();
    else if (k == "batch_size") c.batch_size = it->get<int>();
    else if (k == "max_steps") c.max_steps = it->get<int>();
    else if (k == "eval_every") c.eval_every = it->get<int>();
    else if (k == "seed") c.seed = it->get<std::uint64_t>();
    else if (k == "clip_norm") c.clip_norm = it->get<double>();
    else if (k == "beta1") c.beta1 = it->get<double>();
    else if (k == "beta2") c.beta2 = it->get<double>();
    else if (k == "adam_eps") c.adam_eps = it->get<double>();
    else if (k == "weight_decay") c.weight_decay = it->get<double>();
    else throw ConfigError("unknown distillation key '" + k + "'");
  }
  return c;
}

// ---- losses -----------------------------------------------------------------

Tensor kd_head_loss(const Tensor& student, const Tensor& teacher, std::size_t target, const KDConfig& cfg) {
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) throw ParameterError("alpha must lie in [0, 1]");
  if (!(cfg.tau > 0.0)) throw ParameterError("tau must be positive");
  if (student.numel() != teacher.numel()) {
    throw DimensionError("student has " + std::to_string(student.numel()) + " logits, teacher " +
                         std::to_string(teacher.numel()));
  }
  if (target >= student.numel()) {
    throw BoundsError("gold slot " + std::to_string(target) + " outside " + std::to_string(student.numel()) + " logits");
  }
  const Tensor t = teacher.detach();
  std::optional<Tensor> loss;
  if (cfg.alpha > 0.0) {
    const Tensor kl = cfg.kl_direction == KLDirection::student_first ? kl_divergence(student, t, cfg.tau)
                                                                     : kl_divergence(t, student, cfg.tau);
    loss = scale(kl, cfg.alpha * cfg.tau * cfg.tau);
  }
  if (cfg.alpha < 1.0) {
    const Tensor xe = cross_entropy(cfg.hard_target == HardTarget::student ? student : t, target);
    const Tensor term = cfg.alpha == 0.0 ? xe : scale(xe, 1.0 - cfg.alpha);
    loss = loss ? add(*loss, term) : term;
  }
  return *loss;
}

Tensor kd_loss(const SpanLogits& student, const SpanLogits& teacher, std::size_t gold_start_slot,
               std::size_t gold_end_slot, const KDConfig& cfg) {
  const Tensor ls = kd_head_loss(student.start, teacher.start, gold_start_slot, cfg);
  const Tensor le = kd_head_loss(student.end, teacher.end, gold_end_slot, cfg);
  return scale(add(ls, le), 0.5);
}

SpanLogits project_teacher_logits(const SpanLogits& teacher, std::span<const long> asr_to_clean) {
  const std::size_t slots = teacher.start.numel();
  auto project = [&](const Tensor& z) {
    const auto v = z.data();
    const double floor = slots > 1 ? *std::min_element(v.begin() + 1, v.end()) : v[0];
    std::vector<double> out(asr_to_clean.size() + 1);
    out[0] = v[0];
    for (std::size_t j = 0; j < asr_to_clean.size(); ++j) {
      const long c = asr_to_clean[j];
      if (c >= 0 && static_cast<std::size_t>(c) + 1 >= slots) {
        throw BoundsError("alignment points at clean token " + std::to_string(c) + " beyond the teacher's " +
                          std::to_string(slots - 1) + " document slots");
      }
      out[j + 1] = c < 0 ? floor : v[static_cast<std::size_t>(c) + 1];
    }
    return Tensor::vector(std::move(out));
  };
  SpanLogits p;
  p.start = project(teacher.start);
  p.end = project(teacher.end);
  p.doc_len = asr_to_clean.size();
  return p;
}

// ---- optimizer --------------------------------------------------------------

Adam::Adam(NamedParameters params, const KDConfig& cfg)
    : params_(std::move(params)),
      lr_(cfg.learning_rate),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_eps),
      weight_decay_(cfg.weight_decay),
      clip_(cfg.clip_norm) {
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  double sq = 0.0;
  for (const auto& [name, p] : params_)
    for (double g : p.grad()) sq += g * g;
  last_norm_ = std::sqrt(sq);
  const double factor = (clip_ > 0.0 && last_norm_ > clip_) ? clip_ / last_norm_ : 1.0;
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor p = params_[k].second;
    const auto grad = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      double g = grad.empty() ? 0.0 : grad[i] * factor;
      if (weight_decay_ > 0.0) g += weight_decay_ * w[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
    p.zero_grad();
  }
}

NamedParameters Adam::state() const {
  NamedParameters out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& [name, p] = params_[k];
    out.emplace_back("adam.m." + name, Tensor(p.shape(), m_[k]));
    out.emplace_back("adam.v." + name, Tensor(p.shape(), v_[k]));
  }
  return out;
}

void Adam::load_state(const NamedParameters& state, long steps) {
  auto find = [&](const std::string& key) -> const Tensor& {
    for (const auto& [n, t] : state)
      if (n == key) return t;
    throw ConfigError("optimizer state lacks " + key);
  };
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& name = params_[k].first;
    const Tensor& m = find("adam.m." + name);
    const Tensor& v = find("adam.v." + name);
    if (m.numel() != m_[k].size() || v.numel() != v_[k].size()) throw ConfigError("optimizer state shape mismatch for " + name);
    m_[k].assign(m.data().begin(), m.data().end());
    v_[k].assign(v.data().begin(), v.data().end());
  }
  t_ = steps;
}

// ---- training loop ----------------------------------------------------------

nlohmann::json TrainReport::to_json() const {
  nlohmann::json ev = nlohmann::json::array();
  for (const auto& e : evals) ev.push_back({{"step", e.step}, {"em", e.em}, {"f1", e.f1}});
  return {{"role", role},
          {"steps", steps},
          {"stopped_early", stopped_early},
          {"losses", losses},
          {"evals", std::move(ev)},
          {"checkpoint", checkpoint},
          {"model_fingerprint", model_fingerprint},
          {"config", config}};
}

namespace {

using ExampleLoss = std::function<Tensor(std::size_t index, const ForwardContext& ctx)>;

void save_training_checkpoint(const std::filesystem::path& path, const QAModel& model, const Adam& opt,
                              const TrainReport& report) {
  Checkpoint ck = make_checkpoint(model, {{"training", report.to_json()}});
  for (auto& entry : opt.state()) ck.tensors.push_back(std::move(entry));
  write_checkpoint(path, ck);
}

TrainReport run_training(const std::string& role, QAModel& model, std::size_t n, const KDConfig& cfg,
                         const TrainHooks& hooks, View eval_view, const ExampleLoss& loss_of) {
  if (!hooks.dev.empty() && hooks.tokenizer == nullptr) throw ContractError("dev evaluation needs a tokenizer");
  const auto t0 = std::chrono::steady_clock::now();
  Adam opt(model.parameters(), cfg);
  TrainReport report;
  report.role = role;
  report.config = to_json(cfg);

  int start = 0;
  if (hooks.resume_from) {
    const Checkpoint ck = read_checkpoint(*hooks.resume_from);
    const auto& tr = ck.metadata.at("training");
    if (tr.at("role") != role) throw ConfigError("resume checkpoint was written by a " + tr.at("role").get<std::string>() + " run");
    if (tr.at("config") != report.config) throw ConfigError("resume checkpoint has a different training configuration");
    load_parameters(model, ck);
    start = tr.at("steps").get<int>();
    opt.load_state(ck.tensors, start);
    report.losses = tr.at("losses").get<std::vector<double>>();
    for (const auto& e : tr.at("evals")) report.evals.push_back({e.at("step"), e.at("em"), e.at("f1")});
    report.steps = start;
  }

  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order(n);
  auto example_at = [&](std::size_t pos) {
    const std::size_t epoch = pos / n;
    if (epoch != cached_epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng = make_rng(cfg.seed, "data_order", epoch);
      std::shuffle(order.begin(), order.end(), rng);
      cached_epoch = epoch;
    }
    return order[pos % n];
  };
  auto run_eval = [&](int step) {
    if (hooks.dev.empty()) return;
    const EvalReport r = evaluate(model, hooks.dev, *hooks.tokenizer, eval_view, "dev", hooks.max_answer_len);
    report.evals.push_back({step, r.em, r.f1});
  };

  for (int step = start; step < cfg.max_steps; ++step) {
    Rng dropout_rng = make_rng(cfg.seed, "dropout", static_cast<std::uint64_t>(step));
    const ForwardContext ctx{true, &dropout_rng};
    double value = 0.0;
    {
      Tape tape;
      std::optional<Tensor> total;
      for (std::size_t b = 0; b < batch; ++b) {
        const Tensor l = loss_of(example_at(static_cast<std::size_t>(step) * batch + b), ctx);
        total = total ? add(*total, l) : l;
      }
      const Tensor loss = scale(*total, 1.0 / static_cast<double>(batch));
      value = loss.item();
      tape.backward(loss);
    }
    opt.step();
    report.losses.push_back(value);
    report.steps = step + 1;
    if (cfg.eval_every > 0 && report.steps % cfg.eval_every == 0) run_eval(report.steps);
    if (hooks.checkpoint_path && hooks.checkpoint_every > 0 && report.steps % hooks.checkpoint_every == 0) {
      report.model_fingerprint = hex64(model.fingerprint());
      save_training_checkpoint(*hooks.checkpoint_path, model, opt, report);
    }
    if (hooks.stop_when && hooks.stop_when(report)) {
      report.stopped_early = true;
      break;
    }
  }
  if (cfg.eval_every > 0 && (report.evals.empty() || report.evals.back().step != report.steps)) run_eval(report.steps);
  report.model_fingerprint = hex64(model.fingerprint());
  if (hooks.checkpoint_path) {
    report.checkpoint = hooks.checkpoint_path->string();
    save_training_checkpoint(*hooks.checkpoint_path, model, opt, report);
  }
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace

TrainReport train_teacher(QAModel& model, std::span<const Example> data, const KDConfig& cfg, const TrainHooks& hooks,
                          View view) {
  cfg.validate();
  if (data.empty()) throw ContractError("train_teacher: empty dataset");
  for (const auto& ex : data) (void)ex.view(view);
  KDConfig hard = cfg;
  hard.alpha = 0.0;
  hard.hard_target = HardTarget::student;
  auto loss_of = [&](std::size_t i, const ForwardContext& ctx) {
    const Example& ex = data[i];
    const ExampleView& ev = ex.view(view);
    const SpanLogits z = model.forward(ex.input(view), ctx);
    return kd_loss(z, z, z.slot_of(ev.gold_start), z.slot_of(ev.gold_end), hard);
  };
  return run_training("teacher", model, data.size(), cfg, hooks, view, loss_of);
}

TrainReport train_student(QAModel& student, const QAModel& teacher, std::span<const Example> data, const KDConfig& cfg,
                          const TrainHooks& hooks) {
  cfg.validate();
  if (data.empty()) throw ContractError("train_student: empty dataset");
  for (const auto& ex : data) (void)ex.view(View::asr);

  // Teacher outputs are fixed: compute them once, outside any tape.
  const bool needs_teacher = cfg.alpha > 0.0 || cfg.hard_target == HardTarget::teacher_literal;
  std::vector<SpanLogits> targets;
  if (needs_teacher) {
    targets.reserve(data.size());
    for (const auto& ex : data) {
      targets.push_back(project_teacher_logits(teacher.forward(ex.input(View::clean)), ex.asr_to_clean));
    }
  }
  auto loss_of = [&](std::size_t i, const ForwardContext& ctx) {
    const Example& ex = data[i];
    const ExampleView& ev = *ex.asr;
    const SpanLogits z = student.forward(ex.input(View::asr), ctx);
    const SpanLogits& t = needs_teacher ? targets[i] : z;
    return kd_loss(z, t, z.slot_of(ev.gold_start), z.slot_of(ev.gold_end), cfg);
  };
  return run_training("student", student, data.size(), cfg, hooks, View::asr, loss_of);
}

// ---- ablations --------------------------------------------------------------

std::string format_tau(double tau) {
  std::ostringstream os;
  os << tau;
  return os.str();
}

std::vector<std::string> AblationResult::splits() const {
  std::vector<std::string> out;
  for (const auto& r : rows)
    if (std::find(out.begin(), out.end(), r.split) == out.end()) out.push_back(r.split);
  return out;
}

std::string AblationResult::to_csv(const std::string& split) const {
  std::ostringstream os;
  os.precision(10);
  os << "grid_key,split,em,f1,steps,seed\n";
  for (const auto& r : rows)
    if (split.empty() || r.split == split) os << r.grid_key << ',' << r.split << ',' << r.em << ',' << r.f1 << ',' << r.steps << ',' << r.seed << '\n';
  return os.str();
}

namespace {

void check_setup(const AblationSetup& s) {
  if (s.teacher == nullptr) throw ContractError("ablation needs a teacher model");
  if (s.tokenizer == nullptr) throw ContractError("ablation needs a tokenizer");
  if (s.eval_splits.empty()) throw ContractError("ablation needs at least one evaluation split");
}

/// Trains one grid point and appends its rows; returns F1 on the first split.
double run_point(const std::string& key, const QAModelConfig& student_config, const KDConfig& cfg,
                 const AblationSetup& setup, AblationResult& result) {
  QAModel student(student_config);
  student.tokenizer_fingerprint = setup.tokenizer->fingerprint();
  const TrainReport tr = train_student(student, *setup.teacher, setup.train, cfg);
  double first = 0.0;
  for (std::size_t s = 0; s < setup.eval_splits.size(); ++s) {
    const auto& split = setup.eval_splits[s];
    const EvalReport r = evaluate(student, split.examples, *setup.tokenizer, setup.eval_view, split.name);
    result.rows.push_back({key, split.name, r.em, r.f1, tr.steps, cfg.seed});
    if (s == 0) first = r.f1;
  }
  result.fingerprints.emplace_back(key, tr.model_fingerprint);
  if (setup.csv_prefix) {
    for (const auto& split : result.splits()) {
      const auto path = setup.csv_prefix->parent_path() / (setup.csv_prefix->filename().string() + "_" + split + ".csv");
      std::ofstream(path, std::ios::trunc) << result.to_csv(split);
    }
  }
  return first;
}

}  // namespace

AblationResult ablate_temperature(std::span<const double> taus, const KDConfig& base, const AblationSetup& setup) {
  if (taus.empty()) throw ParameterError("temperature grid is empty");
  for (double t : taus)
    if (!(t > 0.0)) throw ParameterError("temperature grid holds non-positive tau " + std::to_string(t));
  check_setup(setup);
  AblationResult result;
  double best_f1 = -1.0, best_tau = 0.0;
  for (double tau : taus) {
    KDConfig cfg = base;
    cfg.tau = tau;
    const double f1 = run_point(format_tau(tau), setup.student_config, cfg, setup, result);
    if (f1 > best_f1 || (f1 == best_f1 && tau < best_tau)) {
      best_f1 = f1;
      best_tau = tau;
      result.best_key = format_tau(tau);
    }
  }
  return result;
}

AblationResult ablate_fusion(std::span<const FusionMode> modes, const KDConfig& base, const AblationSetup& setup) {
  if (modes.empty()) throw ParameterError("fusion mode list is empty");
  check_setup(setup);
  AblationResult result;
  double best_f1 = -1.0;
  for (FusionMode mode : modes) {
    QAModelConfig mc = setup.student_config;
    mc.fusion = mode;
    const double f1 = run_point(to_string(mode), mc, base, setup, result);
    if (f1 > best_f1) {
      best_f1 = f1;
      result.best_key = to_string(mode);
    }
  }
  return result;
}

}  // namespace ddnet
