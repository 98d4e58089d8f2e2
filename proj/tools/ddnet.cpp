#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ddnet/checkpoint.hpp"
#include "ddnet/dataset.hpp"
#include "ddnet/distill.hpp"
#include "ddnet/errors.hpp"
#include "ddnet/evaluation.hpp"
#include "ddnet/examples.hpp"
#include "ddnet/hash.hpp"
#include "ddnet/noise.hpp"
#include "ddnet/run_config.hpp"
#include "ddnet/tokenizer.hpp"

namespace fs = std::filesystem;
using namespace ddnet;

namespace {

void log(const std::string& msg) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::cerr << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << " " << msg << std::endl;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

/// Values given on the command line; each overrides the config file.
struct Overrides {
  std::string config_path;
  std::string output;
  std::uint64_t seed = 0;
  int synthetic = 0;
  std::string input;
  std::string noise;
  int steps = 0;
  double alpha = -1.0;
  double tau = -1.0;
  std::string fusion;
  std::string teacher;
  bool dry_run = false;
};

struct Corpus {
  Tokenizer tokenizer;
  std::vector<Story> train, dev, test;
};

fs::path data_dir(const RunConfig& cfg) { return cfg.output_dir() / "data"; }

Corpus load_corpus(const RunConfig& cfg) {
  const fs::path dir = data_dir(cfg);
  if (!fs::exists(dir / "vocab.txt")) throw ConfigError("no prepared data in " + dir.string() + "; run prepare first");
  Corpus c;
  c.tokenizer = Tokenizer::load(dir / "vocab.txt");
  c.train = load_dataset(dir / "train.json");
  c.dev = load_dataset(dir / "dev.json");
  c.test = load_dataset(dir / "test.json");
  return c;
}

std::vector<Example> examples_of(const std::vector<Story>& stories, const Tokenizer& tok, const RunConfig& cfg,
                                 const std::string& split) {
  ExampleSet set = build_examples(stories, tok, cfg.examples);
  if (!set.skipped.empty()) {
    log(split + ": skipped " + std::to_string(set.skipped.size()) + " turns (first: story '" + set.skipped[0].story_id +
        "' turn " + std::to_string(set.skipped[0].turn_index) + ": " + set.skipped[0].reason + ")");
  }
  return std::move(set.examples);
}

nlohmann::json corpus_stats(const std::vector<Story>& stories) {
  std::size_t turns = 0, unanswerable = 0, doc_words = 0;
  CorpusWer docs, questions;
  for (const auto& s : stories) {
    turns += s.turns.size();
    const auto ref = wer_words(s.document);
    doc_words += ref.size();
    if (s.asr_document) {
      docs.errors += edit_distance(ref, wer_words(*s.asr_document));
      docs.reference_words += ref.size();
    }
    for (const auto& t : s.turns) {
      if (!t.answerable) ++unanswerable;
      if (t.asr_question) {
        const auto q = wer_words(t.question);
        questions.errors += edit_distance(q, wer_words(*t.asr_question));
        questions.reference_words += q.size();
      }
    }
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, stories.size()));
  nlohmann::json j = {{"stories", stories.size()},
                      {"turns", turns},
                      {"mean_turns_per_story", static_cast<double>(turns) / n},
                      {"mean_document_words", static_cast<double>(doc_words) / n},
                      {"unanswerable_turns", unanswerable}};
  if (docs.reference_words) j["document_wer"] = docs.rate();
  if (questions.reference_words) j["question_wer"] = questions.rate();
  return j;
}

nlohmann::json examples_cache(const std::vector<Example>& examples) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : examples) {
    nlohmann::json r = {{"story_id", e.story_id},          {"turn_index", e.turn_index},
                        {"clean_ids", e.clean.ids},        {"clean_gold", {e.clean.gold_start, e.clean.gold_end}},
                        {"speech_ids", e.speech_ids},      {"gold_answer_texts", e.gold_answer_texts}};
    if (e.asr) {
      r["asr_ids"] = e.asr->ids;
      r["asr_gold"] = {e.asr->gold_start, e.asr->gold_end};
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---- commands -----------------------------------------------------------------

int cmd_prepare(RunConfig cfg, bool dry_run) {
  cfg.validate();
  const fs::path out = data_dir(cfg);
  save_run_config(cfg.output_dir() / "prepare_config.json", cfg);
  if (dry_run) {
    std::cout << "prepare: config valid, output " << out.string() << "\n";
    return 0;
  }
  std::vector<Story> stories;
  if (!cfg.paths.dataset.empty()) {
    stories = load_dataset(cfg.paths.dataset);
  } else {
    stories = generate_synthetic(cfg.synthetic_stories, substream_seed(cfg.seed, "synthetic"));
  }
  const std::size_t n = stories.size();
  const auto n_test = static_cast<std::size_t>(std::llround(cfg.test_fraction * static_cast<double>(n)));
  const auto n_dev = static_cast<std::size_t>(std::llround(cfg.dev_fraction * static_cast<double>(n)));
  if (n_test + n_dev >= n) throw ConfigError("dataset of " + std::to_string(n) + " stories is too small to split");
  const std::vector<Story> train_clean(stories.begin(), stories.end() - static_cast<long>(n_dev + n_test));
  const std::vector<Story> dev_clean(stories.end() - static_cast<long>(n_dev + n_test), stories.end() - static_cast<long>(n_test));
  const std::vector<Story> test_clean(stories.end() - static_cast<long>(n_test), stories.end());

  nlohmann::json stats = nlohmann::json::object();
  std::vector<Story> splits[3];
  const char* names[3] = {"train", "dev", "test"};
  const std::vector<Story>* clean[3] = {&train_clean, &dev_clean, &test_clean};
  for (int s = 0; s < 3; ++s) {
    NoiseStats ns;
    splits[s] = corrupt_dataset(*clean[s], cfg.noise, &ns);
    stats[names[s]] = corpus_stats(splits[s]);
    stats[names[s]]["noise"] = ns.to_json();
  }
  stats["noise_target_wer"] = cfg.noise.total_rate();

  std::vector<std::string> texts;
  for (const auto& s : splits[0]) {
    texts.push_back(s.document);
    if (s.asr_document) texts.push_back(*s.asr_document);
    for (const auto& t : s.turns) {
      texts.push_back(t.question);
      if (t.asr_question) texts.push_back(*t.asr_question);
      texts.push_back(t.answer);
    }
  }
  const Tokenizer tok = Tokenizer::build(texts);
  fs::create_directories(out);
  tok.save(out / "vocab.txt");
  for (int s = 0; s < 3; ++s) {
    save_dataset(out / (std::string(names[s]) + ".json"), splits[s]);
    const auto ex = examples_of(splits[s], tok, cfg, names[s]);
    write_json(out / (std::string("examples_") + names[s] + ".json"), examples_cache(ex));
    stats[names[s]]["examples"] = ex.size();
  }
  stats["vocabulary_size"] = tok.size();
  stats["tokenizer_fingerprint"] = hex64(tok.fingerprint());
  write_json(out / "stats.json", stats);
  std::cout << stats.dump(2) << "\n";
  log("prepared " + std::to_string(n) + " stories into " + out.string());
  return 0;
}

int cmd_train(RunConfig cfg, const std::string& role, const std::string& resume, bool dry_run) {
  if (role != "teacher" && role != "student") throw ConfigError("--role must be teacher or student");
  const fs::path teacher_path = cfg.teacher_checkpoint();
  if (role == "student" && !fs::exists(teacher_path)) {
    throw ConfigError("student training needs a teacher checkpoint; " + teacher_path.string() + " does not exist");
  }
  const Corpus corpus = load_corpus(cfg);
  cfg.fit_to_vocabulary(corpus.tokenizer.size());
  cfg.validate();
  const fs::path dir = cfg.output_dir() / role;
  save_run_config(dir / "config.json", cfg);
  QAModel model(cfg.model);
  model.tokenizer_fingerprint = corpus.tokenizer.fingerprint();
  if (dry_run) {
    std::cout << role << ": config valid, " << model.parameter_count() << " parameters\n";
    return 0;
  }
  const auto train = examples_of(corpus.train, corpus.tokenizer, cfg, "train");
  const auto dev = examples_of(corpus.dev, corpus.tokenizer, cfg, "dev");

  TrainHooks hooks;
  hooks.dev = dev;
  hooks.tokenizer = &corpus.tokenizer;
  hooks.checkpoint_path = dir / "model.ckpt";
  hooks.checkpoint_every = cfg.train.eval_every;
  hooks.max_answer_len = cfg.examples.max_answer_len;
  if (!resume.empty()) hooks.resume_from = fs::path(resume);

  TrainReport report;
  if (role == "teacher") {
    report = train_teacher(model, train, cfg.train, hooks);
  } else {
    const QAModel teacher = load_model(teacher_path);
    if (teacher.tokenizer_fingerprint != corpus.tokenizer.fingerprint()) {
      throw ConfigError("teacher checkpoint was trained with a different tokenizer");
    }
    report = train_student(model, teacher, train, cfg.train, hooks);
  }
  write_json(dir / "train_report.json", report.to_json());
  std::ostringstream msg;
  msg << role << ": " << report.steps << " steps, final loss "
      << (report.losses.empty() ? 0.0 : report.losses.back()) << ", wall-clock " << report.wall_clock_seconds << " s";
  log(msg.str());
  if (!report.evals.empty()) {
    std::cout << role << " dev EM " << report.evals.back().em << " F1 " << report.evals.back().f1 << "\n";
  }
  return 0;
}

int cmd_evaluate(RunConfig cfg, const std::string& checkpoint, const std::string& split, const std::string& view_name,
                 bool dry_run) {
  const View view = parse_view(view_name);
  if (split != "train" && split != "dev" && split != "test") throw ConfigError("--split must be train, dev or test");
  const fs::path ckpt = checkpoint.empty() ? cfg.teacher_checkpoint() : fs::path(checkpoint);
  if (!fs::exists(ckpt)) throw ConfigError("checkpoint " + ckpt.string() + " does not exist");
  const Corpus corpus = load_corpus(cfg);
  cfg.validate();
  const std::string stem = ckpt.parent_path().filename().string() + "_" + split + "_" + view_name;
  save_run_config(cfg.output_dir() / "eval" / (stem + "_config.json"), cfg);
  const QAModel model = load_model(ckpt);
  if (model.tokenizer_fingerprint != corpus.tokenizer.fingerprint()) {
    throw ConfigError("checkpoint tokenizer " + hex64(model.tokenizer_fingerprint) + " differs from prepared vocabulary " +
                      hex64(corpus.tokenizer.fingerprint()));
  }
  if (dry_run) {
    std::cout << "evaluate: config valid, " << model.parameter_count() << " parameters\n";
    return 0;
  }
  const auto& stories = split == "train" ? corpus.train : split == "dev" ? corpus.dev : corpus.test;
  const auto examples = examples_of(stories, corpus.tokenizer, cfg, split);
  const EvalReport report = evaluate(model, examples, corpus.tokenizer, view, split, cfg.examples.max_answer_len);
  report.write(cfg.output_dir() / "eval", stem);
  std::cout << stem << ": EM " << report.em << " F1 " << report.f1 << " over " << report.count << " turns\n";
  return 0;
}

int cmd_ablate(RunConfig cfg, const std::string& kind, bool dry_run) {
  if (kind != "temperature" && kind != "fusion") throw ConfigError("ablation kind must be temperature or fusion");
  const fs::path teacher_path = cfg.teacher_checkpoint();
  if (!fs::exists(teacher_path)) throw ConfigError("ablation needs a teacher checkpoint; " + teacher_path.string() + " does not exist");
  const Corpus corpus = load_corpus(cfg);
  cfg.fit_to_vocabulary(corpus.tokenizer.size());
  cfg.validate();
  const fs::path dir = cfg.output_dir() / "ablation";
  save_run_config(dir / (kind + "_config.json"), cfg);
  if (dry_run) {
    const std::size_t points = kind == "temperature" ? cfg.temperature_grid.size() : cfg.fusion_modes.size();
    std::cout << "ablate " << kind << ": config valid, " << points << " grid points\n";
    return 0;
  }
  const QAModel teacher = load_model(teacher_path);
  const auto train = examples_of(corpus.train, corpus.tokenizer, cfg, "train");
  const auto dev = examples_of(corpus.dev, corpus.tokenizer, cfg, "dev");
  const auto test = examples_of(corpus.test, corpus.tokenizer, cfg, "test");
  AblationSetup setup;
  setup.student_config = cfg.model;
  setup.teacher = &teacher;
  setup.train = train;
  setup.eval_splits = {{"dev", dev}, {"test", test}};
  setup.tokenizer = &corpus.tokenizer;
  setup.csv_prefix = dir / kind;
  fs::create_directories(dir);
  const AblationResult result = kind == "temperature" ? ablate_temperature(cfg.temperature_grid, cfg.train, setup)
                                                      : ablate_fusion(cfg.fusion_modes, cfg.train, setup);
  nlohmann::json fingerprints = nlohmann::json::object();
  for (const auto& [k, f] : result.fingerprints) fingerprints[k] = f;
  write_json(dir / (kind + "_summary.json"), {{"kind", kind}, {"best", result.best_key}, {"fingerprints", fingerprints}});
  std::cout << result.to_csv() << "best " << kind << ": " << result.best_key << "\n";
  return 0;
}

int cmd_stats(RunConfig cfg, const std::string& input) {
  nlohmann::json j;
  if (!input.empty()) {
    j = corpus_stats(load_dataset(input));
  } else {
    const Corpus corpus = load_corpus(cfg);
    j = {{"train", corpus_stats(corpus.train)}, {"dev", corpus_stats(corpus.dev)}, {"test", corpus_stats(corpus.test)},
         {"vocabulary_size", corpus.tokenizer.size()}};
    write_json(cfg.output_dir() / "stats.json", j);
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distillation pipeline for spoken conversational question answering"};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides o;
  app.add_option("--config", o.config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--output", o.output, "Output directory (relative paths go under $DDNET_OUTPUT_ROOT)");
  app.add_option("--seed", o.seed, "Root seed");
  app.add_flag("--dry-run", o.dry_run, "Validate and write the resolved config without computing");

  auto* prepare = app.add_subcommand("prepare", "Build the corpus, ASR views, vocabulary and statistics");
  prepare->add_option("--synthetic", o.synthetic, "Generate N synthetic stories")->check(CLI::PositiveNumber);
  prepare->add_option("--input", o.input, "Dataset file")->check(CLI::ExistingFile);
  prepare->add_option("--noise", o.noise, "'default' or a noise spec JSON file");
  prepare->get_option("--synthetic")->excludes(prepare->get_option("--input"));

  std::string role, resume, checkpoint, split = "dev", view = "clean", kind, stats_input;
  auto* train = app.add_subcommand("train", "Train the teacher or the student");
  train->add_option("--role", role, "teacher or student")->required()->check(CLI::IsMember({"teacher", "student"}));
  train->add_option("--steps", o.steps, "Training steps");
  train->add_option("--alpha", o.alpha, "Balancing factor");
  train->add_option("--tau", o.tau, "Temperature");
  train->add_option("--fusion", o.fusion, "Fusion mode");
  train->add_option("--teacher", o.teacher, "Teacher checkpoint");
  train->add_option("--resume", resume, "Training checkpoint to continue from")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("evaluate", "Score a checkpoint on a split");
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint (default: the teacher)");
  eval->add_option("--split", split, "train, dev or test");
  eval->add_option("--view", view, "clean or asr");

  auto* ablate = app.add_subcommand("ablate", "Temperature or fusion ablation");
  ablate->add_option("kind", kind, "temperature or fusion")->required()->check(CLI::IsMember({"temperature", "fusion"}));
  ablate->add_option("--steps", o.steps, "Training steps per grid point");
  ablate->add_option("--teacher", o.teacher, "Teacher checkpoint");

  auto* stats = app.add_subcommand("stats", "Corpus statistics");
  stats->add_option("--input", stats_input, "Dataset file (default: the prepared splits)")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    // flags live on the subcommand that registered them; flags win over the file
    auto lookup = [&](const char* name) -> const CLI::App& {
      for (const CLI::App* sub : {prepare, train, ablate})
        if (sub->parsed() && sub->get_option_no_throw(name) != nullptr) return *sub;
      return app;
    };
    RunConfig cfg = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
    auto count = [&](const char* name) {
      const CLI::App& owner = lookup(name);
      const CLI::Option* opt = owner.get_option_no_throw(name);
      return opt != nullptr && opt->count() > 0;
    };
    if (count("--seed")) {
      cfg.seed = o.seed;
      cfg.derive_seeds();
    }
    if (count("--output")) cfg.paths.output_dir = o.output;
    if (count("--input") && prepare->parsed()) cfg.paths.dataset = o.input;
    if (count("--synthetic")) {
      cfg.synthetic_stories = o.synthetic;
      cfg.paths.dataset.clear();
    }
    if (count("--noise")) {
      const auto seed = cfg.noise.seed;
      if (o.noise == "default") {
        cfg.noise = NoiseSpec{};
      } else {
        std::ifstream is(o.noise);
        if (!is) throw ConfigError("cannot open noise spec " + o.noise);
        cfg.noise = noise_spec_from_json(nlohmann::json::parse(is));
      }
      cfg.noise.seed = seed;
    }
    if (count("--steps")) cfg.train.max_steps = o.steps;
    if (count("--alpha")) cfg.train.alpha = o.alpha;
    if (count("--tau")) cfg.train.tau = o.tau;
    if (count("--fusion")) cfg.model.fusion = parse_fusion_mode(o.fusion);
    if (count("--teacher")) cfg.paths.teacher_checkpoint = o.teacher;

    if (prepare->parsed()) return cmd_prepare(cfg, o.dry_run);
    if (train->parsed()) return cmd_train(cfg, role, resume, o.dry_run);
    if (eval->parsed()) return cmd_evaluate(cfg, checkpoint, split, view, o.dry_run);
    if (ablate->parsed()) return cmd_ablate(cfg, kind, o.dry_run);
    if (stats->parsed()) return cmd_stats(cfg, stats_input);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
