// statuskt command-line entry point.
//
//   synth       generate a synthetic dataset
//   extract-mp  annotate interactions with MP ratios through a chat model
//   train       train one model (or a grid) and write checkpoint + metrics
//   eval        score a checkpoint on a data split
//   report      original vs statuskt table over a directory of runs
//   gradcheck   finite-difference gradient suite
//
// Exit codes: 0 ok, 1 usage, 2 validation, 3 runtime.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "statuskt/gradcheck_suite.hpp"
#include "statuskt/mp/http_client.hpp"
#include "statuskt/mp_pipeline.hpp"
#include "statuskt/synthetic.hpp"
#include "statuskt/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace statuskt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct UsageError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Config files and manifests
// ---------------------------------------------------------------------------

/// key = value lines; '#' starts a comment. Keys name long flags without "--".
std::vector<std::pair<std::string, std::string>> read_key_values(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot open config file " + file.string());
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(file.string() + ":" + std::to_string(n) + ": expected key = value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

/// Fills options the command line left unset from the config file.
void apply_config(CLI::App& sub, const std::string& config_path) {
  if (config_path.empty()) return;
  for (const auto& [key, value] : read_key_values(config_path)) {
    CLI::Option* opt = nullptr;
    try {
      opt = sub.get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      throw UsageError("unknown key '" + key + "' in " + config_path);
    }
    if (key == "config") throw UsageError("config files cannot include other config files");
    if (opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

/// Every long option of `sub` with its effective value.
json resolved_options(const CLI::App& sub) {
  json out = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names.front() == "help") continue;
    std::string v;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      v = r.empty() ? "true" : r.back();
    } else {
      v = opt->get_default_str();
    }
    out[names.front()] = v;
  }
  return out;
}

std::string hash_inputs(const std::vector<fs::path>& files, json& per_file) {
  Sha256 all;
  for (const auto& f : files) {
    const auto h = sha256_file(f);
    per_file[f.string()] = h;
    all.update(f.filename().string() + ":" + h + "\n");
  }
  return all.hex();
}

struct Manifest {
  std::string command;
  json config;
  std::uint64_t seed = 0;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::string started_at = mp::utc_now();

  json to_json() const {
    json files = json::object();
    json j;
    j["command"] = command;
    j["config"] = config;
    j["seed"] = seed;
    j["input_hash"] = hash_inputs(inputs, files);
    j["input_files"] = files;
    j["started_at"] = started_at;
    j["finished_at"] = mp::utc_now();
    json outs = json::array();
    for (const auto& o : outputs) outs.push_back(o.string());
    j["outputs"] = outs;
    return j;
  }

  void write(const fs::path& dir) const {
    mp::write_atomically(dir / "manifest.json", to_json().dump(2) + "\n");
  }
};

std::vector<fs::path> dataset_files(const fs::path& dir) { return {dir / kProblemsFile, dir / kInteractionsFile}; }

void require_dataset_dir(const fs::path& dir) {
  for (const auto& f : dataset_files(dir))
    if (!fs::is_regular_file(f)) throw UsageError("missing " + f.string());
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  synthetic::SimConfig sim;
  std::string out;
};

int run_synth(const SynthArgs& a, Manifest m) {
  const auto ds = synthetic::generate(a.sim);
  save_dataset(ds, a.out);
  m.outputs = dataset_files(a.out);
  m.seed = a.sim.seed;
  m.write(a.out);
  std::cout << "wrote " << ds.problems.size() << " problems and " << ds.num_interactions() << " interactions of "
            << ds.sequences.size() << " students to " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// extract-mp
// ---------------------------------------------------------------------------

struct ExtractArgs {
  std::string data, out, cache, client = "mock", url, model;
  std::size_t concurrency = 4;
  int max_retries = 3;
  double temperature = 0.0;
  double timeout = 120.0;
  int backoff_ms = 500;
  bool retry_failures = false;
};

int run_extract(const ExtractArgs& a, Manifest m) {
  require_dataset_dir(a.data);
  const auto pre = preprocess(load_dataset(a.data));
  const fs::path cache = a.cache.empty() ? fs::path(a.out) / "cache" : fs::path(a.cache);

  std::unique_ptr<mp::ChatClient> client;
  if (a.client == "mock") {
    client = std::make_unique<mp::MockChatClient>();
  } else {
    auto cfg = mp::HttpChatConfig::from_env();
    if (!a.url.empty()) cfg.url = a.url;
    if (!a.model.empty()) cfg.model = a.model;
    if (cfg.api_key.empty()) std::cerr << "warning: no API key in STATUSKT_API_KEY or OPENAI_API_KEY\n";
    client = std::make_unique<mp::HttpChatClient>(cfg);
  }

  mp::PipelineOptions opts;
  opts.concurrency = a.concurrency;
  opts.params.max_retries = a.max_retries;
  opts.params.temperature = a.temperature;
  opts.params.timeout = std::chrono::milliseconds(static_cast<long long>(a.timeout * 1000.0));
  opts.backoff_base = std::chrono::milliseconds(a.backoff_ms);
  opts.retry_failures = a.retry_failures;
  auto result = mp::run_pipeline(pre.data, *client, cache, opts);

  Dataset annotated{pre.data.problems, std::move(result.sequences)};
  save_dataset(annotated, a.out);
  const auto& rep = result.report;
  json report = {{"interactions", rep.interactions}, {"annotated", rep.annotated},
                 {"failed", rep.failed()},           {"failure_rate", rep.failure_rate()},
                 {"problems", rep.problems},         {"client_calls", rep.client_calls},
                 {"cache_hits", rep.cache_hits},     {"warnings", rep.warnings}};
  json failures = json::array();
  for (const auto& f : rep.failures)
    failures.push_back({{"student_id", f.student_id},
                        {"step", f.step},
                        {"problem_id", f.problem_id},
                        {"stage", mp::to_string(f.stage)},
                        {"message", f.message}});
  report["failures"] = failures;
  report["preprocess"] = {{"kept_interactions", pre.report.kept_interactions},
                          {"dropped_short_process", pre.report.dropped_short_process},
                          {"dropped_missing_problem_text", pre.report.dropped_missing_problem_text},
                          {"removed_empty_sequences", pre.report.removed_empty_sequences}};
  const fs::path report_path = fs::path(a.out) / "pipeline_report.json";
  mp::write_atomically(report_path, report.dump(2) + "\n");

  for (const auto& f : dataset_files(a.data)) m.inputs.push_back(f);
  m.outputs = dataset_files(a.out);
  m.outputs.push_back(report_path);
  m.outputs.push_back(cache / "audit");
  m.write(a.out);

  std::cout << "annotated " << rep.annotated << "/" << rep.interactions << " interactions (" << rep.client_calls
            << " client calls, " << rep.cache_hits << " cache hits)\n";
  if (rep.failed() > 0)
    std::cerr << "warning: " << rep.failed() << " interactions could not be annotated (failure rate "
              << fixed(rep.failure_rate()) << "); see " << report_path.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train / eval
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, out, backbone = "recurrent", variant = "statuskt", precision = "float";
  double alpha = 0.5, lr = 1e-3, dropout = 0.1, test_frac = 0.2, val_frac = 0.1;
  std::size_t embed_dim = 0, heads = 8, max_len = 0, batch_size = 16, patience = 10, max_epochs = 200, workers = 1;
  std::uint64_t seed = 42;
  bool grid = false, verbose = false;
};

struct PreparedData {
  Vocabulary vocab;
  Splits parts;
  std::size_t max_len = 0;
};

std::uint64_t split_seed(std::uint64_t seed) { return sub_seed(seed, "split"); }

PreparedData prepare(const fs::path& data, std::uint64_t seed, double test_frac, double val_frac,
                     std::size_t max_len) {
  require_dataset_dir(data);
  const auto pre = preprocess(load_dataset(data));
  PreparedData p;
  p.vocab = Vocabulary::from_problems(pre.data.problems);
  p.parts = split(pre.data.sequences, split_seed(seed), test_frac, val_frac);
  if (max_len == 0) {
    std::size_t longest = 2;
    for (const auto& s : pre.data.sequences) longest = std::max(longest, s.steps.size());
    max_len = std::min<std::size_t>(200, longest);
  }
  p.max_len = max_len;
  return p;
}

json metrics_json(const Metrics& m, const std::string& prefix) {
  json j;
  j[prefix + "auc"] = m.auc;
  j[prefix + "acc"] = m.acc;
  j[prefix + "n_predictions"] = m.n_predictions;
  if (m.mp_mse) j[prefix + "mp_mse"] = *m.mp_mse;
  return j;
}

template <typename T>
int run_train_typed(const TrainArgs& a, Manifest m) {
  const auto p = prepare(a.data, a.seed, a.test_frac, a.val_frac, a.max_len);
  const auto windows = make_windows(p.parts.train, p.vocab, p.max_len);
  const auto val = make_batches(p.parts.val, p.vocab, p.max_len, a.batch_size);
  const auto test = make_batches(p.parts.test, p.vocab, p.max_len, a.batch_size);

  ModelConfig mc;
  mc.backbone = parse_backbone(a.backbone);
  mc.variant = parse_variant(a.variant);
  mc.embed_dim = a.embed_dim;
  mc.attention_heads = a.heads;
  mc.num_questions = p.vocab.num_questions();
  mc.num_concepts = p.vocab.num_concepts();
  mc.max_len = p.max_len;
  mc.dropout = a.dropout;
  mc.seed = sub_seed(a.seed, "init");
  mc.validate();

  TrainConfig tc;
  tc.alpha = a.alpha;
  tc.lr = a.lr;
  tc.batch_size = a.batch_size;
  tc.patience = a.patience;
  tc.max_epochs = a.max_epochs;
  tc.max_len = p.max_len;
  tc.seed = a.seed;
  tc.grid_workers = a.workers;

  std::unique_ptr<KTModel<T>> model;
  TrainResult run;
  double lr = a.lr, dropout = a.dropout;
  fs::create_directories(a.out);
  const fs::path out(a.out);
  if (a.grid) {
    auto factory = [&](double d) {
      auto c = mc;
      c.dropout = d;
      return build_model<T>(c);
    };
    auto g = grid_search<T>(factory, windows, val, tc);
    std::ostringstream csv;
    csv << "lr,dropout,alpha,val_auc,val_acc,epochs_trained,best_epoch\n";
    for (const auto& c : g.cells)
      csv << c.lr << ',' << c.dropout << ',' << c.alpha << ',' << fixed(c.val_auc, 6) << ',' << fixed(c.val_acc, 6)
          << ',' << c.epochs_trained << ',' << c.best_epoch << '\n';
    mp::write_atomically(out / "grid.csv", csv.str());
    m.outputs.push_back(out / "grid.csv");
    const auto& best = g.cells[g.best_index];
    lr = best.lr;
    dropout = best.dropout;
    tc.alpha = best.alpha;
    model = std::move(g.best_model);
    run = std::move(g.best_run);
  } else {
    model = build_model<T>(mc);
    run = train(*model, windows, val, tc);
  }
  if (a.verbose)
    for (const auto& h : run.history)
      std::cerr << "epoch " << h.epoch << " loss " << fixed(h.train_loss) << " val_auc " << fixed(h.val_auc) << "\n";

  // Test metrics are computed once, after selection.
  const Metrics test_metrics = evaluate(*model, test);

  json metrics = {{"backbone", a.backbone},
                  {"variant", a.variant},
                  {"lr", lr},
                  {"dropout", dropout},
                  {"alpha", tc.alpha},
                  {"val_auc", run.best_val.auc},
                  {"val_acc", run.best_val.acc},
                  {"test_auc", test_metrics.auc},
                  {"test_acc", test_metrics.acc},
                  {"epochs_trained", run.epochs_trained},
                  {"best_epoch", run.best_epoch},
                  {"precision", a.precision},
                  {"seed", a.seed},
                  {"grid", a.grid}};
  metrics.update(metrics_json(test_metrics, "test_"));
  mp::write_atomically(out / "metrics.json", metrics.dump(2) + "\n");

  std::ostringstream hist;
  hist << "epoch,train_loss,val_auc,val_acc\n";
  for (const auto& h : run.history)
    hist << h.epoch << ',' << fixed(h.train_loss, 8) << ',' << fixed(h.val_auc, 8) << ',' << fixed(h.val_acc, 8)
         << '\n';
  mp::write_atomically(out / "history.csv", hist.str());

  auto final_config = model->config();
  json ckpt_config = {{"model", final_config.to_json()},
                      {"precision", a.precision},
                      {"seed", a.seed},
                      {"test_frac", a.test_frac},
                      {"val_frac", a.val_frac},
                      {"batch_size", a.batch_size},
                      {"alpha", tc.alpha},
                      {"lr", lr}};
  ad::save_checkpoint(out / "checkpoint.json", model->parameters(), ckpt_config);

  for (const auto& f : dataset_files(a.data)) m.inputs.push_back(f);
  m.outputs.insert(m.outputs.end(), {out / "metrics.json", out / "history.csv", out / "checkpoint.json"});
  m.seed = a.seed;
  m.write(out);
  std::cout << a.backbone << "/" << a.variant << ": val_auc " << fixed(run.best_val.auc) << " test_auc "
            << fixed(test_metrics.auc) << " test_acc " << fixed(test_metrics.acc) << " (" << run.epochs_trained
            << " epochs)\n";
  return kExitOk;
}

int run_train(const TrainArgs& a, Manifest m) {
  if (a.precision == "double") return run_train_typed<double>(a, std::move(m));
  return run_train_typed<float>(a, std::move(m));
}

struct EvalArgs {
  std::string checkpoint, data, out, split = "test";
};

template <typename T>
int run_eval_typed(const EvalArgs& a, const json& doc, Manifest m) {
  const auto& cfg = doc.at("config");
  const auto mc = ModelConfig::from_json(cfg.at("model"));
  const auto seed = cfg.at("seed").get<std::uint64_t>();
  const auto p = prepare(a.data, seed, cfg.at("test_frac").get<double>(), cfg.at("val_frac").get<double>(), mc.max_len);
  if (p.vocab.num_questions() != mc.num_questions || p.vocab.num_concepts() != mc.num_concepts)
    throw ValidationError("dataset vocabulary (" + std::to_string(p.vocab.num_questions()) + " questions, " +
                          std::to_string(p.vocab.num_concepts()) + " concepts) does not match the checkpoint (" +
                          std::to_string(mc.num_questions) + ", " + std::to_string(mc.num_concepts) + ")");
  auto model = build_model<T>(mc);
  ad::tensors_from_json(model->parameters(), doc.at("tensors"));

  const auto& part = a.split == "val" ? p.parts.val : a.split == "train" ? p.parts.train : p.parts.test;
  const auto batches = make_batches(part, p.vocab, mc.max_len, cfg.value("batch_size", std::size_t{16}));
  const Metrics metrics = evaluate(*model, batches);
  json j = {{"backbone", to_string(mc.backbone)}, {"variant", to_string(mc.variant)}, {"split", a.split}};
  j.update(metrics_json(metrics, ""));
  j["auc_defined"] = metrics.auc_defined;

  const fs::path out = a.out.empty() ? fs::path(a.checkpoint).parent_path() / ("eval_" + a.split + ".json") : fs::path(a.out);
  mp::write_atomically(out, j.dump(2) + "\n");
  m.inputs.insert(m.inputs.end(), {a.checkpoint, fs::path(a.data) / kProblemsFile, fs::path(a.data) / kInteractionsFile});
  m.outputs = {out};
  m.seed = seed;
  mp::write_atomically(out.parent_path() / ("manifest_eval_" + a.split + ".json"), m.to_json().dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int run_eval(const EvalArgs& a, Manifest m) {
  const auto doc = ad::read_checkpoint(a.checkpoint);
  if (doc.at("config").value("precision", "double") == "float") return run_eval_typed<float>(a, doc, std::move(m));
  return run_eval_typed<double>(a, doc, std::move(m));
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string runs, out;
};

int run_report(const ReportArgs& a, Manifest m) {
  struct Acc {
    double auc = 0, acc = 0;
    int n = 0;
  };
  std::map<std::pair<std::string, std::string>, Acc> table;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a.runs))
    if (e.is_regular_file() && e.path().filename() == "metrics.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("no metrics.json found under " + a.runs);
  for (const auto& f : files) {
    std::ifstream in(f);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ParseError(f.string() + ": " + e.what());
    }
    auto& cell = table[{j.at("backbone").get<std::string>(), j.at("variant").get<std::string>()}];
    cell.auc += j.at("test_auc").get<double>();
    cell.acc += j.at("test_acc").get<double>();
    ++cell.n;
  }

  std::ostringstream md;
  md << "| Backbone | Original AUC | Original ACC | StatusKT AUC | StatusKT ACC | Runs |\n";
  md << "|---|---|---|---|---|---|\n";
  std::vector<std::string> backbones;
  for (const auto& [key, v] : table)
    if (std::find(backbones.begin(), backbones.end(), key.first) == backbones.end()) backbones.push_back(key.first);
  for (const auto& b : backbones) {
    md << "| " << b;
    int runs = 0;
    for (const char* variant : {"original", "statuskt"}) {
      auto it = table.find({b, variant});
      if (it == table.end()) {
        md << " | - | -";
        continue;
      }
      const auto& c = it->second;
      md << " | " << fixed(c.auc / c.n) << " | " << fixed(c.acc / c.n);
      runs += c.n;
    }
    md << " | " << runs << " |\n";
  }
  const fs::path out = a.out.empty() ? fs::path(a.runs) / "report.md" : fs::path(a.out);
  mp::write_atomically(out, md.str());
  m.inputs.insert(m.inputs.end(), files.begin(), files.end());
  m.outputs = {out};
  mp::write_atomically(out.parent_path() / "manifest_report.json", m.to_json().dump(2) + "\n");
  std::cout << md.str();
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int run_gradcheck(std::uint64_t seed, double tolerance, Manifest m) {
  const auto suite = gradcheck::run_suite(seed);
  for (const auto& c : suite.cases)
    std::cout << (c.report.passed(tolerance) ? "ok   " : "FAIL ") << std::left << std::setw(28) << c.name
              << " max_rel_error " << std::scientific << std::setprecision(3) << c.report.max_rel_error
              << std::defaultfloat << "  (" << c.report.entries << " entries)\n";
  std::cout << "max relative error " << std::scientific << suite.max_rel_error() << std::defaultfloat << " in "
            << fixed(suite.seconds, 2) << " s\n";
  m.seed = seed;
  auto manifest = m.to_json();
  manifest["passed"] = suite.passed(tolerance);
  std::cerr << "manifest: " << manifest.dump() << "\n";
  return suite.passed(tolerance) ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge tracing with mathematical-proficiency indicators"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  std::map<CLI::App*, std::string> config_of;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_of[sub], "key = value file; command-line flags take precedence")
        ->check(CLI::ExistingFile);
  };

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset");
  add_config(s);
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--students", synth.sim.num_students)->check(CLI::PositiveNumber);
  s->add_option("--problems", synth.sim.num_problems)->check(CLI::PositiveNumber);
  s->add_option("--concepts", synth.sim.num_concepts)->check(CLI::PositiveNumber);
  s->add_option("--steps", synth.sim.steps_per_student)->check(CLI::PositiveNumber);
  s->add_option("--learn-rate", synth.sim.learn_rate);
  s->add_option("--guess", synth.sim.guess)->check(CLI::Range(0.0, 1.0));
  s->add_option("--slip", synth.sim.slip)->check(CLI::Range(0.0, 1.0));
  s->add_option("--mp-noise", synth.sim.mp_noise_sd)->check(CLI::NonNegativeNumber);
  s->add_option("--seed", synth.sim.seed);

  ExtractArgs ex;
  auto* e = app.add_subcommand("extract-mp", "Annotate interactions with MP ratios");
  add_config(e);
  e->add_option("--data", ex.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--out", ex.out, "Output directory for the annotated dataset")->required();
  e->add_option("--cache", ex.cache, "Completion cache directory (default <out>/cache)");
  e->add_option("--client", ex.client, "mock or http")->check(CLI::IsMember({"mock", "http"}));
  e->add_option("--concurrency", ex.concurrency)->check(CLI::PositiveNumber);
  e->add_option("--max-retries", ex.max_retries, "Attempts after the first")->check(CLI::NonNegativeNumber);
  e->add_option("--temperature", ex.temperature);
  e->add_option("--timeout", ex.timeout, "Seconds per request")->check(CLI::PositiveNumber);
  e->add_option("--backoff-ms", ex.backoff_ms, "Initial retry delay")->check(CLI::NonNegativeNumber);
  e->add_flag("--retry-failures", ex.retry_failures, "Re-attempt prompts that failed on an earlier run");
  e->add_option("--url", ex.url, "Chat endpoint (overrides STATUSKT_CHAT_URL)");
  e->add_option("--model", ex.model, "Model name (overrides STATUSKT_CHAT_MODEL)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model and write checkpoint, metrics and history");
  add_config(t);
  t->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--backbone", tr.backbone)->check(CLI::IsMember({"recurrent", "attention"}));
  t->add_option("--variant", tr.variant)->check(CLI::IsMember({"original", "statuskt"}));
  t->add_option("--alpha", tr.alpha, "MP loss weight")->check(CLI::NonNegativeNumber);
  t->add_option("--lr", tr.lr)->check(CLI::PositiveNumber);
  t->add_option("--dropout", tr.dropout)->check(CLI::Range(0.0, 0.99));
  t->add_flag("--grid", tr.grid, "Search lr x dropout and keep the best validation AUC");
  t->add_option("--precision", tr.precision)->check(CLI::IsMember({"float", "double"}));
  t->add_option("--embed-dim", tr.embed_dim, "0 selects the backbone default");
  t->add_option("--heads", tr.heads)->check(CLI::PositiveNumber);
  t->add_option("--max-len", tr.max_len, "0 uses min(200, longest sequence)");
  t->add_option("--batch-size", tr.batch_size)->check(CLI::PositiveNumber);
  t->add_option("--patience", tr.patience)->check(CLI::PositiveNumber);
  t->add_option("--max-epochs", tr.max_epochs)->check(CLI::PositiveNumber);
  t->add_option("--test-frac", tr.test_frac)->check(CLI::Range(0.01, 0.99));
  t->add_option("--val-frac", tr.val_frac)->check(CLI::Range(0.01, 0.99));
  t->add_option("--workers", tr.workers, "Grid cells trained in parallel")->check(CLI::PositiveNumber);
  t->add_option("--seed", tr.seed);
  t->add_flag("--verbose", tr.verbose, "Print per-epoch history");

  EvalArgs ev;
  auto* v = app.add_subcommand("eval", "Score a checkpoint on a data split");
  add_config(v);
  v->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  v->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  v->add_option("--split", ev.split)->check(CLI::IsMember({"train", "val", "test"}));
  v->add_option("--out", ev.out, "Metrics file (default next to the checkpoint)");

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "Markdown table of original vs statuskt runs");
  add_config(r);
  r->add_option("--runs", rp.runs, "Directory searched for metrics.json")->required()->check(CLI::ExistingDirectory);
  r->add_option("--out", rp.out, "Markdown file (default <runs>/report.md)");

  std::uint64_t gc_seed = 42;
  double gc_tol = gradcheck::kTolerance;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  add_config(g);
  g->add_option("--seed", gc_seed);
  g->add_option("--tolerance", gc_tol)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    apply_config(*sub, config_of[sub]);
    Manifest m;
    m.command = sub->get_name();
    m.config = resolved_options(*sub);
    if (!config_of[sub].empty()) m.inputs.push_back(config_of[sub]);
    if (sub == s) return run_synth(synth, m);
    if (sub == e) return run_extract(ex, m);
    if (sub == t) return run_train(tr, m);
    if (sub == v) return run_eval(ev, m);
    if (sub == r) return run_report(rp, m);
    return run_gradcheck(gc_seed, gc_tol, m);
  } catch (const CLI::Error& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const ValidationError& err) {
    std::cerr << "validation error: " << err.what() << "\n";
    return kExitValidation;
  } catch (const ParseError& err) {
    std::cerr << "validation error: " << err.what() << "\n";
    return kExitValidation;
  } catch (const ConfigError& err) {
    std::cerr << "validation error: " << err.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitRuntime;
  }
}
