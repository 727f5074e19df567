// gap: train, evaluate and tabulate preconditioned meta-learners; run the
// verification suites; emit cosine-decay data.
//
// Exit codes: 0 ok, 1 check failure or I/O error, 2 invalid config or
// arguments, 3 training aborted, 4 missing or corrupt state.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gap/evaluation.hpp"
#include "gap/metaloop.hpp"
#include "gap/run_record.hpp"
#include "gap/stats.hpp"
#include "gap/theory.hpp"
#include "gap/verify.hpp"

namespace fs = std::filesystem;

namespace {

enum Exit : int { kOk = 0, kFailed = 1, kBadConfig = 2, kAborted = 3, kBadState = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::size_t> parse_grid(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    long long v = -1;
    try {
      v = std::stoll(item, &pos);
    } catch (const std::exception&) {
    }
    if (v < 1 || pos != item.size()) throw UsageError("bad grid entry '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw UsageError("empty grid");
  return out;
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("GAP_SEED");
  if (!s || !*s) return std::nullopt;
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos);
    if (pos == std::string(s).size()) return v;
  } catch (const std::exception&) {
  }
  throw gap::ConfigError("GAP_SEED", "must be a non-negative integer");
}

// ---- train ----

struct TrainArgs {
  std::string config;
  std::string out;
  std::optional<std::size_t> iterations;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  gap::CliConfig cc = gap::load_cli_config(a.config);
  if (const auto s = env_seed()) cc.train.seed = *s;
  if (a.seed) cc.train.seed = *a.seed;
  if (a.iterations) cc.train.iterations = *a.iterations;
  const std::string out = a.out.empty() ? cc.out : a.out;
  if (out.empty()) throw gap::ConfigError("out", "no output directory (use --out or the \"out\" key)");

  gap::TrainResult r;
  try {
    r = gap::meta_train(cc.train, gap::sinusoid_source(cc.train.shots, cc.train.train_query_size()),
                        [&](std::size_t it, double loss) {
                          if (!a.quiet) std::fprintf(stderr, "iter %zu  outer loss %.5f\n", it, loss);
                        });
  } catch (const gap::TrainingAborted& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kAborted;
  }
  gap::write_run(out, cc.train, r);
  std::printf("wrote %s (%zu iterations, %s, %zu-shot)\n", out.c_str(), cc.train.iterations,
              gap::method_label(cc.train.kind).c_str(), cc.train.shots);
  if (r.svd_fallbacks)
    std::fprintf(stderr, "note: %zu inner steps used frozen SVD factors (degenerate spectrum)\n", r.svd_fallbacks);
  return kOk;
}

// ---- eval ----

struct EvalArgs {
  std::string run;
  std::size_t tasks = 600;
  std::uint64_t seed = 0;
  std::string format = "csv";
  std::size_t workers = 1;
  bool no_precond = false;
  std::string out;
};

struct Row {
  std::string method;
  std::size_t shots;
  double mean, ci95;
};

std::string method_of(const gap::TrainConfig& cfg, bool no_precond) {
  return gap::method_label(cfg.kind) + (no_precond ? " (no precond)" : "");
}

void print_rows(const std::vector<Row>& rows, const std::string& format) {
  if (format == "markdown") {
    std::printf("| method | shots | mean_mse | ci95 |\n|---|---|---|---|\n");
    for (const Row& r : rows) std::printf("| %s | %zu | %.4f | %.4f |\n", r.method.c_str(), r.shots, r.mean, r.ci95);
  } else {
    std::printf("method,shots,mean_mse,ci95\n");
    for (const Row& r : rows) std::printf("%s,%zu,%.6f,%.6f\n", r.method.c_str(), r.shots, r.mean, r.ci95);
  }
}

gap::MetaState load_run_state(const fs::path& run) {
  if (!fs::exists(run / "state.bin")) throw gap::StateError("no state.bin in " + run.string());
  return gap::load_state(run / "state.bin");
}

int cmd_eval(const EvalArgs& a) {
  const fs::path run(a.run);
  gap::MetaState state = load_run_state(run);
  const gap::TrainConfig cfg = gap::load_run_config(run);
  if (a.no_precond) state = gap::without_preconditioner(std::move(state));

  gap::EvalSettings s;
  s.n_tasks = a.tasks;
  s.shots = cfg.shots;
  s.query_size = cfg.query_size_eval;
  s.alpha = cfg.alpha;
  s.k_steps = cfg.k_test;
  s.seed = a.seed;
  s.workers = a.workers;
  const gap::EvalResult r = gap::evaluate_protocol(state, s);
  const fs::path csv = a.out.empty() ? run / (a.no_precond ? "eval_no_precond.csv" : "eval.csv") : fs::path(a.out);
  gap::write_eval_csv(csv, r);
  print_rows({{method_of(cfg, a.no_precond), cfg.shots, r.mean, r.ci95}}, a.format);
  return kOk;
}

// ---- table ----

struct TableArgs {
  std::vector<std::string> runs;
  std::string format = "markdown";
  std::size_t tasks = 600;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

int cmd_table(const TableArgs& a) {
  static const std::vector<gap::PrecondKind> order = {gap::PrecondKind::kIdentity, gap::PrecondKind::kMetaSgd,
                                                      gap::PrecondKind::kMetaSgdPd, gap::PrecondKind::kApproxGap,
                                                      gap::PrecondKind::kGap};
  std::set<std::size_t> shots = {5, 10, 20};
  std::map<std::pair<gap::PrecondKind, std::size_t>, std::pair<double, double>> cells;
  std::set<gap::PrecondKind> present;
  for (const std::string& dir : a.runs) {
    const fs::path run(dir);
    const gap::TrainConfig cfg = gap::load_run_config(run);
    double mean = 0.0, ci = 0.0;
    if (fs::exists(run / "eval.csv")) {
      const std::vector<double> mse = gap::read_eval_mse(run / "eval.csv");
      mean = gap::stats::mean(mse);
      ci = gap::stats::ci95(mse);
    } else {
      gap::EvalSettings s;
      s.n_tasks = a.tasks;
      s.shots = cfg.shots;
      s.query_size = cfg.query_size_eval;
      s.alpha = cfg.alpha;
      s.k_steps = cfg.k_test;
      s.seed = a.seed;
      s.workers = a.workers;
      const gap::EvalResult r = gap::evaluate_protocol(load_run_state(run), s);
      gap::write_eval_csv(run / "eval.csv", r);
      mean = r.mean;
      ci = r.ci95;
    }
    shots.insert(cfg.shots);
    present.insert(cfg.kind);
    cells[{cfg.kind, cfg.shots}] = {mean, ci};
  }

  auto cell = [&](gap::PrecondKind k, std::size_t s) -> std::string {
    const auto it = cells.find({k, s});
    if (it == cells.end()) return "N/A";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f±%.2f", it->second.first, it->second.second);
    return buf;
  };
  if (a.format == "csv") {
    std::printf("method");
    for (std::size_t s : shots) std::printf(",%zu-shot", s);
    std::printf("\n");
    for (gap::PrecondKind k : order) {
      if (!present.contains(k)) continue;
      std::printf("%s", gap::method_label(k).c_str());
      for (std::size_t s : shots) std::printf(",%s", cell(k, s).c_str());
      std::printf("\n");
    }
  } else {
    std::printf("| method |");
    for (std::size_t s : shots) std::printf(" %zu-shot |", s);
    std::printf("\n|---|");
    for (std::size_t i = 0; i < shots.size(); ++i) std::printf("---|");
    std::printf("\n");
    for (gap::PrecondKind k : order) {
      if (!present.contains(k)) continue;
      std::printf("| %s |", gap::method_label(k).c_str());
      for (std::size_t s : shots) std::printf(" %s |", cell(k, s).c_str());
      std::printf("\n");
    }
  }
  return kOk;
}

// ---- verify ----

struct VerifyArgs {
  std::string suite = "all";
  std::string n_grid;
  std::optional<std::size_t> trials;
  std::uint64_t seed = 0;
};

int cmd_verify(const VerifyArgs& a) {
  if (!gap::verify::is_suite(a.suite)) {
    std::fprintf(stderr, "error: unknown suite '%s'\n", a.suite.c_str());
    return kBadConfig;
  }
  gap::verify::Options o;
  o.seed = a.seed;
  o.trials = a.trials;
  if (!a.n_grid.empty()) o.n_grid = parse_grid(a.n_grid);
  bool all = true;
  for (const auto& l : gap::verify::run_suite(a.suite, o)) {
    std::printf("%-44s statistic=%-14.6g threshold=%-10.3g %s\n", l.name.c_str(), l.statistic, l.threshold,
                l.pass ? "PASS" : "FAIL");
    all = all && l.pass;
  }
  return all ? kOk : kFailed;
}

// ---- fig3 ----

struct Fig3Args {
  std::size_t m = 8;
  std::string n_grid = "16,32,64,128,256,512,1024,2048,4096";
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_fig3(const Fig3Args& a) {
  if (a.m < 2) throw UsageError("--m must be ≥ 2");
  const auto grid = parse_grid(a.n_grid);
  gap::Rng rng = gap::make_rng(a.seed, gap::streams::kVerify);
  const auto pts = gap::theory::cosine_decay_sweep(a.m, grid, a.trials, rng);
  std::ostringstream os;
  os << "n,mean_abs_cos,analytic_ref\n";
  for (const auto& p : pts)
    os << p.n << ',' << gap::format_double(p.mean_abs_cos) << ',' << gap::format_double(p.analytic_ref) << '\n';
  if (a.out.empty()) {
    std::cout << os.str();
  } else {
    std::ofstream f(a.out);
    if (!f) throw std::runtime_error("cannot write " + a.out);
    f << os.str();
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometry-adaptive preconditioned meta-learning: training, evaluation and verification"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Meta-train on sinusoid regression and write a run directory");
  train->add_option("--config", ta.config, "JSON config (keys mirror the training settings)")->required();
  train->add_option("--out", ta.out, "Run directory (overrides the config's \"out\")");
  train->add_option("--iterations", ta.iterations, "Override outer iterations");
  train->add_option("--seed", ta.seed, "Override seed (takes precedence over GAP_SEED)");
  train->add_flag("--quiet", ta.quiet, "No progress output");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a run on fresh tasks; prints method,shots,mean_mse,ci95");
  eval->add_option("--run", ea.run, "Run directory")->required();
  eval->add_option("--tasks", ea.tasks, "Number of test tasks")->capture_default_str()->check(CLI::Range(2, 1 << 24));
  eval->add_option("--seed", ea.seed, "Task seed")->capture_default_str();
  eval->add_option("--format", ea.format, "csv or markdown")->capture_default_str()->check(CLI::IsMember({"csv", "markdown"}));
  eval->add_option("--workers", ea.workers, "Evaluation threads")->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_flag("--no-precond", ea.no_precond, "Replace the learned preconditioner by the identity");
  eval->add_option("--out", ea.out, "Per-task CSV path (default: <run>/eval.csv)");

  TableArgs tba;
  auto* table = app.add_subcommand("table", "Regression table from run directories (methods × shots)");
  table->add_option("runs", tba.runs, "Run directories");
  table->add_option("--format", tba.format, "markdown or csv")->capture_default_str()->check(CLI::IsMember({"csv", "markdown"}));
  table->add_option("--tasks", tba.tasks, "Tasks for runs lacking eval.csv")->capture_default_str()->check(CLI::Range(2, 1 << 24));
  table->add_option("--seed", tba.seed, "Task seed for runs lacking eval.csv")->capture_default_str();
  table->add_option("--workers", tba.workers, "Evaluation threads")->capture_default_str()->check(CLI::PositiveNumber);

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Run verification suites; exit 0 iff every check passes");
  verify->add_option("--suite", va.suite, "pd|similarity|variance|chebyshev|cosine|approx|gradcheck|all")->capture_default_str();
  verify->add_option("--n-grid", va.n_grid, "Comma-separated dimensions (suite default if omitted)");
  verify->add_option("--trials", va.trials, "Trials per point (suite default if omitted)")->check(CLI::PositiveNumber);
  verify->add_option("--seed", va.seed, "Seed")->capture_default_str();

  Fig3Args fa;
  auto* fig3 = app.add_subcommand("fig3", "Mean |cos| between Gaussian rows per n, as CSV");
  fig3->add_option("--m", fa.m, "Rows per matrix")->capture_default_str();
  fig3->add_option("--n-grid", fa.n_grid, "Comma-separated n values")->capture_default_str();
  fig3->add_option("--trials", fa.trials, "Matrices per n")->capture_default_str()->check(CLI::PositiveNumber);
  fig3->add_option("--seed", fa.seed, "Seed")->capture_default_str();
  fig3->add_option("--out", fa.out, "CSV path (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kBadConfig;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*table) return cmd_table(tba);
    if (*verify) return cmd_verify(va);
    if (*fig3) return cmd_fig3(fa);
  } catch (const gap::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kBadConfig;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kBadConfig;
  } catch (const gap::StateError& e) {
    std::fprintf(stderr, "state error: %s\n", e.what());
    return kBadState;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailed;
  }
  return kOk;
}
