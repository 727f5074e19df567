// Acceptance gate: runs criteria 1-7 and prints one PASS/FAIL line each.
// Trained runs are cached under --runs-dir and reused when their stored
// config matches. Exit status is 0 when every criterion executed (pass or
// fail); a crash or I/O error exits non-zero. --report keeps a copy of the
// verdict lines, since ctest hides the output of passing tests.

#include <chrono>
#include <utility>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gap/evaluation.hpp"
#include "gap/metaloop.hpp"
#include "gap/run_record.hpp"
#include "gap/verify.hpp"

namespace fs = std::filesystem;
using namespace gap;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  int number;
  std::string title;
  bool pass;
};

std::vector<Verdict> verdicts;
std::FILE* report_file = nullptr;  // copy of stdout, optional

void emit(const std::string& line) {
  std::printf("%s\n", line.c_str());
  std::fflush(stdout);
  if (report_file) {
    std::fprintf(report_file, "%s\n", line.c_str());
    std::fflush(report_file);
  }
}

void report(int number, const std::string& title, bool pass) {
  verdicts.push_back({number, title, pass});
  emit("criterion " + std::to_string(number) + " (" + title + "): " + (pass ? "PASS" : "FAIL"));
}

void detail(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  emit(std::string("    ") + buf);
}

std::vector<LossPoint> read_losses(const fs::path& p) {
  std::ifstream is(p);
  std::string line;
  std::getline(is, line);
  std::vector<LossPoint> out;
  while (std::getline(is, line)) {
    const auto comma = line.find(',');
    out.push_back({std::stoul(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
  }
  return out;
}

struct Run {
  TrainConfig cfg;
  MetaState state;
  std::vector<LossPoint> curve;
  double train_seconds = 0.0;  // 0 if unknown
};

Run train_or_reuse(const fs::path& dir, const TrainConfig& cfg) {
  if (fs::exists(dir / "config.json") && fs::exists(dir / "state.bin") && fs::exists(dir / "losses.csv")) {
    try {
      if (to_json(load_run_config(dir)) == to_json(cfg)) {
        double secs = 0.0;
        std::ifstream(dir / "train_seconds.txt") >> secs;
        return {cfg, load_state(dir / "state.bin"), read_losses(dir / "losses.csv"), secs};
      }
    } catch (const std::exception& e) {
      std::fprintf(stderr, "retraining %s: %s\n", dir.c_str(), e.what());
    }
  }
  std::fprintf(stderr, "training %s (%zu iterations)\n", dir.c_str(), cfg.iterations);
  const auto t0 = Clock::now();
  const TrainResult r = meta_train(cfg, sinusoid_source(cfg.shots, cfg.train_query_size()),
                                   [&](std::size_t it, double loss) {
                                     if (it % 5000 == 0) std::fprintf(stderr, "  %zu %.4f\n", it, loss);
                                   });
  const double secs = seconds_since(t0);
  write_run(dir, cfg, r);
  std::ofstream(dir / "train_seconds.txt") << secs << '\n';
  return {cfg, r.state, r.curve, secs};
}

EvalResult evaluate(const Run& run, bool no_precond = false) {
  EvalSettings s;
  s.n_tasks = 600;
  s.shots = run.cfg.shots;
  s.query_size = run.cfg.query_size_eval;
  s.alpha = run.cfg.alpha;
  s.k_steps = run.cfg.k_test;
  return evaluate_protocol(no_precond ? without_preconditioner(run.state) : run.state, s);
}

TrainConfig shipped(const std::string& name) { return load_cli_config(fs::path(GAP_CONFIG_DIR) / name).train; }

bool lines_pass(const std::vector<verify::CheckLine>& lines, const std::vector<std::string>& names = {}) {
  bool ok = true;
  for (const auto& l : lines) {
    const bool counted = names.empty() || std::find(names.begin(), names.end(), l.name) != names.end();
    detail("%-44s %-12.4g thr %-9.3g %s%s", l.name.c_str(), l.statistic, l.threshold, l.pass ? "pass" : "fail",
           counted ? "" : "  (info)");
    if (counted) ok = ok && l.pass;
  }
  return ok;
}

bool timed_suites(const std::vector<std::string>& suites, double limit, const std::vector<std::string>& names = {}) {
  const auto t0 = Clock::now();
  std::vector<verify::CheckLine> all;
  for (const std::string& s : suites) {
    auto part = verify::run_suite(s, {});
    all.insert(all.end(), part.begin(), part.end());
  }
  const double secs = seconds_since(t0);
  const bool ok = lines_pass(all, names);
  detail("runtime %.2f s (limit %.0f s)", secs, limit);
  return ok && secs < limit;
}

void criterion1(const fs::path& runs, Run& gap5) {
  const auto t0 = Clock::now();
  gap5 = train_or_reuse(runs / "gap_5shot", shipped("sinusoid_gap_5shot.json"));
  const Run maml5 = train_or_reuse(runs / "maml_5shot", shipped("sinusoid_maml_5shot.json"));
  const Run sgd5 = train_or_reuse(runs / "meta_sgd_5shot", shipped("sinusoid_meta_sgd_5shot.json"));
  const Run gap20 = train_or_reuse(runs / "gap_20shot", shipped("sinusoid_gap_20shot.json"));

  const EvalResult g5 = evaluate(gap5), m5 = evaluate(maml5), s5 = evaluate(sgd5), g20 = evaluate(gap20);
  detail("GAP 5-shot      %.4f ± %.4f", g5.mean, g5.ci95);
  detail("Meta-SGD 5-shot %.4f ± %.4f", s5.mean, s5.ci95);
  detail("MAML 5-shot     %.4f ± %.4f", m5.mean, m5.ci95);
  detail("GAP 20-shot     %.4f ± %.4f", g20.mean, g20.ci95);

  const bool abs5 = g5.mean <= 0.50;
  const bool ratio = g5.mean <= 0.5 * m5.mean;
  const bool order = g5.mean < s5.mean && s5.mean < m5.mean;
  const bool abs20 = g20.mean <= 0.10;
  detail("GAP 5-shot <= 0.50: %s", abs5 ? "yes" : "no");
  detail("GAP 5-shot <= 0.5 x MAML (%.4f): %s", 0.5 * m5.mean, ratio ? "yes" : "no");
  detail("GAP < Meta-SGD < MAML: %s", order ? "yes" : "no");
  detail("GAP 20-shot <= 0.10: %s", abs20 ? "yes" : "no");

  bool runtime_ok = true;
  for (const Run* r : {&std::as_const(gap5), &maml5, &sgd5, &gap20}) {
    if (r->train_seconds > 0.0) {
      detail("%s %zu-shot training %.0f s", method_label(r->cfg.kind).c_str(), r->cfg.shots, r->train_seconds);
      runtime_ok = runtime_ok && r->train_seconds <= 1800.0;
    } else {
      detail("%s %zu-shot training time unknown (cached run)", method_label(r->cfg.kind).c_str(), r->cfg.shots);
    }
  }

  TrainConfig sg = shipped("sinusoid_gap_5shot.json"), sm = shipped("sinusoid_maml_5shot.json");
  sg.iterations = sm.iterations = 5000;
  const Run smoke_g = train_or_reuse(runs / "smoke_gap_5shot", sg);
  const Run smoke_m = train_or_reuse(runs / "smoke_maml_5shot", sm);
  const double lg = smoke_g.curve.back().mean_outer_loss, lm = smoke_m.curve.back().mean_outer_loss;
  const bool smoke = lg < lm;
  detail("smoke at iteration %zu: GAP outer loss %.4f, MAML %.4f", smoke_g.curve.back().iteration, lg, lm);
  detail("elapsed %.0f s", seconds_since(t0));

  report(1, "sinusoid regression", abs5 && ratio && order && abs20 && runtime_ok && smoke);
}

void criterion6() {
  const TrainConfig base = shipped("sinusoid_gap_5shot.json");
  Rng task_rng = make_rng(derive_seed(base.seed, streams::kTrainTasks), 0);
  const auto source = sinusoid_source(base.shots, base.train_query_size());
  std::vector<Episode> batch;
  for (std::size_t i = 0; i < base.batch_size; ++i) batch.push_back(source(task_rng));

  struct Out {
    std::vector<InnerTrace> traces;
    MlpParams theta_after;
  };
  auto run_kind = [&](PrecondKind kind) {
    TrainConfig cfg = base;
    cfg.kind = kind;
    Rng init = make_rng(cfg.seed, streams::kInit);
    MetaState s = init_state(cfg, init);
    Out o;
    for (const Episode& e : batch) o.traces.push_back(inner_adapt(s, e.support, cfg.alpha, cfg.k_train, cfg.meta_gradient));
    MetaOptimizer opt(cfg);
    outer_step(s, opt, batch, cfg);
    o.theta_after = s.theta;
    return o;
  };
  auto diff = [](const MlpParams& a, const MlpParams& b) {
    double d = 0.0;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
      d = std::max(d, max_abs_diff(a.layers[l].weight, b.layers[l].weight));
      d = std::max(d, max_abs_diff(a.layers[l].bias, b.layers[l].bias));
    }
    return d;
  };
  const Out maml = run_kind(PrecondKind::kIdentity);
  bool ok = true;
  for (PrecondKind k : {PrecondKind::kGap, PrecondKind::kApproxGap}) {
    const Out o = run_kind(k);
    double worst = 0.0;
    for (std::size_t t = 0; t < batch.size(); ++t)
      for (std::size_t s = 0; s < maml.traces[t].params.size(); ++s)
        worst = std::max(worst, diff(o.traces[t].params[s], maml.traces[t].params[s]));
    const double after = diff(o.theta_after, maml.theta_after);
    detail("%-10s max inner-trace diff vs MAML %.3g, theta after outer step %.3g", method_label(k).c_str(), worst,
           after);
    ok = ok && worst <= 1e-9;
  }
  report(6, "identity-at-init equivalence", ok);
}

void criterion7(const Run& gap5) {
  const EvalResult full = evaluate(gap5), ablated = evaluate(gap5, true);
  const double margin = ablated.mean - full.mean;
  detail("GAP 5-shot %.4f, preconditioner replaced by identity %.4f, margin %.4f", full.mean, ablated.mean, margin);
  report(7, "ablation", margin > 0.0);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-7"};
  std::string runs_dir = "acceptance_runs";
  std::string report_path;
  app.add_option("--runs-dir", runs_dir, "Where trained runs are cached")->capture_default_str();
  app.add_option("--report", report_path, "Also write the verdict lines to this file");
  CLI11_PARSE(app, argc, argv);
  if (!report_path.empty() && !(report_file = std::fopen(report_path.c_str(), "w"))) {
    std::fprintf(stderr, "cannot write %s\n", report_path.c_str());
    return 1;
  }

  try {
    const fs::path runs(runs_dir);
    fs::create_directories(runs);

    Run gap5;
    criterion1(runs, gap5);
    report(2, "positive definiteness and similarity",
           timed_suites({"pd", "similarity"}, 10.0));
    report(3, "approximation decay",
           timed_suites({"approx", "cosine"}, 30.0, {"approx.max_increase_along_grid", "cosine.n=400.rel_dev_from_ref"}));
    report(4, "lemma checks", timed_suites({"variance", "chebyshev"}, 30.0));
    report(5, "gradient correctness", timed_suites({"gradcheck"}, 60.0));
    criterion6();
    criterion7(gap5);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance aborted: %s\n", e.what());
    return 1;
  }

  std::size_t passed = 0;
  for (const Verdict& v : verdicts) passed += v.pass;
  emit("acceptance: " + std::to_string(passed) + "/" + std::to_string(verdicts.size()) + " criteria pass");
  return verdicts.size() == 7 ? 0 : 1;
}
