// Acceptance runner: one PASS/FAIL line per criterion, then a summary.
//
//   acceptance [name ...] [--known-red=name ...]
//
// Exit status is the number of failed criteria not marked known red.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kamcl/kamcl.hpp"
#include "oracles.hpp"

using namespace kamcl;

namespace {

// ---------------------------------------------------------------- tolerances

constexpr double kPrimitiveGradTol = 1e-6;
constexpr double kEndToEndGradTol = 1e-4;
constexpr double kGradSuiteSeconds = 10.0;

constexpr double kBprClosedFormTol = 1e-10;
constexpr double kInfoNceClosedFormTol = 1e-6;
constexpr double kTranscriptionTol = 1e-10;

constexpr std::size_t kRandomRankUsers = 1500;
constexpr double kRandomRankLo = 0.07, kRandomRankHi = 0.13;

constexpr std::size_t kOverfitMaxEpochs = 500;
constexpr double kOverfitMinHr = 0.9;
constexpr double kOverfitSeconds = 120.0;

constexpr int kSeeds = 5;
constexpr int kPlantedMinWins = 4;
constexpr double kPlantedMinMeanGain = 0.05;
constexpr double kPlantedSeconds = 600.0;
constexpr int kContrastiveMinWins = 3;
constexpr double kSparsifyDrop = 0.8;

constexpr std::size_t kProtocolNegatives = 99;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

// ---------------------------------------------------------------- gradients

Outcome gradient_suite() {
  Stopwatch clock;
  const auto m = gradsuite::micro_instance();
  const bool shape_ok = m.graph.num_users() == 4 && m.graph.num_items() == 6 && m.kg.num_entities() == 10 &&
                        m.kg.num_relations() == 2 && m.graph.num_behaviors() == 2 && m.config.intents == 2 &&
                        m.config.dim == 4 && m.config.layers == 1;
  const auto rep = gradsuite::run_suite();
  std::string worst;
  double worst_err = -1;
  for (const auto& [name, r] : rep.primitives)
    if (r.max_rel_error > worst_err) {
      worst_err = r.max_rel_error;
      worst = name;
    }
  const double secs = clock.seconds();
  const bool pass = shape_ok && rep.max_primitive_error <= kPrimitiveGradTol &&
                    rep.end_to_end.max_rel_error <= kEndToEndGradTol && secs < kGradSuiteSeconds;
  return {pass, std::to_string(rep.primitives.size()) + " primitives, worst " + worst + " " + sci(worst_err) +
                    " (tol " + sci(kPrimitiveGradTol) + "); end-to-end " + sci(rep.end_to_end.max_rel_error) + " over " +
                    std::to_string(rep.end_to_end.coordinates) + " coordinates (tol " + sci(kEndToEndGradTol) +
                    "); micro-instance shape " + (shape_ok ? "ok" : "WRONG") + "; " + fmt(secs, 3) + " s"};
}

// ---------------------------------------------------------------- closed forms

Outcome closed_forms() {
  double bpr_err = 0;
  {
    // Zero tables and a table whose positive and negative rows coincide.
    EmbeddingTables zero{Matrix(3, 4), Matrix(5, 4)};
    EmbeddingTables same{gradsuite::random_matrix(3, 4, 1), Matrix(5, 4, 0.3)};
    for (const auto* t : {&zero, &same}) {
      TrainBatch b;
      for (std::size_t k = 0; k < 7; ++k) b.push(k % 3, k % 5, (k + 2) % 5);
      bpr_err = std::max(bpr_err, std::abs(bpr_loss(*t, b) - std::log(2.0)));
    }
  }
  double icl_err = 0, bcl_err = 0;
  for (std::size_t n : {3, 5, 17}) {
    for (double tau : {0.1, 0.5, 2.0}) {
      ad::Tape t;
      const Matrix same(n, 6, 0.4);
      std::vector<ad::Var> views{t.constant(same), t.constant(same), t.constant(same)};
      std::vector<std::size_t> items(n);
      std::iota(items.begin(), items.end(), 0);
      const double ln_neg = std::log(static_cast<double>(n - 1));
      icl_err = std::max(icl_err, std::abs(item_contrastive_loss(views, items, {tau}).value().item() - ln_neg));
      bcl_err = std::max(bcl_err, std::abs(behavior_contrastive_loss(views, {tau}).value().item() - ln_neg));
    }
  }
  const double ndcg3 = ndcg_at_k(std::vector<std::size_t>{3}, 10);
  const bool pass = bpr_err <= kBprClosedFormTol && icl_err <= kInfoNceClosedFormTol &&
                    bcl_err <= kInfoNceClosedFormTol && ndcg3 == 0.5;
  return {pass, "BPR-ln2 " + sci(bpr_err) + ", item InfoNCE-ln(N_neg) " + sci(icl_err) +
                    ", behavior InfoNCE-ln(N_neg) " + sci(bcl_err) + ", NDCG(rank 3) = " + fmt(ndcg3, 17)};
}

// ---------------------------------------------------------------- transcription oracles

Outcome transcription() {
  double worst = 0;
  std::vector<std::pair<std::string, double>> errors;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto cases = oracles::compare_forward(seed);
    for (const auto& [name, err] : cases) {
      auto it = std::find_if(errors.begin(), errors.end(), [&](const auto& e) { return e.first == name; });
      if (it == errors.end()) errors.emplace_back(name, err);
      else it->second = std::max(it->second, err);
      worst = std::max(worst, err);
    }
  }
  std::string detail;
  for (const auto& [name, err] : errors) detail += (detail.empty() ? "" : ", ") + name + " " + sci(err);
  return {worst <= kTranscriptionTol, detail + " (tol " + sci(kTranscriptionTol) + ")"};
}

// ---------------------------------------------------------------- random rank

Outcome random_rank() {
  SynthSpec spec;
  spec.users = kRandomRankUsers;
  spec.seed = 11;
  const auto ds = generate(spec);
  const auto split = split_leave_one_out(ds.graph, 11);
  TrainConfig cfg;
  cfg.seed = 11;
  const auto ctx = ModelContext::make(split.train, ds.kg, cfg);
  auto params = ModelParams::init(ctx.shape(), cfg.init_std, cfg.seed);
  const auto cands = build_candidates(split, cfg.eval_seed);
  const auto rep = evaluate(compute_tables(params, ctx), cands);
  const double hr = rep.hr(10);
  const bool pass = rep.num_users >= 1000 && hr >= kRandomRankLo && hr <= kRandomRankHi;
  return {pass, "untrained HR@10 " + fmt(hr) + " on " + std::to_string(rep.num_users) + " test users, " +
                    std::to_string(cands.requested_negatives) + " negatives (band [" + fmt(kRandomRankLo) + ", " +
                    fmt(kRandomRankHi) + "])"};
}

// ---------------------------------------------------------------- overfit

Outcome overfit() {
  Stopwatch clock;
  SynthSpec spec;
  spec.users = 50;
  spec.items = 30;
  spec.attributes = 5;
  // One target item per user, so the 29 other items are exactly the negatives.
  spec.density = {0.3, 0.2, 1.0 / 30.0};
  spec.seed = 3;
  const auto ds = generate(spec);

  TrainConfig cfg;
  cfg.dim = 32;
  cfg.layers = 1;
  cfg.lr = 0.01;
  cfg.batch_size = 64;
  cfg.epochs = kOverfitMaxEpochs;
  cfg.lambda3 = 0;
  cfg.seed = 3;

  std::vector<std::pair<std::size_t, std::size_t>> positives;
  const Csr& target = ds.graph.target_adjacency();
  for (std::size_t u = 0; u < ds.graph.num_users(); ++u)
    for (auto i : target.row(u)) positives.emplace_back(u, i);
  const auto cands = build_candidates(
      ds.graph.num_items(), positives, [&](std::size_t u) { return owned_items(ds.graph, u, false); }, 5,
      {29, false});
  std::size_t exact = 0;
  for (const auto& e : cands.entries) exact += e.negatives.size() == 29;

  const auto ctx = ModelContext::make(ds.graph, ds.kg, cfg);
  std::size_t first_epoch = 0;
  TrainCallbacks cb;
  cb.on_snapshot = [&](const ModelParams& params, std::size_t epoch) {
    if (first_epoch != 0 || epoch % 25 != 0) return;
    ModelParams copy = params;
    if (evaluate(compute_tables(copy, ctx), cands).hr(10) >= kOverfitMinHr) first_epoch = epoch;
  };
  auto fitted = fit(cfg, ds.graph, ds.kg, cb);
  const double hr = evaluate(compute_tables(fitted.params, ctx), cands).hr(10);
  const std::size_t epochs = fitted.epochs_run;
  const double secs = clock.seconds();
  const bool pass = hr >= kOverfitMinHr && epochs <= kOverfitMaxEpochs && secs < kOverfitSeconds &&
                    exact == cands.entries.size() && positives.size() == spec.users;
  return {pass, "train HR@10 " + fmt(hr) + " after " + std::to_string(epochs) + " epochs (first >= " +
                    fmt(kOverfitMinHr) + " at epoch " + std::to_string(first_epoch) + "), " +
                    std::to_string(exact) + "/" + std::to_string(cands.entries.size()) + " users with 29 negatives, " +
                    fmt(secs, 3) + " s (need HR >= " + fmt(kOverfitMinHr) + ", < " + fmt(kOverfitSeconds) + " s)"};
}

// ---------------------------------------------------------------- paired experiments

struct PairResult {
  double a;
  double b;
};

std::string paired_table(const std::vector<PairResult>& runs, const char* a, const char* b) {
  std::string out;
  for (std::size_t s = 0; s < runs.size(); ++s)
    out += (s ? "; " : "") + std::string("seed ") + std::to_string(s + 1) + " " + a + " " + fmt(runs[s].a) + " " + b +
           " " + fmt(runs[s].b);
  return out;
}

double eval_ndcg10(const TrainConfig& cfg, const DatasetSplit& split, const KnowledgeGraph& kg,
                   const EvalCandidates& cands) {
  auto fitted = fit(cfg, split.train, kg);
  const auto ctx = ModelContext::make(split.train, kg, cfg);
  return evaluate(compute_tables(fitted.params, ctx), cands).ndcg(10);
}

/// Library defaults. Smaller models (d 16 or 32, two layers) showed no intent gain at all.
TrainConfig experiment_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  return cfg;
}

Outcome planted_intent() {
  Stopwatch clock;
  std::vector<PairResult> runs;
  int wins = 0;
  double gain = 0;
  for (int s = 1; s <= kSeeds; ++s) {
    SynthSpec spec;
    spec.seed = static_cast<std::uint64_t>(s);
    const auto ds = generate(spec);
    const auto split = split_leave_one_out(ds.graph, spec.seed);
    const auto cands = build_candidates(split, 7);
    TrainConfig full = experiment_config(spec.seed), flat = full;
    flat.no_intent = true;
    const PairResult r{eval_ndcg10(full, split, ds.kg, cands), eval_ndcg10(flat, split, ds.kg, cands)};
    wins += r.a > r.b;
    gain += r.a / r.b - 1;
    runs.push_back(r);
  }
  gain /= kSeeds;
  const double secs = clock.seconds();
  const bool pass = wins >= kPlantedMinWins && gain >= kPlantedMinMeanGain && secs < kPlantedSeconds;
  return {pass, "NDCG@10 " + paired_table(runs, "full", "no-intent") + "; wins " + std::to_string(wins) + "/" +
                    std::to_string(kSeeds) + ", mean relative gain " + fmt(100 * gain, 3) + "% (need " +
                    std::to_string(kPlantedMinWins) + " wins, " + fmt(100 * kPlantedMinMeanGain, 3) + "%), " +
                    fmt(secs, 3) + " s"};
}

Outcome contrastive_ablation() {
  std::vector<PairResult> runs;
  int wins = 0;
  for (int s = 1; s <= kSeeds; ++s) {
    SynthSpec spec;
    spec.seed = static_cast<std::uint64_t>(s);
    const auto ds = generate(spec);
    const auto sparse = sparsify_target(ds.graph, kSparsifyDrop, spec.seed);
    const auto split = split_leave_one_out(sparse, spec.seed);
    const auto cands = build_candidates(split, 7);
    TrainConfig full = experiment_config(spec.seed), no_cl = full;
    no_cl.lambda1 = no_cl.lambda2 = 0;
    const PairResult r{eval_ndcg10(full, split, ds.kg, cands), eval_ndcg10(no_cl, split, ds.kg, cands)};
    wins += r.a >= r.b;
    runs.push_back(r);
  }
  return {wins >= kContrastiveMinWins, "NDCG@10 with " + fmt(100 * kSparsifyDrop, 3) + "% of target edges removed: " +
                                           paired_table(runs, "full", "w/o-CL") + "; full >= w/o-CL in " +
                                           std::to_string(wins) + "/" + std::to_string(kSeeds) + " (need " +
                                           std::to_string(kContrastiveMinWins) + ")"};
}

// ---------------------------------------------------------------- determinism

Outcome determinism() {
  SynthSpec spec;
  spec.users = 150;
  spec.items = 60;
  spec.seed = 21;
  const auto ds = generate(spec);
  const auto split = split_leave_one_out(ds.graph, 21);
  TrainConfig cfg;
  cfg.dim = 16;
  cfg.layers = 2;
  cfg.epochs = 4;
  cfg.patience = 2;
  cfg.val_fraction = 0.2;
  cfg.seed = 21;
  auto run = [&] {
    auto fitted = fit(cfg, split.train, ds.kg);
    std::ostringstream ckpt, metrics, table, log;
    write_checkpoint(ckpt, make_checkpoint(fitted, cfg));
    const auto ctx = ModelContext::make(split.train, ds.kg, cfg);
    const auto rep = evaluate(compute_tables(fitted.params, ctx), build_candidates(split, cfg.eval_seed));
    write_report_tsv(metrics, rep);
    table << format_report_table(rep);
    write_epoch_log_header(log);
    for (const auto& r : fitted.log) write_epoch_record(log, r);
    return std::vector<std::string>{ckpt.str(), metrics.str(), table.str(), log.str()};
  };
  const auto a = run(), b = run();
  const bool pass = a == b;
  return {pass, "checkpoint " + std::to_string(a[0].size()) + " bytes (hash " + hex64(fnv1a(a[0])) + ") " +
                    (a[0] == b[0] ? "identical" : "DIFFERS") + ", metrics " + (a[1] == b[1] ? "identical" : "DIFFER") +
                    ", epoch log " + (a[3] == b[3] ? "identical" : "DIFFERS")};
}

// ---------------------------------------------------------------- protocol

Outcome protocol() {
  std::size_t users = 0, bad = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SynthSpec spec;
    spec.seed = seed;
    const auto ds = generate(spec);
    const auto split = split_leave_one_out(ds.graph, seed);
    for (bool aux : {false, true}) {
      const auto cands = build_candidates(split, seed, {kProtocolNegatives, aux});
      if (!cands.short_users.empty() || !cands.skipped_users.empty()) ++bad;
      if (cands.entries.size() != split.num_test_users()) ++bad;
      for (const auto& e : cands.entries) {
        ++users;
        const auto owned = owned_items(ds.graph, e.user, aux);
        const std::set<std::size_t> owned_set(owned.begin(), owned.end()),
            negs(e.negatives.begin(), e.negatives.end());
        bool ok = e.negatives.size() == kProtocolNegatives && negs.size() == kProtocolNegatives &&
                  split.test[e.user] == e.positive && owned_set.count(e.positive) == 1;
        for (auto i : e.negatives) ok = ok && i < ds.graph.num_items() && owned_set.count(i) == 0 && i != e.positive;
        bad += !ok;
      }
    }
  }
  return {bad == 0 && users > 0, std::to_string(users) + " candidate lists checked (5 seeds, with and without auxiliary "
                                                         "exclusion), " +
                                     std::to_string(bad) + " violations"};
}

}  // namespace

int main(int argc, char** argv) {
  log::set_level(log::Level::warn);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient_suite", gradient_suite},
      {"closed_forms", closed_forms},
      {"transcription_oracles", transcription},
      {"random_rank", random_rank},
      {"overfit", overfit},
      {"planted_intent", planted_intent},
      {"contrastive_ablation", contrastive_ablation},
      {"determinism", determinism},
      {"protocol", protocol},
  };
  // --known-red=NAME: still run and print NAME, but leave it out of the exit status.
  std::set<std::string> only, known_red;
  for (int a = 1; a < argc; ++a) {
    const std::string arg = argv[a];
    if (arg.rfind("--known-red=", 0) == 0)
      known_red.insert(arg.substr(12));
    else
      only.insert(arg);
  }
  int failed = 0, ran = 0, red = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    ++ran;
    failed += !o.pass;
    red += !o.pass && known_red.count(name);
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << ran - failed << "/" << ran << " criteria passed";
  if (red) std::cout << " (" << red << " known red, not counted in exit status)";
  std::cout << std::endl;
  return failed - red;
}
