// kamcl: prepare datasets, train, evaluate, ablate, sweep and inspect.
//
// Every command writes <out>/<command>.manifest.kv and, on failure, prints one
// line "error: <kind>: <message>" to stderr and exits nonzero.

#include <CLI11.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "kamcl/kamcl.hpp"

#ifndef KAMCL_GIT_DESCRIBE
#define KAMCL_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using namespace kamcl;

namespace {

struct CommonOptions {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool data, bool config) {
  if (config) cmd->add_option("--config", o.config, "Training config (kv file)")->check(CLI::ExistingFile);
  if (data) cmd->add_option("--data", o.data, "Prepared data bundle directory")->required();
  cmd->add_option("--out", o.out, "Run directory for all outputs")->required();
  cmd->add_option("--seed", o.seed, "Override the seed");
  cmd->add_flag("--quiet", o.quiet, "Only warnings and errors");
}

TrainConfig load_config(const CommonOptions& o) {
  TrainConfig cfg = o.config.empty() ? TrainConfig{} : TrainConfig::from_file(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.epochs) cfg.epochs = *o.epochs;
  cfg.validate();
  return cfg;
}

RunManifest start_manifest(const std::string& command, std::uint64_t seed) {
  RunManifest m;
  m.command = command;
  m.seed = seed;
  m.git_describe = KAMCL_GIT_DESCRIBE;
  m.started = utc_timestamp();
  return m;
}

void finish_manifest(RunManifest& m, const fs::path& out, const Stopwatch& clock) {
  m.timings.emplace_back("total", clock.seconds());
  const auto path = out / (m.command + ".manifest.kv");
  auto f = open_output(path);
  write_kv(f, m.to_kv());
}

template <class Fn>
std::string write_file(const fs::path& path, Fn&& body) {
  auto f = open_output(path);
  body(f);
  if (!f) throw ValidationError("failed writing '" + path.string() + "'");
  return path.string();
}

EvalCandidates candidates_for(const DataBundle& data, const TrainConfig& cfg) {
  return build_candidates(data.split, cfg.eval_seed, {cfg.eval_negatives, cfg.eval_exclude_auxiliary});
}

MetricsReport evaluate_params(ModelParams& params, const DataBundle& data, const TrainConfig& cfg) {
  const auto ctx = ModelContext::make(data.split.train, data.kg, cfg);
  return evaluate(compute_tables(params, ctx), candidates_for(data, cfg));
}

// ---------------------------------------------------------------- prepare

struct PrepareOptions {
  std::string interactions;
  std::string triples;
  std::vector<std::string> behaviors;
  std::string target;
  std::optional<std::size_t> min_entity_degree;
  std::optional<std::size_t> min_relation_count;
};

int cmd_prepare(const CommonOptions& o, const PrepareOptions& p) {
  Stopwatch clock;
  const TrainConfig cfg = load_config(o);
  const std::size_t min_deg = p.min_entity_degree.value_or(cfg.min_entity_degree);
  const std::size_t min_rel = p.min_relation_count.value_or(cfg.min_relation_count);
  const std::uint64_t seed = o.seed.value_or(cfg.seed);

  DataBundle b;
  b.graph = load_interactions(p.interactions, p.behaviors, p.target).graph;
  if (p.triples.empty()) {
    std::istringstream empty;
    b.kg = read_triples(empty, b.graph.item_ids()).kg;
  } else {
    auto loaded = load_triples(p.triples, b.graph.item_ids());
    if (!loaded.uncovered_items.empty())
      log::info("prepare: " + std::to_string(loaded.uncovered_items.size()) + " items have no triples");
    b.kg = filter_kg(loaded.kg, min_deg, min_rel);
  }
  b.split = split_leave_one_out(b.graph, seed);

  const fs::path out(o.out);
  auto m = start_manifest("prepare", seed);
  m.outputs = write_bundle(out, b);
  m.config = {{"prepare.interactions", p.interactions},
              {"prepare.triples", p.triples},
              {"prepare.min_entity_degree", std::to_string(min_deg)},
              {"prepare.min_relation_count", std::to_string(min_rel)}};
  m.data_hashes = bundle_hashes(out);
  finish_manifest(m, out, clock);
  if (!o.quiet)
    std::cout << "prepared " << b.graph.num_users() << " users, " << b.graph.num_items() << " items, "
              << b.graph.edges().size() << " edges, " << b.kg.triples().size() << " triples, "
              << b.split.num_test_users() << " test users -> " << out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- synth

int cmd_synth(const CommonOptions& o, const std::string& spec_path) {
  Stopwatch clock;
  SynthSpec spec;
  if (!spec_path.empty()) {
    auto in = open_input(spec_path);
    spec = SynthSpec::from_kv(parse_kv(in));
  }
  if (o.seed) spec.seed = *o.seed;
  const auto ds = generate(spec);

  DataBundle b{ds.graph, ds.kg, split_leave_one_out(ds.graph, spec.seed)};
  const fs::path out(o.out);
  auto m = start_manifest("synth", spec.seed);
  m.outputs = write_bundle(out, b);
  m.outputs.push_back(write_file(out / "spec.kv", [&](std::ostream& f) { write_kv(f, ds.truth.spec.to_kv()); }));
  m.outputs.push_back(write_file(out / "ground_truth.tsv", [&](std::ostream& f) { write_ground_truth(f, ds.truth); }));
  m.config = ds.truth.spec.to_kv();
  m.data_hashes = bundle_hashes(out);
  finish_manifest(m, out, clock);
  if (!o.quiet)
    std::cout << "synthesized " << ds.graph.num_users() << " users, " << ds.graph.num_items() << " items, "
              << ds.graph.edges().size() << " edges, " << ds.kg.triples().size() << " triples -> " << out.string()
              << '\n';
  return 0;
}

// ---------------------------------------------------------------- train

int cmd_train(const CommonOptions& o) {
  Stopwatch clock;
  const TrainConfig cfg = load_config(o);
  const fs::path out(o.out);
  fs::create_directories(out);
  const auto data = load_bundle(o.data);

  std::ofstream epoch_log = open_output(out / "epoch_log.tsv");
  write_epoch_log_header(epoch_log);
  TrainCallbacks cb;
  cb.on_epoch = [&](const EpochRecord& r) {
    write_epoch_record(epoch_log, r);
    if (!o.quiet) write_epoch_record(std::cout, r);
  };
  if (!o.quiet) write_epoch_log_header(std::cout);
  Stopwatch fit_clock;
  auto result = fit(cfg, data.split.train, data.kg, cb);
  const double fit_seconds = fit_clock.seconds();
  epoch_log.close();

  auto m = start_manifest("train", cfg.seed);
  m.config = cfg.to_kv();
  m.data_hashes = bundle_hashes(o.data);
  m.outputs.push_back(write_file(out / "config.kv", [&](std::ostream& f) { write_kv(f, cfg.to_kv()); }));
  m.outputs.push_back(
      write_file(out / "checkpoint.ckpt", [&](std::ostream& f) { write_checkpoint(f, make_checkpoint(result, cfg)); }));
  m.outputs.push_back((out / "epoch_log.tsv").string());
  m.timings.emplace_back("fit", fit_seconds);
  finish_manifest(m, out, clock);
  if (!o.quiet)
    std::cout << "trained " << result.epochs_run << " epochs (kept epoch " << result.best_epoch << ") -> "
              << (out / "checkpoint.ckpt").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- evaluate

int cmd_evaluate(const CommonOptions& o, const std::string& ckpt_path) {
  Stopwatch clock;
  const auto ckpt = load_checkpoint(ckpt_path);
  TrainConfig cfg = config_from_checkpoint(ckpt);
  if (o.seed) cfg.eval_seed = *o.seed;
  auto params = ModelParams::from_checkpoint(ckpt);
  const auto data = load_bundle(o.data);
  const auto report = evaluate_params(params, data, cfg);

  const fs::path out(o.out);
  fs::create_directories(out);
  auto m = start_manifest("evaluate", cfg.eval_seed);
  m.config = cfg.to_kv();
  m.config.push_back({"evaluate.checkpoint", ckpt_path});
  m.data_hashes = bundle_hashes(o.data);
  m.data_hashes.emplace_back("checkpoint", hex64(fnv1a(read_file(ckpt_path))));
  m.outputs.push_back(write_file(out / "metrics.tsv", [&](std::ostream& f) { write_report_tsv(f, report); }));
  m.outputs.push_back(write_file(out / "metrics.txt", [&](std::ostream& f) { f << format_report_table(report); }));
  finish_manifest(m, out, clock);
  if (!o.quiet) std::cout << format_report_table(report);
  return report.defined() ? 0 : 1;
}

// ---------------------------------------------------------------- ablate

struct Variant {
  std::string name;
  TrainConfig config;
};

std::vector<Variant> ablation_variants(const TrainConfig& base) {
  TrainConfig no_cl = base, no_intent = base;
  no_cl.disable_icl = no_cl.disable_bcl = true;
  no_intent.no_intent = true;
  return {{"full", base}, {"wo_cl", no_cl}, {"no_intent", no_intent}};
}

int cmd_ablate(const CommonOptions& o, std::size_t seeds) {
  Stopwatch clock;
  const TrainConfig base = load_config(o);
  const auto data = load_bundle(o.data);
  const fs::path out(o.out);
  fs::create_directories(out);

  std::ostringstream tsv, table;
  tsv << "variant\tseed\tmetric\tK\tvalue\tn_users\n";
  table << std::left << std::setw(12) << "variant" << std::setw(8) << "seed" << std::setw(10) << "H@10"
        << std::setw(10) << "N@10" << '\n';
  for (std::size_t s = 0; s < seeds; ++s) {
    for (auto v : ablation_variants(base)) {
      v.config.seed = base.seed + s;
      auto result = fit(v.config, data.split.train, data.kg);
      const auto rep = evaluate_params(result.params, data, v.config);
      for (const auto& r : rep.rows)
        tsv << v.name << '\t' << v.config.seed << '\t' << r.metric << '\t' << r.k << '\t' << format_double(r.value)
            << '\t' << rep.num_users << '\n';
      table << std::setw(12) << v.name << std::setw(8) << v.config.seed << std::fixed << std::setprecision(4)
            << std::setw(10) << rep.hr(10) << std::setw(10) << rep.ndcg(10) << '\n';
      if (!o.quiet) log::write(log::Level::warn, "ablate: " + v.name + " seed " + std::to_string(v.config.seed) +
                                                     " NDCG@10 " + format_double(rep.ndcg(10)));
    }
  }
  auto m = start_manifest("ablate", base.seed);
  m.config = base.to_kv();
  m.config.push_back({"ablate.seeds", std::to_string(seeds)});
  m.data_hashes = bundle_hashes(o.data);
  m.outputs.push_back(write_file(out / "ablation.tsv", [&](std::ostream& f) { f << tsv.str(); }));
  m.outputs.push_back(write_file(out / "ablation.txt", [&](std::ostream& f) { f << table.str(); }));
  finish_manifest(m, out, clock);
  if (!o.quiet) std::cout << table.str();
  return 0;
}

// ---------------------------------------------------------------- gradcheck

int cmd_gradcheck(const CommonOptions& o) {
  Stopwatch clock;
  std::optional<TrainConfig> cfg;
  if (!o.config.empty()) cfg = load_config(o);
  const std::uint64_t seed = o.seed.value_or(3);
  const auto rep = gradsuite::run_suite(seed, cfg ? &*cfg : nullptr);

  std::ostringstream s;
  s << std::scientific << std::setprecision(3);
  s << "check\tmax_rel_error\tcoordinates\n";
  for (const auto& [name, r] : rep.primitives) s << name << '\t' << r.max_rel_error << '\t' << r.coordinates << '\n';
  s << "end_to_end\t" << rep.end_to_end.max_rel_error << '\t' << rep.end_to_end.coordinates << '\n';
  const bool ok = rep.max_primitive_error <= 1e-6 && rep.end_to_end.max_rel_error <= 1e-4;

  const fs::path out(o.out);
  fs::create_directories(out);
  auto m = start_manifest("gradcheck", seed);
  if (cfg) m.config = cfg->to_kv();
  m.outputs.push_back(write_file(out / "gradcheck.tsv", [&](std::ostream& f) { f << s.str(); }));
  finish_manifest(m, out, clock);
  if (!o.quiet) std::cout << s.str();
  std::cout << std::scientific << std::setprecision(3) << "max primitive error " << rep.max_primitive_error
            << ", end-to-end error " << rep.end_to_end.max_rel_error << (ok ? " (ok)" : " (FAILED)") << '\n';
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------- sweep

struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

std::vector<GridAxis> load_grid(const std::string& path) {
  auto in = open_input(path);
  std::vector<GridAxis> axes;
  for (const auto& e : parse_kv(in)) {
    if (e.key.rfind("sweep.", 0) != 0)
      throw ValidationError("grid: key '" + e.key + "' at line " + std::to_string(e.line) + " lacks the sweep. prefix");
    GridAxis axis{e.key.substr(6), kv::to_strings(e)};
    if (axis.values.empty()) throw ValidationError("grid: no values for '" + axis.key + "'");
    TrainConfig probe;
    for (const auto& v : axis.values) probe.set({axis.key, v, e.line});
    axes.push_back(std::move(axis));
  }
  if (axes.empty()) throw ValidationError("grid: no sweep.* entries in '" + path + "'");
  return axes;
}

std::size_t worker_count() {
  const char* env = std::getenv("KAMCL_WORKERS");
  if (env == nullptr || *env == '\0') return 1;
  try {
    const auto n = std::stoul(env);
    if (n == 0) throw std::invalid_argument("zero");
    return n;
  } catch (const std::exception&) {
    throw ValidationError(std::string("KAMCL_WORKERS must be a positive integer, got '") + env + "'");
  }
}

int cmd_sweep(const CommonOptions& o, const std::string& grid_path) {
  Stopwatch clock;
  const TrainConfig base = load_config(o);
  const auto axes = load_grid(grid_path);
  const auto data = load_bundle(o.data);

  std::vector<std::vector<std::string>> combos{{}};
  for (const auto& axis : axes) {
    std::vector<std::vector<std::string>> next;
    for (const auto& c : combos)
      for (const auto& v : axis.values) {
        next.push_back(c);
        next.back().push_back(v);
      }
    combos = std::move(next);
  }

  std::vector<std::string> rows(combos.size());
  std::atomic<std::size_t> next_run{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t k = next_run++; k < combos.size(); k = next_run++) {
      try {
        TrainConfig cfg = base;
        for (std::size_t a = 0; a < axes.size(); ++a) cfg.set({axes[a].key, combos[k][a], 0});
        cfg.validate();
        auto result = fit(cfg, data.split.train, data.kg);
        const auto rep = evaluate_params(result.params, data, cfg);
        std::ostringstream row;
        row << k;
        for (const auto& v : combos[k]) row << '\t' << v;
        for (const char* metric : {"HR", "NDCG"})
          for (std::size_t K : {5, 10}) row << '\t' << format_double(rep.get(metric, K));
        rows[k] = row.str();
        log::info("sweep: run " + std::to_string(k) + " done");
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        next_run = combos.size();
      }
    }
  };
  const std::size_t workers = std::min(worker_count(), combos.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  std::ostringstream tsv;
  tsv << "run";
  for (const auto& a : axes) tsv << '\t' << a.key;
  tsv << "\tHR@5\tHR@10\tNDCG@5\tNDCG@10\n";
  for (const auto& r : rows) tsv << r << '\n';

  const fs::path out(o.out);
  fs::create_directories(out);
  auto m = start_manifest("sweep", base.seed);
  m.config = base.to_kv();
  m.config.push_back({"sweep.grid", grid_path});
  m.config.push_back({"sweep.workers", std::to_string(workers)});
  m.data_hashes = bundle_hashes(o.data);
  m.outputs.push_back(write_file(out / "sweep.tsv", [&](std::ostream& f) { f << tsv.str(); }));
  finish_manifest(m, out, clock);
  if (!o.quiet) std::cout << tsv.str();
  return 0;
}

// ---------------------------------------------------------------- inspect-intents

int cmd_inspect_intents(const CommonOptions& o, const std::string& ckpt_path) {
  Stopwatch clock;
  const auto ckpt = load_checkpoint(ckpt_path);
  const auto params = ModelParams::from_checkpoint(ckpt);
  const auto bank = compute_intent_bank(params.relation_emb.value, params.intent_logits.value, params.fusion_w.value,
                                        params.fusion_b.value);
  std::vector<std::string> relations;
  if (!o.data.empty()) {
    const auto data = load_bundle(o.data);
    relations = data.kg.relation_ids().raw_ids();
  }
  if (relations.size() != bank.alpha.cols()) {
    relations.clear();
    for (std::size_t r = 0; r < bank.alpha.cols(); ++r) relations.push_back("r" + std::to_string(r));
  }

  std::ostringstream alpha, cosine;
  alpha << "intent";
  for (const auto& r : relations) alpha << '\t' << r;
  alpha << '\n';
  for (std::size_t k = 0; k < bank.alpha.rows(); ++k) {
    alpha << k;
    for (double v : bank.alpha.row(k)) alpha << '\t' << format_double(v);
    alpha << '\n';
  }
  cosine << "intent";
  for (std::size_t k = 0; k < bank.cosine.cols(); ++k) cosine << '\t' << k;
  cosine << '\n';
  for (std::size_t k = 0; k < bank.cosine.rows(); ++k) {
    cosine << k;
    for (double v : bank.cosine.row(k)) cosine << '\t' << format_double(v);
    cosine << '\n';
  }

  const fs::path out(o.out);
  fs::create_directories(out);
  auto m = start_manifest("inspect-intents", 0);
  m.data_hashes.emplace_back("checkpoint", hex64(fnv1a(read_file(ckpt_path))));
  m.outputs.push_back(write_file(out / "intent_alpha.tsv", [&](std::ostream& f) { f << alpha.str(); }));
  m.outputs.push_back(write_file(out / "intent_cosine.tsv", [&](std::ostream& f) { f << cosine.str(); }));
  finish_manifest(m, out, clock);
  if (!o.quiet) std::cout << alpha.str() << '\n' << cosine.str();
  return 0;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ParseError*>(&e)) return "parse";
  if (dynamic_cast<const ValidationError*>(&e)) return "validation";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  if (dynamic_cast<const ContractError*>(&e)) return "contract";
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return "io";
  return "internal";
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KAMCL multi-behavior recommender"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("kamcl ") + KAMCL_GIT_DESCRIBE);

  CommonOptions common;
  PrepareOptions prep;
  std::string spec_path, ckpt_path, grid_path;
  std::size_t seeds = 1;

  auto* prepare = app.add_subcommand("prepare", "Load, filter and split raw interaction/triple files");
  add_common(prepare, common, false, true);
  prepare->add_option("--interactions", prep.interactions, "user<TAB>item<TAB>behavior file")
      ->required()
      ->check(CLI::ExistingFile);
  prepare->add_option("--triples", prep.triples, "head<TAB>relation<TAB>tail file")->check(CLI::ExistingFile);
  prepare->add_option("--behaviors", prep.behaviors, "Behavior names in order")->required()->delimiter(',');
  prepare->add_option("--target", prep.target, "Target behavior (default: last)");
  prepare->add_option("--min-entity-degree", prep.min_entity_degree, "KG filter: minimum entity degree");
  prepare->add_option("--min-relation-count", prep.min_relation_count, "KG filter: minimum triples per relation");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic data bundle with planted intents");
  add_common(synth, common, false, false);
  synth->add_option("--spec", spec_path, "Synthetic spec (kv file, synth.* keys)")->check(CLI::ExistingFile);

  auto* train = app.add_subcommand("train", "Train and write checkpoint, epoch log and manifest");
  add_common(train, common, true, true);
  train->add_option("--epochs", common.epochs, "Override the epoch count");

  auto* eval = app.add_subcommand("evaluate", "Score a checkpoint under the 99-negative protocol");
  add_common(eval, common, true, false);
  eval->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required()->check(CLI::ExistingFile);

  auto* ablate = app.add_subcommand("ablate", "Train full, w/o-CL and no-intent variants side by side");
  add_common(ablate, common, true, true);
  ablate->add_option("--epochs", common.epochs, "Override the epoch count");
  ablate->add_option("--seeds", seeds, "Number of consecutive seeds")->check(CLI::PositiveNumber);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks of all primitives and the full loss");
  add_common(gradcheck, common, false, true);

  auto* sweep = app.add_subcommand("sweep", "Grid search; workers from KAMCL_WORKERS");
  add_common(sweep, common, true, true);
  sweep->add_option("--grid", grid_path, "Grid file with sweep.<config key> = v1,v2,...")
      ->required()
      ->check(CLI::ExistingFile);
  sweep->add_option("--epochs", common.epochs, "Override the epoch count");

  auto* inspect = app.add_subcommand("inspect-intents", "Dump intent attention over relations");
  add_common(inspect, common, false, false);
  inspect->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  inspect->add_option("--data", common.data, "Data bundle for relation names");

  CLI11_PARSE(app, argc, argv);
  log::set_level(common.quiet ? log::Level::warn : log::Level::info);

  try {
    if (*prepare) return cmd_prepare(common, prep);
    if (*synth) return cmd_synth(common, spec_path);
    if (*train) return cmd_train(common);
    if (*eval) return cmd_evaluate(common, ckpt_path);
    if (*ablate) return cmd_ablate(common, seeds);
    if (*gradcheck) return cmd_gradcheck(common);
    if (*sweep) return cmd_sweep(common, grid_path);
    if (*inspect) return cmd_inspect_intents(common, ckpt_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << error_kind(e) << ": " << one_line(e.what()) << '\n';
    return 1;
  }
  return 2;
}
