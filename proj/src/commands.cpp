#include "sneakdoor/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "sneakdoor/bounds.hpp"
#include "sneakdoor/config.hpp"
#include "sneakdoor/errors.hpp"
#include "sneakdoor/tensor_io.hpp"

namespace fs = std::filesystem;

namespace sneakdoor::cli {
namespace {

struct CommonOptions {
  std::string config;
  std::string out;
  std::string artifacts;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> profile;
};

std::optional<Profile> requested_profile(const CommonOptions& o) {
  if (!o.profile) return std::nullopt;
  return profile_from_name(*o.profile);
}

// Explicit --config wins; otherwise the run config echoed into the
// artifacts directory; otherwise the profile defaults.
RunConfig resolve_config(const CommonOptions& o, bool allow_artifact_config) {
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) throw ConfigError(o.config + ": config file not found");
    return load_config(o.config, requested_profile(o), o.seed);
  }
  if (allow_artifact_config && !o.artifacts.empty()) {
    const fs::path echoed = fs::path(o.artifacts) / "run_config.json";
    if (fs::exists(echoed)) {
      // The echo carries its own run_id, which is not a config key.
      nlohmann::json j = io::read_json(echoed);
      j.erase("run_id");
      return parse_config(j.dump(2), echoed.string(), requested_profile(o), o.seed);
    }
  }
  return parse_config("{}", "<defaults>", requested_profile(o), o.seed);
}

fs::path prepare_out(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + out + ": " + ec.message());
  return out;
}

fs::path artifact(const fs::path& dir, const std::string& name) {
  const fs::path p = dir / name;
  if (!fs::exists(p)) throw ConfigError("missing artifact: " + p.string());
  return p;
}

void write_config_echo(const fs::path& out, const RunConfig& cfg) {
  nlohmann::json echo = to_json(cfg);
  echo["run_id"] = run_id(cfg);
  io::write_json(out / "run_config.json", echo);
  io::write_json(out / "seeds.json", seeds_json(cfg));
}

void log(const std::string& line) { std::cerr << line << "\n"; }

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

nlohmann::json generator_log_json(const attack::GeneratorLog& g) {
  return {{"initial_holdout_loss", g.initial_holdout_loss},
          {"final_holdout_loss", g.final_holdout_loss},
          {"final_fooling_rate", g.final_fooling_rate},
          {"steps_run", g.steps_run},
          {"losses", g.losses}};
}

// condense ------------------------------------------------------------------

int cmd_condense(const CommonOptions& o) {
  const RunConfig cfg = resolve_config(o, false);
  const fs::path out = prepare_out(o.out);
  const auto [train, test] = load_splits(cfg);
  (void)test;
  const auto result = condense::condense(train, cfg.condense);
  condense::save_synthetic(out / "s_clean.tns", result.set);
  io::write_real_tensor(out / "s_init.tns", result.init_images.shape(),
                        result.init_images.values(), io::DType::f64, {{"role", "s_init"}});
  condense::write_trace_csv(out / "condense_trace.csv", result.trace);
  write_config_echo(out, cfg);
  const double last = result.trace.empty() ? 0.0 : result.trace.back().objective;
  log("condense: " + std::to_string(cfg.condense.iterations) + " iterations, final objective " +
      fixed(last, 6));
  return kExitOk;
}

// attack --------------------------------------------------------------------

int cmd_attack(const CommonOptions& o) {
  const RunConfig cfg = resolve_config(o, false);
  const fs::path out = prepare_out(o.out);
  const auto [train, test] = load_splits(cfg);
  (void)test;
  const auto r = attack::run_sneakdoor(train, cfg.condense, cfg.attack);

  condense::save_synthetic(out / "s_clean.tns", r.s_clean);
  condense::save_synthetic(out / "s_poison.tns", r.s_poison);
  io::write_real_tensor(out / "s_init.tns", r.init_images.shape(), r.init_images.values(),
                        io::DType::f64, {{"role", "s_init"}});
  nn::save_model(out / "surrogate.ckpt", r.surrogate);
  nn::save_generator(out / "generator.ckpt", r.generator);
  io::write_json(out / "confusion.json", attack::to_json(r.confusion));
  nlohmann::json pair = attack::to_json(r.pair);
  pair["num_poison"] = r.num_poison;
  io::write_json(out / "pair.json", pair);
  io::write_json(out / "attack_config.json", attack::to_json(cfg.attack));
  nlohmann::json glog = generator_log_json(r.generator_log);
  glog["surrogate_epoch_losses"] = r.surrogate_losses;
  io::write_json(out / "generator_log.json", glog);
  condense::write_trace_csv(out / "condense_trace.csv", r.clean_trace);
  condense::write_trace_csv(out / "recondense_trace.csv", r.poison_trace);
  write_config_echo(out, cfg);
  log("attack: pair " + std::to_string(r.pair.source) + "->" + std::to_string(r.pair.target) +
      " rate " + fixed(r.pair.rate) + ", " + std::to_string(r.num_poison) +
      " poisoned samples, generator fooling rate " + fixed(r.generator_log.final_fooling_rate));
  return kExitOk;
}

// eval ----------------------------------------------------------------------

nn::ModelBundle train_downstream(const RunConfig& cfg, const condense::SyntheticSet& s) {
  const auto init = nn::init_model(cfg.eval.arch, s.num_classes,
                                   attack::stage_seed(cfg.eval.train.seed, "init"));
  return nn::train_classifier(init, s.images, s.labels, cfg.eval.train).model;
}

int cmd_eval(const CommonOptions& o, const std::string& which) {
  if (which != "poison" && which != "clean") throw ConfigError("--set must be 'poison' or 'clean'");
  if (o.artifacts.empty()) throw ConfigError("--artifacts is required");
  const fs::path dir = o.artifacts;
  if (!fs::is_directory(dir)) throw ConfigError("missing artifacts directory: " + dir.string());
  const fs::path clean_path = artifact(dir, "s_clean.tns");
  const fs::path poison_path = artifact(dir, "s_poison.tns");
  const fs::path gen_path = artifact(dir, "generator.ckpt");
  const fs::path sur_path = artifact(dir, "surrogate.ckpt");
  const fs::path pair_path = artifact(dir, "pair.json");
  const RunConfig cfg = resolve_config(o, true);
  const fs::path out = o.out.empty() ? dir : prepare_out(o.out);

  const auto s_clean = condense::load_synthetic(clean_path);
  const auto s_poison = condense::load_synthetic(poison_path);
  const auto gen = nn::load_generator(gen_path);
  const auto surrogate = nn::load_model(sur_path);
  const auto pair = attack::pair_from_json(io::read_json(pair_path));
  const auto [train, test] = load_splits(cfg);
  (void)train;
  if (s_clean.image_shape() != test.image_shape()) {
    throw ConfigError("artifacts do not match the configured dataset shape");
  }
  const double alpha = cfg.attack.alpha, eps = cfg.attack.epsilon;

  const auto clean_model = train_downstream(cfg, s_clean);
  const auto model = which == "clean" ? clean_model : train_downstream(cfg, s_poison);

  const Tensor source = test.class_slice(pair.source).images();
  const Tensor triggered = attack::apply_trigger(source, gen, alpha, eps);
  const Tensor patched =
      attack::naive_patch_trigger(source, cfg.eval.naive_patch_value, cfg.eval.naive_patch_size);
  const metrics::SsimOptions ssim_opts{cfg.eval.ssim_window, 1.0};

  metrics::MetricsReport rep;
  rep.asr = metrics::asr(model, source, gen, alpha, eps, pair.target);
  rep.cta = metrics::cta(model, test);
  rep.psnr_db = metrics::psnr(source, triggered);
  rep.ssim = metrics::ssim(source, triggered, ssim_opts);
  rep.is_raw = metrics::kl_is(triggered, surrogate);
  rep.is_dagger = metrics::is_dagger(rep.is_raw, cfg.eval.is_dagger_mode);
  rep.n_t = source.dim(0);
  rep.n_c = test.size();

  const std::string method = which == "clean" ? "clean" : cfg.eval.method;
  const std::string id = which == "clean" ? run_id(cfg) + "-clean" : run_id(cfg);
  rep.config = to_json(cfg);
  rep.config["run_id"] = id;
  rep.config["set"] = which;

  const double clean_cta = metrics::cta(clean_model, test);
  rep.extra = {{"clean_cta", clean_cta},
               {"cta_drop", clean_cta - rep.cta},
               {"clean_asr", metrics::asr(clean_model, source, gen, alpha, eps, pair.target)},
               {"naive_psnr_db", metrics::real_to_json(metrics::psnr(source, patched))},
               {"naive_ssim", metrics::ssim(source, patched, ssim_opts)},
               {"pair", attack::to_json(pair)},
               {"is_dagger_mode", metrics::is_dagger_mode_name(cfg.eval.is_dagger_mode)}};

  const std::string stem = which == "clean" ? "metrics_clean" : "metrics";
  io::write_json(out / (stem + ".json"), metrics::to_json(rep));
  const metrics::CsvRow row{cfg.dataset.name, method, cfg.seed, id, rep};
  io::write_text(out / (stem + ".csv"), metrics::csv_header() + "\n" + metrics::csv_line(row) + "\n");
  log("eval[" + which + "]: asr " + fixed(rep.asr) + " cta " + fixed(rep.cta) + " (clean cta " +
      fixed(clean_cta) + ") psnr " + metrics::format_real(rep.psnr_db) + " ssim " +
      fixed(rep.ssim));
  return kExitOk;
}

// verify-bounds -------------------------------------------------------------

std::string csv_record(const bounds::BoundVerdict& v) {
  return v.theorem + "," + metrics::format_real(v.estimates.rho) + "," +
         bounds::interpretation_name(v.interpretation) + "," + v.mode + "," +
         metrics::format_real(v.lhs) + "," + metrics::format_real(v.rhs) + "," +
         (v.holds ? "true" : "false");
}

int cmd_verify_bounds(const CommonOptions& o) {
  if (o.artifacts.empty()) throw ConfigError("--artifacts is required");
  const fs::path dir = o.artifacts;
  if (!fs::is_directory(dir)) throw ConfigError("missing artifacts directory: " + dir.string());
  const fs::path clean_path = artifact(dir, "s_clean.tns");
  const fs::path init_path = artifact(dir, "s_init.tns");
  const fs::path gen_path = artifact(dir, "generator.ckpt");
  const fs::path sur_path = artifact(dir, "surrogate.ckpt");
  const fs::path pair_path = artifact(dir, "pair.json");
  const RunConfig cfg = resolve_config(o, true);
  if (!(cfg.bounds.lambda > 0.0)) throw ConfigError("bounds.lambda must be > 0 for the synthetic-set MMD bound");
  const fs::path out = o.out.empty() ? dir : prepare_out(o.out);

  const auto s_clean = condense::load_synthetic(clean_path);
  const auto init_file = io::read_tensor(init_path);
  const Tensor s_init(init_file.shape, init_file.reals);
  const auto gen = nn::load_generator(gen_path);
  const auto surrogate = nn::load_model(sur_path);
  const auto pair = attack::pair_from_json(io::read_json(pair_path));
  const auto [train, test] = load_splits(cfg);
  (void)test;
  const double alpha = cfg.attack.alpha, eps = cfg.attack.epsilon;
  const auto bseed = cfg.bounds.seed;
  const std::size_t pairs = cfg.bounds.lipschitz_pairs;

  const Tensor source = train.class_slice(pair.source).images();
  const Tensor target = train.class_slice(pair.target).images();
  const Tensor triggered = attack::apply_trigger(source, gen, alpha, eps);
  const auto pool = bounds::lipschitz_pool(train.images(), pairs,
                                           attack::stage_seed(bseed, "lipschitz"), source, triggered);

  std::vector<bounds::BoundVerdict> verdicts;
  // Trigger displacement in the surrogate's embedding.
  const double l_incl = bounds::estimate_lipschitz(surrogate, pool);
  const double l_indep = bounds::estimate_lipschitz(
      surrogate, train.images(), pairs, attack::stage_seed(bseed, "lipschitz_independent"));
  verdicts.push_back(bounds::check_lemma1(surrogate, gen, source, alpha, eps, l_incl, "inclusion"));
  verdicts.push_back(
      bounds::check_lemma1(surrogate, gen, source, alpha, eps, l_indep, "independent"));
  const bool inclusion_ok = verdicts[0].holds;

  // Feature-space deviation of the mixture, surrogate embedding.
  const Tensor clean_feats = nn::forward_features(surrogate, target);
  const Tensor trig_feats = nn::forward_features(surrogate, triggered);
  const double delta_sur =
      bounds::estimate_hausdorff(nn::forward_features(surrogate, source), clean_feats);
  const std::vector<bounds::Interpretation> interps{bounds::Interpretation::union_mixture,
                                                    bounds::Interpretation::convex_mixture};
  for (double rho : cfg.bounds.rho_sweep) {
    for (auto interp : interps) {
      bounds::BoundEstimates est;
      est.l_f_hat = l_incl;
      est.alpha = alpha;
      est.lipschitz_pairs = pool.pairs.size();
      verdicts.push_back(bounds::check_theorem1(clean_feats, trig_feats, rho, l_incl * alpha, eps,
                                                delta_sur, interp, est));
    }
  }

  // MMD bound on the recondensed target slice over fresh encoders; the constants take the worst encoder.
  std::vector<nn::ModelBundle> encoders;
  double l_enc = 0.0, delta_enc = 0.0;
  for (int e = 0; e < cfg.bounds.encoder_seeds; ++e) {
    encoders.push_back(nn::init_model(cfg.condense.encoder, train.num_classes(),
                                      attack::stage_seed(bseed, "encoder/" + std::to_string(e))));
    l_enc = std::max(l_enc, bounds::estimate_lipschitz(encoders.back(), pool));
    delta_enc = std::max(delta_enc, bounds::estimate_hausdorff(
                                        nn::forward_features(encoders.back(), source),
                                        nn::forward_features(encoders.back(), target)));
  }
  condense::CondenseConfig ccfg = cfg.condense;
  ccfg.reg_weight = cfg.bounds.lambda;
  const Tensor ref = attack::poison_with_rho(train, s_clean, s_init, ccfg, gen, pair, cfg.attack, 0.0)
                         .class_images(pair.target);
  nlohmann::json mmd_sweep = nlohmann::json::array();
  for (double rho : cfg.bounds.rho_sweep) {
    const Tensor poisoned =
        rho == 0.0 ? ref
                   : attack::poison_with_rho(train, s_clean, s_init, ccfg, gen, pair, cfg.attack, rho)
                         .class_images(pair.target);
    double mmd = 0.0;
    for (const auto& enc : encoders) {
      mmd += condense::mean_embedding_mmd(nn::forward_features(enc, ref),
                                          nn::forward_features(enc, poisoned));
    }
    mmd /= static_cast<double>(encoders.size());
    mmd_sweep.push_back({{"rho", rho},
                         {"num_poison", attack::poison_count(rho, target.dim(0))},
                         {"mmd", mmd}});
    for (auto interp : interps) {
      bounds::BoundEstimates est;
      est.alpha = alpha;
      est.clean_points = target.dim(0);
      est.lipschitz_pairs = pool.pairs.size();
      verdicts.push_back(bounds::check_theorem2(ref, poisoned, encoders, l_enc, rho, l_enc * alpha,
                                                eps, delta_enc, cfg.bounds.lambda, 1.0, interp, est));
    }
    log("verify-bounds: rho " + fixed(rho, 3) + " mmd " + metrics::format_real(mmd));
  }

  nlohmann::json doc{{"verdicts", bounds::to_json(verdicts)},
                     {"mmd_sweep", mmd_sweep},
                     {"pair", attack::to_json(pair)},
                     {"lambda", cfg.bounds.lambda},
                     {"mu_r", 1.0},
                     {"encoder_seeds", cfg.bounds.encoder_seeds},
                     {"inclusion_lemma_holds", inclusion_ok},
                     {"config", to_json(cfg)}};
  io::write_json(out / "bounds.json", doc);
  std::string csv = "theorem,rho,interpretation,mode,lhs,rhs,holds\n";
  for (const auto& v : verdicts) csv += csv_record(v) + "\n";
  io::write_text(out / "bounds_sweep.csv", csv);
  for (const auto& v : verdicts) {
    log("  " + v.theorem + (v.mode.empty() ? "" : "[" + v.mode + "]") + " rho " +
        fixed(v.estimates.rho, 3) + " " + bounds::interpretation_name(v.interpretation) + ": " +
        metrics::format_real(v.lhs) + " <= " + metrics::format_real(v.rhs) +
        (v.holds ? " holds" : " violated"));
  }
  if (!inclusion_ok) {
    log("verify-bounds: inclusion-mode lemma check failed");
    return kExitRuntime;
  }
  return kExitOk;
}

// report --------------------------------------------------------------------

struct Stat {
  double mean = 0.0;
  double std = 0.0;
};

Stat mean_std(const std::vector<double>& v) {
  Stat s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (std::isinf(s.mean) || v.size() < 2) return s;
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return s;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
  const fs::path out = prepare_out(out_dir);
  std::vector<metrics::CsvRow> rows;
  std::set<std::string> seen;
  std::optional<std::set<std::string>> schema;
  for (const auto& d : run_dirs) {
    const fs::path p = artifact(d, "metrics.json");
    const nlohmann::json j = io::read_json(p);
    std::set<std::string> keys;
    for (const auto& [k, _] : j.items()) keys.insert(k);
    if (schema && *schema != keys) throw ConfigError(p.string() + ": inconsistent metrics schema");
    schema = keys;
    metrics::MetricsReport rep;
    try {
      rep = metrics::report_from_json(j);
    } catch (const FormatError& e) {
      throw ConfigError(p.string() + ": " + e.what());
    }
    const auto& c = rep.config;
    if (!c.contains("run_id") || !c.contains("dataset") || !c.contains("eval") ||
        !c.contains("seed")) {
      throw ConfigError(p.string() + ": metrics config echo lacks run_id/dataset/eval/seed");
    }
    const std::string id = c.at("run_id").get<std::string>();
    if (!seen.insert(id).second) continue;
    const std::string method = c.value("set", "poison") == "clean"
                                   ? "clean"
                                   : c.at("eval").at("method").get<std::string>();
    rows.push_back({c.at("dataset").at("name").get<std::string>(), method,
                    c.at("seed").get<std::uint64_t>(), id, rep});
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return std::tie(a.dataset, a.method, a.seed, a.run_id) <
           std::tie(b.dataset, b.method, b.seed, b.run_id);
  });
  std::string merged = metrics::csv_header() + "\n";
  for (const auto& r : rows) merged += metrics::csv_line(r) + "\n";
  io::write_text(out / "report.csv", merged);

  const std::vector<std::string> cols{"asr", "cta", "psnr_db", "ssim", "is_raw", "is_dagger"};
  auto column = [](const metrics::MetricsReport& r, std::size_t i) {
    const double v[] = {r.asr, r.cta, r.psnr_db, r.ssim, r.is_raw, r.is_dagger};
    return v[i];
  };
  std::map<std::pair<std::string, std::string>, std::vector<const metrics::CsvRow*>> groups;
  for (const auto& r : rows) groups[{r.dataset, r.method}].push_back(&r);
  std::string agg = "dataset,method,runs";
  for (const auto& c : cols) agg += "," + c + "_mean," + c + "_std";
  agg += "\n";
  std::string summary;
  for (const auto& [key, members] : groups) {
    agg += key.first + "," + key.second + "," + std::to_string(members.size());
    summary += key.first + " / " + key.second + " (" + std::to_string(members.size()) + " runs)\n";
    for (std::size_t i = 0; i < cols.size(); ++i) {
      std::vector<double> v;
      for (const auto* m : members) v.push_back(column(m->report, i));
      const Stat s = mean_std(v);
      agg += "," + metrics::format_real(s.mean) + "," + metrics::format_real(s.std);
      summary += "  " + cols[i] + ": " + metrics::format_real(s.mean) + " +- " +
                 metrics::format_real(s.std) + "\n";
    }
    agg += "\n";
  }
  io::write_text(out / "aggregate.csv", agg);
  io::write_text(out / "summary.txt", summary);
  std::cout << summary;
  return kExitOk;
}

void add_common(CLI::App* cmd, CommonOptions& o, bool with_artifacts) {
  cmd->add_option("--config", o.config, "JSON run config");
  cmd->add_option("--out", o.out, with_artifacts ? "Output directory (default: --artifacts)"
                                                 : "Output directory");
  cmd->add_option("--seed", o.seed, "Global seed (overrides the config)");
  cmd->add_option("--profile", o.profile, "Default profile: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  if (with_artifacts) cmd->add_option("--artifacts", o.artifacts, "Directory written by attack");
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Backdoor injection into distribution-matching condensed datasets"};
  app.require_subcommand(1);
  CommonOptions opts;
  std::string which = "poison";
  std::vector<std::string> run_dirs;
  std::string report_out;

  auto* c_condense = app.add_subcommand("condense", "Condense the clean dataset");
  add_common(c_condense, opts, false);
  auto* c_attack = app.add_subcommand("attack", "Run the full attack pipeline");
  add_common(c_attack, opts, false);
  auto* c_eval = app.add_subcommand("eval", "Train a downstream model and score it");
  add_common(c_eval, opts, true);
  c_eval->add_option("--set", which, "Synthetic set to evaluate: poison or clean");
  auto* c_bounds = app.add_subcommand("verify-bounds", "Check the deviation bounds over the rho sweep");
  add_common(c_bounds, opts, true);
  auto* c_report = app.add_subcommand("report", "Aggregate metrics over run directories");
  c_report->add_option("runs", run_dirs, "Run directories containing metrics.json")->required();
  c_report->add_option("--out", report_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c_condense->parsed()) return cmd_condense(opts);
    if (c_attack->parsed()) return cmd_attack(opts);
    if (c_eval->parsed()) return cmd_eval(opts, which);
    if (c_bounds->parsed()) return cmd_verify_bounds(opts);
    if (c_report->parsed()) return cmd_report(run_dirs, report_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace sneakdoor::cli
