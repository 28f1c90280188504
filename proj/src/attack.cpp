#include "sneakdoor/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "sneakdoor/errors.hpp"
#include "sneakdoor/rng.hpp"

namespace sneakdoor::attack {

ConfusionMatrix confusion_from_counts(int num_classes, std::vector<std::int64_t> counts) {
  if (num_classes < 1) throw ArgumentError("confusion matrix needs at least one class");
  const auto k = static_cast<std::size_t>(num_classes);
  if (counts.size() != k * k) throw ArgumentError("confusion counts must be num_classes^2");
  ConfusionMatrix cm;
  cm.num_classes = num_classes;
  cm.counts = std::move(counts);
  cm.rows.assign(k * k, 0.0);
  cm.empty_rows.assign(k, false);
  for (std::size_t i = 0; i < k; ++i) {
    std::int64_t total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (cm.counts[i * k + j] < 0) throw ArgumentError("confusion counts must be non-negative");
      total += cm.counts[i * k + j];
    }
    if (total == 0) {
      cm.empty_rows[i] = true;
      continue;
    }
    for (std::size_t j = 0; j < k; ++j) {
      cm.rows[i * k + j] = static_cast<double>(cm.counts[i * k + j]) / static_cast<double>(total);
    }
  }
  return cm;
}

ConfusionMatrix confusion_from_predictions(int num_classes, std::span<const std::int32_t> labels,
                                           std::span<const std::int32_t> predictions) {
  if (labels.size() != predictions.size()) throw ArgumentError("label/prediction count mismatch");
  const auto k = static_cast<std::size_t>(num_classes);
  std::vector<std::int64_t> counts(k * k, 0);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const auto i = labels[n], j = predictions[n];
    if (i < 0 || j < 0 || i >= num_classes || j >= num_classes) {
      throw ArgumentError("class id out of range in confusion matrix");
    }
    ++counts[static_cast<std::size_t>(i) * k + static_cast<std::size_t>(j)];
  }
  return confusion_from_counts(num_classes, std::move(counts));
}

ConfusionMatrix confusion(const nn::ModelBundle& model, const LabeledDataset& ds) {
  if (ds.empty()) throw ArgumentError("confusion on an empty dataset");
  const auto preds = nn::predict(model, ds.images());
  return confusion_from_predictions(ds.num_classes(), ds.labels(), preds);
}

nlohmann::json to_json(const ConfusionMatrix& cm) {
  const auto k = static_cast<std::size_t>(cm.num_classes);
  nlohmann::json counts = nlohmann::json::array(), rows = nlohmann::json::array();
  for (std::size_t i = 0; i < k; ++i) {
    counts.push_back(std::vector<std::int64_t>(cm.counts.begin() + static_cast<long>(i * k),
                                               cm.counts.begin() + static_cast<long>((i + 1) * k)));
    rows.push_back(std::vector<double>(cm.rows.begin() + static_cast<long>(i * k),
                                       cm.rows.begin() + static_cast<long>((i + 1) * k)));
  }
  std::vector<bool> empty(cm.empty_rows.begin(), cm.empty_rows.end());
  return {{"num_classes", cm.num_classes}, {"counts", counts}, {"rows", rows}, {"empty_rows", empty}};
}

ConfusionMatrix confusion_from_json(const nlohmann::json& j) {
  try {
    const int k = j.at("num_classes").get<int>();
    std::vector<std::int64_t> flat;
    for (const auto& row : j.at("counts")) {
      const auto r = row.get<std::vector<std::int64_t>>();
      if (r.size() != static_cast<std::size_t>(k)) throw FormatError("confusion row length mismatch");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return confusion_from_counts(k, std::move(flat));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("confusion matrix: ") + e.what());
  }
}

nlohmann::json to_json(const ClassPair& pair) {
  return {{"source", pair.source}, {"target", pair.target}, {"rate", pair.rate}};
}

ClassPair pair_from_json(const nlohmann::json& j) {
  try {
    ClassPair p;
    p.source = j.at("source").get<int>();
    p.target = j.at("target").get<int>();
    p.rate = j.value("rate", 0.0);
    if (p.source == p.target) throw ArgumentError("class pair source and target must differ");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("class pair: ") + e.what());
  }
}

double misclassification_rate_from_predictions(std::span<const std::int32_t> predictions, int j) {
  if (predictions.empty()) throw ArgumentError("misclassification rate over an empty sample");
  const auto hits = std::count(predictions.begin(), predictions.end(), j);
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double misclassification_rate(const nn::ModelBundle& model, const LabeledDataset& ds, int i, int j,
                              std::size_t sample_n, std::uint64_t seed) {
  if (i == j) throw ArgumentError("misclassification rate needs i != j");
  if (i < 0 || i >= ds.num_classes() || j < 0 || j >= ds.num_classes()) {
    throw ArgumentError("class id out of range");
  }
  const auto n = ds.class_size(i);
  if (n == 0) throw ArgumentError("class " + std::to_string(i) + " is empty");
  Rng rng = Rng(seed).stream("misclassification", static_cast<std::uint64_t>(i));
  const auto picks = rng.sample_without_replacement(n, std::min(sample_n, n));
  std::vector<std::size_t> positions(picks.size());
  for (std::size_t k = 0; k < picks.size(); ++k) {
    positions[k] = ds.class_index()[static_cast<std::size_t>(i)][picks[k]];
  }
  const auto preds = nn::predict(model, gather_rows(ds.images(), positions));
  return misclassification_rate_from_predictions(preds, j);
}

ClassPair select_pair(const ConfusionMatrix& cm) {
  if (cm.num_classes < 2) throw ArgumentError("select_pair needs at least two classes");
  ClassPair best{-1, -1, 0.0};
  for (int i = 0; i < cm.num_classes; ++i) {
    for (int j = 0; j < cm.num_classes; ++j) {
      if (i == j) continue;
      if (cm.at(i, j) > best.rate) best = {i, j, cm.at(i, j)};
    }
  }
  if (best.source < 0) {
    throw DegeneratePairError("confusion matrix has no off-diagonal mass; set pair_override");
  }
  return best;
}

void validate(const AttackConfig& cfg) {
  if (!(cfg.alpha > 0.0)) throw ArgumentError("alpha must be > 0");
  if (!(cfg.epsilon > 0.0)) throw ArgumentError("epsilon must be > 0");
  if (cfg.alpha * cfg.epsilon > 1.0) throw ArgumentError("alpha * epsilon must not exceed 1");
  if (!(cfg.rho >= 0.0 && cfg.rho <= 1.0)) throw ArgumentError("rho must lie in [0, 1]");
  if (!(cfg.generator_lr >= 0.0)) throw ArgumentError("generator_lr must be >= 0");
  if (cfg.generator_steps < 0) throw ArgumentError("generator_steps must be >= 0");
  if (cfg.generator_batch < 1) throw ArgumentError("generator_batch must be >= 1");
  if (cfg.generator.hidden < 1) throw ArgumentError("generator.hidden must be >= 1");
  if (cfg.pair_override && cfg.pair_override->source == cfg.pair_override->target) {
    throw ArgumentError("pair_override source and target must differ");
  }
  if (cfg.surrogate_train.epochs < 0) throw ArgumentError("surrogate epochs must be >= 0");
  if (cfg.surrogate_train.batch_size < 1) throw ArgumentError("surrogate batch_size must be >= 1");
  nn::validate(cfg.surrogate_arch);
}

namespace {

nlohmann::json train_to_json(const nn::TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"lr", t.sgd.lr},
          {"momentum", t.sgd.momentum},
          {"weight_decay", t.sgd.weight_decay}};
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw ArgumentError(std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ArgumentError(std::string("unknown key '") + key + "' in " + what);
  }
}

}  // namespace

nn::TrainConfig train_config_from_json(const nlohmann::json& j, nn::TrainConfig t) {
  reject_unknown(j, {"epochs", "batch_size", "lr", "momentum", "weight_decay"}, "training config");
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.sgd.lr = j.value("lr", t.sgd.lr);
  t.sgd.momentum = j.value("momentum", t.sgd.momentum);
  t.sgd.weight_decay = j.value("weight_decay", t.sgd.weight_decay);
  return t;
}

nlohmann::json train_config_to_json(const nn::TrainConfig& t) { return train_to_json(t); }

nlohmann::json to_json(const AttackConfig& cfg) {
  nlohmann::json override_json = nullptr;
  if (cfg.pair_override) {
    override_json = {{"source", cfg.pair_override->source}, {"target", cfg.pair_override->target}};
  }
  return {{"alpha", cfg.alpha},
          {"epsilon", cfg.epsilon},
          {"rho", cfg.rho},
          {"generator_lr", cfg.generator_lr},
          {"generator_steps", cfg.generator_steps},
          {"generator_batch", cfg.generator_batch},
          {"stop_fooling_rate", cfg.stop_fooling_rate},
          {"generator", {{"hidden", cfg.generator.hidden}, {"output_gain", cfg.generator.output_gain}}},
          {"co_train_surrogate", cfg.co_train_surrogate},
          {"pair_override", override_json},
          {"surrogate_arch", nn::to_json(cfg.surrogate_arch)},
          {"surrogate_train", train_to_json(cfg.surrogate_train)},
          {"seed", cfg.seed}};
}

AttackConfig attack_config_from_json(const nlohmann::json& j, AttackConfig cfg) {
  reject_unknown(j,
                 {"alpha", "epsilon", "rho", "generator_lr", "generator_steps", "generator_batch",
                  "stop_fooling_rate", "generator", "co_train_surrogate", "pair_override",
                  "surrogate_arch", "surrogate_train", "seed"},
                 "attack config");
  try {
    cfg.alpha = j.value("alpha", cfg.alpha);
    cfg.epsilon = j.value("epsilon", cfg.epsilon);
    cfg.rho = j.value("rho", cfg.rho);
    cfg.generator_lr = j.value("generator_lr", cfg.generator_lr);
    cfg.generator_steps = j.value("generator_steps", cfg.generator_steps);
    cfg.generator_batch = j.value("generator_batch", cfg.generator_batch);
    cfg.stop_fooling_rate = j.value("stop_fooling_rate", cfg.stop_fooling_rate);
    cfg.co_train_surrogate = j.value("co_train_surrogate", cfg.co_train_surrogate);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("generator")) {
      const auto& g = j.at("generator");
      reject_unknown(g, {"hidden", "output_gain"}, "generator");
      cfg.generator.hidden = g.value("hidden", cfg.generator.hidden);
      cfg.generator.output_gain = g.value("output_gain", cfg.generator.output_gain);
    }
    if (j.contains("pair_override")) {
      const auto& p = j.at("pair_override");
      if (p.is_null()) {
        cfg.pair_override.reset();
      } else {
        cfg.pair_override = pair_from_json(p);
      }
    }
    if (j.contains("surrogate_arch")) {
      nlohmann::json merged = nn::to_json(cfg.surrogate_arch);
      reject_unknown(j.at("surrogate_arch"), {"kind", "widths", "activation", "input"},
                     "surrogate_arch");
      merged.update(j.at("surrogate_arch"));
      cfg.surrogate_arch = nn::architecture_from_json(merged);
    }
    if (j.contains("surrogate_train")) {
      cfg.surrogate_train = train_config_from_json(j.at("surrogate_train"), cfg.surrogate_train);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("attack config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

Tensor apply_trigger_from_raw(const Tensor& x, const Tensor& raw, double alpha, double epsilon) {
  if (x.shape() != raw.shape()) throw ArgumentError("trigger: generator output shape mismatch");
  if (!(alpha >= 0.0) || !(epsilon >= 0.0)) throw ArgumentError("trigger: alpha, epsilon must be >= 0");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::clamp(x[i] + alpha * std::clamp(raw[i], -epsilon, epsilon), 0.0, 1.0);
  }
  return out;
}

Tensor apply_trigger(const Tensor& x, const nn::GeneratorNet& gen, double alpha, double epsilon) {
  return apply_trigger_from_raw(x, nn::generator_forward(gen, x), alpha, epsilon);
}

namespace {

std::vector<std::int32_t> constant_labels(std::size_t n, int label) {
  return std::vector<std::int32_t>(n, static_cast<std::int32_t>(label));
}

double triggered_loss(const nn::GeneratorNet& gen, const nn::ModelBundle& model, const Tensor& x,
                      int target, const AttackConfig& cfg) {
  const Tensor xt = apply_trigger(x, gen, cfg.alpha, cfg.epsilon);
  return nn::cross_entropy(nn::forward_logits(model, xt), constant_labels(x.dim(0), target));
}

double fooling_rate(const nn::GeneratorNet& gen, const nn::ModelBundle& model, const Tensor& x,
                    int target, const AttackConfig& cfg) {
  const auto preds = nn::predict(model, apply_trigger(x, gen, cfg.alpha, cfg.epsilon));
  return misclassification_rate_from_predictions(preds, target);
}

}  // namespace

GeneratorResult train_generator(const nn::GeneratorNet& gen, const nn::ModelBundle& model,
                                const LabeledDataset& source, int target, const AttackConfig& cfg,
                                const LabeledDataset* clean) {
  if (source.empty()) throw ArgumentError("train_generator needs a non-empty source set");
  if (target < 0 || target >= model.num_classes) throw ArgumentError("target class out of range");
  if (!(cfg.generator_lr >= 0.0)) throw ArgumentError("generator_lr must be >= 0");
  const std::size_t n = source.size();
  const Rng root(cfg.seed);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng holdout_rng = root.stream("holdout");
  holdout_rng.shuffle(std::span<std::size_t>(order));
  const std::size_t n_hold = n >= 2 ? std::max<std::size_t>(1, n / 5) : 0;
  std::vector<std::size_t> hold(order.begin(), order.begin() + static_cast<long>(n_hold));
  std::vector<std::size_t> pool(order.begin() + static_cast<long>(n_hold), order.end());
  std::sort(hold.begin(), hold.end());
  std::sort(pool.begin(), pool.end());
  if (hold.empty()) hold = pool;
  const Tensor hold_x = gather_rows(source.images(), hold);
  const Tensor pool_x = gather_rows(source.images(), pool);

  GeneratorResult result{gen, model, {}};
  nn::GeneratorNet& g = result.generator;
  nn::ModelBundle& surrogate = result.surrogate;
  result.log.initial_holdout_loss = triggered_loss(g, surrogate, hold_x, target, cfg);

  nn::AdamConfig adam_cfg;
  adam_cfg.lr = cfg.generator_lr;
  nn::AdamState adam;
  nn::SgdState sgd;
  std::vector<double> surrogate_flat = surrogate.flat_params();
  std::vector<double> grad(g.params.size());
  const std::size_t batch = std::min(cfg.generator_batch, pool.size());

  for (int step = 0; step < cfg.generator_steps; ++step) {
    Rng batch_rng = root.stream("batch", static_cast<std::uint64_t>(step));
    const auto picks = batch_rng.sample_without_replacement(pool.size(), batch);
    const Tensor x = gather_rows(pool_x, picks);
    const auto labels = constant_labels(batch, target);

    nn::Network::Tape tape;
    const Tensor raw = nn::generator_forward(g, x, &tape);
    const Tensor xt = apply_trigger_from_raw(x, raw, cfg.alpha, cfg.epsilon);
    Tensor gx;
    const double loss = nn::classification_backward(surrogate, xt, labels, nullptr, &gx);
    result.log.losses.push_back(loss);

    // Both clamps pass gradient on their closed intervals and block it outside.
    Tensor g_raw(raw.shape());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const double r = raw[i];
      const double pre = x[i] + cfg.alpha * std::clamp(r, -cfg.epsilon, cfg.epsilon);
      const bool inner = r >= -cfg.epsilon && r <= cfg.epsilon;
      const bool outer = pre >= 0.0 && pre <= 1.0;
      g_raw[i] = inner && outer ? cfg.alpha * gx[i] : 0.0;
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    g.net.backward(g.params, tape, g_raw, grad, false);
    nn::adam_step(g.params, grad, adam_cfg, adam);
    nn::check_finite(g.params, "generator parameters");

    if (cfg.co_train_surrogate) {
      Tensor sx = xt;
      std::vector<std::int32_t> sy = labels;
      if (clean && !clean->empty()) {
        Rng clean_rng = root.stream("co_train", static_cast<std::uint64_t>(step));
        const auto cp = clean_rng.sample_without_replacement(clean->size(), batch);
        sx = concat_rows(gather_rows(clean->images(), cp), xt);
        std::vector<std::int32_t> cy(cp.size());
        for (std::size_t k = 0; k < cp.size(); ++k) cy[k] = clean->labels()[cp[k]];
        cy.insert(cy.end(), labels.begin(), labels.end());
        sy = std::move(cy);
      }
      nn::ModelGrad mg;
      nn::classification_backward(surrogate, sx, sy, &mg, nullptr);
      std::vector<double> flat_grad = mg.features;
      flat_grad.insert(flat_grad.end(), mg.classifier.begin(), mg.classifier.end());
      nn::sgd_step(surrogate_flat, flat_grad, cfg.surrogate_train.sgd, sgd);
      surrogate.set_flat_params(surrogate_flat);
    }

    result.log.steps_run = step + 1;
    if (cfg.stop_fooling_rate < 1.0 && (step + 1) % 10 == 0 &&
        fooling_rate(g, surrogate, pool_x, target, cfg) >= cfg.stop_fooling_rate) {
      break;
    }
  }
  result.log.final_holdout_loss = triggered_loss(g, surrogate, hold_x, target, cfg);
  result.log.final_fooling_rate = fooling_rate(g, surrogate, pool_x, target, cfg);
  return result;
}

LabeledDataset build_triggered(const LabeledDataset& source, const nn::GeneratorNet& gen,
                               double alpha, double epsilon, int target) {
  if (target < 0 || target >= source.num_classes()) throw ArgumentError("target class out of range");
  if (source.empty()) return LabeledDataset(source.images(), {}, source.num_classes());
  return LabeledDataset(apply_trigger(source.images(), gen, alpha, epsilon),
                        constant_labels(source.size(), target), source.num_classes());
}

std::size_t poison_count(double rho, std::size_t clean_count) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ArgumentError("rho must lie in [0, 1]");
  return static_cast<std::size_t>(std::floor(rho * static_cast<double>(clean_count) + 1e-9));
}

LabeledDataset build_mixed(const LabeledDataset& target_slice, const LabeledDataset& triggered,
                           double rho, std::uint64_t seed) {
  const std::size_t k = poison_count(rho, target_slice.size());
  if (triggered.size() < k) {
    throw ArgumentError("need " + std::to_string(k) + " triggered samples, have " +
                        std::to_string(triggered.size()));
  }
  if (k == 0) return target_slice;
  Rng rng = Rng(seed).stream("mix");
  const auto picks = rng.sample_without_replacement(triggered.size(), k);
  return concat(target_slice, triggered.subset(picks));
}

Tensor naive_patch_trigger(const Tensor& x, double patch_value, std::size_t patch_size,
                           Corner corner) {
  if (x.rank() != 4) throw ArgumentError("naive_patch_trigger expects [n, c, h, w]");
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (patch_size > h || patch_size > w) throw ArgumentError("patch does not fit in the image");
  Tensor out = x;
  if (patch_size == 0) return out;
  const bool bottom = corner == Corner::bottom_left || corner == Corner::bottom_right;
  const bool right = corner == Corner::top_right || corner == Corner::bottom_right;
  const std::size_t y0 = bottom ? h - patch_size : 0;
  const std::size_t x0 = right ? w - patch_size : 0;
  const std::size_t planes = x.dim(0) * x.dim(1);
  for (std::size_t p = 0; p < planes; ++p) {
    double* plane = out.data() + p * h * w;
    for (std::size_t yy = y0; yy < y0 + patch_size; ++yy) {
      for (std::size_t xx = x0; xx < x0 + patch_size; ++xx) plane[yy * w + xx] = patch_value;
    }
  }
  return out;
}

std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) {
  return Rng(seed).stream(stage).next_u64();
}

namespace {

condense::SyntheticSet recondense_target(const LabeledDataset& ds,
                                         const condense::SyntheticSet& s_clean,
                                         const Tensor& init_images,
                                         const condense::CondenseConfig& ccfg,
                                         const nn::GeneratorNet& gen, const ClassPair& pair,
                                         const AttackConfig& acfg, double rho,
                                         std::size_t* num_poison,
                                         std::vector<condense::TracePoint>* trace) {
  const LabeledDataset triggered =
      build_triggered(ds.class_slice(pair.source), gen, acfg.alpha, acfg.epsilon, pair.target);
  const LabeledDataset target_slice = ds.class_slice(pair.target);
  const LabeledDataset mixed =
      build_mixed(target_slice, triggered, rho, stage_seed(acfg.seed, "mix"));
  const auto ipc = static_cast<std::size_t>(ccfg.ipc);
  const Tensor init_slice =
      slice_rows(init_images, static_cast<std::size_t>(pair.target) * ipc, ipc);
  auto re = condense::recondense_class(mixed, init_slice, pair.target, ccfg);
  condense::SyntheticSet s_poison = s_clean;
  s_poison.set_class_images(pair.target, re.images);
  if (num_poison) *num_poison = mixed.size() - target_slice.size();
  if (trace) *trace = std::move(re.trace);
  return s_poison;
}

}  // namespace

SneakdoorResult run_sneakdoor(const LabeledDataset& ds, const condense::CondenseConfig& ccfg,
                              const AttackConfig& acfg) {
  validate(acfg);
  condense::validate(ccfg);
  SneakdoorResult r;

  auto clean = condense::condense(ds, ccfg);
  r.s_clean = std::move(clean.set);
  r.init_images = std::move(clean.init_images);
  r.clean_trace = std::move(clean.trace);

  nn::TrainConfig tc = acfg.surrogate_train;
  tc.seed = stage_seed(acfg.seed, "surrogate_train");
  const auto init = nn::init_model(acfg.surrogate_arch, ds.num_classes(),
                                   stage_seed(acfg.seed, "surrogate_init"));
  auto trained = nn::train_classifier(init, r.s_clean.images, r.s_clean.labels, tc);
  r.surrogate_losses = std::move(trained.epoch_losses);

  r.confusion = confusion(trained.model, ds);
  if (acfg.pair_override) {
    r.pair = *acfg.pair_override;
    if (r.pair.source < 0 || r.pair.target < 0 || r.pair.source >= ds.num_classes() ||
        r.pair.target >= ds.num_classes()) {
      throw ArgumentError("pair_override class id out of range");
    }
    r.pair.rate = r.confusion.at(r.pair.source, r.pair.target);
  } else {
    r.pair = select_pair(r.confusion);
  }

  AttackConfig gcfg = acfg;
  gcfg.seed = stage_seed(acfg.seed, "generator_train");
  const auto gen0 =
      nn::init_generator(ds.image_shape(), acfg.generator, stage_seed(acfg.seed, "generator_init"));
  auto gres = train_generator(gen0, trained.model, ds.class_slice(r.pair.source), r.pair.target,
                              gcfg, &ds);
  r.generator = std::move(gres.generator);
  r.generator_log = std::move(gres.log);
  r.surrogate = std::move(gres.surrogate);

  r.s_poison = recondense_target(ds, r.s_clean, r.init_images, ccfg, r.generator, r.pair, acfg,
                                 acfg.rho, &r.num_poison, &r.poison_trace);
  return r;
}

condense::SyntheticSet poison_with_rho(const LabeledDataset& ds,
                                       const condense::SyntheticSet& s_clean,
                                       const Tensor& init_images,
                                       const condense::CondenseConfig& ccfg,
                                       const nn::GeneratorNet& gen, const ClassPair& pair,
                                       const AttackConfig& acfg, double rho) {
  return recondense_target(ds, s_clean, init_images, ccfg, gen, pair, acfg, rho, nullptr, nullptr);
}

}  // namespace sneakdoor::attack
