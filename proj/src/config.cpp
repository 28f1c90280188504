#include "sneakdoor/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "sneakdoor/errors.hpp"
#include "sneakdoor/tensor_io.hpp"

namespace sneakdoor::cli {

Profile profile_from_name(const std::string& name) {
  if (name == "desk") return Profile::desk;
  if (name == "paper") return Profile::paper;
  throw ConfigError("unknown profile '" + name + "' (desk | paper)");
}

std::string profile_name(Profile p) { return p == Profile::desk ? "desk" : "paper"; }

RunConfig default_config(Profile profile, std::uint64_t seed) {
  RunConfig cfg;
  cfg.profile = profile;
  cfg.seed = seed;
  cfg.dataset.blobs.num_classes = 4;
  cfg.dataset.blobs.per_class = 250;
  cfg.dataset.blobs.shape = {1, 16, 16};
  cfg.dataset.blobs.spread = 0.4;

  cfg.condense.ipc = 10;
  cfg.condense.iterations = 1000;
  cfg.condense.synthesis_lr = 0.05;
  cfg.condense.batch_real = 64;

  cfg.attack.generator_lr = 1.3e-4;
  cfg.attack.stop_fooling_rate = 0.15;
  cfg.attack.surrogate_train.epochs = 300;
  cfg.attack.surrogate_train.batch_size = 256;
  cfg.eval.train.epochs = 300;
  cfg.eval.train.batch_size = 256;

  if (profile == Profile::paper) {
    const auto arch = cfg.condense.encoder;
    cfg.condense = condense::paper_defaults();
    cfg.condense.encoder = arch;
    cfg.attack.generator_lr = 5e-5;
    cfg.attack.stop_fooling_rate = 1.0;
    cfg.attack.surrogate_train.epochs = 50;
    cfg.eval.train.epochs = 10000;
  }
  derive_seeds(cfg);
  return cfg;
}

void derive_seeds(RunConfig& cfg) {
  cfg.dataset.blobs.seed = attack::stage_seed(cfg.seed, "dataset");
  cfg.dataset.split_seed = attack::stage_seed(cfg.seed, "split");
  cfg.condense.seed = attack::stage_seed(cfg.seed, "condense");
  cfg.attack.seed = attack::stage_seed(cfg.seed, "attack");
  cfg.eval.train.seed = attack::stage_seed(cfg.seed, "downstream");
  cfg.bounds.seed = attack::stage_seed(cfg.seed, "bounds");
}

namespace {

std::size_t line_at(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(offset), '\n'));
}

// Line of the first `"key":` at or after `from`; 0 when absent.
std::size_t key_line(std::string_view text, std::string_view key, std::size_t from = 0) {
  const std::string needle = "\"" + std::string(key) + "\"";
  std::size_t pos = text.find(needle, from);
  while (pos != std::string_view::npos) {
    std::size_t after = pos + needle.size();
    while (after < text.size() && (text[after] == ' ' || text[after] == '\t' || text[after] == '\n' ||
                                   text[after] == '\r')) {
      ++after;
    }
    if (after < text.size() && text[after] == ':') return line_at(text, pos);
    pos = text.find(needle, pos + 1);
  }
  return 0;
}

class Locator {
 public:
  Locator(std::string_view text, std::string_view origin) : text_(text), origin_(origin) {}

  [[noreturn]] void fail(std::string_view section, const std::string& message) const {
    std::size_t from = 0;
    std::size_t line = 0;
    if (!section.empty()) {
      line = key_line(text_, section);
      const std::string needle = "\"" + std::string(section) + "\"";
      const auto p = text_.find(needle);
      if (p != std::string_view::npos) from = p;
    }
    // Point at the offending key when the message names one; quoted names
    // are the most specific.
    std::vector<std::string> candidates = quoted(message);
    for (auto& w : words(message)) candidates.push_back(std::move(w));
    for (const auto& word : candidates) {
      if (word == section) continue;
      if (const auto l = key_line(text_, word, from); l != 0) {
        line = l;
        break;
      }
    }
    std::ostringstream os;
    os << origin_;
    if (line != 0) os << ":" << line;
    os << ": " << message;
    throw ConfigError(os.str());
  }

 private:
  static std::vector<std::string> quoted(const std::string& message) {
    std::vector<std::string> out;
    std::size_t pos = message.find('\'');
    while (pos != std::string::npos) {
      const auto end = message.find('\'', pos + 1);
      if (end == std::string::npos) break;
      out.push_back(message.substr(pos + 1, end - pos - 1));
      pos = message.find('\'', end + 1);
    }
    return out;
  }

  static std::vector<std::string> words(const std::string& message) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : message) {
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') {
        cur += c;
      } else {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  }

  std::string_view text_;
  std::string_view origin_;
};

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                    const std::string& where) {
  if (!j.is_object()) throw ArgumentError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ArgumentError("unknown key '" + key + "' in " + where);
  }
}

void reject_seed(const nlohmann::json& j, const std::string& where) {
  if (j.is_object() && j.contains("seed")) {
    throw ArgumentError("'seed' is not allowed in " + where +
                        "; stage seeds derive from the top-level seed");
  }
}

void parse_dataset(const nlohmann::json& j, DatasetSpec& d, const std::filesystem::path& base) {
  reject_unknown(j,
                 {"kind", "name", "num_classes", "per_class", "shape", "spread", "template_grid",
                  "template_low", "template_high", "path", "train_fraction"},
                 "dataset");
  d.kind = j.value("kind", d.kind);
  d.name = j.value("name", d.name);
  d.train_fraction = j.value("train_fraction", d.train_fraction);
  if (!(d.train_fraction > 0.0 && d.train_fraction < 1.0)) {
    throw ArgumentError("train_fraction must lie in (0, 1)");
  }
  if (d.kind == "blobs") {
    auto& b = d.blobs;
    b.num_classes = j.value("num_classes", b.num_classes);
    b.per_class = j.value("per_class", b.per_class);
    b.spread = j.value("spread", b.spread);
    b.template_grid = j.value("template_grid", b.template_grid);
    b.template_low = j.value("template_low", b.template_low);
    b.template_high = j.value("template_high", b.template_high);
    if (j.contains("shape")) {
      const auto s = j.at("shape").get<std::vector<std::size_t>>();
      if (s.size() != 3) throw ArgumentError("shape must be [channels, height, width]");
      b.shape = {s[0], s[1], s[2]};
    }
    if (b.num_classes < 2) throw ArgumentError("num_classes must be >= 2");
    if (b.per_class < 2) throw ArgumentError("per_class must be >= 2");
    if (!(b.spread > 0.0)) throw ArgumentError("spread must be > 0");
    if (j.contains("path")) throw ArgumentError("path is only valid for kind 'manifest'");
  } else if (d.kind == "manifest") {
    if (!j.contains("path")) throw ArgumentError("kind 'manifest' needs a path");
    std::filesystem::path p = j.at("path").get<std::string>();
    d.manifest = p.is_relative() ? base / p : p;
  } else {
    throw ArgumentError("dataset kind must be 'blobs' or 'manifest', got '" + d.kind + "'");
  }
}

void parse_eval(const nlohmann::json& j, EvalConfig& e) {
  reject_unknown(j,
                 {"arch", "train", "is_dagger_mode", "naive_patch_size", "naive_patch_value",
                  "ssim_window", "method"},
                 "eval");
  if (j.contains("arch")) {
    nlohmann::json merged = nn::to_json(e.arch);
    reject_unknown(j.at("arch"), {"kind", "widths", "activation", "input"}, "eval.arch");
    merged.update(j.at("arch"));
    e.arch = nn::architecture_from_json(merged);
  }
  if (j.contains("train")) {
    reject_seed(j.at("train"), "eval.train");
    e.train = attack::train_config_from_json(j.at("train"), e.train);
  }
  if (j.contains("is_dagger_mode")) {
    e.is_dagger_mode = metrics::is_dagger_mode_from_name(j.at("is_dagger_mode").get<std::string>());
  }
  e.naive_patch_size = j.value("naive_patch_size", e.naive_patch_size);
  e.naive_patch_value = j.value("naive_patch_value", e.naive_patch_value);
  e.ssim_window = j.value("ssim_window", e.ssim_window);
  e.method = j.value("method", e.method);
  if (e.train.epochs < 0) throw ArgumentError("epochs must be >= 0");
  if (e.train.batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (e.ssim_window < 1) throw ArgumentError("ssim_window must be >= 1");
}

void parse_bounds(const nlohmann::json& j, BoundsConfig& b) {
  reject_unknown(j, {"rho_sweep", "encoder_seeds", "lambda", "lipschitz_pairs"}, "bounds");
  if (j.contains("rho_sweep")) b.rho_sweep = j.at("rho_sweep").get<std::vector<double>>();
  b.encoder_seeds = j.value("encoder_seeds", b.encoder_seeds);
  b.lambda = j.value("lambda", b.lambda);
  b.lipschitz_pairs = j.value("lipschitz_pairs", b.lipschitz_pairs);
  if (b.rho_sweep.empty()) throw ArgumentError("rho_sweep must not be empty");
  for (double r : b.rho_sweep) {
    if (!(r >= 0.0 && r <= 1.0)) throw ArgumentError("rho_sweep entries must lie in [0, 1]");
  }
  if (b.encoder_seeds < 1) throw ArgumentError("encoder_seeds must be >= 1");
  if (b.lipschitz_pairs < 1) throw ArgumentError("lipschitz_pairs must be >= 1");
}

ImageShape dataset_shape(const DatasetSpec& d) {
  if (d.kind == "manifest") {
    try {
      return read_manifest(d.manifest).shape;
    } catch (const std::exception& e) {
      throw ArgumentError(std::string("cannot read dataset manifest: ") + e.what());
    }
  }
  return d.blobs.shape;
}

// Checks or fills an architecture's input shape.
void bind_input(nn::Architecture& arch, const nlohmann::json* section, ImageShape shape,
                const char* what) {
  if (section && section->contains("input") && !(arch.input == shape)) {
    throw ArgumentError(std::string(what) + " input does not match the dataset shape");
  }
  arch.input = shape;
  nn::validate(arch);
}

}  // namespace

RunConfig parse_config(std::string_view text, std::string_view origin,
                       std::optional<Profile> profile, std::optional<std::uint64_t> seed_override) {
  const Locator loc(text, origin);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::ostringstream os;
    os << origin << ":" << line_at(text, e.byte == 0 ? 0 : e.byte - 1) << ": invalid JSON: "
       << e.what();
    throw ConfigError(os.str());
  }
  if (!j.is_object()) loc.fail("", "config must be a JSON object");
  const std::set<std::string> known{"seed", "profile", "dataset", "condense", "attack", "eval", "bounds"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) loc.fail("", "unknown top-level key '" + key + "'");
  }
  if (j.contains("profile")) {
    Profile named = Profile::desk;
    try {
      named = profile_from_name(j.at("profile").get<std::string>());
    } catch (const ConfigError& e) {
      loc.fail("profile", e.what());
    } catch (const nlohmann::json::exception& e) {
      loc.fail("profile", e.what());
    }
    if (profile && *profile != named) loc.fail("profile", "profile in config disagrees with --profile");
    profile = named;
  }
  std::uint64_t seed = 0;
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) loc.fail("seed", "seed must be a non-negative integer");
    seed = j.at("seed").get<std::uint64_t>();
  }
  if (seed_override) seed = *seed_override;
  RunConfig cfg = default_config(profile.value_or(Profile::desk), seed);
  const std::filesystem::path base =
      origin.empty() || origin.front() == '<' ? std::filesystem::path(".")
                                              : std::filesystem::path(origin).parent_path();

  auto section = [&](const char* name, auto&& fn) {
    if (!j.contains(name)) return;
    try {
      fn(j.at(name));
    } catch (const ArgumentError& e) {
      loc.fail(name, std::string(name) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      loc.fail(name, std::string(name) + ": " + e.what());
    } catch (const ConfigError& e) {
      loc.fail(name, std::string(name) + ": " + e.what());
    }
  };

  section("dataset", [&](const nlohmann::json& s) { parse_dataset(s, cfg.dataset, base); });
  section("condense", [&](const nlohmann::json& s) {
    reject_seed(s, "condense");
    cfg.condense = condense::condense_config_from_json(s, cfg.condense);
  });
  section("attack", [&](const nlohmann::json& s) {
    reject_seed(s, "attack");
    if (s.contains("surrogate_train")) reject_seed(s.at("surrogate_train"), "attack.surrogate_train");
    cfg.attack = attack::attack_config_from_json(s, cfg.attack);
  });
  section("eval", [&](const nlohmann::json& s) { parse_eval(s, cfg.eval); });
  section("bounds", [&](const nlohmann::json& s) { parse_bounds(s, cfg.bounds); });
  derive_seeds(cfg);

  // Architectures take the dataset's image shape.
  std::string failing = "dataset";
  try {
    const ImageShape shape = dataset_shape(cfg.dataset);
    auto sub = [&](const char* sec, const char* key) -> const nlohmann::json* {
      if (!j.contains(sec) || !j.at(sec).contains(key)) return nullptr;
      return &j.at(sec).at(key);
    };
    failing = "condense";
    bind_input(cfg.condense.encoder, sub("condense", "encoder"), shape, "condense.encoder");
    failing = "attack";
    bind_input(cfg.attack.surrogate_arch, sub("attack", "surrogate_arch"), shape,
               "attack.surrogate_arch");
    failing = "eval";
    bind_input(cfg.eval.arch, sub("eval", "arch"), shape, "eval.arch");
    if (cfg.eval.naive_patch_size > std::min(shape.height, shape.width)) {
      throw ArgumentError("naive_patch_size does not fit in the image");
    }
    if (cfg.eval.ssim_window > std::min(shape.height, shape.width)) {
      throw ArgumentError("ssim_window is larger than the image");
    }
  } catch (const ArgumentError& e) {
    loc.fail(failing == "dataset" ? "dataset" : failing, e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, std::optional<Profile> profile,
                      std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string(), profile, seed_override);
}

nlohmann::json to_json(const RunConfig& cfg) {
  const auto& d = cfg.dataset;
  nlohmann::json dataset{{"kind", d.kind}, {"name", d.name}, {"train_fraction", d.train_fraction}};
  if (d.kind == "blobs") {
    dataset["num_classes"] = d.blobs.num_classes;
    dataset["per_class"] = d.blobs.per_class;
    dataset["shape"] = {d.blobs.shape.channels, d.blobs.shape.height, d.blobs.shape.width};
    dataset["spread"] = d.blobs.spread;
    dataset["template_grid"] = d.blobs.template_grid;
    dataset["template_low"] = d.blobs.template_low;
    dataset["template_high"] = d.blobs.template_high;
  } else {
    dataset["path"] = d.manifest.generic_string();
  }
  const auto& e = cfg.eval;
  nlohmann::json eval{{"arch", nn::to_json(e.arch)},
                      {"train", attack::train_config_to_json(e.train)},
                      {"is_dagger_mode", metrics::is_dagger_mode_name(e.is_dagger_mode)},
                      {"naive_patch_size", e.naive_patch_size},
                      {"naive_patch_value", e.naive_patch_value},
                      {"ssim_window", e.ssim_window},
                      {"method", e.method}};
  nlohmann::json bounds{{"rho_sweep", cfg.bounds.rho_sweep},
                        {"encoder_seeds", cfg.bounds.encoder_seeds},
                        {"lambda", cfg.bounds.lambda},
                        {"lipschitz_pairs", cfg.bounds.lipschitz_pairs}};
  nlohmann::json c = condense::to_json(cfg.condense);
  c.erase("seed");
  nlohmann::json a = attack::to_json(cfg.attack);
  a.erase("seed");
  return {{"profile", profile_name(cfg.profile)},
          {"seed", cfg.seed},
          {"dataset", dataset},
          {"condense", c},
          {"attack", a},
          {"eval", eval},
          {"bounds", bounds}};
}

nlohmann::json seeds_json(const RunConfig& cfg) {
  return {{"global", cfg.seed},
          {"dataset", cfg.dataset.blobs.seed},
          {"split", cfg.dataset.split_seed},
          {"condense", cfg.condense.seed},
          {"attack", cfg.attack.seed},
          {"surrogate_init", attack::stage_seed(cfg.attack.seed, "surrogate_init")},
          {"surrogate_train", attack::stage_seed(cfg.attack.seed, "surrogate_train")},
          {"generator_init", attack::stage_seed(cfg.attack.seed, "generator_init")},
          {"generator_train", attack::stage_seed(cfg.attack.seed, "generator_train")},
          {"mix", attack::stage_seed(cfg.attack.seed, "mix")},
          {"downstream", cfg.eval.train.seed},
          {"bounds", cfg.bounds.seed}};
}

std::string run_id(const RunConfig& cfg) { return io::hash_hex(to_json(cfg).dump()); }

std::pair<LabeledDataset, LabeledDataset> load_splits(const RunConfig& cfg) {
  const LabeledDataset full = cfg.dataset.kind == "manifest" ? load_dataset(cfg.dataset.manifest)
                                                             : generate_blobs(cfg.dataset.blobs);
  return split(full, cfg.dataset.train_fraction, cfg.dataset.split_seed);
}

}  // namespace sneakdoor::cli
