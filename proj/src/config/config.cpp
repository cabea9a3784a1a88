#include "rapkit/config/config.hpp"

#include <fstream>
#include <set>

#include "rapkit/util/hash.hpp"

namespace rapkit::config {

using nlohmann::json;

namespace {

void require_keys(const json& j, const std::string& where,
                  const std::set<std::string>& allowed) {
  if (!j.is_object()) throw InvalidConfig(where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      throw InvalidConfig("unknown key '" + key + "' in " + where);
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidConfig("bad value for '" + key + "'");
  }
}

template <typename T>
T get_req(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw InvalidConfig(where + " is missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidConfig("bad value for '" + where + "." + key + "'");
  }
}

}  // namespace

std::string to_string(RapMode m) {
  switch (m) {
    case RapMode::off: return "off";
    case RapMode::rap: return "rap";
    default: return "rap-ls";
  }
}

json transform_to_json(const InputTransform& t) {
  struct V {
    json operator()(const IdentityTransform&) const { return {{"type", "identity"}}; }
    json operator()(const DiTransform& d) const {
      return {{"type", "di"}, {"prob", d.prob}};
    }
    json operator()(const SiTransform& s) const { return {{"type", "si"}, {"m", s.m}}; }
    json operator()(const AdmixTransform& a) const {
      return {{"type", "admix"}, {"m1", a.m1}, {"m2", a.m2}, {"eta", a.eta}};
    }
    json operator()(const EotTransform& e) const {
      json j{{"type", "eot"}, {"n_samples", e.n_samples}};
      j["inner"] = e.inner ? transform_to_json(*e.inner) : json{{"type", "identity"}};
      return j;
    }
  };
  return std::visit(V{}, t);
}

InputTransform transform_from_json(const json& j) {
  const auto type = get_req<std::string>(j, "type", "input transform");
  if (type == "identity") {
    require_keys(j, "identity transform", {"type"});
    return IdentityTransform{};
  }
  if (type == "di") {
    require_keys(j, "di transform", {"type", "prob"});
    return DiTransform{get_or<double>(j, "prob", 0.7)};
  }
  if (type == "si") {
    require_keys(j, "si transform", {"type", "m"});
    return SiTransform{get_or<int>(j, "m", 5)};
  }
  if (type == "admix") {
    require_keys(j, "admix transform", {"type", "m1", "m2", "eta"});
    return AdmixTransform{get_or<int>(j, "m1", 5), get_or<int>(j, "m2", 3),
                          get_or<double>(j, "eta", 0.2)};
  }
  if (type == "eot") {
    require_keys(j, "eot transform", {"type", "n_samples", "inner"});
    EotTransform e;
    e.n_samples = get_or<int>(j, "n_samples", 10);
    e.inner = std::make_shared<InputTransform>(
        j.contains("inner") ? transform_from_json(j.at("inner"))
                            : InputTransform{IdentityTransform{}});
    return e;
  }
  throw InvalidConfig("unknown input transform type '" + type + "'");
}

json grad_transform_to_json(const GradTransform& t) {
  if (const auto* ti = std::get_if<TiSmoothTransform>(&t))
    return {{"type", "ti"}, {"kernel_size", ti->kernel_size}};
  const auto& mi = std::get<MiTransform>(t);
  return {{"type", "mi"}, {"mu", mi.mu}};
}

GradTransform grad_transform_from_json(const json& j) {
  const auto type = get_req<std::string>(j, "type", "grad transform");
  if (type == "ti") {
    require_keys(j, "ti transform", {"type", "kernel_size"});
    return TiSmoothTransform{get_or<int>(j, "kernel_size", 5)};
  }
  if (type == "mi") {
    require_keys(j, "mi transform", {"type", "mu"});
    return MiTransform{get_or<double>(j, "mu", 1.0)};
  }
  throw InvalidConfig("unknown grad transform type '" + type + "'");
}

namespace {

DatasetSection parse_dataset(const json& j) {
  DatasetSection d;
  const auto kind = get_or<std::string>(j, "kind", "synthetic");
  if (kind == "synthetic") {
    require_keys(j, "dataset", {"kind", "count", "start", "classes", "resolution",
                                "channels", "noise", "seed"});
    d.kind = DatasetSection::Kind::synthetic;
    d.count = get_or<std::size_t>(j, "count", 200);
    d.start = get_or<std::int64_t>(j, "start", 0);
    d.synthetic.classes = get_or<int>(j, "classes", 10);
    d.synthetic.resolution = get_or<std::size_t>(j, "resolution", 32);
    d.synthetic.channels = get_or<std::size_t>(j, "channels", 3);
    d.synthetic.noise = get_or<double>(j, "noise", 0.10);
    d.synthetic.seed = get_or<std::uint64_t>(j, "seed", 7);
    d.synthetic.validate();
  } else if (kind == "csv") {
    require_keys(j, "dataset", {"kind", "root", "index"});
    d.kind = DatasetSection::Kind::csv;
    d.root = get_req<std::string>(j, "root", "dataset");
    d.index = get_req<std::string>(j, "index", "dataset");
  } else {
    throw InvalidConfig("dataset.kind must be 'synthetic' or 'csv'");
  }
  return d;
}

ToyModelSpec parse_train_spec(const json& j) {
  require_keys(j, "train spec",
               {"name", "architecture", "mlp_hidden", "cnn", "num_classes", "seed"});
  ToyModelSpec s;
  s.name = get_req<std::string>(j, "name", "train spec");
  const auto arch = get_or<std::string>(j, "architecture", "small_cnn");
  if (arch == "mlp")
    s.architecture = ModelArch::mlp;
  else if (arch == "small_cnn")
    s.architecture = ModelArch::small_cnn;
  else
    throw InvalidConfig("unknown architecture '" + arch + "'");
  if (j.contains("mlp_hidden")) s.mlp_hidden = j.at("mlp_hidden").get<std::vector<int>>();
  if (j.contains("cnn")) {
    require_keys(j.at("cnn"), "train spec cnn", {"conv1", "conv2", "hidden"});
    s.cnn.conv1 = get_or<int>(j.at("cnn"), "conv1", 8);
    s.cnn.conv2 = get_or<int>(j.at("cnn"), "conv2", 16);
    s.cnn.hidden = get_or<int>(j.at("cnn"), "hidden", 64);
  }
  s.num_classes = get_or<int>(j, "num_classes", 10);
  s.training_seed = get_req<std::uint64_t>(j, "seed", "train spec");
  return s;
}

}  // namespace

RAPConfig ExperimentConfig::recipe_config(const RecipeSection& r) const {
  RAPConfig cfg = attack;
  if (r.epsilon_n) cfg.epsilon_n = *r.epsilon_n;
  switch (r.rap) {
    case RapMode::off:
      cfg.epsilon_n = 0.0;
      cfg.late_start = cfg.iterations;
      break;
    case RapMode::rap:
      cfg.late_start = 0;
      break;
    case RapMode::rap_ls:
      break;  // keep attack.late_start
  }
  return cfg;
}

PipelineSpec ExperimentConfig::recipe_pipeline(const RecipeSection& r) const {
  return PipelineSpec{r.input_transforms, r.grad_transforms};
}

ExperimentConfig parse_config(const json& j) {
  require_keys(j, "config",
               {"seed", "seeds", "output_dir", "workers", "batch_size", "dataset", "models",
                "attack", "recipes", "ablate", "flatness", "remote", "train"});
  ExperimentConfig c;
  c.seed = get_or<std::uint64_t>(j, "seed", 1);
  c.seeds = get_or<std::vector<std::uint64_t>>(j, "seeds", {c.seed});
  if (c.seeds.empty()) throw InvalidConfig("seeds must not be empty");
  c.output_dir = get_or<std::string>(j, "output_dir", "out");
  c.workers = get_or<int>(j, "workers", 0);
  c.batch_size = get_or<std::size_t>(j, "batch_size", 50);
  if (c.batch_size < 1) throw InvalidConfig("batch_size must be >= 1");

  if (j.contains("dataset")) c.dataset = parse_dataset(j.at("dataset"));

  if (j.contains("models")) {
    const auto& m = j.at("models");
    require_keys(m, "models", {"store", "surrogates", "targets", "ensemble_surrogate"});
    c.models.store = get_or<std::string>(m, "store", "models");
    c.models.surrogates = get_or<std::vector<std::string>>(m, "surrogates", {});
    c.models.targets = get_or<std::vector<std::string>>(m, "targets", {});
    c.models.ensemble_surrogate = get_or<bool>(m, "ensemble_surrogate", false);
  }

  if (j.contains("attack")) {
    const auto& a = j.at("attack");
    require_keys(a, "attack",
                 {"epsilon", "alpha", "iterations", "late_start", "epsilon_n", "alpha_n",
                  "inner_iterations", "loss", "mode", "checkpoints"});
    c.attack.budget.epsilon = get_or<double>(a, "epsilon", 16.0 / 255.0);
    c.attack.alpha = get_or<double>(a, "alpha", 2.0 / 255.0);
    c.attack.iterations = get_or<int>(a, "iterations", 400);
    c.attack.late_start = get_or<int>(a, "late_start", 100);
    c.attack.epsilon_n = get_or<double>(a, "epsilon_n", 16.0 / 255.0);
    c.attack.alpha_n = get_or<double>(a, "alpha_n", 2.0 / 255.0);
    c.attack.inner_iterations = get_or<int>(a, "inner_iterations", 8);
    const auto loss = get_or<std::string>(a, "loss", "ce");
    if (loss == "ce")
      c.attack.loss.kind = LossKind::cross_entropy;
    else if (loss == "logit")
      c.attack.loss.kind = LossKind::logit;
    else
      throw InvalidConfig("attack.loss must be 'ce' or 'logit'");
    const auto mode = get_or<std::string>(a, "mode", "untargeted");
    if (mode == "untargeted")
      c.attack.loss.mode = AttackMode::untargeted;
    else if (mode == "targeted")
      c.attack.loss.mode = AttackMode::targeted;
    else
      throw InvalidConfig("attack.mode must be 'targeted' or 'untargeted'");
    c.attack.checkpoints = get_or<std::vector<int>>(a, "checkpoints", {});
  }
  if (c.attack.checkpoints.empty()) {
    for (const int cp : {10, 100, 200, 300, 400})
      if (cp <= c.attack.iterations) c.attack.checkpoints.push_back(cp);
    if (c.attack.checkpoints.empty() ||
        c.attack.checkpoints.back() != c.attack.iterations)
      c.attack.checkpoints.push_back(c.attack.iterations);
  }
  c.attack.validate();

  if (j.contains("recipes")) {
    if (!j.at("recipes").is_array()) throw InvalidConfig("recipes must be an array");
    for (const auto& rj : j.at("recipes")) {
      require_keys(rj, "recipe",
                   {"name", "rap", "input_transforms", "grad_transforms", "epsilon_n"});
      RecipeSection r;
      r.name = get_req<std::string>(rj, "name", "recipe");
      const auto rap = get_or<std::string>(rj, "rap", "off");
      if (rap == "off")
        r.rap = RapMode::off;
      else if (rap == "rap")
        r.rap = RapMode::rap;
      else if (rap == "rap-ls")
        r.rap = RapMode::rap_ls;
      else
        throw InvalidConfig("recipe.rap must be 'off', 'rap' or 'rap-ls'");
      if (rj.contains("input_transforms"))
        for (const auto& tj : rj.at("input_transforms"))
          r.input_transforms.push_back(transform_from_json(tj));
      if (rj.contains("grad_transforms"))
        for (const auto& tj : rj.at("grad_transforms"))
          r.grad_transforms.push_back(grad_transform_from_json(tj));
      if (rj.contains("epsilon_n")) r.epsilon_n = rj.at("epsilon_n").get<double>();
      if (r.name.empty()) throw InvalidConfig("recipe name must not be empty");
      PipelineSpec{r.input_transforms, r.grad_transforms}.validate();
      c.recipes.push_back(std::move(r));
    }
  }
  for (const auto& r : c.recipes) c.recipe_config(r).validate();

  if (j.contains("ablate")) {
    const auto& aj = j.at("ablate");
    require_keys(aj, "ablate", {"axis", "values", "coupled_step", "recipe"});
    AblateSection ab;
    ab.axis = get_or<std::string>(aj, "axis", "epsilon_n");
    if (ab.axis != "epsilon_n" && ab.axis != "T" && ab.axis != "K_LS")
      throw InvalidConfig("ablate.axis must be one of epsilon_n, T, K_LS");
    ab.values = get_or<std::vector<double>>(aj, "values", {});
    ab.coupled_step = get_or<bool>(aj, "coupled_step", false);
    ab.recipe = get_or<std::string>(aj, "recipe", "");
    c.ablate = std::move(ab);
  }

  if (j.contains("flatness")) {
    const auto& fj = j.at("flatness");
    require_keys(fj, "flatness",
                 {"magnitudes", "n_directions", "through_pipeline", "images"});
    c.flatness.magnitudes = get_or<std::vector<double>>(fj, "magnitudes", {});
    c.flatness.n_directions = get_or<int>(fj, "n_directions", 20);
    c.flatness.through_pipeline = get_or<bool>(fj, "through_pipeline", false);
    c.flatness.images = get_or<std::size_t>(fj, "images", 100);
  }
  if (c.flatness.magnitudes.empty()) {
    for (int i = 0; i <= 10; ++i)
      c.flatness.magnitudes.push_back(double(i) / 10.0 * 16.0 / 255.0);
  }

  if (j.contains("remote")) {
    const auto& rj = j.at("remote");
    require_keys(rj, "remote",
                 {"endpoint", "top_k", "timeout_ms", "max_retries", "backoff_ms",
                  "auth_token_env", "label_map"});
    RemoteSection r;
    r.spec.endpoint = get_req<std::string>(rj, "endpoint", "remote");
    r.spec.top_k = get_or<int>(rj, "top_k", 10);
    r.spec.timeout_ms = get_or<int>(rj, "timeout_ms", 5000);
    r.spec.retry.max_retries = get_or<int>(rj, "max_retries", 2);
    r.spec.retry.backoff_ms = get_or<int>(rj, "backoff_ms", 50);
    r.spec.auth_token_env = get_or<std::string>(rj, "auth_token_env", "");
    if (rj.contains("label_map"))
      for (const auto& [key, value] : rj.at("label_map").items())
        r.label_map[key] = value.get<int>();
    r.spec.validate();
    c.remote = std::move(r);
  }

  if (j.contains("train")) {
    if (!j.at("train").is_array()) throw InvalidConfig("train must be an array");
    for (const auto& tj : j.at("train")) c.train.push_back(parse_train_spec(tj));
  }
  return c;
}

json ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["seeds"] = seeds;
  j["output_dir"] = output_dir.string();
  j["workers"] = workers;
  j["batch_size"] = batch_size;

  json d;
  if (dataset.kind == DatasetSection::Kind::synthetic) {
    d = {{"kind", "synthetic"},       {"count", dataset.count},
         {"start", dataset.start},    {"classes", dataset.synthetic.classes},
         {"resolution", dataset.synthetic.resolution},
         {"channels", dataset.synthetic.channels},
         {"noise", dataset.synthetic.noise},
         {"seed", dataset.synthetic.seed}};
  } else {
    d = {{"kind", "csv"}, {"root", dataset.root.string()}, {"index", dataset.index.string()}};
  }
  j["dataset"] = d;

  j["models"] = {{"store", models.store.string()},
                 {"surrogates", models.surrogates},
                 {"targets", models.targets},
                 {"ensemble_surrogate", models.ensemble_surrogate}};

  j["attack"] = {{"epsilon", attack.budget.epsilon},
                 {"alpha", attack.alpha},
                 {"iterations", attack.iterations},
                 {"late_start", attack.late_start},
                 {"epsilon_n", attack.epsilon_n},
                 {"alpha_n", attack.alpha_n},
                 {"inner_iterations", attack.inner_iterations},
                 {"loss", to_string(attack.loss.kind)},
                 {"mode", to_string(attack.loss.mode)},
                 {"checkpoints", attack.checkpoints}};

  json recipes_json = json::array();
  for (const auto& r : recipes) {
    json rj{{"name", r.name}, {"rap", to_string(r.rap)}};
    json in = json::array(), gr = json::array();
    for (const auto& t : r.input_transforms) in.push_back(transform_to_json(t));
    for (const auto& t : r.grad_transforms) gr.push_back(grad_transform_to_json(t));
    rj["input_transforms"] = in;
    rj["grad_transforms"] = gr;
    if (r.epsilon_n) rj["epsilon_n"] = *r.epsilon_n;
    recipes_json.push_back(std::move(rj));
  }
  j["recipes"] = recipes_json;

  if (ablate) {
    j["ablate"] = {{"axis", ablate->axis},
                   {"values", ablate->values},
                   {"coupled_step", ablate->coupled_step},
                   {"recipe", ablate->recipe}};
  }
  j["flatness"] = {{"magnitudes", flatness.magnitudes},
                   {"n_directions", flatness.n_directions},
                   {"through_pipeline", flatness.through_pipeline},
                   {"images", flatness.images}};
  if (remote) {
    json lm = json::object();
    for (const auto& [key, value] : remote->label_map) lm[key] = value;
    j["remote"] = {{"endpoint", remote->spec.endpoint},
                   {"top_k", remote->spec.top_k},
                   {"timeout_ms", remote->spec.timeout_ms},
                   {"max_retries", remote->spec.retry.max_retries},
                   {"backoff_ms", remote->spec.retry.backoff_ms},
                   {"auth_token_env", remote->spec.auth_token_env},
                   {"label_map", lm}};
  }
  if (!train.empty()) {
    json ts = json::array();
    for (const auto& s : train) {
      json sj{{"name", s.name},
              {"architecture", to_string(s.architecture)},
              {"num_classes", s.num_classes},
              {"seed", s.training_seed}};
      if (s.architecture == ModelArch::mlp)
        sj["mlp_hidden"] = s.mlp_hidden;
      else
        sj["cnn"] = {{"conv1", s.cnn.conv1}, {"conv2", s.cnn.conv2}, {"hidden", s.cnn.hidden}};
      ts.push_back(std::move(sj));
    }
    j["train"] = ts;
  }
  return j;
}

std::string ExperimentConfig::config_hash() const { return hex64(fnv1a64(to_json().dump())); }

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw InvalidConfig("--set expects key.path=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  json* node = &j;
  std::size_t pos = 0;
  for (;;) {
    const auto dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (key.empty()) throw InvalidConfig("--set has an empty path segment");
    if (dot == std::string::npos) {
      json value;
      try {
        value = json::parse(raw);
        if (value.is_object() || value.is_array())
          throw InvalidConfig("--set only overrides scalar fields");
      } catch (const json::exception&) {
        value = raw;  // unquoted strings
      }
      (*node)[key] = value;
      return;
    }
    if (!node->contains(key)) (*node)[key] = json::object();
    node = &(*node)[key];
    pos = dot + 1;
  }
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw InvalidConfig("cannot open config: " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw InvalidConfig("config is not valid JSON: " + std::string(e.what()));
  }
  for (const auto& o : overrides) apply_override(j, o);
  return parse_config(j);
}

}  // namespace rapkit::config
