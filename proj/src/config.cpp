#include "affr/config.hpp"

#include <algorithm>
#include <functional>
#include <sstream>

#include "affr/util.hpp"

namespace affr {

namespace {

struct Entry {
  std::string key;
  std::string type;  // int | real | bool | string
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

[[noreturn]] void type_error(const std::string& key, const std::string& type,
                             const std::string& value) {
  throw ConfigError(key, "config key '" + key + "' expects a " + type + " value, got '" + value +
                             "'");
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    type_error(key, "int", value);
  }
}

uint64_t parse_uint(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    type_error(key, "unsigned int", value);
  }
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    type_error(key, "real", value);
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  type_error(key, "bool", value);
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

std::vector<Entry> make_registry() {
  std::vector<Entry> reg;
  auto add_int = [&](const char* key, std::function<int*(RunConfig&)> ref) {
    reg.push_back({key, "int",
                   [ref](const RunConfig& c) {
                     return std::to_string(*ref(const_cast<RunConfig&>(c)));
                   },
                   [key, ref](RunConfig& c, const std::string& v) {
                     *ref(c) = parse_int(key, v);
                   }});
  };
  auto add_real = [&](const char* key, std::function<double*(RunConfig&)> ref) {
    reg.push_back({key, "real",
                   [ref](const RunConfig& c) {
                     return fmt_real(*ref(const_cast<RunConfig&>(c)));
                   },
                   [key, ref](RunConfig& c, const std::string& v) {
                     *ref(c) = parse_real(key, v);
                   }});
  };
  auto add_bool = [&](const char* key, std::function<bool*(RunConfig&)> ref) {
    reg.push_back({key, "bool",
                   [ref](const RunConfig& c) {
                     return fmt_bool(*ref(const_cast<RunConfig&>(c)));
                   },
                   [key, ref](RunConfig& c, const std::string& v) {
                     *ref(c) = parse_bool(key, v);
                   }});
  };
  auto add_string = [&](const char* key, std::function<std::string*(RunConfig&)> ref) {
    reg.push_back({key, "string",
                   [ref](const RunConfig& c) { return *ref(const_cast<RunConfig&>(c)); },
                   [ref](RunConfig& c, const std::string& v) { *ref(c) = v; }});
  };

  add_int("model.dim", [](RunConfig& c) { return &c.model.dim; });
  add_int("model.heads", [](RunConfig& c) { return &c.model.heads; });
  add_int("model.n_max", [](RunConfig& c) { return &c.model.n_max; });
  add_int("model.n_pred", [](RunConfig& c) { return &c.model.n_pred; });
  add_int("model.vocab_size", [](RunConfig& c) { return &c.model.vocab_size; });
  add_int("model.patch", [](RunConfig& c) { return &c.model.patch; });
  add_int("model.text_layers", [](RunConfig& c) { return &c.model.text_layers; });
  add_int("model.vis_layers", [](RunConfig& c) { return &c.model.vis_layers; });
  add_int("model.enc_layers", [](RunConfig& c) { return &c.model.enc_layers; });
  add_int("model.dec_layers", [](RunConfig& c) { return &c.model.dec_layers; });
  add_int("model.ffn_mult", [](RunConfig& c) { return &c.model.ffn_mult; });
  add_int("model.align_dim", [](RunConfig& c) { return &c.model.align_dim; });
  add_int("model.mask_dim", [](RunConfig& c) { return &c.model.mask_dim; });
  add_bool("model.use_bi_fusion", [](RunConfig& c) { return &c.model.use_bi_fusion; });
  add_bool("model.use_verb_attention", [](RunConfig& c) { return &c.model.use_verb_attention; });
  add_bool("model.decoder_self_attention",
           [](RunConfig& c) { return &c.model.decoder_self_attention; });

  add_real("loss.l1", [](RunConfig& c) { return &c.loss.l1; });
  add_real("loss.giou", [](RunConfig& c) { return &c.loss.giou; });
  add_real("loss.dice", [](RunConfig& c) { return &c.loss.dice; });
  add_real("loss.focal", [](RunConfig& c) { return &c.loss.focal; });
  add_real("loss.token", [](RunConfig& c) { return &c.loss.token; });
  add_real("loss.align", [](RunConfig& c) { return &c.loss.align; });
  add_real("loss.cluster", [](RunConfig& c) { return &c.loss.cluster; });
  add_real("loss.binary", [](RunConfig& c) { return &c.loss.binary; });
  add_real("loss.focal_alpha", [](RunConfig& c) { return &c.loss.focal_alpha; });
  add_real("loss.focal_gamma", [](RunConfig& c) { return &c.loss.focal_gamma; });
  add_real("loss.tau", [](RunConfig& c) { return &c.loss.tau; });
  add_bool("loss.token_log_form", [](RunConfig& c) { return &c.loss.token_log_form; });

  add_string("optim.kind", [](RunConfig& c) { return &c.optim.kind; });
  add_real("optim.lr", [](RunConfig& c) { return &c.optim.lr; });
  add_real("optim.text_lr", [](RunConfig& c) { return &c.optim.text_lr; });
  add_int("optim.batch", [](RunConfig& c) { return &c.optim.batch; });
  add_int("optim.epochs", [](RunConfig& c) { return &c.optim.epochs; });
  add_int("optim.distill_batch", [](RunConfig& c) { return &c.optim.distill_batch; });
  add_int("optim.distill_epochs", [](RunConfig& c) { return &c.optim.distill_epochs; });

  add_int("distill.n_mem", [](RunConfig& c) { return &c.distill.n_mem; });
  add_int("distill.k", [](RunConfig& c) { return &c.distill.k; });
  add_bool("distill.frozen_teacher", [](RunConfig& c) { return &c.distill.frozen_teacher; });
  add_int("distill.recluster_every", [](RunConfig& c) { return &c.distill.recluster_every; });

  add_int("data.train_per_task", [](RunConfig& c) { return &c.data.train_per_task; });
  add_int("data.test_per_task", [](RunConfig& c) { return &c.data.test_per_task; });
  add_real("data.frac_mcmo", [](RunConfig& c) { return &c.data.frac_mcmo; });
  add_real("data.frac_scmo", [](RunConfig& c) { return &c.data.frac_scmo; });
  add_real("data.frac_scso", [](RunConfig& c) { return &c.data.frac_scso; });
  add_real("data.frac_others", [](RunConfig& c) { return &c.data.frac_others; });
  add_int("data.canvas", [](RunConfig& c) { return &c.data.canvas; });
  add_bool("data.augment", [](RunConfig& c) { return &c.data.augment; });

  add_string("prompt.pronoun", [](RunConfig& c) { return &c.prompt.pronoun; });

  add_real("eval.threshold", [](RunConfig& c) { return &c.eval.threshold; });
  add_string("eval.sweep", [](RunConfig& c) { return &c.eval.sweep; });

  reg.push_back({"seed", "int",
                 [](const RunConfig& c) { return std::to_string(c.seed); },
                 [](RunConfig& c, const std::string& v) { c.seed = parse_uint("seed", v); }});
  add_string("out", [](RunConfig& c) { return &c.out; });

  std::sort(reg.begin(), reg.end(), [](const Entry& a, const Entry& b) { return a.key < b.key; });
  return reg;
}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> reg = make_registry();
  return reg;
}

void check_positive(const char* key, int v) {
  if (v < 1) throw ConfigError(key, std::string("config key '") + key + "' must be >= 1");
}

void check_fraction(const char* key, double v) {
  if (!(v >= 0 && v <= 1))
    throw ConfigError(key, std::string("config key '") + key + "' must lie in [0,1]");
}

// Cross-field validation; the reported key is the one to fix.
void validate(const RunConfig& c) {
  check_positive("model.dim", c.model.dim);
  check_positive("model.heads", c.model.heads);
  if (c.model.dim % c.model.heads != 0)
    throw ConfigError("model.heads", "config key 'model.heads' must divide model.dim");
  check_positive("model.n_max", c.model.n_max);
  check_positive("model.n_pred", c.model.n_pred);
  check_positive("model.patch", c.model.patch);
  check_positive("model.dec_layers", c.model.dec_layers);
  check_positive("model.align_dim", c.model.align_dim);
  check_positive("model.mask_dim", c.model.mask_dim);
  if (c.optim.kind != "adam")
    throw ConfigError("optim.kind", "config key 'optim.kind' supports only 'adam'");
  if (!(c.optim.lr > 0)) throw ConfigError("optim.lr", "config key 'optim.lr' must be positive");
  if (c.optim.text_lr < 0)
    throw ConfigError("optim.text_lr", "config key 'optim.text_lr' must be >= 0");
  check_positive("optim.batch", c.optim.batch);
  check_positive("optim.epochs", c.optim.epochs);
  check_positive("optim.distill_batch", c.optim.distill_batch);
  check_positive("optim.distill_epochs", c.optim.distill_epochs);
  check_positive("distill.n_mem", c.distill.n_mem);
  check_positive("distill.k", c.distill.k);
  if (c.distill.k > c.distill.n_mem)
    throw ConfigError("distill.k", "config key 'distill.k' must not exceed distill.n_mem");
  check_positive("distill.recluster_every", c.distill.recluster_every);
  check_positive("data.train_per_task", c.data.train_per_task);
  check_positive("data.test_per_task", c.data.test_per_task);
  check_fraction("data.frac_mcmo", c.data.frac_mcmo);
  check_fraction("data.frac_scmo", c.data.frac_scmo);
  check_fraction("data.frac_scso", c.data.frac_scso);
  check_fraction("data.frac_others", c.data.frac_others);
  double fsum = c.data.frac_mcmo + c.data.frac_scmo + c.data.frac_scso + c.data.frac_others;
  if (std::abs(fsum - 1.0) > 1e-9)
    throw ConfigError("data.frac_mcmo", "composition fractions must sum to 1");
  check_positive("data.canvas", c.data.canvas);
  if (c.data.canvas % c.model.patch != 0)
    throw ConfigError("data.canvas", "config key 'data.canvas' must be a multiple of model.patch");
  if (c.prompt.pronoun.empty() || c.prompt.pronoun.find(' ') != std::string::npos)
    throw ConfigError("prompt.pronoun", "config key 'prompt.pronoun' must be a single word");
  check_fraction("eval.threshold", c.eval.threshold);
  (void)const_cast<RunConfig&>(c).sweep_thresholds();
}

}  // namespace

std::string RunConfig::canonical() const {
  std::ostringstream os;
  for (const Entry& e : registry()) os << e.key << " = " << e.get(*this) << "\n";
  return os.str();
}

std::string RunConfig::hash() const { return sha256_hex(canonical()); }

std::vector<double> RunConfig::sweep_thresholds() const {
  std::vector<double> out;
  std::string token;
  std::istringstream in(eval.sweep);
  while (std::getline(in, token, ',')) {
    if (token.empty()) continue;
    out.push_back(parse_real("eval.sweep", token));
  }
  if (out.empty()) throw ConfigError("eval.sweep", "config key 'eval.sweep' lists no thresholds");
  for (size_t i = 1; i < out.size(); ++i)
    if (out[i] < out[i - 1])
      throw ConfigError("eval.sweep", "config key 'eval.sweep' must ascend");
  return out;
}

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const Entry& e : registry()) {
    if (e.key == key) {
      e.set(cfg, value);
      return;
    }
  }
  throw ConfigError(key, "unknown config key '" + key + "'");
}

RunConfig parse_config_text(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    return s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(t, "config line " + std::to_string(line_no) + " is not 'key = value'");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError(t, "config line " + std::to_string(line_no) + " has an empty key");
    apply_config_entry(base, key, value);
  }
  validate(base);
  return base;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  return parse_config_text(read_text_file(path), std::move(base));
}

}  // namespace affr
