#include "linlab/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

namespace linlab {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct Entry {
  std::string section, key, value;
  int line = 0;
  std::string path() const { return section.empty() ? key : section + "." + key; }
};

std::vector<Entry> read_ini(const std::string& text) {
  std::vector<Entry> out;
  std::istringstream in(text);
  std::string line, section;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    const std::string t = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (t.empty()) continue;
    if (t.front() == '[') {
      check(t.back() == ']' && t.size() > 2,
            "config: bad section header at line " + std::to_string(lineno));
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    check(eq != std::string::npos,
          "config: expected key = value at line " + std::to_string(lineno));
    Entry e;
    e.section = section;
    e.key = trim(t.substr(0, eq));
    e.value = trim(t.substr(eq + 1));
    e.line = lineno;
    check(!e.key.empty(), "config: empty key at line " + std::to_string(lineno));
    check(seen.insert(e.path()).second, "config: duplicate key " + e.path());
    out.push_back(std::move(e));
  }
  return out;
}

double num(const Entry& e) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(e.value, &pos);
  } catch (const std::exception&) {
    fail("config: expected number for " + e.path());
  }
  check(trim(e.value.substr(pos)).empty(),
        "config: expected number for " + e.path());
  return v;
}

std::size_t count_of(const Entry& e) {
  const double v = num(e);
  check(v >= 0.0 && v == static_cast<double>(static_cast<std::size_t>(v)),
        "config: expected non-negative integer for " + e.path());
  return static_cast<std::size_t>(v);
}

std::uint64_t u64_of(const Entry& e) {
  try {
    std::size_t pos = 0;
    check(e.value.find('-') == std::string::npos, "bad");  // stoull would wrap
    const std::uint64_t v = std::stoull(e.value, &pos);
    check(trim(e.value.substr(pos)).empty(), "bad");
    return v;
  } catch (const std::exception&) {
    fail("config: expected unsigned integer for " + e.path());
  }
}

bool flag(const Entry& e) {
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  fail("config: expected true/false for " + e.path());
}

std::vector<std::size_t> widths_of(const Entry& e) {
  std::vector<std::size_t> out;
  std::istringstream in(e.value);
  std::string part;
  while (std::getline(in, part, ',')) {
    part = trim(part);
    check(!part.empty(), "config: empty width in " + e.path());
    Entry tmp{e.section, e.key, part, e.line};
    const std::size_t w = count_of(tmp);
    check(w >= 1, "config: widths must be >= 1 in " + e.path());
    out.push_back(w);
  }
  check(!out.empty(), "config: expected width list for " + e.path());
  return out;
}

AttackKind attack_kind_of(const Entry& e) {
  if (e.value == "none") return AttackKind::none;
  if (e.value == "fgsm") return AttackKind::fgsm;
  if (e.value == "pgd") return AttackKind::pgd;
  if (e.value == "nfgsm") return AttackKind::nfgsm;
  fail("config: unknown attack kind '" + e.value + "' for " + e.path());
}

RegKind reg_kind_of(const Entry& e) {
  if (e.value == "none") return RegKind::none;
  if (e.value == "elle") return RegKind::elle;
  if (e.value == "elle_a") return RegKind::elle_a;
  if (e.value == "elle_2p") return RegKind::elle_2p;
  if (e.value == "elle_5pt") return RegKind::elle_5pt;
  if (e.value == "gradalign") return RegKind::gradalign;
  if (e.value == "llr_sq") return RegKind::llr_sq;
  if (e.value == "cure") return RegKind::cure;
  fail("config: unknown regularizer kind '" + e.value + "' for " + e.path());
}

ScheduleKind schedule_kind_of(const Entry& e) {
  if (e.value == "short") return ScheduleKind::short_cyclic;
  if (e.value == "long") return ScheduleKind::long_steps;
  if (e.value == "long_cos") return ScheduleKind::long_cosine;
  fail("config: unknown schedule kind '" + e.value + "' for " + e.path());
}

Activation activation_of(const Entry& e) {
  if (e.value == "relu") return Activation::relu;
  if (e.value == "softplus") return Activation::softplus;
  fail("config: unknown activation '" + e.value + "' for " + e.path());
}

void apply_attack(AttackSpec& a, const Entry& e, bool& eps_set) {
  if (e.key == "kind") a.kind = attack_kind_of(e);
  else if (e.key == "eps") { a.eps = num(e); eps_set = true; }
  else if (e.key == "steps") a.steps = static_cast<int>(count_of(e));
  else if (e.key == "step_size") a.step_size = num(e);
  else if (e.key == "restarts") a.restarts = static_cast<int>(count_of(e));
  else if (e.key == "noise_factor") a.noise_factor = num(e);
  else fail("config: unknown key " + e.path());
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string dataset_id(const DataConfig& d) {
  std::ostringstream os;
  if (d.kind == "synth") {
    os << "synth(d=" << d.d << ",classes=" << d.classes
       << ",train_per_class=" << d.train_per_class
       << ",eval_per_class=" << d.eval_per_class << ",margin=" << fmt(d.margin)
       << ",spread=" << fmt(d.spread) << ")";
  } else {
    os << "idx(" << d.images << "," << d.labels << ";" << d.eval_images << ","
       << d.eval_labels << ";train_n=" << d.train_n << ",eval_n=" << d.eval_n
       << ")";
  }
  return os.str();
}

}  // namespace

ParsedConfig parse_config_text(const std::string& text) {
  ParsedConfig cfg;
  // Defaults the schema echoes back: fgsm at 8/255, PGD-10 eval at the same
  // radius, momentum 0.9, weight decay 5e-4, gamma 0.99.
  cfg.run.attack.eps = 8.0 / 255.0;
  cfg.run.eval_attack.kind = AttackKind::pgd;
  cfg.run.eval_attack.steps = 10;
  cfg.run.eval_attack.eps = 0.0;  // resolved below

  bool train_eps_set = false, eval_eps_set = false;
  for (const Entry& e : read_ini(text)) {
    if (e.section.empty()) {
      if (e.key == "seed") cfg.run.seed = u64_of(e);
      else fail("config: unknown key " + e.path());
    } else if (e.section == "model") {
      if (e.key == "input_dim") cfg.run.model.input_dim = count_of(e);
      else if (e.key == "widths") cfg.run.model.widths = widths_of(e);
      else if (e.key == "classes") cfg.run.model.classes = count_of(e);
      else if (e.key == "activation") cfg.run.model.activation = activation_of(e);
      else fail("config: unknown key " + e.path());
    } else if (e.section == "data") {
      if (e.key == "kind") cfg.data.kind = e.value;
      else if (e.key == "d") cfg.data.d = count_of(e);
      else if (e.key == "classes") cfg.data.classes = count_of(e);
      else if (e.key == "train_per_class") cfg.data.train_per_class = count_of(e);
      else if (e.key == "eval_per_class") cfg.data.eval_per_class = count_of(e);
      else if (e.key == "margin") cfg.data.margin = num(e);
      else if (e.key == "spread") cfg.data.spread = num(e);
      else if (e.key == "images") cfg.data.images = e.value;
      else if (e.key == "labels") cfg.data.labels = e.value;
      else if (e.key == "eval_images") cfg.data.eval_images = e.value;
      else if (e.key == "eval_labels") cfg.data.eval_labels = e.value;
      else if (e.key == "train_n") cfg.data.train_n = count_of(e);
      else if (e.key == "eval_n") cfg.data.eval_n = count_of(e);
      else fail("config: unknown key " + e.path());
    } else if (e.section == "attack") {
      apply_attack(cfg.run.attack, e, train_eps_set);
    } else if (e.section == "regularizer") {
      if (e.key == "kind") cfg.run.reg.kind = reg_kind_of(e);
      else if (e.key == "lambda") cfg.run.reg.lambda = num(e);
      else if (e.key == "gamma") cfg.run.reg.gamma = num(e);
      else if (e.key == "shared_alpha") cfg.run.reg.shared_alpha = flag(e);
      else if (e.key == "clamp_samples") cfg.run.reg.clamp_samples = flag(e);
      else fail("config: unknown key " + e.path());
    } else if (e.section == "schedule") {
      if (e.key == "kind") cfg.run.schedule.kind = schedule_kind_of(e);
      else if (e.key == "lr0") cfg.run.schedule.lr0 = num(e);
      else if (e.key == "epochs") cfg.run.epochs = count_of(e);
      else if (e.key == "batch") cfg.run.batch = count_of(e);
      else if (e.key == "momentum") cfg.run.momentum = num(e);
      else if (e.key == "weight_decay") cfg.run.weight_decay = num(e);
      else fail("config: unknown key " + e.path());
    } else if (e.section == "eval") {
      if (e.key == "kind" || e.key == "eps" || e.key == "steps" ||
          e.key == "step_size" || e.key == "restarts" ||
          e.key == "noise_factor") {
        apply_attack(cfg.run.eval_attack, e, eval_eps_set);
      } else if (e.key == "probe_cadence") cfg.run.probe_cadence = count_of(e);
      else if (e.key == "probe_samples") cfg.run.probe_samples = count_of(e);
      else if (e.key == "probe_slice") cfg.run.probe_slice = count_of(e);
      else if (e.key == "checkpoint_every") cfg.run.checkpoint_every = count_of(e);
      else if (e.key == "co_window") cfg.run.co.window = count_of(e);
      else if (e.key == "co_k_spike") cfg.run.co.k_spike = num(e);
      else if (e.key == "co_rho") cfg.run.co.rho = num(e);
      else fail("config: unknown key " + e.path());
    } else {
      fail("config: unknown section [" + e.section + "]");
    }
  }
  (void)train_eps_set;

  if (!eval_eps_set || cfg.run.eval_attack.eps == 0.0)
    cfg.run.eval_attack.eps = cfg.run.attack.eps;
  cfg.run.schedule.epochs = cfg.run.epochs;
  cfg.run.model.init_seed = cfg.run.seed;
  cfg.run.dataset = dataset_id(cfg.data);

  check(cfg.data.kind == "synth" || cfg.data.kind == "idx",
        "config: data.kind must be synth or idx");
  if (cfg.data.kind == "synth") {
    check(cfg.data.d == cfg.run.model.input_dim,
          "config: data.d must match model.input_dim");
    check(cfg.data.classes == cfg.run.model.classes,
          "config: data.classes must match model.classes");
    check(cfg.data.train_per_class >= 1 && cfg.data.eval_per_class >= 1,
          "config: synth per-class counts must be >= 1");
  } else {
    check(!cfg.data.images.empty(), "config: missing required key data.images");
    check(!cfg.data.labels.empty(), "config: missing required key data.labels");
    check(!cfg.data.eval_images.empty(),
          "config: missing required key data.eval_images");
    check(!cfg.data.eval_labels.empty(),
          "config: missing required key data.eval_labels");
  }
  validate_run_config(cfg.run);
  return cfg;
}

ParsedConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string serialize(const ParsedConfig& cfg) {
  std::ostringstream os;
  os << "seed = " << cfg.run.seed << "\n\n";

  os << "[model]\n";
  os << "input_dim = " << cfg.run.model.input_dim << "\n";
  os << "widths = ";
  for (std::size_t i = 0; i < cfg.run.model.widths.size(); ++i)
    os << (i ? "," : "") << cfg.run.model.widths[i];
  os << "\n";
  os << "classes = " << cfg.run.model.classes << "\n";
  os << "activation = " << name_of(cfg.run.model.activation) << "\n\n";

  os << "[data]\n";
  os << "kind = " << cfg.data.kind << "\n";
  os << "d = " << cfg.data.d << "\n";
  os << "classes = " << cfg.data.classes << "\n";
  os << "train_per_class = " << cfg.data.train_per_class << "\n";
  os << "eval_per_class = " << cfg.data.eval_per_class << "\n";
  os << "margin = " << fmt(cfg.data.margin) << "\n";
  os << "spread = " << fmt(cfg.data.spread) << "\n";
  os << "images = " << cfg.data.images << "\n";
  os << "labels = " << cfg.data.labels << "\n";
  os << "eval_images = " << cfg.data.eval_images << "\n";
  os << "eval_labels = " << cfg.data.eval_labels << "\n";
  os << "train_n = " << cfg.data.train_n << "\n";
  os << "eval_n = " << cfg.data.eval_n << "\n\n";

  const auto attack_block = [&](const AttackSpec& a) {
    os << "kind = " << name_of(a.kind) << "\n";
    os << "eps = " << fmt(a.eps) << "\n";
    os << "steps = " << a.steps << "\n";
    os << "step_size = " << fmt(a.step_size) << "\n";
    os << "restarts = " << a.restarts << "\n";
    os << "noise_factor = " << fmt(a.noise_factor) << "\n";
  };
  os << "[attack]\n";
  attack_block(cfg.run.attack);
  os << "\n[regularizer]\n";
  os << "kind = " << name_of(cfg.run.reg.kind) << "\n";
  os << "lambda = " << fmt(cfg.run.reg.lambda) << "\n";
  os << "gamma = " << fmt(cfg.run.reg.gamma) << "\n";
  os << "shared_alpha = " << (cfg.run.reg.shared_alpha ? "true" : "false") << "\n";
  os << "clamp_samples = " << (cfg.run.reg.clamp_samples ? "true" : "false")
     << "\n\n";

  os << "[schedule]\n";
  os << "kind = " << name_of(cfg.run.schedule.kind) << "\n";
  os << "lr0 = " << fmt(cfg.run.schedule.lr0) << "\n";
  os << "epochs = " << cfg.run.epochs << "\n";
  os << "batch = " << cfg.run.batch << "\n";
  os << "momentum = " << fmt(cfg.run.momentum) << "\n";
  os << "weight_decay = " << fmt(cfg.run.weight_decay) << "\n\n";

  os << "[eval]\n";
  attack_block(cfg.run.eval_attack);
  os << "probe_cadence = " << cfg.run.probe_cadence << "\n";
  os << "probe_samples = " << cfg.run.probe_samples << "\n";
  os << "probe_slice = " << cfg.run.probe_slice << "\n";
  os << "checkpoint_every = " << cfg.run.checkpoint_every << "\n";
  os << "co_window = " << cfg.run.co.window << "\n";
  os << "co_k_spike = " << fmt(cfg.run.co.k_spike) << "\n";
  os << "co_rho = " << fmt(cfg.run.co.rho) << "\n";
  return os.str();
}

std::uint64_t config_hash(const ParsedConfig& cfg) {
  const std::string s = serialize(cfg);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string run_id(const ParsedConfig& cfg) {
  static const char* hex = "0123456789abcdef";
  std::uint64_t h = config_hash(cfg);
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = hex[h & 0xf];
    h >>= 4;
  }
  return s;
}

std::pair<Dataset, Dataset> build_datasets(const DataConfig& data,
                                           std::uint64_t seed) {
  if (data.kind == "synth") {
    const std::size_t total = data.train_per_class + data.eval_per_class;
    const Dataset all = synth_blobs(data.d, data.classes, total, data.margin,
                                    data.spread, seed);
    const std::size_t d = all.dim();
    Tensor xt({data.classes * data.train_per_class, d});
    Tensor xe({data.classes * data.eval_per_class, d});
    std::vector<int> yt, ye;
    std::size_t it = 0, ie = 0;
    for (std::size_t c = 0; c < data.classes; ++c) {
      for (std::size_t k = 0; k < total; ++k) {
        const std::size_t src = c * total + k;
        if (k < data.train_per_class) {
          std::copy_n(all.inputs.data.begin() + src * d, d,
                      xt.data.begin() + (it * d));
          yt.push_back(all.labels[src]);
          ++it;
        } else {
          std::copy_n(all.inputs.data.begin() + src * d, d,
                      xe.data.begin() + (ie * d));
          ye.push_back(all.labels[src]);
          ++ie;
        }
      }
    }
    Dataset train = make_dataset(std::move(xt), std::move(yt), all.classes,
                                 all.name + "_train",
                                 all.provenance + "; train split");
    Dataset eval = make_dataset(std::move(xe), std::move(ye), all.classes,
                                all.name + "_eval",
                                all.provenance + "; eval split");
    return {std::move(train), std::move(eval)};
  }
  check(data.kind == "idx", "build_datasets: unknown data kind " + data.kind);
  Dataset train = load_idx(data.images, data.labels);
  if (data.train_n > 0) train = subset(train, data.train_n, seed);
  Dataset eval = load_idx(data.eval_images, data.eval_labels);
  if (data.eval_n > 0) eval = subset(eval, data.eval_n, seed + 1);
  return {std::move(train), std::move(eval)};
}

const char* name_of(AttackKind k) {
  switch (k) {
    case AttackKind::none: return "none";
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::pgd: return "pgd";
    case AttackKind::nfgsm: return "nfgsm";
  }
  return "?";
}

const char* name_of(RegKind k) {
  switch (k) {
    case RegKind::none: return "none";
    case RegKind::elle: return "elle";
    case RegKind::elle_a: return "elle_a";
    case RegKind::elle_2p: return "elle_2p";
    case RegKind::elle_5pt: return "elle_5pt";
    case RegKind::gradalign: return "gradalign";
    case RegKind::llr_sq: return "llr_sq";
    case RegKind::cure: return "cure";
  }
  return "?";
}

const char* name_of(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::short_cyclic: return "short";
    case ScheduleKind::long_steps: return "long";
    case ScheduleKind::long_cosine: return "long_cos";
  }
  return "?";
}

const char* name_of(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::softplus: return "softplus";
  }
  return "?";
}

}  // namespace linlab
