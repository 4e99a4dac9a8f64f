// SPDX-License-Identifier: Apache-2.0
#include "pairdiff/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "pairdiff/error.hpp"

namespace pairdiff {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError(std::string(key) + ": cannot parse '" + std::string(text) + "'");
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(text) + "'");
}

std::vector<int> parse_int_list(std::string_view key, std::string_view text) {
  std::vector<int> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    out.push_back(parse_number<int>(key, trim(text.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename M>
Field number(std::string key, M RunConfig::*section, int M::*member) {
  return {key, [=](RunConfig& c, std::string_view v) { c.*section.*member = parse_number<int>(key, v); },
          [=](const RunConfig& c) { return format_number(c.*section.*member); }};
}
template <typename M>
Field number(std::string key, M RunConfig::*section, double M::*member) {
  return {key, [=](RunConfig& c, std::string_view v) { c.*section.*member = parse_number<double>(key, v); },
          [=](const RunConfig& c) { return format_number(c.*section.*member); }};
}
template <typename M>
Field number(std::string key, M RunConfig::*section, std::uint64_t M::*member) {
  return {key, [=](RunConfig& c, std::string_view v) { c.*section.*member = parse_number<std::uint64_t>(key, v); },
          [=](const RunConfig& c) { return format_number(c.*section.*member); }};
}
template <typename M>
Field flag(std::string key, M RunConfig::*section, bool M::*member) {
  return {key, [=](RunConfig& c, std::string_view v) { c.*section.*member = parse_bool(key, v); },
          [=](const RunConfig& c) { return std::string(c.*section.*member ? "true" : "false"); }};
}

const std::vector<Field>& fields() {
  using R = RunConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"seed", [](R& c, std::string_view v) { c.seed = parse_number<std::uint64_t>("seed", v); },
                 [](const R& c) { return format_number(c.seed); }});
    f.push_back(number("schedule.T", &R::schedule, &ScheduleConfig::steps));
    f.push_back(number("schedule.beta_start", &R::schedule, &ScheduleConfig::beta_start));
    f.push_back(number("schedule.beta_end", &R::schedule, &ScheduleConfig::beta_end));

    f.push_back(number("denoiser.channels", &R::denoiser, &DenoiserConfig::channels));
    f.push_back(number("denoiser.base_width", &R::denoiser, &DenoiserConfig::base_width));
    f.push_back(number("denoiser.depth", &R::denoiser, &DenoiserConfig::depth));
    f.push_back(number("denoiser.d_model", &R::denoiser, &DenoiserConfig::d_model));
    f.push_back(number("denoiser.d_pos", &R::denoiser, &DenoiserConfig::d_pos));
    f.push_back(number("denoiser.c_f", &R::denoiser, &DenoiserConfig::c_f));
    f.push_back(number("denoiser.n_classes", &R::denoiser, &DenoiserConfig::n_classes));
    f.push_back(number("denoiser.d_text", &R::denoiser, &DenoiserConfig::d_text));
    f.push_back(number("denoiser.text_hidden", &R::denoiser, &DenoiserConfig::text_hidden));
    f.push_back(number("denoiser.time_dim", &R::denoiser, &DenoiserConfig::time_dim));
    f.push_back(number("denoiser.embed_hidden", &R::denoiser, &DenoiserConfig::embed_hidden));
    f.push_back(number("denoiser.groups", &R::denoiser, &DenoiserConfig::groups));

    f.push_back(number("trainer.epochs", &R::trainer, &TrainConfig::epochs));
    f.push_back(number("trainer.batch_size", &R::trainer, &TrainConfig::batch_size));
    f.push_back(number("trainer.lr_init", &R::trainer, &TrainConfig::lr_init));
    f.push_back(number("trainer.lr_min", &R::trainer, &TrainConfig::lr_min));
    f.push_back(number("trainer.warmup_steps", &R::trainer, &TrainConfig::warmup_steps));
    f.push_back(number("trainer.weight_decay", &R::trainer, &TrainConfig::weight_decay));
    f.push_back({"trainer.skip_set",
                 [](R& c, std::string_view v) { c.trainer.skip_set = parse_int_list("trainer.skip_set", v); },
                 [](const R& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.trainer.skip_set.size(); ++i) {
                     s += (i ? "," : "") + std::to_string(c.trainer.skip_set[i]);
                   }
                   return s;
                 }});
    f.push_back(number("trainer.dropout_p", &R::trainer, &TrainConfig::dropout_p));
    f.push_back(number("trainer.seed", &R::trainer, &TrainConfig::seed));
    f.push_back(number("trainer.beta1", &R::trainer, &TrainConfig::beta1));
    f.push_back(number("trainer.beta2", &R::trainer, &TrainConfig::beta2));
    f.push_back(number("trainer.adam_eps", &R::trainer, &TrainConfig::adam_eps));
    f.push_back(number("trainer.grad_clip", &R::trainer, &TrainConfig::grad_clip));
    f.push_back(number("trainer.guidance_p", &R::trainer, &TrainConfig::guidance_p));
    f.push_back(number("trainer.guidance_gamma", &R::trainer, &TrainConfig::guidance_gamma));
    f.push_back(number("trainer.guidance_blur", &R::trainer, &TrainConfig::guidance_blur));
    f.push_back(flag("trainer.anatomical_guidance", &R::trainer, &TrainConfig::anatomical_guidance));
    f.push_back(flag("trainer.paired_frames", &R::trainer, &TrainConfig::paired_frames));
    f.push_back(number("trainer.checkpoint_every", &R::trainer, &TrainConfig::checkpoint_every));

    f.push_back(number("ofg.ddim_steps", &R::ofg, &OFGConfig::ddim_steps));
    f.push_back(number("ofg.gamma", &R::ofg, &OFGConfig::gamma));
    f.push_back(number("ofg.blur_sigma", &R::ofg, &OFGConfig::blur_sigma));
    f.push_back(number("ofg.seed", &R::ofg, &OFGConfig::seed));
    f.push_back(flag("ofg.markovian_baseline", &R::ofg, &OFGConfig::markovian_baseline));
    f.push_back(flag("ofg.literal_guidance", &R::ofg, &OFGConfig::literal_guidance));
    f.push_back(flag("ofg.paired_frames", &R::ofg, &OFGConfig::paired_frames));
    f.push_back(flag("ofg.anatomical_guidance", &R::ofg, &OFGConfig::anatomical_guidance));
    f.push_back(flag("ofg.clip_x0", &R::ofg, &OFGConfig::clip_x0));
    f.push_back(number("ofg.lambda", &R::ofg, &OFGConfig::lambda));

    f.push_back(number("phantom.height", &R::phantom, &PhantomSpec::height));
    f.push_back(number("phantom.width", &R::phantom, &PhantomSpec::width));
    f.push_back(number("phantom.depth_min", &R::phantom, &PhantomSpec::depth_min));
    f.push_back(number("phantom.depth_max", &R::phantom, &PhantomSpec::depth_max));
    f.push_back(number("phantom.n_classes", &R::phantom, &PhantomSpec::n_classes));
    f.push_back(number("phantom.seed", &R::phantom, &PhantomSpec::seed));
    f.push_back(number("phantom.noise_level", &R::phantom, &PhantomSpec::noise_level));
    f.push_back({"phantom.train_frac",
                 [](R& c, std::string_view v) { c.train_frac = parse_number<double>("phantom.train_frac", v); },
                 [](const R& c) { return format_number(c.train_frac); }});
    return f;
  }();
  return table;
}

const Field& find_field(std::string_view key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown key '" + std::string(key) + "'");
}

}  // namespace

void ScheduleConfig::validate() const {
  if (steps < 1) throw ConfigError("schedule.T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("schedule.beta_start and schedule.beta_end must satisfy 0 < beta_start <= beta_end < 1");
  }
}

void RunConfig::validate() const {
  schedule.validate();
  denoiser.validate();
  trainer.validate();
  ofg.validate();
  phantom.validate();
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("phantom.train_frac must lie in (0, 1)");
  if (denoiser.n_classes != phantom.n_classes) {
    throw ConfigError("denoiser.n_classes (" + std::to_string(denoiser.n_classes) + ") != phantom.n_classes (" +
                      std::to_string(phantom.n_classes) + ")");
  }
  if (ofg.ddim_steps > schedule.steps) {
    throw ConfigError("ofg.ddim_steps (" + std::to_string(ofg.ddim_steps) + ") exceeds schedule.T (" +
                      std::to_string(schedule.steps) + ")");
  }
  const int div = 1 << denoiser.depth;
  if (phantom.height % div != 0 || phantom.width % div != 0) {
    throw ConfigError("phantom.height/phantom.width (" + std::to_string(phantom.height) + "x" +
                      std::to_string(phantom.width) + ") not divisible by 2^denoiser.depth (" + std::to_string(div) +
                      ")");
  }
  if (denoiser.channels != 1) throw ConfigError("denoiser.channels must be 1 for phantom data");
  if (ofg.gamma != trainer.guidance_gamma || ofg.blur_sigma != trainer.guidance_blur) {
    throw ConfigError("ofg.gamma/ofg.blur_sigma must match trainer.guidance_gamma/trainer.guidance_blur");
  }
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  find_field(key).set(cfg, trim(value));
}

void set_seed(RunConfig& cfg, std::uint64_t seed) {
  cfg.seed = cfg.trainer.seed = cfg.ofg.seed = cfg.phantom.seed = seed;
}

RunConfig parse_config(std::string_view text, const std::string& source) {
  RunConfig cfg;
  std::set<std::string, std::less<>> seen;
  int lineno = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const auto where = source + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (!seen.insert(std::string(key)).second) throw ConfigError(where + "duplicate key '" + std::string(key) + "'");
    try {
      apply_setting(cfg, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  if (!seen.contains("trainer.seed")) cfg.trainer.seed = cfg.seed;
  if (!seen.contains("ofg.seed")) cfg.ofg.seed = cfg.seed;
  if (!seen.contains("phantom.seed")) cfg.phantom.seed = cfg.seed;
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace pairdiff
