// SPDX-License-Identifier: Apache-2.0
#include "sdrl/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace sdrl {

const char* to_string(StressCondition s) { return s == StressCondition::normal ? "normal" : "exploding"; }
const char* to_string(Arch a) { return a == Arch::full ? "full" : "block"; }
const char* to_string(Coupling c) { return c == Coupling::shared_masks ? "shared_masks" : "independent"; }

namespace {

std::string fmt(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v); // shortest round-trip form
    return std::string(buf, r.ptr);
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: '" + key + "' expects true or false, got '" + v + "'");
}

struct Field {
    const char* key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define SDRL_SIZE(name, member)                                                                                   \
    Field {                                                                                                       \
        name, [](RunConfig& c, const std::string& v) { c.member = static_cast<std::size_t>(to_u64(name, v)); }, \
            [](const RunConfig& c) { return std::to_string(c.member); }                                           \
    }
#define SDRL_REAL(name, member)                                                                  \
    Field {                                                                                      \
        name, [](RunConfig& c, const std::string& v) { c.member = to_double(name, v); },        \
            [](const RunConfig& c) { return fmt(c.member); }                                     \
    }
#define SDRL_ENUM(name, member, parse)                                                          \
    Field {                                                                                     \
        name, [](RunConfig& c, const std::string& v) { c.member = parse(v); },                 \
            [](const RunConfig& c) { return std::string(to_string(c.member)); }                 \
    }

Arch parse_arch(const std::string& s) {
    if (s == "full") return Arch::full;
    if (s == "block") return Arch::block;
    throw ConfigError("unknown arch '" + s + "'");
}

Coupling parse_coupling(const std::string& s) {
    if (s == "shared_masks") return Coupling::shared_masks;
    if (s == "independent") return Coupling::independent;
    throw ConfigError("unknown coupling '" + s + "'");
}

StressCondition parse_condition(const std::string& s) {
    if (s == "normal") return StressCondition::normal;
    if (s == "exploding") return StressCondition::exploding;
    throw ConfigError("unknown stress condition '" + s + "'");
}

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        Field{"task", [](RunConfig& c, const std::string& v) { c.task = v; },
              [](const RunConfig& c) { return c.task; }},
        SDRL_SIZE("task.prompt_len", task_params.prompt_len),
        SDRL_SIZE("task.response_len", task_params.response_len),
        SDRL_SIZE("task.alphabet", task_params.alphabet),
        SDRL_SIZE("task.match_len", task_params.match_len),
        SDRL_SIZE("model.vocab_size", model.vocab_size),
        SDRL_SIZE("model.embed_dim", model.embed_dim),
        SDRL_SIZE("model.max_seq_len", model.max_seq_len),
        SDRL_SIZE("model.block_size", model.block_size),
        SDRL_REAL("model.init_scale", model.init_scale),
        SDRL_REAL("model.head_init_scale", model.head_init_scale),
        SDRL_SIZE("group_size", group_size),
        SDRL_SIZE("prompts_per_step", prompts_per_step),
        SDRL_SIZE("num_inner", num_inner),
        SDRL_SIZE("total_steps", total_steps),
        SDRL_ENUM("estimator", estimator, parse_estimator),
        SDRL_ENUM("clip_space", clip.space, parse_clip_space),
        SDRL_REAL("epsilon", clip.epsilon),
        SDRL_REAL("epsilon_low", clip.epsilon_low),
        SDRL_ENUM("advantage_mode", advantage_mode, parse_advantage_mode),
        SDRL_SIZE("elbo.m", elbo_m),
        SDRL_REAL("elbo.t_floor", t_floor),
        SDRL_ENUM("elbo.policy", ratio_policy, parse_mask_policy),
        SDRL_ENUM("elbo.coupling", coupling, parse_coupling),
        SDRL_ENUM("arch", arch, parse_arch),
        SDRL_SIZE("surrogate.m", surrogate_m),
        SDRL_ENUM("surrogate.policy", surrogate_policy, parse_mask_policy),
        SDRL_REAL("surrogate.sample_clip", sample_clip),
        SDRL_SIZE("decode.steps_per_block", steps_per_block),
        SDRL_REAL("decode.temperature", temperature),
        SDRL_ENUM("optimizer", optimizer.kind, parse_optimizer),
        SDRL_REAL("optimizer.lr", optimizer.lr),
        SDRL_REAL("optimizer.beta1", optimizer.beta1),
        SDRL_REAL("optimizer.beta2", optimizer.beta2),
        SDRL_REAL("optimizer.weight_decay", optimizer.weight_decay),
        SDRL_REAL("optimizer.grad_clip", optimizer.grad_clip),
        Field{"optimizer.lr_decay", [](RunConfig& c, const std::string& v) { c.lr_decay = to_bool("optimizer.lr_decay", v); },
              [](const RunConfig& c) { return std::string(c.lr_decay ? "true" : "false"); }},
        SDRL_ENUM("stress", stress, parse_condition),
        SDRL_REAL("stress.gamma", stress_config.gamma),
        SDRL_REAL("stress.beta", stress_config.beta),
        SDRL_SIZE("stress.t_min", stress_config.t_min),
        SDRL_SIZE("stress.t_max", stress_config.t_max),
        SDRL_ENUM("stress.policy", stress_config.policy, parse_stress_policy),
        Field{"noise.family",
              [](RunConfig& c, const std::string& v) {
                  c.inject_noise = v != "none";
                  if (v == "none") return;
                  if (v == "gaussian") c.noise.family = NoiseFamily::gaussian;
                  else if (v == "laplace") c.noise.family = NoiseFamily::laplace;
                  else if (v == "student_t") c.noise.family = NoiseFamily::student_t;
                  else throw ConfigError("unknown noise family '" + v + "'");
              },
              [](const RunConfig& c) { return std::string(c.inject_noise ? to_string(c.noise.family) : "none"); }},
        SDRL_REAL("noise.scale", noise.scale),
        SDRL_REAL("noise.nu", noise.nu),
        SDRL_SIZE("spike.window", spike_window),
        SDRL_REAL("spike.delta", spike_delta),
        SDRL_REAL("drift.a0", a0),
        SDRL_SIZE("drift.m", drift_m),
        SDRL_SIZE("drift.every", drift_every),
        SDRL_SIZE("max_rejections", max_rejections),
        Field{"seed", [](RunConfig& c, const std::string& v) { c.seed = to_u64("seed", v); },
              [](const RunConfig& c) { return std::to_string(c.seed); }},
        Field{"output_dir", [](RunConfig& c, const std::string& v) { c.output_dir = v; },
              [](const RunConfig& c) { return c.output_dir; }},
    };
    return f;
}

#undef SDRL_SIZE
#undef SDRL_REAL
#undef SDRL_ENUM

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

void RunConfig::validate() const {
    if (group_size < 2) throw ConfigError("group_size must be >= 2");
    if (prompts_per_step == 0) throw ConfigError("prompts_per_step must be >= 1");
    if (num_inner == 0) throw ConfigError("num_inner must be >= 1");
    if (elbo_m == 0 || surrogate_m == 0) throw ConfigError("elbo.m and surrogate.m must be >= 1");
    if (!(t_floor > 0.0 && t_floor <= 1.0)) throw ConfigError("elbo.t_floor must lie in (0, 1]");
    if (!(temperature > 0.0)) throw ConfigError("decode.temperature must be > 0");
    if (steps_per_block == 0) throw ConfigError("decode.steps_per_block must be >= 1");
    if (task_params.response_len == 0 || task_params.response_len % model.block_size != 0)
        throw ConfigError("task.response_len must be a positive multiple of model.block_size");
    if (arch == Arch::block && task_params.prompt_len % model.block_size != 0)
        throw ConfigError("arch = block needs task.prompt_len to be a multiple of model.block_size");
    if (task_params.prompt_len + task_params.response_len > model.max_seq_len)
        throw ConfigError("prompt plus response exceeds model.max_seq_len");
    if (task_params.alphabet + 1 > model.vocab_size)
        throw ConfigError("task.alphabet must be smaller than model.vocab_size (the last id is the mask)");
    if (spike_window == 0) throw ConfigError("spike.window must be >= 1");
    if (!(sample_clip >= 0.0)) throw ConfigError("surrogate.sample_clip must be >= 0");
    if (max_rejections == 0) throw ConfigError("max_rejections must be >= 1");
    clip.validate();
    stress_config.validate();
}

std::vector<std::string> config_keys() {
    std::vector<std::string> k{"version"};
    for (const auto& f : fields()) k.emplace_back(f.key);
    return k;
}

void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
    for (const auto& f : fields())
        if (key == f.key) {
            f.set(c, value);
            return;
        }
    throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig parse_config(const std::string& text) {
    RunConfig c;
    std::istringstream is(text);
    std::string line;
    std::set<std::string> seen;
    bool have_version = false;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (!seen.insert(key).second) throw ConfigError("config: duplicate key '" + key + "'");
        if (key == "version") {
            if (to_u64(key, value) != static_cast<std::uint64_t>(kConfigVersion))
                throw ConfigError("config: unsupported version " + value);
            have_version = true;
            continue;
        }
        set_config_value(c, key, value);
    }
    if (!have_version) throw ConfigError("config: missing version key");
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& c) {
    std::ostringstream os;
    os << "version = " << kConfigVersion << "\n";
    for (const auto& f : fields()) os << f.key << " = " << f.get(c) << "\n";
    return os.str();
}

} // namespace sdrl
