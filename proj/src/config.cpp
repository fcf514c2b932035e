#include "magflow/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "magflow/checkin.hpp"
#include "magflow/common.hpp"

namespace magflow {

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::none: return "none";
        case Ablation::no_phase: return "no_phase";
        case Ablation::no_tc: return "no_tc";
        case Ablation::real_mamba: return "real_mamba";
    }
    return "none";
}

Ablation ablation_from_string(const std::string& s) {
    if (s == "none") return Ablation::none;
    if (s == "no_phase") return Ablation::no_phase;
    if (s == "no_tc") return Ablation::no_tc;
    if (s == "real_mamba") return Ablation::real_mamba;
    throw ValidationError("unknown ablation '" + s + "' (none|no_phase|no_tc|real_mamba)");
}

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct Field {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T>
T parse_value(const std::string& key, const std::string& s);

template <>
std::string parse_value<std::string>(const std::string&, const std::string& s) {
    return s;
}
template <>
int parse_value<int>(const std::string& key, const std::string& s) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("config key '" + key + "': cannot parse integer '" + s + "'");
    }
}
template <>
std::uint64_t parse_value<std::uint64_t>(const std::string& key, const std::string& s) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("config key '" + key + "': cannot parse integer '" + s + "'");
    }
}
template <>
double parse_value<double>(const std::string& key, const std::string& s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("config key '" + key + "': cannot parse number '" + s + "'");
    }
}

std::string fmt_double(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

const std::map<std::string, Field>& field_table() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> t;
        auto add_str = [&t](const std::string& key, std::string RunConfig::* mem) {
            t[key] = {[key, mem](RunConfig& c, const std::string& s) { c.*mem = s; },
                      [mem](const RunConfig& c) { return c.*mem; }};
        };
        auto add_int = [&t](const std::string& key, int RunConfig::* mem) {
            t[key] = {[key, mem](RunConfig& c, const std::string& s) { c.*mem = parse_value<int>(key, s); },
                      [mem](const RunConfig& c) { return std::to_string(c.*mem); }};
        };
        auto add_u64 = [&t](const std::string& key, std::uint64_t RunConfig::* mem) {
            t[key] = {[key, mem](RunConfig& c, const std::string& s) { c.*mem = parse_value<std::uint64_t>(key, s); },
                      [mem](const RunConfig& c) { return std::to_string(c.*mem); }};
        };
        auto add_dbl = [&t](const std::string& key, double RunConfig::* mem) {
            t[key] = {[key, mem](RunConfig& c, const std::string& s) { c.*mem = parse_value<double>(key, s); },
                      [mem](const RunConfig& c) { return fmt_double(c.*mem); }};
        };
        add_str("checkins", &RunConfig::checkins);
        add_str("workdir", &RunConfig::workdir);
        add_int("D", &RunConfig::D);
        add_int("time_emb", &RunConfig::time_emb);
        add_int("cat_emb", &RunConfig::cat_emb);
        add_int("layers", &RunConfig::layers);
        add_int("k", &RunConfig::k);
        add_dbl("radius_km", &RunConfig::radius_km);
        add_dbl("sigma_geo_km", &RunConfig::sigma_geo_km);
        add_dbl("alpha", &RunConfig::alpha);
        add_dbl("kappa", &RunConfig::kappa);
        add_int("n_bins", &RunConfig::n_bins);
        add_int("R", &RunConfig::R);
        add_dbl("q", &RunConfig::q);
        add_int("min_poi_visits", &RunConfig::min_poi_visits);
        add_int("min_len", &RunConfig::min_len);
        add_int("max_len", &RunConfig::max_len);
        add_dbl("lr", &RunConfig::lr);
        add_dbl("wd", &RunConfig::wd);
        add_int("batch", &RunConfig::batch);
        add_int("epochs", &RunConfig::epochs);
        add_int("max_steps", &RunConfig::max_steps);
        add_u64("seed", &RunConfig::seed);
        t["ablation"] = {[](RunConfig& c, const std::string& s) { c.ablation = ablation_from_string(s); },
                         [](const RunConfig& c) { return to_string(c.ablation); }};
        add_int("threads", &RunConfig::threads);
        add_int("bench_batch", &RunConfig::bench_batch);
        add_int("bench_warmup", &RunConfig::bench_warmup);
        add_int("bench_iters", &RunConfig::bench_iters);
        add_int("gen_grid", &RunConfig::gen_grid);
        add_int("gen_users", &RunConfig::gen_users);
        add_dbl("gen_asym", &RunConfig::gen_asym);
        add_int("gen_days", &RunConfig::gen_days);
        add_dbl("gen_wander", &RunConfig::gen_wander);
        add_dbl("gen_spacing_km", &RunConfig::gen_spacing_km);
        return t;
    }();
    return table;
}

}  // namespace

void RunConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ValidationError("config: " + msg);
    };
    require(D > 0 && D % 2 == 0, "D must be positive and even");
    require(time_emb > 0, "time_emb must be positive");
    require(cat_emb > 0, "cat_emb must be positive");
    require(layers >= 1, "layers must be >= 1");
    require(k >= 1, "k must be >= 1");
    require(radius_km > 0.0, "radius_km must be positive");
    require(sigma_geo_km > 0.0, "sigma_geo_km must be positive");
    require(alpha > 0.0, "alpha must be positive");
    require(kappa > 0.0, "kappa must be positive");
    require(n_bins == kHourOfWeekBins, "n_bins must be 168 (hour-of-week)");
    require(R >= 1, "R must be >= 1");
    require(q >= 0.0, "q must be >= 0");
    require(min_poi_visits >= 1, "min_poi_visits must be >= 1");
    require(min_len >= 2, "min_len must be >= 2");
    require(max_len >= min_len, "max_len must be >= min_len");
    require(lr >= 0.0, "lr must be >= 0");
    require(wd >= 0.0, "wd must be >= 0");
    require(batch >= 1, "batch must be >= 1");
    require(epochs >= 1, "epochs must be >= 1");
    require(max_steps >= 0, "max_steps must be >= 0");
    require(threads >= 1, "threads must be >= 1");
    require(bench_batch >= 1 && bench_warmup >= 0 && bench_iters >= 1, "bad benchmark protocol");
    require(gen_grid >= 2 && gen_users >= 1, "bad generator grid/users");
    require(gen_asym >= 0.0 && gen_asym <= 1.0, "gen_asym must lie in [0, 1]");
    require(gen_days >= 1, "gen_days must be >= 1");
    require(gen_wander >= 0.0 && gen_wander < 1.0, "gen_wander must lie in [0, 1)");
    require(gen_spacing_km > 0.0, "gen_spacing_km must be positive");
}

std::string RunConfig::canonical_text() const {
    std::ostringstream ss;
    for (const auto& [key, field] : field_table()) ss << key << " = " << field.get(*this) << "\n";
    return ss.str();
}

std::uint64_t RunConfig::model_config_hash(std::uint64_t data_hash) const {
    std::ostringstream ss;
    ss << min_poi_visits << "|" << min_len << "|" << max_len << "|" << D << "|" << time_emb << "|"
       << cat_emb << "|" << layers << "|" << k << "|" << R << "|" << n_bins << "|"
       << (ablation == Ablation::real_mamba ? 1 : 0);
    return fnv1a64(ss.str(), fnv1a64(&data_hash, sizeof(data_hash)));
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError(origin + ":" + std::to_string(lineno) +
                                  ": expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto it = field_table().find(key);
        if (it == field_table().end())
            throw ValidationError(origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        it->second.set(cfg, value);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    RunConfig cfg = parse_config_text(ss.str(), path);
    for (const auto& ov : overrides) apply_override(cfg, ov);
    cfg.validate();
    return cfg;
}

void apply_override(RunConfig& cfg, const std::string& key_eq_value) {
    const auto eq = key_eq_value.find('=');
    if (eq == std::string::npos)
        throw ValidationError("--set expects key=value, got '" + key_eq_value + "'");
    const std::string key = trim(key_eq_value.substr(0, eq));
    const std::string value = trim(key_eq_value.substr(eq + 1));
    auto it = field_table().find(key);
    if (it == field_table().end()) throw ValidationError("--set: unknown key '" + key + "'");
    it->second.set(cfg, value);
}

void write_effective_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write effective config: " + path);
    out << cfg.canonical_text();
}

}  // namespace magflow
