#include "zipit/config.hpp"

#include <fstream>
#include <set>

#include "zipit/error.hpp"

namespace zipit {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ConfigError("unknown key '" + (where.empty() ? k : where + "." + k) + "'");
}

template <class T>
void read(const json& j, const char* key, const std::string& where, T& dst) {
    if (!j.contains(key)) return;
    try {
        dst = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("bad value for '" + where + "." + key + "'");
    }
}

Distribution::Kind dist_kind(const std::string& name) {
    if (name == "uniform") return Distribution::Kind::Uniform;
    if (name == "truncated_normal") return Distribution::Kind::TruncatedNormal;
    if (name == "beta") return Distribution::Kind::Beta;
    throw ConfigError("unknown distribution '" + name + "'");
}

std::string dist_name(Distribution::Kind k) {
    switch (k) {
    case Distribution::Kind::Uniform: return "uniform";
    case Distribution::Kind::TruncatedNormal: return "truncated_normal";
    case Distribution::Kind::Beta: return "beta";
    }
    return "?";
}

}  // namespace

RunConfig::RunConfig() {
    for (uint64_t s = 0; s < 20; ++s) theorem.seeds.push_back(s);
}

void RunConfig::validate() const {
    experiment.validate();
    if (stop < kStopPartial) throw ConfigError("zip.stop must be 'full', 'partial' or a non-negative index");
    sweep_kind_from_name(sweep_kind);
    if (theorem_widths.empty()) throw ConfigError("theorem.widths is empty");
    for (size_t i = 0; i < theorem_widths.size(); ++i) {
        if (theorem_widths[i] < 1) throw ConfigError("theorem widths must be positive");
        if (i && theorem_widths[i] <= theorem_widths[i - 1]) throw ConfigError("theorem widths must be increasing");
    }
    if (theorem.d < 1) throw ConfigError("theorem.d must be positive");
    if (theorem.seeds.empty()) throw ConfigError("theorem.seeds is empty");
    if (theorem.probes < 1 || theorem.alpha_points < 2) throw ConfigError("theorem probe or alpha grid too small");
    if (!(theorem.redundancy > 0.0 && theorem.redundancy <= 1.0)) throw ConfigError("theorem.redundancy must lie in (0,1]");
    if (out.empty()) throw ConfigError("out must not be empty");
}

std::string stop_name(int64_t stop) {
    if (stop == kStopFull) return "full";
    if (stop == kStopPartial) return "partial";
    return std::to_string(stop);
}

int64_t parse_stop(const std::string& text) {
    if (text == "full") return kStopFull;
    if (text == "partial") return kStopPartial;
    size_t used = 0;
    int64_t v = -1;
    try {
        v = std::stoll(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || v < 0) throw ConfigError("bad stop '" + text + "'");
    return v;
}

RunConfig parse_run_config(const json& j) {
    RunConfig c;
    check_keys(j, "", {"task", "train", "match", "zip", "sweep", "theorem", "out"});
    auto& e = c.experiment;
    if (j.contains("task")) {
        const json& t = j["task"];
        check_keys(t, "task", {"classes_per_task", "input_dim", "image", "samples_per_class", "test_per_class",
                               "probe_size", "data_seed", "seeds"});
        read(t, "classes_per_task", "task", e.classes_per_task);
        read(t, "input_dim", "task", e.input_dim);
        read(t, "image", "task", e.image);
        read(t, "samples_per_class", "task", e.samples_per_class);
        read(t, "test_per_class", "task", e.test_per_class);
        read(t, "probe_size", "task", e.probe_size);
        read(t, "data_seed", "task", e.data_seed);
        read(t, "seeds", "task", e.seeds);
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        check_keys(t, "train", {"arch", "lr", "epochs", "batch_size", "weight_decay", "momentum"});
        std::string arch = e.train.arch.str();
        read(t, "arch", "train", arch);
        e.train.arch = Arch::parse(arch);
        read(t, "lr", "train", e.train.lr);
        read(t, "epochs", "train", e.train.epochs);
        read(t, "batch_size", "train", e.train.batch_size);
        read(t, "weight_decay", "train", e.train.weight_decay);
        read(t, "momentum", "train", e.train.momentum);
    }
    if (j.contains("match")) {
        const json& t = j["match"];
        check_keys(t, "match", {"algorithm", "alpha", "beta", "repeat_matches", "seed"});
        std::string algo(algorithm_name(e.match.algorithm));
        read(t, "algorithm", "match", algo);
        e.match.algorithm = algorithm_from_name(algo);
        read(t, "alpha", "match", e.match.alpha);
        read(t, "beta", "match", e.match.beta);
        read(t, "repeat_matches", "match", e.match.repeat_matches);
        read(t, "seed", "match", e.match.seed);
    }
    if (j.contains("zip")) {
        const json& t = j["zip"];
        check_keys(t, "zip", {"stop"});
        if (t.contains("stop")) {
            const json& s = t["stop"];
            if (s.is_string()) c.stop = parse_stop(s.get<std::string>());
            else if (s.is_number_integer() && s.get<int64_t>() >= 0) c.stop = s.get<int64_t>();
            else throw ConfigError("bad value for 'zip.stop'");
        }
    }
    if (j.contains("sweep")) {
        const json& t = j["sweep"];
        check_keys(t, "sweep", {"kind", "grid"});
        read(t, "kind", "sweep", c.sweep_kind);
        read(t, "grid", "sweep", c.sweep_grid);
    }
    if (j.contains("theorem")) {
        const json& t = j["theorem"];
        check_keys(t, "theorem", {"widths", "d", "seeds", "redundancy", "probes", "alpha_points", "dist", "sigma",
                                  "beta_a", "beta_b"});
        read(t, "widths", "theorem", c.theorem_widths);
        read(t, "d", "theorem", c.theorem.d);
        read(t, "seeds", "theorem", c.theorem.seeds);
        read(t, "redundancy", "theorem", c.theorem.redundancy);
        read(t, "probes", "theorem", c.theorem.probes);
        read(t, "alpha_points", "theorem", c.theorem.alpha_points);
        std::string dist = dist_name(c.theorem.dist.kind);
        read(t, "dist", "theorem", dist);
        c.theorem.dist.kind = dist_kind(dist);
        read(t, "sigma", "theorem", c.theorem.dist.sigma);
        read(t, "beta_a", "theorem", c.theorem.dist.a);
        read(t, "beta_b", "theorem", c.theorem.dist.b);
    }
    read(j, "out", "", c.out);
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& ex) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + ex.what());
    }
    return parse_run_config(j);
}

json to_json(const RunConfig& c) {
    const auto& e = c.experiment;
    json stop = c.stop >= 0 ? json(c.stop) : json(stop_name(c.stop));
    return {
        {"task",
         {{"classes_per_task", e.classes_per_task},
          {"input_dim", e.input_dim},
          {"image", e.image},
          {"samples_per_class", e.samples_per_class},
          {"test_per_class", e.test_per_class},
          {"probe_size", e.probe_size},
          {"data_seed", e.data_seed},
          {"seeds", e.seeds}}},
        {"train",
         {{"arch", e.train.arch.str()},
          {"lr", e.train.lr},
          {"epochs", e.train.epochs},
          {"batch_size", e.train.batch_size},
          {"weight_decay", e.train.weight_decay},
          {"momentum", e.train.momentum}}},
        {"match",
         {{"algorithm", std::string(algorithm_name(e.match.algorithm))},
          {"alpha", e.match.alpha},
          {"beta", e.match.beta},
          {"repeat_matches", e.match.repeat_matches},
          {"seed", e.match.seed}}},
        {"zip", {{"stop", stop}}},
        {"sweep", {{"kind", c.sweep_kind}, {"grid", c.sweep_grid}}},
        {"theorem",
         {{"widths", c.theorem_widths},
          {"d", c.theorem.d},
          {"seeds", c.theorem.seeds},
          {"redundancy", c.theorem.redundancy},
          {"probes", c.theorem.probes},
          {"alpha_points", c.theorem.alpha_points},
          {"dist", dist_name(c.theorem.dist.kind)},
          {"sigma", c.theorem.dist.sigma},
          {"beta_a", c.theorem.dist.a},
          {"beta_b", c.theorem.dist.b}}},
        {"out", c.out},
    };
}

}  // namespace zipit
