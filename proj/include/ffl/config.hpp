#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ffl/engine.hpp"
#include "ffl/layers.hpp"

namespace ffl {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

enum class Scenario {
    standard_iid,
    permuted_iid,
    standard_noniid,
    permuted_noniid,
    domain_hetero,
};

inline const char* scenario_name(Scenario s) {
    switch (s) {
        case Scenario::standard_iid: return "standard_iid";
        case Scenario::permuted_iid: return "permuted_iid";
        case Scenario::standard_noniid: return "standard_noniid";
        case Scenario::permuted_noniid: return "permuted_noniid";
        case Scenario::domain_hetero: return "domain_hetero";
    }
    return "?";
}

inline const char* matching_name(Matching m) {
    switch (m) {
        case Matching::similarity: return "similarity";
        case Matching::random3: return "random3";
        case Matching::worst3: return "worst3";
    }
    return "?";
}

/// Aggregated validation failure: one entry per violated field, each prefixed
/// with its field path.
struct ConfigError : std::runtime_error {
    std::vector<std::string> errors;
    explicit ConfigError(std::vector<std::string> errs)
        : std::runtime_error(join(errs)), errors(std::move(errs)) {}
    static std::string join(const std::vector<std::string>& errs) {
        std::string out = "invalid configuration:";
        for (const auto& e : errs) out += "\n  " + e;
        return out;
    }
};

struct DatasetConfig {
    std::string kind = "synthetic-blobs";
    std::size_t classes = 10;
    std::size_t examples = 4000;
    std::size_t height = 8, width = 8, depth = 1;
    double noise = 0.3;
    std::string path;
};

struct DomainConfig {
    std::size_t count = 4;
    std::size_t classes_per_domain = 3;
    std::size_t clients_per_domain = 3;
};

struct ProbeSettings {
    std::size_t epochs = 10;
    std::size_t examples = 1024;  // training examples per pairing side
};

struct ExperimentConfig {
    Scenario scenario = Scenario::standard_iid;
    StrategyConfig strategy;
    bool factorized = false;
    std::size_t clients = 8;
    std::size_t local_epochs = 2;
    std::size_t rounds = 1;
    std::size_t batch_size = 32;
    std::size_t eval_batch = 64;
    SgdConfig sgd{0.05, 0.9, 1e-6};
    DatasetConfig dataset;
    DomainConfig domains;
    double dirichlet_alpha = 0.5;
    std::vector<LayerSpec> net;
    std::uint64_t global_seed = 1234;
    std::size_t trials = 3;
    std::vector<Scenario> suite_scenarios;
    std::vector<Strategy> suite_strategies;
    ProbeSettings probe;
    std::string output_dir = "out";
    std::size_t threads = 1;
    bool save_models = false;
    std::string init_scheme = "fan_in_uniform";
    // Whether these came from the file rather than scenario-derived defaults;
    // suite cells re-derive the non-explicit ones per scenario.
    bool share_classifier_explicit = false;
    bool net_explicit = false;

    std::size_t local_classes() const {
        return scenario == Scenario::domain_hetero ? domains.classes_per_domain
                                                   : dataset.classes;
    }
};

namespace cfgdetail {

inline bool parse_scenario(const std::string& s, Scenario& out) {
    for (Scenario v : {Scenario::standard_iid, Scenario::permuted_iid,
                       Scenario::standard_noniid, Scenario::permuted_noniid,
                       Scenario::domain_hetero})
        if (s == scenario_name(v)) {
            out = v;
            return true;
        }
    return false;
}

inline bool parse_strategy(const std::string& s, Strategy& out) {
    for (Strategy v : {Strategy::standalone, Strategy::fedavg, Strategy::fedprox,
                       Strategy::factorized_fl, Strategy::factorized_fl_beta})
        if (s == strategy_name(v)) {
            out = v;
            return true;
        }
    return false;
}

inline bool parse_matching(const std::string& s, Matching& out) {
    for (Matching v : {Matching::similarity, Matching::random3, Matching::worst3})
        if (s == matching_name(v)) {
            out = v;
            return true;
        }
    return false;
}

class Reader {
public:
    Reader(const json& j, std::string prefix, std::vector<std::string>& errors)
        : j_(j), prefix_(std::move(prefix)), errors_(errors) {}

    bool has(const char* key) const { return j_.contains(key); }

    std::string path(const char* key) const {
        return prefix_.empty() ? key : prefix_ + "." + key;
    }

    void fail(const char* key, const std::string& msg) const {
        errors_.push_back(path(key) + ": " + msg);
    }

    template <class T>
    void read_uint(const char* key, T& out, std::uint64_t min_v = 0) {
        if (!j_.contains(key)) return;
        const auto& v = j_.at(key);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
            fail(key, "must be a non-negative integer");
            return;
        }
        const auto u = v.get<std::uint64_t>();
        if (u < min_v) {
            fail(key, "must be >= " + std::to_string(min_v));
            return;
        }
        out = static_cast<T>(u);
    }

    void read_double(const char* key, double& out) {
        if (!j_.contains(key)) return;
        const auto& v = j_.at(key);
        if (!v.is_number()) {
            fail(key, "must be a number");
            return;
        }
        out = v.get<double>();
    }

    void read_bool(const char* key, bool& out) {
        if (!j_.contains(key)) return;
        const auto& v = j_.at(key);
        if (!v.is_boolean()) {
            fail(key, "must be a boolean");
            return;
        }
        out = v.get<bool>();
    }

    void read_string(const char* key, std::string& out) {
        if (!j_.contains(key)) return;
        const auto& v = j_.at(key);
        if (!v.is_string()) {
            fail(key, "must be a string");
            return;
        }
        out = v.get<std::string>();
    }

    void check_known(std::initializer_list<const char*> known) {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            bool found = false;
            for (const char* k : known)
                if (it.key() == k) {
                    found = true;
                    break;
                }
            if (!found) errors_.push_back(path(it.key().c_str()) + ": unknown field");
        }
    }

private:
    const json& j_;
    std::string prefix_;
    std::vector<std::string>& errors_;
};

inline bool parse_layer(const json& j, std::size_t index, LayerSpec& out,
                        std::vector<std::string>& errors) {
    const std::string prefix = "net[" + std::to_string(index) + "]";
    if (!j.is_object()) {
        errors.push_back(prefix + ": must be an object");
        return false;
    }
    Reader r(j, prefix, errors);
    std::string kind;
    r.read_string("kind", kind);
    if (kind == "dense") {
        out = LayerSpec::dense(0, 0);
        r.read_uint("in_dim", out.in_dim, 1);
        r.read_uint("out_dim", out.out_dim, 1);
        if (out.in_dim == 0) r.fail("in_dim", "required for dense layers");
        if (out.out_dim == 0) r.fail("out_dim", "required for dense layers");
        r.check_known({"kind", "in_dim", "out_dim"});
    } else if (kind == "conv2d") {
        out = LayerSpec::conv2d(0, 0, 0, 1);
        r.read_uint("in_channels", out.in_channels, 1);
        r.read_uint("out_channels", out.out_channels, 1);
        r.read_uint("filter_size", out.filter_size, 1);
        r.read_uint("stride", out.stride, 1);
        if (out.in_channels == 0) r.fail("in_channels", "required for conv2d layers");
        if (out.out_channels == 0) r.fail("out_channels", "required for conv2d layers");
        if (out.filter_size == 0) r.fail("filter_size", "required for conv2d layers");
        r.check_known({"kind", "in_channels", "out_channels", "filter_size", "stride"});
    } else if (kind == "relu") {
        out = LayerSpec::relu();
        r.check_known({"kind"});
    } else if (kind == "maxpool2d") {
        out = LayerSpec::maxpool2d(0, 1);
        r.read_uint("filter_size", out.filter_size, 1);
        r.read_uint("stride", out.stride, 1);
        if (out.filter_size == 0) r.fail("filter_size", "required for maxpool2d layers");
        r.check_known({"kind", "filter_size", "stride"});
    } else if (kind == "flatten") {
        out = LayerSpec::flatten();
        r.check_known({"kind"});
    } else {
        errors.push_back(prefix + ".kind: must be one of dense, conv2d, relu, maxpool2d, flatten");
        return false;
    }
    return true;
}

}  // namespace cfgdetail

/// Two-conv desk network sized for the given input geometry and class count.
inline std::vector<LayerSpec> default_desk_net(std::size_t depth, std::size_t height,
                                               std::size_t width, std::size_t classes) {
    std::vector<LayerSpec> net{
        LayerSpec::conv2d(depth, 8, 3, 1),
        LayerSpec::relu(),
        LayerSpec::maxpool2d(2, 2),
        LayerSpec::conv2d(8, 16, 2, 1),
        LayerSpec::relu(),
        LayerSpec::flatten(),
    };
    auto shapes = infer_shapes(net, {depth, height, width});
    net.push_back(LayerSpec::dense(shapes.back()[0], classes));
    return net;
}

/// Parses and validates an experiment configuration, filling every default.
/// check_geometry additionally validates the layer stack against the dataset
/// geometry (skipped for pure cost-formula configs that are never run).
inline ExperimentConfig parse_config(const json& j, bool check_geometry = true) {
    std::vector<std::string> errors;
    ExperimentConfig cfg;
    if (!j.is_object()) throw ConfigError({"config root must be a JSON object"});

    cfgdetail::Reader top(j, "", errors);
    top.check_known({"scenario", "strategy", "rounds", "clients", "local_epochs",
                     "batch_size", "eval_batch", "optimizer", "aggregation",
                     "factorized", "dataset", "domains", "dirichlet_alpha", "net",
                     "global_seed", "trials", "suite", "probe", "output_dir", "threads",
                     "save_models", "init_scheme"});

    // Required fields.
    std::string scenario_str, strategy_str;
    if (!top.has("scenario")) top.fail("scenario", "missing required field");
    if (!top.has("strategy")) top.fail("strategy", "missing required field");
    if (!top.has("rounds")) top.fail("rounds", "missing required field");
    top.read_string("scenario", scenario_str);
    top.read_string("strategy", strategy_str);
    if (!scenario_str.empty() && !cfgdetail::parse_scenario(scenario_str, cfg.scenario))
        top.fail("scenario",
                 "must be one of standard_iid, permuted_iid, standard_noniid, "
                 "permuted_noniid, domain_hetero");
    if (!strategy_str.empty() && !cfgdetail::parse_strategy(strategy_str, cfg.strategy.strategy))
        top.fail("strategy",
                 "must be one of standalone, fedavg, fedprox, factorized_fl, "
                 "factorized_fl_beta");
    cfg.rounds = 0;
    top.read_uint("rounds", cfg.rounds, 1);

    // Scenario-dependent defaults; explicit values win.
    const bool permuted_like = cfg.scenario == Scenario::permuted_iid ||
                               cfg.scenario == Scenario::permuted_noniid ||
                               cfg.scenario == Scenario::domain_hetero;
    cfg.strategy.share_classifier = !permuted_like;
    cfg.factorized = strategy_factorized(cfg.strategy.strategy);

    top.read_uint("local_epochs", cfg.local_epochs, 1);
    top.read_uint("batch_size", cfg.batch_size, 1);
    top.read_uint("eval_batch", cfg.eval_batch, 1);
    top.read_uint("global_seed", cfg.global_seed);
    top.read_uint("trials", cfg.trials, 1);
    top.read_uint("threads", cfg.threads, 1);
    top.read_bool("save_models", cfg.save_models);
    top.read_string("output_dir", cfg.output_dir);
    top.read_string("init_scheme", cfg.init_scheme);
    if (cfg.init_scheme != "fan_in_uniform")
        top.fail("init_scheme", "only \"fan_in_uniform\" is supported");
    top.read_double("dirichlet_alpha", cfg.dirichlet_alpha);
    if (!(cfg.dirichlet_alpha > 0.0)) top.fail("dirichlet_alpha", "must be > 0");
    top.read_bool("factorized", cfg.factorized);

    if (j.contains("optimizer")) {
        cfgdetail::Reader r(j.at("optimizer"), "optimizer", errors);
        r.read_double("learning_rate", cfg.sgd.lr);
        r.read_double("momentum", cfg.sgd.momentum);
        r.read_double("weight_decay", cfg.sgd.weight_decay);
        r.check_known({"learning_rate", "momentum", "weight_decay"});
        if (!(cfg.sgd.lr > 0.0)) r.fail("learning_rate", "must be > 0");
        if (cfg.sgd.momentum < 0.0 || cfg.sgd.momentum >= 1.0)
            r.fail("momentum", "must be in [0, 1)");
        if (cfg.sgd.weight_decay < 0.0) r.fail("weight_decay", "must be >= 0");
    }

    if (j.contains("aggregation")) {
        cfgdetail::Reader r(j.at("aggregation"), "aggregation", errors);
        r.read_double("tau", cfg.strategy.tau);
        r.read_double("epsilon", cfg.strategy.epsilon);
        r.read_double("lambda_sparsity", cfg.strategy.lambda_sparsity);
        r.read_double("prox_mu", cfg.strategy.prox_mu);
        cfg.share_classifier_explicit = j.at("aggregation").contains("share_classifier");
        r.read_bool("share_classifier", cfg.strategy.share_classifier);
        r.read_double("participation_fraction", cfg.strategy.participation_fraction);
        r.read_bool("exclude_zero_sigma", cfg.strategy.exclude_zero_sigma);
        std::string matching;
        r.read_string("matching", matching);
        if (!matching.empty() && !cfgdetail::parse_matching(matching, cfg.strategy.matching))
            r.fail("matching", "must be one of similarity, random3, worst3");
        r.check_known({"tau", "epsilon", "lambda_sparsity", "prox_mu", "share_classifier",
                       "participation_fraction", "exclude_zero_sigma", "matching"});
        if (cfg.strategy.tau < 0.0 || cfg.strategy.tau > 1.0)
            r.fail("tau", "must be in [0, 1]");
        if (!(cfg.strategy.epsilon > 0.0)) r.fail("epsilon", "must be > 0");
        if (cfg.strategy.lambda_sparsity < 0.0) r.fail("lambda_sparsity", "must be >= 0");
        if (cfg.strategy.prox_mu < 0.0) r.fail("prox_mu", "must be >= 0");
        if (!(cfg.strategy.participation_fraction > 0.0) ||
            cfg.strategy.participation_fraction > 1.0)
            r.fail("participation_fraction", "must be in (0, 1]");
    }

    if (j.contains("domains")) {
        cfgdetail::Reader r(j.at("domains"), "domains", errors);
        r.read_uint("count", cfg.domains.count, 1);
        r.read_uint("classes_per_domain", cfg.domains.classes_per_domain, 2);
        r.read_uint("clients_per_domain", cfg.domains.clients_per_domain, 1);
        r.check_known({"count", "classes_per_domain", "clients_per_domain"});
    }

    // Dataset defaults depend on the scenario.
    if (cfg.scenario == Scenario::domain_hetero)
        cfg.dataset.classes = cfg.domains.count * cfg.domains.classes_per_domain;
    if (j.contains("dataset")) {
        cfgdetail::Reader r(j.at("dataset"), "dataset", errors);
        r.read_string("kind", cfg.dataset.kind);
        r.read_uint("classes", cfg.dataset.classes, 2);
        r.read_uint("examples", cfg.dataset.examples, 1);
        r.read_uint("height", cfg.dataset.height, 1);
        r.read_uint("width", cfg.dataset.width, 1);
        r.read_uint("depth", cfg.dataset.depth, 1);
        r.read_double("noise", cfg.dataset.noise);
        r.read_string("path", cfg.dataset.path);
        r.check_known({"kind", "classes", "examples", "height", "width", "depth",
                       "noise", "path"});
        if (cfg.dataset.kind != "synthetic-blobs" && cfg.dataset.kind != "tiny-images")
            r.fail("kind", "must be synthetic-blobs or tiny-images");
        if (cfg.dataset.noise < 0.0) r.fail("noise", "must be >= 0");
        if (cfg.dataset.kind == "tiny-images" && cfg.dataset.path.empty())
            r.fail("path", "required for tiny-images datasets");
    }

    // Client count: explicit, or derived for domain scenarios.
    if (cfg.scenario == Scenario::domain_hetero) {
        cfg.clients = cfg.domains.count * cfg.domains.clients_per_domain;
        std::size_t explicit_clients = cfg.clients;
        top.read_uint("clients", explicit_clients, 1);
        if (explicit_clients != cfg.clients)
            top.fail("clients", "must equal domains.count * domains.clients_per_domain (" +
                                    std::to_string(cfg.clients) + ")");
        if (cfg.dataset.classes != cfg.domains.count * cfg.domains.classes_per_domain)
            errors.push_back(
                "dataset.classes: must equal domains.count * domains.classes_per_domain (" +
                std::to_string(cfg.domains.count * cfg.domains.classes_per_domain) + ")");
    } else {
        top.read_uint("clients", cfg.clients, 1);
    }
    if (cfg.dataset.examples < cfg.clients)
        errors.push_back("dataset.examples: fewer examples than clients");

    // Strategy / parameterization compatibility.
    if (strategy_factorized(cfg.strategy.strategy) && !cfg.factorized)
        top.fail("factorized", "factorized strategies require the factorized parameterization");
    if ((cfg.strategy.strategy == Strategy::fedavg ||
         cfg.strategy.strategy == Strategy::fedprox) &&
        cfg.factorized)
        top.fail("factorized", "fedavg/fedprox operate on plain kernels");

    // Network: explicit list or the derived desk default.
    bool net_given = false;
    if (j.contains("net") && !(j.at("net").is_string() && j.at("net") == "default")) {
        if (!j.at("net").is_array()) {
            errors.push_back("net: must be a layer array or \"default\"");
        } else {
            net_given = true;
            const auto& arr = j.at("net");
            for (std::size_t i = 0; i < arr.size(); ++i) {
                LayerSpec l;
                if (cfgdetail::parse_layer(arr[i], i, l, errors)) cfg.net.push_back(l);
            }
        }
    }
    cfg.net_explicit = net_given;
    if (!net_given && errors.empty()) {
        try {
            cfg.net = default_desk_net(cfg.dataset.depth, cfg.dataset.height,
                                       cfg.dataset.width, cfg.local_classes());
        } catch (const std::invalid_argument& e) {
            errors.push_back(std::string("dataset: too small for the default net (") +
                             e.what() + ")");
        }
    }

    if (j.contains("suite")) {
        cfgdetail::Reader r(j.at("suite"), "suite", errors);
        r.check_known({"scenarios", "strategies"});
        const auto& js = j.at("suite");
        if (js.contains("scenarios")) {
            if (!js.at("scenarios").is_array()) {
                r.fail("scenarios", "must be an array");
            } else {
                for (const auto& s : js.at("scenarios")) {
                    Scenario sc;
                    if (!s.is_string() || !cfgdetail::parse_scenario(s.get<std::string>(), sc))
                        r.fail("scenarios", "invalid scenario name");
                    else
                        cfg.suite_scenarios.push_back(sc);
                }
            }
        }
        if (js.contains("strategies")) {
            if (!js.at("strategies").is_array()) {
                r.fail("strategies", "must be an array");
            } else {
                for (const auto& s : js.at("strategies")) {
                    Strategy st;
                    if (!s.is_string() || !cfgdetail::parse_strategy(s.get<std::string>(), st))
                        r.fail("strategies", "invalid strategy name");
                    else
                        cfg.suite_strategies.push_back(st);
                }
            }
        }
    }
    if (cfg.suite_scenarios.empty()) cfg.suite_scenarios.push_back(cfg.scenario);
    if (cfg.suite_strategies.empty()) cfg.suite_strategies.push_back(cfg.strategy.strategy);

    if (j.contains("probe")) {
        cfgdetail::Reader r(j.at("probe"), "probe", errors);
        r.read_uint("epochs", cfg.probe.epochs, 1);
        r.read_uint("examples", cfg.probe.examples, 2);
        r.check_known({"epochs", "examples"});
    }

    // Geometry: the layer stack must run on the dataset and end at the local
    // class count.
    if (check_geometry && errors.empty()) {
        try {
            auto shapes = infer_shapes(
                cfg.net, {cfg.dataset.depth, cfg.dataset.height, cfg.dataset.width});
            if (shapes.back().size() != 1 || shapes.back()[0] != cfg.local_classes())
                errors.push_back(
                    "net: classifier output " + Tensor::shape_str(shapes.back()) +
                    " does not match class count " + std::to_string(cfg.local_classes()));
        } catch (const std::invalid_argument& e) {
            errors.push_back(std::string("net: ") + e.what());
        }
        if (errors.empty() && strategy_factorized(cfg.strategy.strategy) &&
            trainable_count(cfg.net) < 2)
            errors.push_back("net: factorized strategies need at least two trainable layers");
    }

    if (!errors.empty()) throw ConfigError(std::move(errors));
    return cfg;
}

inline ordered_json layer_to_json(const LayerSpec& l) {
    ordered_json j;
    j["kind"] = layer_kind_name(l.kind);
    switch (l.kind) {
        case LayerKind::dense:
            j["in_dim"] = l.in_dim;
            j["out_dim"] = l.out_dim;
            break;
        case LayerKind::conv2d:
            j["in_channels"] = l.in_channels;
            j["out_channels"] = l.out_channels;
            j["filter_size"] = l.filter_size;
            j["stride"] = l.stride;
            break;
        case LayerKind::maxpool2d:
            j["filter_size"] = l.filter_size;
            j["stride"] = l.stride;
            break;
        default:
            break;
    }
    return j;
}

/// Full normalized echo: every default made explicit, stable key order.
/// Feeding the echo back through parse_config reproduces the same config.
inline ordered_json normalize_config(const ExperimentConfig& cfg) {
    ordered_json j;
    j["scenario"] = scenario_name(cfg.scenario);
    j["strategy"] = strategy_name(cfg.strategy.strategy);
    j["rounds"] = cfg.rounds;
    j["clients"] = cfg.clients;
    j["local_epochs"] = cfg.local_epochs;
    j["batch_size"] = cfg.batch_size;
    j["eval_batch"] = cfg.eval_batch;
    j["optimizer"] = {{"learning_rate", cfg.sgd.lr},
                      {"momentum", cfg.sgd.momentum},
                      {"weight_decay", cfg.sgd.weight_decay}};
    j["aggregation"] = {{"tau", cfg.strategy.tau},
                        {"epsilon", cfg.strategy.epsilon},
                        {"lambda_sparsity", cfg.strategy.lambda_sparsity},
                        {"prox_mu", cfg.strategy.prox_mu},
                        {"share_classifier", cfg.strategy.share_classifier},
                        {"participation_fraction", cfg.strategy.participation_fraction},
                        {"exclude_zero_sigma", cfg.strategy.exclude_zero_sigma},
                        {"matching", matching_name(cfg.strategy.matching)}};
    j["factorized"] = cfg.factorized;
    j["dataset"] = {{"kind", cfg.dataset.kind},       {"classes", cfg.dataset.classes},
                    {"examples", cfg.dataset.examples}, {"height", cfg.dataset.height},
                    {"width", cfg.dataset.width},     {"depth", cfg.dataset.depth},
                    {"noise", cfg.dataset.noise},     {"path", cfg.dataset.path}};
    j["domains"] = {{"count", cfg.domains.count},
                    {"classes_per_domain", cfg.domains.classes_per_domain},
                    {"clients_per_domain", cfg.domains.clients_per_domain}};
    j["dirichlet_alpha"] = cfg.dirichlet_alpha;
    ordered_json net = ordered_json::array();
    for (const auto& l : cfg.net) net.push_back(layer_to_json(l));
    j["net"] = net;
    j["global_seed"] = cfg.global_seed;
    j["trials"] = cfg.trials;
    ordered_json scen = ordered_json::array(), strat = ordered_json::array();
    for (Scenario s : cfg.suite_scenarios) scen.push_back(scenario_name(s));
    for (Strategy s : cfg.suite_strategies) strat.push_back(strategy_name(s));
    j["suite"] = {{"scenarios", scen}, {"strategies", strat}};
    j["probe"] = {{"epochs", cfg.probe.epochs}, {"examples", cfg.probe.examples}};
    j["output_dir"] = cfg.output_dir;
    j["threads"] = cfg.threads;
    j["save_models"] = cfg.save_models;
    j["init_scheme"] = cfg.init_scheme;
    return j;
}

inline ExperimentConfig load_config_file(const std::string& path,
                                         bool check_geometry = true) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("config parse error in " + path + ": " + e.what());
    }
    return parse_config(j, check_geometry);
}

}  // namespace ffl
