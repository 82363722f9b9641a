#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ffl/config.hpp"
#include "ffl/dataset.hpp"
#include "ffl/engine.hpp"
#include "ffl/probes.hpp"

namespace ffl {

struct World {
    Dataset ds;
    std::vector<Partition> parts;
    std::vector<int> domain_of;  // per client; -1 outside domain scenarios
};

inline Dataset build_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
    if (cfg.dataset.kind == "tiny-images") return load_tiny_images(cfg.dataset.path);
    BlobsParams bp;
    bp.classes = cfg.dataset.classes;
    bp.n = cfg.dataset.examples;
    bp.height = cfg.dataset.height;
    bp.width = cfg.dataset.width;
    bp.depth = cfg.dataset.depth;
    bp.noise = cfg.dataset.noise;
    return make_blobs(bp, seed);
}

/// Instantiates the scenario: dataset, per-client partitions, permutations.
inline World build_world(const ExperimentConfig& cfg, std::uint64_t seed) {
    World w;
    w.ds = build_dataset(cfg, seed);
    switch (cfg.scenario) {
        case Scenario::standard_iid:
        case Scenario::permuted_iid:
            w.parts = split_iid(w.ds, cfg.clients, seed);
            break;
        case Scenario::standard_noniid:
        case Scenario::permuted_noniid:
            w.parts = split_dirichlet(w.ds, cfg.clients, cfg.dirichlet_alpha, seed);
            break;
        case Scenario::domain_hetero: {
            std::vector<DomainSpec> specs;
            for (std::size_t d = 0; d < cfg.domains.count; ++d) {
                DomainSpec s;
                s.domain_name = "domain" + std::to_string(d);
                s.clients_per_domain = cfg.domains.clients_per_domain;
                for (std::size_t c = 0; c < cfg.domains.classes_per_domain; ++c)
                    s.classes.push_back(
                        static_cast<int>(d * cfg.domains.classes_per_domain + c));
                specs.push_back(std::move(s));
            }
            w.parts = split_domains(w.ds, specs, seed);
            break;
        }
    }
    if (cfg.scenario == Scenario::permuted_iid || cfg.scenario == Scenario::permuted_noniid)
        for (auto& p : w.parts) p = permute_labels(p, seed, p.client_id);
    for (const auto& p : w.parts) w.domain_of.push_back(p.domain_id);
    return w;
}

struct RunResult {
    std::vector<RoundReport> reports;
    CostLedger ledger;
    std::vector<int> domain_of;
    double final_mean_test_acc = 0.0;
    double best_val_test_acc = 0.0;  // test accuracy at the best-validation round
};

/// Runs one experiment in memory (no file output).
inline RunResult execute_run(const ExperimentConfig& cfg, std::uint64_t seed) {
    World w = build_world(cfg, seed);
    EngineConfig ec;
    ec.net = cfg.net;
    ec.strategy = cfg.strategy;
    ec.rounds = cfg.rounds;
    ec.local_epochs = cfg.local_epochs;
    ec.batch_size = cfg.batch_size;
    ec.sgd = cfg.sgd;
    ec.seed = seed;
    ec.threads = cfg.threads;
    ec.eval_batch = cfg.eval_batch;
    ec.factorized_standalone =
        cfg.strategy.strategy == Strategy::standalone && cfg.factorized;

    FederatedRun run(w.ds, std::move(w.parts), ec);
    RunResult res;
    res.reports = run.run_all();
    res.ledger = run.ledger();
    res.domain_of = std::move(w.domain_of);
    res.final_mean_test_acc = res.reports.back().mean_test_acc;
    std::size_t best = 0;
    for (std::size_t i = 1; i < res.reports.size(); ++i)
        if (res.reports[i].mean_val_acc > res.reports[best].mean_val_acc) best = i;
    res.best_val_test_acc = res.reports[best].mean_test_acc;
    return res;
}

namespace iodetail {

inline std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << body;
}

inline ordered_json matrix_json(const std::vector<std::vector<double>>& m) {
    ordered_json rows = ordered_json::array();
    for (const auto& r : m) rows.push_back(r);
    return rows;
}

}  // namespace iodetail

/// metrics.csv: one row per round with mean metrics, cumulative transmitted
/// bytes and per-client val/test metrics. LF endings, '.' decimal separator.
inline std::string metrics_csv(const RunResult& res) {
    std::string out = "round,mean_val_acc,mean_val_loss,mean_test_acc,mean_test_loss,cum_bytes";
    const std::size_t k = res.reports.empty() ? 0 : res.reports.front().clients.size();
    for (std::size_t c = 0; c < k; ++c) {
        const std::string p = ",c" + std::to_string(c);
        out += p + "_val_acc" + p + "_val_loss" + p + "_test_acc" + p + "_test_loss";
    }
    out += "\n";
    for (const auto& r : res.reports) {
        out += std::to_string(r.round);
        out += "," + iodetail::fmt6(r.mean_val_acc) + "," + iodetail::fmt6(r.mean_val_loss);
        out += "," + iodetail::fmt6(r.mean_test_acc) + "," + iodetail::fmt6(r.mean_test_loss);
        out += "," + std::to_string(r.cum_bytes);
        for (const auto& c : r.clients) {
            out += "," + iodetail::fmt6(c.val_acc) + "," + iodetail::fmt6(c.val_loss);
            out += "," + iodetail::fmt6(c.test_acc) + "," + iodetail::fmt6(c.test_loss);
        }
        out += "\n";
    }
    return out;
}

inline ordered_json ledger_json(const ExperimentConfig& cfg, const RunResult& res) {
    ordered_json j;
    j["strategy"] = strategy_name(cfg.strategy.strategy);
    j["clients"] = cfg.clients;
    j["rounds"] = cfg.rounds;
    j["bytes_per_param"] = 4;
    ordered_json rounds = ordered_json::array();
    for (const auto& e : res.ledger.rounds) {
        ordered_json r;
        r["round"] = e.round;
        r["s2c_params"] = e.s2c_params;
        r["c2s_params"] = e.c2s_params;
        r["bytes"] = (e.s2c_params + e.c2s_params) * 4;
        rounds.push_back(r);
    }
    j["per_round"] = rounds;
    j["total_bytes"] = res.ledger.total_bytes();
    return j;
}

inline void save_models_bin(const std::filesystem::path& path,
                            const std::vector<ClientState>& clients) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    auto put_u32 = [&](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    auto put_tensor = [&](const Tensor& t) {
        put_u32(static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t e : t.shape) put_u32(static_cast<std::uint32_t>(e));
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    };
    out.write("FFLM", 4);
    put_u32(1);
    put_u32(static_cast<std::uint32_t>(clients.size()));
    for (const auto& c : clients) {
        put_u32(static_cast<std::uint32_t>(c.model.blocks.size()));
        for (const auto& b : c.model.blocks) {
            if (const auto* fp = std::get_if<FactorizedParam>(&b)) {
                out.put(1);
                put_u32(static_cast<std::uint32_t>(fp->reshape_sig.size()));
                for (std::size_t e : fp->reshape_sig) put_u32(static_cast<std::uint32_t>(e));
                put_tensor(fp->u);
                put_tensor(fp->v);
                put_tensor(fp->mu);
            } else {
                out.put(0);
                put_tensor(std::get<Tensor>(b));
            }
        }
    }
}

/// Runs one experiment and writes all artifacts into out_dir:
/// config.normalized.json, metrics.csv, ledger.json, similarity/*.json and
/// matching_frequency.json for factorized runs, final_models.bin on request.
inline RunResult run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    const fs::path out_dir = cfg.output_dir;
    fs::create_directories(out_dir);

    iodetail::write_text(out_dir / "config.normalized.json",
                         normalize_config(cfg).dump(2) + "\n");

    World w = build_world(cfg, cfg.global_seed);
    EngineConfig ec;
    ec.net = cfg.net;
    ec.strategy = cfg.strategy;
    ec.rounds = cfg.rounds;
    ec.local_epochs = cfg.local_epochs;
    ec.batch_size = cfg.batch_size;
    ec.sgd = cfg.sgd;
    ec.seed = cfg.global_seed;
    ec.threads = cfg.threads;
    ec.eval_batch = cfg.eval_batch;
    ec.factorized_standalone =
        cfg.strategy.strategy == Strategy::standalone && cfg.factorized;

    FederatedRun run(w.ds, std::move(w.parts), ec);
    RunResult res;
    res.domain_of = w.domain_of;

    const bool factor_outputs = strategy_factorized(cfg.strategy.strategy) ||
                                ec.factorized_standalone;
    if (factor_outputs) fs::create_directories(out_dir / "similarity");

    for (std::size_t r = 0; r < cfg.rounds; ++r) {
        res.reports.push_back(run.run_round());
        const auto& rep = res.reports.back();
        if (factor_outputs && !rep.similarity.empty()) {
            ordered_json sj;
            sj["round"] = rep.round;
            sj["tau"] = cfg.strategy.tau;
            sj["matrix"] = iodetail::matrix_json(rep.similarity);
            char name[32];
            std::snprintf(name, sizeof name, "round_%04zu.json", rep.round);
            iodetail::write_text(out_dir / "similarity" / name, sj.dump(2) + "\n");
        }
    }
    res.ledger = run.ledger();
    res.final_mean_test_acc = res.reports.back().mean_test_acc;
    std::size_t best = 0;
    for (std::size_t i = 1; i < res.reports.size(); ++i)
        if (res.reports[i].mean_val_acc > res.reports[best].mean_val_acc) best = i;
    res.best_val_test_acc = res.reports[best].mean_test_acc;

    iodetail::write_text(out_dir / "metrics.csv", metrics_csv(res));
    iodetail::write_text(out_dir / "ledger.json", ledger_json(cfg, res).dump(2) + "\n");

    if (factor_outputs) {
        HeatmapSeries series = heatmap_series(res.reports, cfg.strategy.tau);
        MatchingFrequency freq = matching_frequency(series, res.domain_of);
        ordered_json fj;
        fj["tau"] = cfg.strategy.tau;
        fj["rounds"] = series.rounds.size();
        ordered_json count = ordered_json::array();
        for (const auto& row : freq.count) count.push_back(row);
        fj["count"] = count;
        fj["within_domain_fraction"] = freq.within_domain_fraction;
        fj["vacuous"] = freq.vacuous;
        fj["domain_of"] = res.domain_of;
        iodetail::write_text(out_dir / "matching_frequency.json", fj.dump(2) + "\n");
    }

    if (cfg.save_models) save_models_bin(out_dir / "final_models.bin", run.clients());
    return res;
}

struct SuiteCell {
    Scenario scenario{};
    Strategy strategy{};
    bool ok = false;
    std::string error;
    std::vector<double> final_accs;
    std::vector<double> best_val_accs;
    std::uint64_t total_bytes = 0;
};

/// Derives the per-cell config from the base: scenario-dependent defaults are
/// recomputed unless the base config pinned them explicitly.
inline ExperimentConfig cell_config(const ExperimentConfig& base, Scenario sc, Strategy st) {
    ExperimentConfig c = base;
    c.scenario = sc;
    c.strategy.strategy = st;
    c.factorized = strategy_factorized(st);
    if (!c.share_classifier_explicit) {
        const bool permuted_like = sc == Scenario::permuted_iid ||
                                   sc == Scenario::permuted_noniid ||
                                   sc == Scenario::domain_hetero;
        c.strategy.share_classifier = !permuted_like;
    }
    if (sc == Scenario::domain_hetero) {
        c.clients = c.domains.count * c.domains.clients_per_domain;
        c.dataset.classes = c.domains.count * c.domains.classes_per_domain;
    } else {
        c.clients = base.clients;
        c.dataset.classes = base.dataset.classes;
    }
    if (!c.net_explicit)
        c.net = default_desk_net(c.dataset.depth, c.dataset.height, c.dataset.width,
                                 c.local_classes());
    return c;
}

inline double sample_mean(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

inline double sample_std(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double m = sample_mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

/// Scenario x strategy grid, `trials` seeds per cell (global_seed + t).
/// Writes summary.csv plus per-cell artifacts under cells/. Failed cells are
/// recorded and the suite continues.
inline std::vector<SuiteCell> run_suite(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    const fs::path out_dir = cfg.output_dir;
    fs::create_directories(out_dir);
    iodetail::write_text(out_dir / "config.normalized.json",
                         normalize_config(cfg).dump(2) + "\n");

    std::vector<SuiteCell> cells;
    for (Scenario sc : cfg.suite_scenarios)
        for (Strategy st : cfg.suite_strategies) {
            SuiteCell cell;
            cell.scenario = sc;
            cell.strategy = st;
            try {
                ExperimentConfig base = cell_config(cfg, sc, st);
                for (std::size_t t = 0; t < cfg.trials; ++t) {
                    ExperimentConfig c = base;
                    c.global_seed = cfg.global_seed + t;
                    c.output_dir = (out_dir / "cells" /
                                    (std::string(scenario_name(sc)) + "__" +
                                     strategy_name(st)) /
                                    ("t" + std::to_string(t)))
                                       .string();
                    RunResult r = run_experiment(c);
                    cell.final_accs.push_back(r.final_mean_test_acc);
                    cell.best_val_accs.push_back(r.best_val_test_acc);
                    cell.total_bytes = r.ledger.total_bytes();
                }
                cell.ok = true;
            } catch (const std::exception& e) {
                cell.ok = false;
                cell.error = e.what();
            }
            cells.push_back(std::move(cell));
        }

    std::string csv =
        "scenario,strategy,trials,final_test_acc_mean,final_test_acc_std,"
        "best_val_test_acc_mean,best_val_test_acc_std,cost_bytes,cost_gb,status\n";
    for (const auto& c : cells) {
        csv += std::string(scenario_name(c.scenario)) + "," + strategy_name(c.strategy);
        if (c.ok) {
            char gb[64];
            std::snprintf(gb, sizeof gb, "%.6f",
                          static_cast<double>(c.total_bytes) / 1e9);
            csv += "," + std::to_string(c.final_accs.size());
            csv += "," + iodetail::fmt6(sample_mean(c.final_accs)) + "," +
                   iodetail::fmt6(sample_std(c.final_accs));
            csv += "," + iodetail::fmt6(sample_mean(c.best_val_accs)) + "," +
                   iodetail::fmt6(sample_std(c.best_val_accs));
            csv += "," + std::to_string(c.total_bytes) + "," + gb + ",ok\n";
        } else {
            std::string msg = c.error;
            for (char& ch : msg)
                if (ch == ',' || ch == '\n') ch = ';';
            csv += ",0,,,,,,,error: " + msg + "\n";
        }
    }
    iodetail::write_text(out_dir / "summary.csv", csv);
    return cells;
}

// ---- divergence probe drivers ----

struct ProbeWorld {
    Dataset base;       // split into two aligned halves
    Dataset other;      // a second prototype set: the hetero-domain pairing
    ProbeInput ref;     // first half
    ProbeInput same;    // second half, labels as-is
    ProbeInput permuted;  // second half, labels permuted
    ProbeInput hetero;  // the other dataset
};

inline Partition full_partition(const Dataset& ds, std::vector<std::size_t> idx,
                                std::size_t client_id) {
    Partition p;
    p.client_id = client_id;
    p.local_classes = ds.class_count;
    p.base_relabel.resize(ds.class_count);
    p.perm.resize(ds.class_count);
    for (std::size_t c = 0; c < ds.class_count; ++c) {
        p.base_relabel[c] = static_cast<int>(c);
        p.perm[c] = static_cast<int>(c);
    }
    p.indices = idx;
    p.split.train = std::move(idx);
    return p;
}

inline ProbeWorld build_probe_world(const ExperimentConfig& cfg, std::uint64_t seed) {
    ProbeWorld w;
    const std::size_t m = cfg.probe.examples;
    BlobsParams bp;
    bp.classes = cfg.dataset.classes;
    bp.n = 2 * m;
    bp.height = cfg.dataset.height;
    bp.width = cfg.dataset.width;
    bp.depth = cfg.dataset.depth;
    bp.noise = cfg.dataset.noise;
    w.base = make_blobs(bp, seed);

    auto halves = split_iid(w.base, 2, seed);
    w.ref.ds = &w.base;
    w.ref.part = full_partition(w.base, halves[0].indices, 0);
    w.ref.label = "partition_1";
    w.same.ds = &w.base;
    w.same.part = full_partition(w.base, halves[1].indices, 1);
    w.same.label = "partition_2";
    w.permuted.ds = &w.base;
    w.permuted.part = permute_labels(w.same.part, seed, 1);
    w.permuted.label = "partition_2_permuted";

    BlobsParams bp2 = bp;
    bp2.n = m;
    w.other = make_blobs(bp2, rng::derive(seed, rng::kProto, 7));
    w.hetero.ds = &w.other;
    std::vector<std::size_t> all(m);
    for (std::size_t i = 0; i < m; ++i) all[i] = i;
    w.hetero.part = full_partition(w.other, std::move(all), 2);
    w.hetero.label = "hetero_domain";
    return w;
}

inline ProbeConfig probe_config(const ExperimentConfig& cfg, bool factorized) {
    ProbeConfig pc;
    pc.net = cfg.net;
    pc.epochs = cfg.probe.epochs;
    pc.batch_size = cfg.batch_size;
    pc.sgd = cfg.sgd;
    pc.factorized = factorized;
    pc.lambda_sparsity = cfg.strategy.lambda_sparsity;
    return pc;
}

/// Distance of cumulative updates against the reference model for the three
/// pairings. Writes probe_divergence.csv and a metadata echo.
inline void run_divergence_probe(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    ProbeWorld w = build_probe_world(cfg, cfg.global_seed);
    ProbeConfig pc = probe_config(cfg, false);

    std::string csv = "pairing,epoch,distance\n";
    const std::pair<const char*, const ProbeInput*> pairings[] = {
        {"same_label", &w.same}, {"permuted_label", &w.permuted}, {"hetero_domain", &w.hetero}};
    for (const auto& [name, input] : pairings) {
        DivergenceTrace t = divergence_probe(pc, w.ref, *input, cfg.global_seed);
        for (std::size_t i = 0; i < t.epochs.size(); ++i)
            csv += std::string(name) + "," + std::to_string(t.epochs[i]) + "," +
                   iodetail::fmt6(t.distances[i]) + "\n";
    }
    iodetail::write_text(fs::path(cfg.output_dir) / "probe_divergence.csv", csv);

    ordered_json meta;
    meta["normalization"] =
        "l2(delta_a - delta_b) / l2(delta_a); delta = params - shared init, "
        "flattened over the whole model; model a (partition_1) is the reference";
    meta["epochs"] = cfg.probe.epochs;
    meta["examples_per_side"] = cfg.probe.examples;
    meta["seed"] = cfg.global_seed;
    iodetail::write_text(fs::path(cfg.output_dir) / "probe_divergence.meta.json",
                         meta.dump(2) + "\n");
}

/// Same pairings on the factorized parameterization, with separate traces for
/// the basis (u) and coefficient (v) families.
inline void run_uv_probe(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    ProbeWorld w = build_probe_world(cfg, cfg.global_seed);
    ProbeConfig pc = probe_config(cfg, true);

    std::string csv = "pairing,epoch,u_distance,v_distance\n";
    const std::pair<const char*, const ProbeInput*> pairings[] = {
        {"permuted_label", &w.permuted}, {"hetero_domain", &w.hetero}};
    for (const auto& [name, input] : pairings) {
        auto [tu, tv] = uv_divergence_probe(pc, w.ref, *input, cfg.global_seed);
        for (std::size_t i = 0; i < tu.epochs.size(); ++i)
            csv += std::string(name) + "," + std::to_string(tu.epochs[i]) + "," +
                   iodetail::fmt6(tu.distances[i]) + "," + iodetail::fmt6(tv.distances[i]) +
                   "\n";
    }
    iodetail::write_text(fs::path(cfg.output_dir) / "probe_uv.csv", csv);

    ordered_json meta;
    meta["normalization"] =
        "per family f in {u, v}: l2(delta_f_a - delta_f_b) / l2(delta_f_a); "
        "delta = concatenated family values - shared init";
    meta["epochs"] = cfg.probe.epochs;
    meta["examples_per_side"] = cfg.probe.examples;
    meta["seed"] = cfg.global_seed;
    iodetail::write_text(fs::path(cfg.output_dir) / "probe_uv.meta.json",
                         meta.dump(2) + "\n");
}

}  // namespace ffl
