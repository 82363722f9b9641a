#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ffl/dataset.hpp"
#include "ffl/engine.hpp"
#include "ffl/model.hpp"
#include "ffl/similarity.hpp"
#include "ffl/train.hpp"

namespace ffl {

/// Per-epoch normalized L2 distance between two models' cumulative parameter
/// updates: d = ||Da - Db|| / ||Da|| with Dx = theta_x(epoch) - theta(init),
/// measured over the flattened global parameter vector. Model a is the
/// reference in the denominator.
struct DivergenceTrace {
    std::vector<std::size_t> epochs;   // 1-based, strictly increasing
    std::vector<double> distances;
    std::string label_a, label_b;
};

struct ProbeInput {
    const Dataset* ds = nullptr;
    Partition part;
    std::string label;
};

struct ProbeConfig {
    std::vector<LayerSpec> net;
    std::size_t epochs = 8;
    std::size_t batch_size = 32;
    SgdConfig sgd;
    bool factorized = false;
    double lambda_sparsity = 0.0;
};

namespace detail {

inline double normalized_distance(const std::vector<double>& da,
                                  const std::vector<double>& db) {
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < da.size(); ++i) {
        const double d = da[i] - db[i];
        diff += d * d;
        ref += da[i] * da[i];
    }
    if (ref == 0.0) return 0.0;
    return std::sqrt(diff) / std::sqrt(ref);
}

inline std::vector<double> delta(const std::vector<double>& now,
                                 const std::vector<double>& init) {
    std::vector<double> d(now.size());
    for (std::size_t i = 0; i < now.size(); ++i) d[i] = now[i] - init[i];
    return d;
}

}  // namespace detail

/// Trains two equally-initialized copies of the net, one per input, with
/// identical per-epoch batch orders, and records the update divergence after
/// every epoch. Inputs must hold the same number of training examples.
inline DivergenceTrace divergence_probe(const ProbeConfig& cfg, const ProbeInput& a,
                                        const ProbeInput& b, std::uint64_t seed) {
    if (a.part.split.train.size() != b.part.split.train.size())
        throw std::invalid_argument("divergence_probe: inputs must have equal train sizes");
    rng::Stream init_rs(rng::derive(seed, rng::kInit));
    ModelParams ma = init_params(cfg.net, cfg.factorized, init_rs);
    ModelParams mb = ma;
    OptState oa = make_opt_state(ma), ob = make_opt_state(mb);
    const std::vector<double> theta0 = flatten_params(ma);

    LocalTrainConfig tcfg;
    tcfg.epochs = 1;
    tcfg.batch_size = cfg.batch_size;
    tcfg.sgd = cfg.sgd;
    tcfg.lambda_sparsity = cfg.factorized ? cfg.lambda_sparsity : 0.0;

    DivergenceTrace trace;
    trace.label_a = a.label;
    trace.label_b = b.label;
    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
        const std::uint64_t epoch_seed = rng::derive(seed, rng::kTrain, e);
        TrainStats sa = local_train(cfg.net, ma, oa, *a.ds, a.part, tcfg, epoch_seed);
        TrainStats sb = local_train(cfg.net, mb, ob, *b.ds, b.part, tcfg, epoch_seed);
        if (!std::isfinite(sa.mean_loss) || !std::isfinite(sb.mean_loss))
            throw std::runtime_error("divergence_probe: non-finite loss at epoch " +
                                     std::to_string(e));
        trace.epochs.push_back(e);
        trace.distances.push_back(detail::normalized_distance(
            detail::delta(flatten_params(ma), theta0),
            detail::delta(flatten_params(mb), theta0)));
    }
    return trace;
}

/// As divergence_probe but on a factorized net, with separate traces over the
/// concatenated basis vectors (u) and coefficient vectors (v).
inline std::pair<DivergenceTrace, DivergenceTrace> uv_divergence_probe(
    const ProbeConfig& cfg, const ProbeInput& a, const ProbeInput& b,
    std::uint64_t seed) {
    if (!cfg.factorized)
        throw std::invalid_argument("uv_divergence_probe: requires a factorized net");
    if (a.part.split.train.size() != b.part.split.train.size())
        throw std::invalid_argument("uv_divergence_probe: inputs must have equal train sizes");
    rng::Stream init_rs(rng::derive(seed, rng::kInit));
    ModelParams ma = init_params(cfg.net, true, init_rs);
    ModelParams mb = ma;
    OptState oa = make_opt_state(ma), ob = make_opt_state(mb);
    const std::vector<double> u0 = flatten_factors(ma, true);
    const std::vector<double> v0 = flatten_factors(ma, false);

    LocalTrainConfig tcfg;
    tcfg.epochs = 1;
    tcfg.batch_size = cfg.batch_size;
    tcfg.sgd = cfg.sgd;
    tcfg.lambda_sparsity = cfg.lambda_sparsity;

    DivergenceTrace tu, tv;
    tu.label_a = tv.label_a = a.label;
    tu.label_b = tv.label_b = b.label;
    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
        const std::uint64_t epoch_seed = rng::derive(seed, rng::kTrain, e);
        local_train(cfg.net, ma, oa, *a.ds, a.part, tcfg, epoch_seed);
        local_train(cfg.net, mb, ob, *b.ds, b.part, tcfg, epoch_seed);
        tu.epochs.push_back(e);
        tv.epochs.push_back(e);
        tu.distances.push_back(detail::normalized_distance(
            detail::delta(flatten_factors(ma, true), u0),
            detail::delta(flatten_factors(mb, true), u0)));
        tv.distances.push_back(detail::normalized_distance(
            detail::delta(flatten_factors(ma, false), v0),
            detail::delta(flatten_factors(mb, false), v0)));
    }
    return {tu, tv};
}

/// Per-round inter-client cosine matrices over the matching layer's u and v
/// snapshots, plus the accumulated count of rounds each pair scored at or
/// above the matching threshold.
struct HeatmapSeries {
    std::vector<std::size_t> rounds;
    std::vector<std::vector<std::vector<double>>> u_cosine;  // per round, K x K
    std::vector<std::vector<std::vector<double>>> v_cosine;
    std::vector<std::vector<std::uint64_t>> match_count;     // K x K
    double tau = 0.0;
};

inline HeatmapSeries heatmap_series(const std::vector<RoundReport>& reports, double tau) {
    HeatmapSeries s;
    s.tau = tau;
    for (const auto& r : reports) {
        if (r.u_snapshots.empty() || r.v_snapshots.empty()) continue;
        const std::size_t k = r.v_snapshots.size();
        if (s.match_count.empty())
            s.match_count.assign(k, std::vector<std::uint64_t>(k, 0));
        s.rounds.push_back(r.round);
        s.u_cosine.push_back(similarity_matrix(r.u_snapshots, -2.0));
        s.v_cosine.push_back(similarity_matrix(r.v_snapshots, -2.0));
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j)
                if (i != j && s.v_cosine.back()[i][j] >= tau) ++s.match_count[i][j];
    }
    if (s.rounds.empty())
        throw std::invalid_argument("heatmap_series: no reports carry factor snapshots");
    return s;
}

struct MatchingFrequency {
    std::vector<std::vector<std::uint64_t>> count;
    double within_domain_fraction = 1.0;
    bool vacuous = false;  // no above-threshold off-diagonal matches at all
};

/// Frequency matrix plus the fraction of above-threshold matches that fall
/// within the same domain. With no matches at all the fraction is reported
/// as 1.0 with the vacuous flag set.
inline MatchingFrequency matching_frequency(const HeatmapSeries& s,
                                            const std::vector<int>& domain_of) {
    MatchingFrequency f;
    f.count = s.match_count;
    const std::size_t k = f.count.size();
    if (!domain_of.empty() && domain_of.size() != k)
        throw std::invalid_argument("matching_frequency: domain assignment length mismatch");
    std::uint64_t within = 0, total = 0;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            if (i == j) continue;
            total += f.count[i][j];
            const bool same = domain_of.empty() || domain_of[i] == domain_of[j];
            if (same) within += f.count[i][j];
        }
    if (total == 0) {
        f.within_domain_fraction = 1.0;
        f.vacuous = true;
    } else {
        f.within_domain_fraction =
            static_cast<double>(within) / static_cast<double>(total);
    }
    return f;
}

}  // namespace ffl
