#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ffl/dataset.hpp"
#include "ffl/model.hpp"
#include "ffl/similarity.hpp"
#include "ffl/train.hpp"

namespace ffl {

enum class Strategy { standalone, fedavg, fedprox, factorized_fl, factorized_fl_beta };
enum class Matching { similarity, random3, worst3 };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::standalone: return "standalone";
        case Strategy::fedavg: return "fedavg";
        case Strategy::fedprox: return "fedprox";
        case Strategy::factorized_fl: return "factorized_fl";
        case Strategy::factorized_fl_beta: return "factorized_fl_beta";
    }
    return "?";
}

inline bool strategy_factorized(Strategy s) {
    return s == Strategy::factorized_fl || s == Strategy::factorized_fl_beta;
}

struct StrategyConfig {
    Strategy strategy = Strategy::fedavg;
    double tau = 0.5;
    double epsilon = 10.0;
    double lambda_sparsity = 5e-4;
    double prox_mu = 0.01;  // fedprox only
    bool share_classifier = true;
    double participation_fraction = 1.0;
    bool exclude_zero_sigma = false;
    Matching matching = Matching::similarity;
};

struct ClientState {
    std::size_t id = 0;
    Partition part;
    ModelParams model;
    OptState opt;
    double last_train_loss = 0.0;
};

/// Transmission ledger: per-round parameter counts in each direction,
/// converted to bytes at 4 bytes per parameter (transmission width is fixed
/// regardless of the f64 compute width).
struct CostLedger {
    struct Entry {
        std::size_t round = 0;
        std::uint64_t s2c_params = 0;
        std::uint64_t c2s_params = 0;
    };
    std::vector<Entry> rounds;

    std::uint64_t total_bytes() const {
        std::uint64_t p = 0;
        for (const auto& e : rounds) p += e.s2c_params + e.c2s_params;
        return p * 4;
    }
};

inline std::uint64_t comm_cost(const CostLedger& ledger) { return ledger.total_bytes(); }

struct ClientMetrics {
    double train_loss = 0.0;
    double val_acc = 0.0, val_loss = 0.0;
    double test_acc = 0.0, test_loss = 0.0;
};

struct RoundReport {
    std::size_t round = 0;
    std::vector<std::size_t> participants;
    std::vector<ClientMetrics> clients;
    double mean_val_acc = 0.0, mean_val_loss = 0.0;
    double mean_test_acc = 0.0, mean_test_loss = 0.0;
    // Factorized runs: round-start snapshots of the matching layer's factors
    // and the thresholded cosine matrix the matcher saw.
    std::vector<std::vector<double>> u_snapshots, v_snapshots;
    std::vector<std::vector<double>> similarity;
    std::uint64_t s2c_params = 0, c2s_params = 0;
    std::uint64_t cum_bytes = 0;
};

/// Deterministic pseudo-random participant subset of size ceil(fraction * K).
inline std::vector<std::size_t> select_participants(std::size_t k, double fraction,
                                                    std::size_t round,
                                                    std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw std::invalid_argument("select_participants: fraction must be in (0, 1]");
    const auto m = static_cast<std::size_t>(
        std::min(static_cast<double>(k),
                 std::ceil(fraction * static_cast<double>(k))));
    rng::Stream rs(rng::derive(seed, rng::kParticipation, round));
    auto perm = rs.permutation(k);
    perm.resize(m);
    std::sort(perm.begin(), perm.end());
    return perm;
}

// ---- transmitted-parameter inventories ----

inline std::uint64_t plain_param_size(const std::vector<LayerSpec>& net,
                                      bool include_classifier) {
    std::uint64_t total = 0;
    std::size_t ti = 0;
    const std::size_t n_train = trainable_count(net);
    for (const auto& l : net) {
        if (!l.trainable()) continue;
        const bool is_classifier = ti == n_train - 1;
        if (include_classifier || !is_classifier) total += l.plain_param_count();
        ++ti;
    }
    return total;
}

inline std::uint64_t basis_size(const std::vector<LayerSpec>& net) {
    std::uint64_t total = 0;
    for (const auto& l : net) {
        if (!l.trainable()) continue;
        total += l.kind == LayerKind::conv2d
                     ? static_cast<std::uint64_t>(l.filter_size) * l.filter_size
                     : l.in_dim;
    }
    return total;
}

inline std::uint64_t coefficient_size(const std::vector<LayerSpec>& net) {
    std::uint64_t total = 0;
    for (const auto& l : net) {
        if (!l.trainable()) continue;
        total += l.kind == LayerKind::conv2d
                     ? static_cast<std::uint64_t>(l.in_channels) * l.out_channels
                     : l.out_dim;
    }
    return total;
}

/// Full factorized model: every u, v and (dense) mu entry.
inline std::uint64_t factorized_full_size(const std::vector<LayerSpec>& net) {
    std::uint64_t total = 0;
    for (const auto& l : net) {
        if (!l.trainable()) continue;
        const std::uint64_t m = l.kind == LayerKind::conv2d
                                    ? static_cast<std::uint64_t>(l.filter_size) * l.filter_size
                                    : l.in_dim;
        const std::uint64_t n = l.kind == LayerKind::conv2d
                                    ? static_cast<std::uint64_t>(l.in_channels) * l.out_channels
                                    : l.out_dim;
        total += m + n + m * n;
    }
    return total;
}

/// Coefficient-vector length of the second-last trainable layer (the one used
/// for similarity matching).
inline std::uint64_t matching_vector_size(const std::vector<LayerSpec>& net) {
    std::vector<const LayerSpec*> trainable;
    for (const auto& l : net)
        if (l.trainable()) trainable.push_back(&l);
    if (trainable.size() < 2)
        throw std::invalid_argument("matching_vector_size: need at least two trainable layers");
    const LayerSpec& l = *trainable[trainable.size() - 2];
    return l.kind == LayerKind::conv2d
               ? static_cast<std::uint64_t>(l.in_channels) * l.out_channels
               : l.out_dim;
}

struct CostBreakdown {
    std::uint64_t p_s2c = 0;   // parameters per client per round, downstream
    std::uint64_t p_c2s = 0;   // parameters per client per round, upstream
    std::uint64_t bytes = 0;   // (p_s2c + p_c2s) * 4 * K * R
};

/// Steady-state communication cost of a full run:
/// (P_S2C + P_C2S) * 4 bytes * K clients * R rounds.
inline CostBreakdown steady_cost(const std::vector<LayerSpec>& net, Strategy s,
                                 std::size_t clients, std::size_t rounds,
                                 bool share_classifier = true) {
    CostBreakdown c;
    switch (s) {
        case Strategy::standalone:
            return c;
        case Strategy::fedavg:
        case Strategy::fedprox:
            c.p_s2c = c.p_c2s = plain_param_size(net, share_classifier);
            break;
        case Strategy::factorized_fl:
            c.p_s2c = basis_size(net);
            c.p_c2s = basis_size(net) + matching_vector_size(net);
            break;
        case Strategy::factorized_fl_beta:
            c.p_s2c = c.p_c2s = factorized_full_size(net);
            break;
    }
    c.bytes = (c.p_s2c + c.p_c2s) * 4ULL * clients * rounds;
    return c;
}

struct EngineConfig {
    std::vector<LayerSpec> net;
    StrategyConfig strategy;
    std::size_t rounds = 1;
    std::size_t local_epochs = 1;
    std::size_t batch_size = 32;
    SgdConfig sgd;
    std::uint64_t seed = 1234;
    std::size_t threads = 1;
    std::size_t eval_batch = 64;
    bool factorized_standalone = false;  // standalone over the factorized parameterization
};

namespace detail {

/// Runs fn(i) for i in [0, n) across up to `threads` workers; deterministic
/// as long as iterations only write to their own slots. The first exception
/// thrown by any iteration is rethrown on the caller.
inline void parallel_for(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::mutex err_mutex;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += threads) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline std::size_t matching_block_index(const ModelParams& params) {
    if (params.blocks.size() < 2)
        throw std::invalid_argument("similarity matching needs at least two trainable layers");
    return params.blocks.size() - 2;
}

inline std::vector<std::vector<double>> extract_basis_set(const ModelParams& params) {
    std::vector<std::vector<double>> out;
    for (const auto& b : params.blocks)
        out.push_back(std::get<FactorizedParam>(b).u.data);
    return out;
}

inline void assign_basis_set(ModelParams& params,
                             const std::vector<std::vector<double>>& us) {
    for (std::size_t i = 0; i < params.blocks.size(); ++i)
        std::get<FactorizedParam>(params.blocks[i]).u.data = us[i];
}

inline std::vector<std::vector<double>> extract_coeff_set(const ModelParams& params) {
    std::vector<std::vector<double>> out;
    for (const auto& b : params.blocks)
        out.push_back(std::get<FactorizedParam>(b).v.data);
    return out;
}

inline void assign_coeff_set(ModelParams& params,
                             const std::vector<std::vector<double>>& vs) {
    for (std::size_t i = 0; i < params.blocks.size(); ++i)
        std::get<FactorizedParam>(params.blocks[i]).v.data = vs[i];
}

inline std::vector<std::vector<double>> extract_bias_set(const ModelParams& params) {
    std::vector<std::vector<double>> out;
    for (const auto& b : params.blocks)
        out.push_back(std::get<FactorizedParam>(b).mu.data);
    return out;
}

inline void assign_bias_set(ModelParams& params,
                            const std::vector<std::vector<double>>& mus) {
    for (std::size_t i = 0; i < params.blocks.size(); ++i)
        std::get<FactorizedParam>(params.blocks[i]).mu.data = mus[i];
}

}  // namespace detail

/// The federated round loop. Owns all client state and the shared server
/// state; one run_round() call per communication round. The server is the
/// only writer of shared state; client training and evaluation run in
/// parallel between round barriers, with per-client streams derived from
/// (seed, client id, round) so results do not depend on thread count.
class FederatedRun {
public:
    FederatedRun(const Dataset& ds, std::vector<Partition> parts, EngineConfig cfg)
        : ds_(&ds), cfg_(std::move(cfg)) {
        if (parts.empty()) throw std::invalid_argument("FederatedRun: no partitions");
        const bool factorized = strategy_factorized(cfg_.strategy.strategy) ||
                                (cfg_.strategy.strategy == Strategy::standalone &&
                                 cfg_.factorized_standalone);
        rng::Stream init_rs(rng::derive(cfg_.seed, rng::kInit));
        ModelParams shared_init = init_params(cfg_.net, factorized, init_rs);
        clients_.reserve(parts.size());
        for (auto& p : parts) {
            ClientState c;
            c.id = p.client_id;
            c.part = std::move(p);
            c.model = shared_init;
            c.opt = make_opt_state(c.model);
            clients_.push_back(std::move(c));
        }
        if (cfg_.strategy.strategy == Strategy::fedavg ||
            cfg_.strategy.strategy == Strategy::fedprox)
            global_ = shared_init;
    }

    std::size_t client_count() const { return clients_.size(); }
    const std::vector<ClientState>& clients() const { return clients_; }
    const CostLedger& ledger() const { return ledger_; }
    std::size_t rounds_done() const { return round_; }
    /// Server-side aggregate; meaningful for fedavg/fedprox only.
    const ModelParams& global_model() const { return global_; }

    RoundReport run_round() {
        const std::size_t r = ++round_;
        RoundReport report;
        report.round = r;
        report.participants = select_participants(
            clients_.size(), cfg_.strategy.participation_fraction, r, cfg_.seed);

        if (model_is_factorized()) record_factor_state(report);

        CostLedger::Entry entry;
        entry.round = r;
        switch (cfg_.strategy.strategy) {
            case Strategy::standalone: break;
            case Strategy::fedavg:
            case Strategy::fedprox: broadcast_global(report.participants, entry); break;
            case Strategy::factorized_fl:
            case Strategy::factorized_fl_beta: aggregate_factorized(r, report, entry); break;
        }

        train_participants(r, report.participants, entry);

        if (cfg_.strategy.strategy == Strategy::fedavg ||
            cfg_.strategy.strategy == Strategy::fedprox)
            collect_global(report.participants);

        ledger_.rounds.push_back(entry);
        report.s2c_params = entry.s2c_params;
        report.c2s_params = entry.c2s_params;
        report.cum_bytes = ledger_.total_bytes();

        evaluate_clients(report);
        return report;
    }

    std::vector<RoundReport> run_all() {
        std::vector<RoundReport> reports;
        reports.reserve(cfg_.rounds);
        for (std::size_t r = 0; r < cfg_.rounds; ++r) reports.push_back(run_round());
        return reports;
    }

private:
    bool model_is_factorized() const { return clients_.front().model.factorized(); }

    void record_factor_state(RoundReport& report) const {
        const std::size_t mi = detail::matching_block_index(clients_.front().model);
        for (const auto& c : clients_) {
            const auto& fp = std::get<FactorizedParam>(c.model.blocks[mi]);
            report.u_snapshots.push_back(fp.u.data);
            report.v_snapshots.push_back(fp.v.data);
        }
        report.similarity = similarity_matrix(report.v_snapshots, cfg_.strategy.tau);
    }

    void broadcast_global(const std::vector<std::size_t>& parts, CostLedger::Entry& entry) {
        const std::uint64_t shared =
            plain_param_size(cfg_.net, cfg_.strategy.share_classifier);
        for (std::size_t k : parts) {
            auto& model = clients_[k].model;
            for (std::size_t b = 0; b < model.blocks.size(); ++b) {
                if (!cfg_.strategy.share_classifier && b == model.classifier_index)
                    continue;
                model.blocks[b] = global_.blocks[b];
            }
            entry.s2c_params += shared;
        }
    }

    void collect_global(const std::vector<std::size_t>& parts) {
        double total = 0.0;
        for (std::size_t k : parts)
            total += static_cast<double>(clients_[k].part.split.train.size());
        if (total == 0.0) return;
        for (std::size_t b = 0; b < global_.blocks.size(); ++b) {
            if (!cfg_.strategy.share_classifier && b == global_.classifier_index) continue;
            auto& gw = std::get<Tensor>(global_.blocks[b]);
            gw.fill(0.0);
            for (std::size_t k : parts) {
                const double w =
                    static_cast<double>(clients_[k].part.split.train.size()) / total;
                const auto& cw = std::get<Tensor>(clients_[k].model.blocks[b]);
                axpy(w, cw.data, gw.data);
            }
        }
    }

    /// Matching (when round > 1) plus similarity-weighted averaging of the
    /// shared factor sets, computed for every participant against the same
    /// round-start state before any assignment.
    void aggregate_factorized(std::size_t r, RoundReport& report, CostLedger::Entry& entry) {
        const bool beta = cfg_.strategy.strategy == Strategy::factorized_fl_beta;
        const auto& parts = report.participants;
        const std::uint64_t down =
            beta ? factorized_full_size(cfg_.net) : basis_size(cfg_.net);
        const std::uint64_t full = factorized_full_size(cfg_.net);

        if (r == 1) {
            // No aggregation in the first round; the shared initialization is
            // charged once as a full-model download per client.
            for (std::size_t k : parts) {
                (void)k;
                entry.s2c_params += full;
            }
            return;
        }

        const std::size_t mi = detail::matching_block_index(clients_.front().model);
        std::vector<std::vector<double>> match_vecs(parts.size());
        for (std::size_t i = 0; i < parts.size(); ++i)
            match_vecs[i] = std::get<FactorizedParam>(clients_[parts[i]].model.blocks[mi]).v.data;

        std::vector<std::vector<std::vector<double>>> u_sets(parts.size());
        std::vector<std::vector<std::vector<double>>> v_sets, m_sets;
        if (beta) {
            v_sets.resize(parts.size());
            m_sets.resize(parts.size());
        }
        for (std::size_t i = 0; i < parts.size(); ++i) {
            u_sets[i] = detail::extract_basis_set(clients_[parts[i]].model);
            if (beta) {
                v_sets[i] = detail::extract_coeff_set(clients_[parts[i]].model);
                m_sets[i] = detail::extract_bias_set(clients_[parts[i]].model);
            }
        }

        std::vector<std::vector<std::vector<double>>> agg_u(parts.size());
        std::vector<std::vector<std::vector<double>>> agg_v(parts.size()), agg_m(parts.size());
        for (std::size_t i = 0; i < parts.size(); ++i) {
            auto [members, weights] = plan_members(match_vecs, i, r);
            std::vector<const std::vector<std::vector<double>>*> pick;
            pick.reserve(members.size());
            for (std::size_t m : members) pick.push_back(&u_sets[m]);
            agg_u[i] = weighted_average_sets(pick, weights);
            if (beta) {
                std::vector<const std::vector<std::vector<double>>*> pv, pm;
                for (std::size_t m : members) {
                    pv.push_back(&v_sets[m]);
                    pm.push_back(&m_sets[m]);
                }
                agg_v[i] = weighted_average_sets(pv, weights);
                agg_m[i] = weighted_average_sets(pm, weights);
            }
        }
        for (std::size_t i = 0; i < parts.size(); ++i) {
            auto& model = clients_[parts[i]].model;
            detail::assign_basis_set(model, agg_u[i]);
            if (beta) {
                detail::assign_coeff_set(model, agg_v[i]);
                detail::assign_bias_set(model, agg_m[i]);
            }
            entry.s2c_params += down;
        }
    }

    /// Members (positions into the participant list) and softmax weights for
    /// one participant's aggregation.
    std::pair<std::vector<std::size_t>, std::vector<double>> plan_members(
        const std::vector<std::vector<double>>& match_vecs, std::size_t self,
        std::size_t round) {
        std::vector<double> sigma =
            similarity_match(match_vecs, self, cfg_.strategy.tau);

        std::vector<std::size_t> members;
        switch (cfg_.strategy.matching) {
            case Matching::similarity: {
                for (std::size_t i = 0; i < sigma.size(); ++i) {
                    if (cfg_.strategy.exclude_zero_sigma && i != self && sigma[i] == 0.0)
                        continue;
                    members.push_back(i);
                }
                break;
            }
            case Matching::random3:
            case Matching::worst3: {
                members.push_back(self);
                std::vector<std::size_t> others;
                for (std::size_t i = 0; i < sigma.size(); ++i)
                    if (i != self) others.push_back(i);
                const std::size_t pick = std::min<std::size_t>(3, others.size());
                if (cfg_.strategy.matching == Matching::random3) {
                    rng::Stream rs(rng::derive(cfg_.seed, rng::kMatch, self, round));
                    rs.shuffle(others);
                } else {
                    std::vector<double> raw(sigma.size());
                    for (std::size_t i = 0; i < sigma.size(); ++i)
                        raw[i] = cosine(match_vecs[self], match_vecs[i]);
                    std::stable_sort(others.begin(), others.end(),
                                     [&](std::size_t a, std::size_t b) {
                                         return raw[a] < raw[b];
                                     });
                }
                others.resize(pick);
                std::sort(others.begin(), others.end());
                members.insert(members.end(), others.begin(), others.end());
                std::sort(members.begin(), members.end());
                break;
            }
        }
        std::vector<double> member_sigma;
        member_sigma.reserve(members.size());
        for (std::size_t m : members) member_sigma.push_back(sigma[m]);
        return {members, softmax_weights(member_sigma, cfg_.strategy.epsilon)};
    }

    void train_participants(std::size_t r, const std::vector<std::size_t>& parts,
                            CostLedger::Entry& entry) {
        LocalTrainConfig tcfg;
        tcfg.epochs = cfg_.local_epochs;
        tcfg.batch_size = cfg_.batch_size;
        tcfg.sgd = cfg_.sgd;
        if (model_is_factorized()) tcfg.lambda_sparsity = cfg_.strategy.lambda_sparsity;

        ModelParams anchor;
        std::vector<bool> prox_mask;
        if (cfg_.strategy.strategy == Strategy::fedprox && cfg_.strategy.prox_mu != 0.0) {
            anchor = global_;
            prox_mask.assign(anchor.blocks.size(), true);
            if (!cfg_.strategy.share_classifier)
                prox_mask[anchor.classifier_index] = false;
            tcfg.prox_mu = cfg_.strategy.prox_mu;
            tcfg.prox_anchor = &anchor;
            tcfg.prox_mask = &prox_mask;
        }

        detail::parallel_for(parts.size(), cfg_.threads, [&](std::size_t i) {
            ClientState& c = clients_[parts[i]];
            try {
                TrainStats st = local_train(cfg_.net, c.model, c.opt, *ds_, c.part, tcfg,
                                            rng::derive(cfg_.seed, rng::kTrain, c.id, r));
                c.last_train_loss = st.mean_loss;
            } catch (const std::exception& e) {
                throw std::runtime_error("client " + std::to_string(c.id) + ", round " +
                                         std::to_string(r) + ": " + e.what());
            }
        });

        const std::uint64_t up = upload_params_per_client();
        entry.c2s_params += up * parts.size();
    }

    std::uint64_t upload_params_per_client() const {
        switch (cfg_.strategy.strategy) {
            case Strategy::standalone: return 0;
            case Strategy::fedavg:
            case Strategy::fedprox:
                return plain_param_size(cfg_.net, cfg_.strategy.share_classifier);
            case Strategy::factorized_fl:
                return basis_size(cfg_.net) + matching_vector_size(cfg_.net);
            case Strategy::factorized_fl_beta:
                return factorized_full_size(cfg_.net);
        }
        return 0;
    }

    void evaluate_clients(RoundReport& report) {
        report.clients.resize(clients_.size());
        detail::parallel_for(clients_.size(), cfg_.threads, [&](std::size_t i) {
            const ClientState& c = clients_[i];
            ClientMetrics m;
            m.train_loss = c.last_train_loss;
            EvalResult val = evaluate(cfg_.net, c.model, *ds_, c.part, Split::val,
                                      cfg_.eval_batch);
            EvalResult test = evaluate(cfg_.net, c.model, *ds_, c.part, Split::test,
                                       cfg_.eval_batch);
            m.val_acc = val.accuracy;
            m.val_loss = val.loss;
            m.test_acc = test.accuracy;
            m.test_loss = test.loss;
            report.clients[i] = m;
        });
        double va = 0, vl = 0, ta = 0, tl = 0;
        for (const auto& m : report.clients) {
            va += m.val_acc;
            vl += m.val_loss;
            ta += m.test_acc;
            tl += m.test_loss;
        }
        const auto k = static_cast<double>(clients_.size());
        report.mean_val_acc = va / k;
        report.mean_val_loss = vl / k;
        report.mean_test_acc = ta / k;
        report.mean_test_loss = tl / k;
    }

    const Dataset* ds_;
    EngineConfig cfg_;
    std::vector<ClientState> clients_;
    ModelParams global_;
    CostLedger ledger_;
    std::size_t round_ = 0;
};

}  // namespace ffl
