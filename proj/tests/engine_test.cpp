#include <gtest/gtest.h>

#include <cmath>

#include "ffl/engine.hpp"
#include "ffl/probes.hpp"
#include "ffl/similarity.hpp"

using namespace ffl;

namespace {

std::vector<LayerSpec> tiny_net(std::size_t classes) {
    return {LayerSpec::conv2d(1, 4, 3, 1), LayerSpec::relu(), LayerSpec::maxpool2d(2, 2),
            LayerSpec::flatten(), LayerSpec::dense(4 * 3 * 3, classes)};
}

std::vector<LayerSpec> resnet9_table(std::size_t classes) {
    return {
        LayerSpec::conv2d(3, 64, 3, 1),    LayerSpec::conv2d(64, 128, 5, 2),
        LayerSpec::conv2d(128, 128, 3, 1), LayerSpec::conv2d(128, 128, 3, 1),
        LayerSpec::conv2d(128, 256, 3, 1), LayerSpec::conv2d(256, 256, 3, 1),
        LayerSpec::conv2d(256, 256, 3, 1), LayerSpec::conv2d(256, 256, 3, 1),
        LayerSpec::dense(256, classes),
    };
}

struct TinyWorld {
    Dataset ds;
    std::vector<Partition> parts;
};

TinyWorld tiny_world(std::size_t clients, std::size_t n, std::uint64_t seed,
                     std::size_t classes = 4, double noise = 0.25) {
    BlobsParams bp;
    bp.classes = classes;
    bp.n = n;
    bp.noise = noise;
    TinyWorld w;
    w.ds = make_blobs(bp, seed);
    w.parts = split_iid(w.ds, clients, seed);
    return w;
}

EngineConfig tiny_engine_cfg(Strategy s, std::size_t rounds, std::size_t classes = 4) {
    EngineConfig ec;
    ec.net = tiny_net(classes);
    ec.strategy.strategy = s;
    ec.rounds = rounds;
    ec.local_epochs = 1;
    ec.batch_size = 16;
    ec.sgd = SgdConfig{0.05, 0.9, 1e-6};
    ec.seed = 4242;
    return ec;
}

std::vector<double> flatten_all_clients(const FederatedRun& run) {
    std::vector<double> out;
    for (const auto& c : run.clients()) {
        auto f = flatten_params(c.model);
        out.insert(out.end(), f.begin(), f.end());
    }
    return out;
}

}  // namespace

TEST(SimilarityMatch, IdenticalVectorsScoreOne) {
    std::vector<std::vector<double>> vs(4, {0.3, -0.7, 0.2});
    auto sigma = similarity_match(vs, 2, 0.5);
    for (double s : sigma) EXPECT_DOUBLE_EQ(s, 1.0);
}

TEST(SimilarityMatch, OrthogonalBelowThresholdZeroed) {
    std::vector<std::vector<double>> vs{{1.0, 0.0}, {0.0, 1.0}};
    auto sigma = similarity_match(vs, 0, 0.5);
    EXPECT_DOUBLE_EQ(sigma[0], 1.0);
    EXPECT_DOUBLE_EQ(sigma[1], 0.0);
}

TEST(SimilarityMatch, HandComputedCosines) {
    const double r = 1.0 / std::sqrt(2.0);
    std::vector<std::vector<double>> vs{{1.0, 0.0}, {r, r}, {0.0, 1.0}};
    auto sigma = similarity_match(vs, 0, 0.6);
    EXPECT_DOUBLE_EQ(sigma[0], 1.0);
    EXPECT_NEAR(sigma[1], 0.7071067811865475, 1e-12);
    EXPECT_DOUBLE_EQ(sigma[2], 0.0);
}

TEST(SimilarityMatch, ZeroNormVectorNamesClient) {
    std::vector<std::vector<double>> vs{{1.0, 0.0}, {0.0, 0.0}};
    try {
        similarity_match(vs, 0, 0.5);
        FAIL() << "expected zero-norm error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("client 1"), std::string::npos);
    }
}

TEST(SoftmaxWeights, EqualScoresGiveUniform) {
    auto w = softmax_weights({0.4, 0.4, 0.4, 0.4}, 7.0);
    for (double x : w) EXPECT_NEAR(x, 0.25, 1e-15);
}

TEST(SoftmaxWeights, LargeEpsilonSaturatesToMax) {
    auto w = softmax_weights({1.0, 0.5, 0.0}, 1e3);
    EXPECT_GT(w[0], 1.0 - 1e-6);
}

TEST(SoftmaxWeights, HandComputedValues) {
    // softmax(2, 1, 0).
    auto w = softmax_weights({1.0, 0.5, 0.0}, 2.0);
    EXPECT_NEAR(w[0], 0.66524095577482, 1e-12);
    EXPECT_NEAR(w[1], 0.24472847105479764, 1e-12);
    EXPECT_NEAR(w[2], 0.09003057317038046, 1e-12);
}

TEST(SoftmaxWeights, SumToOneAndPositive) {
    rng::Stream rs(99);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> sigma(1 + rs.below(10));
        for (double& s : sigma) s = rs.uniform(-1.0, 1.0);
        auto w = softmax_weights(sigma, rs.uniform(0.5, 20.0));
        double sum = 0.0;
        for (double x : w) {
            EXPECT_GT(x, 0.0);
            sum += x;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(SoftmaxWeights, ScaleInvarianceWithCompensatingEpsilon) {
    std::vector<double> sigma{0.9, 0.4, 0.1, 0.0};
    const double c = 3.7;
    std::vector<double> scaled = sigma;
    for (double& s : scaled) s *= c;
    auto a = softmax_weights(sigma, 8.0);
    auto b = softmax_weights(scaled, 8.0 / c);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(SoftmaxWeights, PermutationEquivariant) {
    std::vector<double> sigma{0.9, 0.4, 0.1};
    auto w = softmax_weights(sigma, 5.0);
    std::vector<double> perm_sigma{0.1, 0.9, 0.4};
    auto pw = softmax_weights(perm_sigma, 5.0);
    EXPECT_DOUBLE_EQ(pw[1], w[0]);
    EXPECT_DOUBLE_EQ(pw[2], w[1]);
    EXPECT_DOUBLE_EQ(pw[0], w[2]);
}

TEST(WeightedAverage, ConvexCombinationAgainstDirectSum) {
    // K = 3, sigma = (1, 0.5, 0), epsilon = 2.
    std::vector<std::vector<std::vector<double>>> sets{
        {{1.0, 2.0}, {3.0}}, {{-1.0, 0.5}, {2.0}}, {{0.0, 0.0}, {-4.0}}};
    auto w = softmax_weights({1.0, 0.5, 0.0}, 2.0);
    auto avg = weighted_average_sets({&sets[0], &sets[1], &sets[2]}, w);
    for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t j = 0; j < sets[0][l].size(); ++j) {
            double direct = 0.0;
            for (std::size_t i = 0; i < 3; ++i) direct += w[i] * sets[i][l][j];
            EXPECT_DOUBLE_EQ(avg[l][j], direct);
        }
}

TEST(SimilarityMatrix, SymmetricUnitDiagonal) {
    rng::Stream rs(5);
    std::vector<std::vector<double>> vs(6, std::vector<double>(9));
    for (auto& v : vs)
        for (double& x : v) x = rs.uniform(-1.0, 1.0);
    auto m = similarity_matrix(vs, 0.0);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_DOUBLE_EQ(m[i][i], 1.0);
        for (std::size_t j = 0; j < 6; ++j) EXPECT_DOUBLE_EQ(m[i][j], m[j][i]);
    }
}

TEST(SelectParticipants, FullFractionTakesEveryone) {
    auto p = select_participants(9, 1.0, 3, 7);
    ASSERT_EQ(p.size(), 9u);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(p[i], i);
}

TEST(SelectParticipants, HalfFractionVariesByRound) {
    auto r1 = select_participants(8, 0.5, 1, 7);
    auto r2 = select_participants(8, 0.5, 2, 7);
    EXPECT_EQ(r1.size(), 4u);
    EXPECT_EQ(r2.size(), 4u);
    EXPECT_EQ(r1, select_participants(8, 0.5, 1, 7));
    EXPECT_NE(r1, r2);  // holds for this seed
}

TEST(SteadyCost, StandaloneIsFree) {
    EXPECT_EQ(steady_cost(tiny_net(4), Strategy::standalone, 8, 10).bytes, 0u);
}

TEST(SteadyCost, PaperScaleFedavgAndRatio) {
    auto net = resnet9_table(10);
    CostBreakdown fedavg = steady_cost(net, Strategy::fedavg, 20, 50, true);
    EXPECT_EQ(fedavg.bytes, 2568384ULL * 8 * 1000);
    const double gb = static_cast<double>(fedavg.bytes) / 1e9;
    EXPECT_LT(std::abs(gb - 20.39) / 20.39, 0.02);

    CostBreakdown fact = steady_cost(net, Strategy::factorized_fl, 20, 50, true);
    EXPECT_EQ(fact.p_s2c, 344u);
    EXPECT_EQ(fact.p_c2s, 344u + 65536u);
    EXPECT_LT(static_cast<double>(fact.bytes) / static_cast<double>(fedavg.bytes), 0.02);
}

TEST(Ledger, FactorizedSteadyRoundsChargeExactInventory) {
    TinyWorld w = tiny_world(3, 300, 11);
    EngineConfig ec = tiny_engine_cfg(Strategy::factorized_fl, 3);
    FederatedRun run(w.ds, w.parts, ec);
    auto reports = run.run_all();

    const std::uint64_t u_sz = basis_size(ec.net);
    const std::uint64_t v_sz = matching_vector_size(ec.net);
    const std::uint64_t full = factorized_full_size(ec.net);
    // Round 1: the shared init is a full-model download; uploads start at once.
    EXPECT_EQ(reports[0].s2c_params, full * 3);
    EXPECT_EQ(reports[0].c2s_params, (u_sz + v_sz) * 3);
    for (std::size_t r = 1; r < reports.size(); ++r) {
        EXPECT_EQ(reports[r].s2c_params, u_sz * 3);
        EXPECT_EQ(reports[r].c2s_params, (u_sz + v_sz) * 3);
    }
    EXPECT_EQ(comm_cost(run.ledger()), reports.back().cum_bytes);
}

TEST(Ledger, StandaloneTransmitsNothing) {
    TinyWorld w = tiny_world(2, 200, 12);
    EngineConfig ec = tiny_engine_cfg(Strategy::standalone, 2);
    FederatedRun run(w.ds, w.parts, ec);
    run.run_all();
    EXPECT_EQ(comm_cost(run.ledger()), 0u);
}

TEST(Engine, SingleClientFactorizedMatchesStandalone) {
    TinyWorld w = tiny_world(1, 150, 13);
    EngineConfig fed = tiny_engine_cfg(Strategy::factorized_fl, 3);
    EngineConfig solo = tiny_engine_cfg(Strategy::standalone, 3);
    solo.factorized_standalone = true;
    solo.strategy.lambda_sparsity = fed.strategy.lambda_sparsity;

    FederatedRun run_fed(w.ds, w.parts, fed);
    FederatedRun run_solo(w.ds, w.parts, solo);
    auto rf = run_fed.run_all();
    auto rs = run_solo.run_all();
    for (std::size_t r = 0; r < rf.size(); ++r) {
        EXPECT_EQ(rf[r].mean_test_acc, rs[r].mean_test_acc);
        EXPECT_EQ(rf[r].mean_val_loss, rs[r].mean_val_loss);
    }
    EXPECT_EQ(flatten_all_clients(run_fed), flatten_all_clients(run_solo));
}

TEST(Engine, VacuousThresholdDegeneratesToStandalone) {
    // With every cross-score zeroed and a huge epsilon, the self weight is
    // exactly 1 in f64, so the trajectory must match standalone training on
    // the factorized parameterization.
    TinyWorld w = tiny_world(2, 200, 14);
    EngineConfig fed = tiny_engine_cfg(Strategy::factorized_fl, 3);
    fed.strategy.tau = 1.01;
    fed.strategy.epsilon = 1e3;
    EngineConfig solo = tiny_engine_cfg(Strategy::standalone, 3);
    solo.factorized_standalone = true;
    solo.strategy.lambda_sparsity = fed.strategy.lambda_sparsity;

    auto wts = softmax_weights({1.0, 0.0}, 1e3);
    EXPECT_DOUBLE_EQ(wts[0], 1.0);
    EXPECT_DOUBLE_EQ(wts[1], 0.0);

    FederatedRun rf(w.ds, w.parts, fed);
    FederatedRun rs(w.ds, w.parts, solo);
    auto reports_f = rf.run_all();
    auto reports_s = rs.run_all();
    for (std::size_t r = 0; r < reports_f.size(); ++r) {
        EXPECT_EQ(reports_f[r].mean_test_acc, reports_s[r].mean_test_acc);
        EXPECT_EQ(reports_f[r].mean_val_loss, reports_s[r].mean_val_loss);
    }
}

TEST(Engine, IdenticalTwinsStayIdentical) {
    // Two clients with the same data and the same batch streams produce equal
    // uploads; exchangeable aggregation then keeps them equal.
    TinyWorld w = tiny_world(1, 150, 15);
    Partition p0 = w.parts[0];
    Partition p1 = p0;
    p1.client_id = 1;

    auto net = tiny_net(4);
    rng::Stream init_rs(rng::derive(4242, rng::kInit));
    ModelParams shared = init_params(net, true, init_rs);
    ModelParams m0 = shared, m1 = shared;
    OptState o0 = make_opt_state(m0), o1 = make_opt_state(m1);
    LocalTrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 16;
    tc.sgd = SgdConfig{0.05, 0.9, 1e-6};
    tc.lambda_sparsity = 5e-4;
    local_train(net, m0, o0, w.ds, p0, tc, 777);
    local_train(net, m1, o1, w.ds, p1, tc, 777);
    EXPECT_EQ(flatten_params(m0), flatten_params(m1));

    auto u0 = detail::extract_basis_set(m0);
    auto u1 = detail::extract_basis_set(m1);
    const std::size_t mi = detail::matching_block_index(m0);
    std::vector<std::vector<double>> vs{
        std::get<FactorizedParam>(m0.blocks[mi]).v.data,
        std::get<FactorizedParam>(m1.blocks[mi]).v.data};
    auto s0 = similarity_match(vs, 0, 0.5);
    auto s1 = similarity_match(vs, 1, 0.5);
    auto agg0 = weighted_average_sets({&u0, &u1}, softmax_weights(s0, 10.0));
    auto agg1 = weighted_average_sets({&u0, &u1}, softmax_weights(s1, 10.0));
    EXPECT_EQ(agg0, agg1);
}

TEST(Engine, FedavgEqualSizesAverageExactly) {
    Dataset ds = [] {
        BlobsParams bp;
        bp.classes = 4;
        bp.n = 200;
        return make_blobs(bp, 16);
    }();
    auto parts = split_iid(ds, 2, 16);
    ASSERT_EQ(parts[0].split.train.size(), parts[1].split.train.size());

    EngineConfig ec = tiny_engine_cfg(Strategy::fedavg, 1);
    FederatedRun run(ds, parts, ec);
    run.run_round();
    const auto& g = run.global_model();
    const auto& c0 = run.clients()[0].model;
    const auto& c1 = run.clients()[1].model;
    for (std::size_t b = 0; b < g.blocks.size(); ++b) {
        const auto& gw = std::get<Tensor>(g.blocks[b]);
        const auto& w0 = std::get<Tensor>(c0.blocks[b]);
        const auto& w1 = std::get<Tensor>(c1.blocks[b]);
        for (std::size_t i = 0; i < gw.numel(); ++i)
            EXPECT_NEAR(gw.data[i], 0.5 * w0.data[i] + 0.5 * w1.data[i], 1e-15);
    }
}

TEST(Engine, FedavgDegenerateWeightTakesSoleOwner) {
    Dataset ds = [] {
        BlobsParams bp;
        bp.classes = 4;
        bp.n = 100;
        return make_blobs(bp, 17);
    }();
    auto parts = split_iid(ds, 2, 17);
    parts[1].split.train.clear();  // client 1 holds no training data

    EngineConfig ec = tiny_engine_cfg(Strategy::fedavg, 1);
    FederatedRun run(ds, parts, ec);
    run.run_round();
    const auto& g = run.global_model();
    const auto& c0 = run.clients()[0].model;
    for (std::size_t b = 0; b < g.blocks.size(); ++b)
        EXPECT_EQ(std::get<Tensor>(g.blocks[b]).data, std::get<Tensor>(c0.blocks[b]).data);
}

TEST(Engine, FedproxZeroPullMatchesFedavgBitwise) {
    TinyWorld w = tiny_world(3, 240, 18);
    EngineConfig fa = tiny_engine_cfg(Strategy::fedavg, 3);
    EngineConfig fp = tiny_engine_cfg(Strategy::fedprox, 3);
    fp.strategy.prox_mu = 0.0;
    FederatedRun ra(w.ds, w.parts, fa);
    FederatedRun rp(w.ds, w.parts, fp);
    auto rra = ra.run_all();
    auto rrp = rp.run_all();
    EXPECT_EQ(flatten_all_clients(ra), flatten_all_clients(rp));
    for (std::size_t r = 0; r < rra.size(); ++r)
        EXPECT_EQ(rra[r].mean_test_acc, rrp[r].mean_test_acc);
}

TEST(Engine, FedproxPullKeepsClientsNearerAnchor) {
    TinyWorld w = tiny_world(3, 240, 19, 4, 0.6);
    EngineConfig fa = tiny_engine_cfg(Strategy::fedavg, 2);
    EngineConfig fp = tiny_engine_cfg(Strategy::fedprox, 2);
    fp.strategy.prox_mu = 10.0;  // strong pull
    FederatedRun ra(w.ds, w.parts, fa);
    FederatedRun rp(w.ds, w.parts, fp);
    ra.run_all();
    rp.run_all();
    // After the same broadcast, strongly-penalized clients end closer to each
    // other than unpenalized ones.
    auto spread = [](const FederatedRun& run) {
        auto a = flatten_params(run.clients()[0].model);
        auto b = flatten_params(run.clients()[1].model);
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(s);
    };
    EXPECT_LT(spread(rp), spread(ra));
}

TEST(Engine, DeterministicAcrossThreadCounts) {
    TinyWorld w = tiny_world(4, 320, 20);
    EngineConfig ec = tiny_engine_cfg(Strategy::factorized_fl, 3);
    ec.threads = 1;
    FederatedRun r1(w.ds, w.parts, ec);
    auto rep1 = r1.run_all();
    ec.threads = 4;
    FederatedRun r4(w.ds, w.parts, ec);
    auto rep4 = r4.run_all();
    for (std::size_t r = 0; r < rep1.size(); ++r) {
        EXPECT_EQ(rep1[r].mean_val_acc, rep4[r].mean_val_acc);
        EXPECT_EQ(rep1[r].mean_test_loss, rep4[r].mean_test_loss);
        EXPECT_EQ(rep1[r].similarity, rep4[r].similarity);
        EXPECT_EQ(rep1[r].cum_bytes, rep4[r].cum_bytes);
    }
    EXPECT_EQ(flatten_all_clients(r1), flatten_all_clients(r4));
}

TEST(Engine, NonFiniteLossNamesClientAndRound) {
    TinyWorld w = tiny_world(2, 200, 21);
    EngineConfig ec = tiny_engine_cfg(Strategy::standalone, 1);
    ec.sgd.lr = 1e30;  // drives the weights to overflow within an epoch
    ec.local_epochs = 3;
    FederatedRun run(w.ds, w.parts, ec);
    try {
        run.run_round();
        FAIL() << "expected non-finite loss";
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("client"), std::string::npos);
        EXPECT_NE(msg.find("round 1"), std::string::npos);
    }
}

TEST(Probes, SameInputGivesZeroDivergence) {
    BlobsParams bp;
    bp.classes = 4;
    bp.n = 120;
    Dataset ds = make_blobs(bp, 22);
    Partition all;
    all.client_id = 0;
    all.local_classes = 4;
    all.base_relabel = {0, 1, 2, 3};
    all.perm = {0, 1, 2, 3};
    for (std::size_t i = 0; i < ds.size(); ++i) all.indices.push_back(i);
    all.split.train = all.indices;

    ProbeConfig pc;
    pc.net = tiny_net(4);
    pc.epochs = 3;
    pc.batch_size = 16;
    pc.sgd = SgdConfig{0.05, 0.9, 1e-6};
    ProbeInput a{&ds, all, "a"}, b{&ds, all, "b"};
    DivergenceTrace t = divergence_probe(pc, a, b, 123);
    ASSERT_EQ(t.distances.size(), 3u);
    for (double d : t.distances) EXPECT_DOUBLE_EQ(d, 0.0);
}

TEST(Probes, HeatmapRoundOneIsAllOnes) {
    TinyWorld w = tiny_world(3, 300, 23);
    EngineConfig ec = tiny_engine_cfg(Strategy::factorized_fl, 2);
    FederatedRun run(w.ds, w.parts, ec);
    auto reports = run.run_all();
    HeatmapSeries s = heatmap_series(reports, ec.strategy.tau);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            EXPECT_DOUBLE_EQ(s.u_cosine[0][i][j], 1.0);
            EXPECT_DOUBLE_EQ(s.v_cosine[0][i][j], 1.0);
        }
    // Diagonals stay exactly 1 and matrices symmetric in every round.
    for (const auto& m : s.v_cosine)
        for (std::size_t i = 0; i < 3; ++i) {
            EXPECT_DOUBLE_EQ(m[i][i], 1.0);
            for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(m[i][j], m[j][i], 1e-12);
        }
}

TEST(Probes, VacuousThresholdReportsFlaggedFullFraction) {
    TinyWorld w = tiny_world(3, 300, 24);
    EngineConfig ec = tiny_engine_cfg(Strategy::factorized_fl, 2);
    FederatedRun run(w.ds, w.parts, ec);
    auto reports = run.run_all();
    HeatmapSeries s = heatmap_series(reports, 1.01);
    MatchingFrequency f = matching_frequency(s, {0, 0, 1});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            if (i != j) EXPECT_EQ(f.count[i][j], 0u);
    EXPECT_TRUE(f.vacuous);
    EXPECT_DOUBLE_EQ(f.within_domain_fraction, 1.0);
}

TEST(Probes, SingleDomainFractionIsOne) {
    TinyWorld w = tiny_world(3, 300, 25);
    EngineConfig ec = tiny_engine_cfg(Strategy::factorized_fl, 3);
    ec.strategy.tau = 0.0;
    FederatedRun run(w.ds, w.parts, ec);
    auto reports = run.run_all();
    HeatmapSeries s = heatmap_series(reports, 0.0);
    MatchingFrequency f = matching_frequency(s, {0, 0, 0});
    EXPECT_FALSE(f.vacuous);
    EXPECT_DOUBLE_EQ(f.within_domain_fraction, 1.0);
}
