#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "grq/analysis.hpp"
#include "oracles.hpp"

using grq::ArchConfig;
using grq::GaitSpec;
using grq::ModelParams;
using grq::Tensor;
using grq::Trajectory;

namespace {

ArchConfig walker_arch(std::int64_t joints) {
    ArchConfig a;
    a.d_obs = 4 * joints + 9;
    a.d_act = joints;
    a.d_emb = 8;
    a.n_heads = 2;
    a.window = 4;
    a.mlp_hidden = 16;
    a.mlp_depth = 2;
    return a;
}

GaitSpec walker(const std::string& name, std::int64_t joints, double freq) {
    GaitSpec g;
    g.name = name;
    g.joints = joints;
    g.frequency = freq;
    return g;
}

ModelParams zeroed(const ArchConfig& a) {
    ModelParams p = ModelParams::init(a, 1);
    p.for_each([](const std::string&, Tensor& t) { t.zero(); });
    return p;
}

}  // namespace

TEST(Residuals, SummaryMatchesManualRecount) {
    const ArchConfig a = walker_arch(3);
    const ModelParams p = ModelParams::init(a, 81);
    std::vector<Trajectory> trajs{grq::generate_trajectory(walker("wa", 3, 1.0), 10, 5),
                                  grq::generate_trajectory(walker("wb", 3, 1.3), 13, 6)};
    const std::string csv_path = "/tmp/grq_an_res.csv";
    const std::string json_path = "/tmp/grq_an_res.json";
    const auto sum = grq::export_residuals(a, p, trajs, "untrained", csv_path, json_path,
                                           nlohmann::json{{"run", "t"}});
    ASSERT_EQ(sum.rows_per_joint, 23);
    ASSERT_EQ(sum.variance.size(), 3u);

    // mirror the deployment loop
    grq::Engine<float> eng(a, p);
    auto st = eng.make_state();
    std::vector<float> obs(std::size_t(a.d_in())), act(std::size_t(a.d_act));
    std::vector<double> sq(3, 0.0);
    for (const auto& tr : trajs) {
        eng.reset(st);
        for (std::int64_t t = 0; t < tr.n; ++t) {
            const float* o = tr.obs_row(t);
            for (std::int64_t j = 0; j < a.d_in(); ++j) obs[std::size_t(j)] = o[std::size_t(j)];
            eng.step(obs.data(), st, act.data());
            for (std::int64_t j = 0; j < a.d_act; ++j) {
                const double r = double(act[std::size_t(j)]) - double(tr.act_row(t)[std::size_t(j)]);
                sq[std::size_t(j)] += r * r;
            }
        }
    }
    double pooled = 0.0;
    for (std::int64_t j = 0; j < 3; ++j) {
        EXPECT_DOUBLE_EQ(sum.variance[std::size_t(j)], sq[std::size_t(j)] / 23.0);
        pooled += sum.variance[std::size_t(j)];
    }
    EXPECT_NEAR(sum.pooled_variance, pooled / 3.0, 1e-15);
    for (std::int64_t j = 0; j < 3; ++j) {
        EXPECT_DOUBLE_EQ(sum.log_sigma[std::size_t(j)], p.log_sigma(j));
        EXPECT_DOUBLE_EQ(sum.sigma[std::size_t(j)], std::exp(p.log_sigma(j)));
    }
}

TEST(Residuals, CsvRowsReconstructTheSummary) {
    const ArchConfig a = walker_arch(2);
    const ModelParams p = ModelParams::init(a, 82);
    std::vector<Trajectory> trajs{grq::generate_trajectory(walker("wa", 2, 1.1), 9, 7)};
    const std::string csv_path = "/tmp/grq_an_res2.csv";
    const auto sum = grq::export_residuals(a, p, trajs, "ep3", csv_path, "", {});

    const oracle::Csv csv = oracle::read_csv(csv_path);
    ASSERT_EQ(csv.header, (std::vector<std::string>{"joint", "step_tag", "residual"}));
    ASSERT_EQ(csv.rows.size(), 9u * 2u);
    std::vector<double> sq(2, 0.0);
    std::vector<std::int64_t> cnt(2, 0);
    for (const auto& row : csv.rows) {
        ASSERT_EQ(row.size(), 3u);
        EXPECT_EQ(row[1], "ep3");
        const std::size_t j = std::stoul(row[0]);
        const double r = std::stod(row[2]);
        sq[j] += r * r;
        cnt[j] += 1;
    }
    for (std::size_t j = 0; j < 2; ++j) {
        EXPECT_EQ(cnt[j], 9);
        // CSV stores %.9g, so agreement is to print precision
        EXPECT_NEAR(sq[j] / 9.0, sum.variance[j], 1e-8 * (1.0 + sum.variance[j]));
    }
}

TEST(Residuals, JsonSummaryWellFormed) {
    const ArchConfig a = walker_arch(2);
    const ModelParams p = ModelParams::init(a, 83);
    std::vector<Trajectory> trajs{grq::generate_trajectory(walker("wa", 2, 1.0), 8, 8)};
    const std::string json_path = "/tmp/grq_an_res3.json";
    const auto sum =
        grq::export_residuals(a, p, trajs, "final", "/tmp/grq_an_res3.csv", json_path,
                              nlohmann::json{{"dataset", "demo.grqd"}});
    const auto j = nlohmann::json::parse(grq::io::read_file(json_path));
    EXPECT_EQ(j.at("step_tag"), "final");
    EXPECT_EQ(j.at("rows_per_joint").get<std::int64_t>(), 8);
    EXPECT_EQ(j.at("provenance").at("dataset"), "demo.grqd");
    ASSERT_EQ(j.at("per_joint").size(), 2u);
    for (std::int64_t k = 0; k < 2; ++k) {
        const auto& e = j.at("per_joint").at(std::size_t(k));
        EXPECT_EQ(e.at("joint").get<std::int64_t>(), k);
        EXPECT_NEAR(e.at("residual_variance").get<double>(), sum.variance[std::size_t(k)], 1e-12);
        EXPECT_NEAR(e.at("sigma").get<double>(),
                    std::exp(e.at("log_sigma").get<double>()), 1e-12);
    }
}

TEST(Residuals, RejectsBadInput) {
    const ArchConfig a = walker_arch(2);
    const ModelParams p = ModelParams::init(a, 84);
    EXPECT_THROW(grq::export_residuals(a, p, {}, "x", "/tmp/x.csv", "", {}),
                 grq::validation_error);
    std::vector<Trajectory> wrong{grq::generate_trajectory(walker("w", 3, 1.0), 6, 9)};
    EXPECT_THROW(grq::export_residuals(a, p, wrong, "x", "/tmp/x.csv", "", {}),
                 grq::dimension_error);
}

TEST(Attention, ZeroProjectionsGiveUniformWeights) {
    const ArchConfig a = walker_arch(3);
    ModelParams p = ModelParams::init(a, 85);
    p.obs_q.zero();
    p.obs_k.zero();
    p.gru_q.zero();
    p.gru_k.zero();
    const Trajectory tr = grq::generate_trajectory(walker("wa", 3, 1.0), a.window + 9, 10);
    const auto trace =
        grq::export_attention(a, p, tr, "/tmp/grq_an_attn.csv", {}, "/tmp/grq_an_attn.json");
    EXPECT_EQ(trace.samples, tr.n - a.window + 1);
    for (int h = 0; h < a.n_heads; ++h)
        for (std::int64_t i = 0; i < a.window; ++i) {
            EXPECT_DOUBLE_EQ(trace.obs_mean(h, i), 1.0 / double(a.window));
            EXPECT_DOUBLE_EQ(trace.gru_mean(h, i), 1.0 / double(a.window));
        }
}

TEST(Attention, MeansSumToOneAndRoundTripThroughCsv) {
    const ArchConfig a = walker_arch(3);
    const ModelParams p = ModelParams::init(a, 86);
    const Trajectory tr = grq::generate_trajectory(walker("wb", 3, 1.2), 3 * a.window, 11);
    const std::string csv_path = "/tmp/grq_an_attn2.csv";
    const auto trace = grq::export_attention(a, p, tr, csv_path, {});
    for (int h = 0; h < a.n_heads; ++h) {
        double so = 0.0, sg = 0.0;
        for (std::int64_t i = 0; i < a.window; ++i) {
            so += trace.obs_mean(h, i);
            sg += trace.gru_mean(h, i);
        }
        EXPECT_NEAR(so, 1.0, 1e-6);
        EXPECT_NEAR(sg, 1.0, 1e-6);
    }

    const oracle::Csv csv = oracle::read_csv(csv_path);
    ASSERT_EQ(csv.header, (std::vector<std::string>{"source", "head", "position", "mean_weight"}));
    ASSERT_EQ(csv.rows.size(), std::size_t(2 * a.n_heads * a.window));
    for (const auto& row : csv.rows) {
        const Tensor& m = row[0] == "obs" ? trace.obs_mean : trace.gru_mean;
        EXPECT_TRUE(row[0] == "obs" || row[0] == "gru");
        const int h = std::stoi(row[1]);
        const std::int64_t i = std::stol(row[2]);
        EXPECT_NEAR(std::stod(row[3]), m(h, i), 1e-8);
    }
}

TEST(Attention, CountsOnlyFullWindowSteps) {
    const ArchConfig a = walker_arch(2);
    const ModelParams p = ModelParams::init(a, 87);
    const Trajectory tr = grq::generate_trajectory(walker("wa", 2, 1.0), a.window, 12);
    const auto trace = grq::export_attention(a, p, tr, "/tmp/grq_an_attn3.csv", {});
    EXPECT_EQ(trace.samples, 1);
}

TEST(Attention, RejectsShortTrajectory) {
    const ArchConfig a = walker_arch(2);
    const ModelParams p = ModelParams::init(a, 88);
    const Trajectory tr = grq::generate_trajectory(walker("wa", 2, 1.0), a.window - 1, 13);
    EXPECT_THROW(grq::export_attention(a, p, tr, "/tmp/x.csv", {}), grq::contract_error);
}

TEST(ChiSquare, UniformProfileScoresOne) {
    const std::vector<double> w(8, 1.0 / 8.0);
    const auto r = grq::chi_square_uniform(w, 500);
    EXPECT_EQ(r.dof, 7);
    EXPECT_DOUBLE_EQ(r.stat, 0.0);
    EXPECT_DOUBLE_EQ(r.p_value, 1.0);
}

TEST(ChiSquare, ConcentratedProfileRejects) {
    std::vector<double> w(8, 0.1 / 7.0);
    w[7] = 0.9;
    const auto r = grq::chi_square_uniform(w, 200);
    EXPECT_LT(r.p_value, 1e-6);
    EXPECT_GT(r.stat, 100.0);
}

TEST(ChiSquare, MoreSamplesSharpenTheVerdict) {
    std::vector<double> w(4, 0.24);
    w[0] = 0.28;  // mild skew
    const double p_small = grq::chi_square_uniform(w, 5).p_value;
    const double p_large = grq::chi_square_uniform(w, 5000).p_value;
    EXPECT_GT(p_small, 0.9);
    EXPECT_LT(p_large, 0.01);
}

TEST(ChiSquare, MatchesClosedFormsAtSmallDof) {
    // dof = 2: Q(1, x) = exp(-x)
    const std::vector<double> w3{0.5, 0.3, 0.2};
    const auto r3 = grq::chi_square_uniform(w3, 40);
    EXPECT_NEAR(r3.p_value, std::exp(-r3.stat / 2.0), 1e-12);
    // dof = 1: Q(1/2, x) = erfc(sqrt(x))
    const std::vector<double> w2{0.6, 0.4};
    const auto r2 = grq::chi_square_uniform(w2, 25);
    EXPECT_NEAR(r2.p_value, std::erfc(std::sqrt(r2.stat / 2.0)), 1e-12);
}

TEST(ChiSquare, DomainChecks) {
    EXPECT_THROW(grq::chi_square_uniform({1.0}, 10), grq::contract_error);
    EXPECT_THROW(grq::chi_square_uniform({0.5, 0.5}, 0), grq::contract_error);
}

TEST(Evaluate, ZeroModelScoresMeanAbsoluteTarget) {
    const ArchConfig a = walker_arch(3);
    const ModelParams p = zeroed(a);
    std::vector<Trajectory> trajs{grq::generate_trajectory(walker("wa", 3, 1.0), 11, 14),
                                  grq::generate_trajectory(walker("wb", 3, 1.3), 7, 15)};
    const auto rep = grq::evaluate(a, p, trajs);
    EXPECT_EQ(rep.steps, 18);

    double total = 0.0;
    std::int64_t cnt = 0;
    std::map<std::string, std::pair<double, std::int64_t>> per;
    for (const auto& tr : trajs)
        for (std::int64_t t = 0; t < tr.n; ++t)
            for (std::int64_t j = 0; j < tr.d_act; ++j) {
                const double e = std::abs(double(tr.act_row(t)[std::size_t(j)]));
                total += e;
                cnt += 1;
                per[tr.morphology].first += e;
                per[tr.morphology].second += 1;
            }
    EXPECT_NEAR(rep.mae, total / double(cnt), 1e-12);
    ASSERT_EQ(rep.per_morphology.size(), 2u);
    for (const auto& [name, acc] : per)
        EXPECT_NEAR(rep.per_morphology.at(name), acc.first / double(acc.second), 1e-12);
}

TEST(Evaluate, RejectsEmptyAndMismatched) {
    const ArchConfig a = walker_arch(2);
    const ModelParams p = ModelParams::init(a, 89);
    EXPECT_THROW(grq::evaluate(a, p, {}), grq::validation_error);
    std::vector<Trajectory> wrong{grq::generate_trajectory(walker("w", 3, 1.0), 6, 16)};
    EXPECT_THROW(grq::evaluate(a, p, wrong), grq::dimension_error);
}
